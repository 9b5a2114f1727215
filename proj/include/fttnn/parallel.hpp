#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "fttnn/errors.hpp"

namespace fttnn {

/// Worker count from FTTNN_THREADS (default 1).
inline int thread_count() {
  const char* env = std::getenv("FTTNN_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) throw InvalidArgument("FTTNN_THREADS must be an integer in [1, 1024], got '" + std::string(env) + "'");
  return static_cast<int>(n);
}

/// Runs fn(chunk, begin, end) over fixed-size chunks of [0, n). Chunk boundaries do not
/// depend on the worker count, so per-chunk partials reduced in chunk order are bitwise
/// reproducible for any thread count.
template <class Fn>
void for_chunks(std::size_t n, std::size_t chunk, Fn&& fn, int threads = thread_count()) {
  if (chunk == 0) throw InvalidArgument("for_chunks: chunk size must be positive");
  const std::size_t count = (n + chunk - 1) / chunk;
  auto run = [&](std::size_t c) { fn(c, c * chunk, std::min(n, (c + 1) * chunk)); };
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t c = 0; c < count; ++c) run(c);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < count; c += workers) run(c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::size_t chunk_count(std::size_t n, std::size_t chunk) { return (n + chunk - 1) / chunk; }

}  // namespace fttnn
