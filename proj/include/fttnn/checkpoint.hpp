#pragma once

// Binary checkpoint format (all integers and floats little-endian):
//
//   magic    8 bytes  "FTTNNCKP"
//   version  u32      1
//   d        u32
//   ranks    u32 x (d + 1)
//   per core: hidden u32, has_boundary u8, a f64, b f64
//   count    u64      total parameter count
//   params   f64 x count, cores in order, each W1, b1, W2 (row-major), b2

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "fttnn/errors.hpp"
#include "fttnn/ftt_model.hpp"

namespace fttnn {

inline constexpr std::array<char, 8> kCheckpointMagic = {'F', 'T', 'T', 'N', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
    throw InvalidArgument(std::string("checkpoint: truncated while reading ") + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const FTTModel& model) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.dim()));
  for (int r : model.ranks()) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(r));
  for (const auto& c : model.cores()) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.hidden()));
    const auto& b = c.boundary();
    detail::put_le<std::uint8_t>(os, b ? 1 : 0);
    detail::put_le<double>(os, b ? b->a : 0.0);
    detail::put_le<double>(os, b ? b->b : 0.0);
  }
  const auto params = model.get_params();
  detail::put_le<std::uint64_t>(os, params.size());
  for (double p : params) detail::put_le<double>(os, p);
  if (!os) throw ResourceError("checkpoint: write failed");
}

inline FTTModel read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw InvalidArgument("checkpoint: bad magic, not an FTTNN checkpoint");
  const auto version = detail::get_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw InvalidArgument("checkpoint: unsupported version " + std::to_string(version));
  const auto d = detail::get_le<std::uint32_t>(is, "dimension");
  if (d < 1 || d > 10000) throw InvalidArgument("checkpoint: implausible dimension " + std::to_string(d));
  std::vector<int> ranks(d + 1);
  for (auto& r : ranks) r = static_cast<int>(detail::get_le<std::uint32_t>(is, "ranks"));
  std::vector<CoreNetwork> cores;
  for (std::uint32_t i = 0; i < d; ++i) {
    const auto h = static_cast<int>(detail::get_le<std::uint32_t>(is, "hidden size"));
    const auto flag = detail::get_le<std::uint8_t>(is, "boundary flag");
    const double a = detail::get_le<double>(is, "boundary");
    const double b = detail::get_le<double>(is, "boundary");
    cores.emplace_back(ranks[i], ranks[i + 1], h, flag ? std::optional<Interval>(Interval{a, b}) : std::nullopt);
  }
  FTTModel model(std::move(cores));
  const auto count = detail::get_le<std::uint64_t>(is, "parameter count");
  if (count != model.param_count())
    throw InvalidArgument("checkpoint: parameter count " + std::to_string(count) + " does not match header shape (" +
                          std::to_string(model.param_count()) + ")");
  std::vector<double> params(count);
  for (auto& p : params) p = detail::get_le<double>(is, "parameters");
  model.set_params(params);
  return model;
}

inline void save_checkpoint(const std::string& path, const FTTModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ResourceError("checkpoint: cannot open '" + path + "' for writing");
  write_checkpoint(os, model);
}

inline FTTModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidArgument("checkpoint: cannot open '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace fttnn
