#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fttnn/errors.hpp"
#include "fttnn/quadrature.hpp"

namespace fttnn {

using Box = std::vector<Interval>;

/// Union of pairwise-disjoint axis-aligned boxes (disjoint up to measure zero).
class BoxDomain {
 public:
  BoxDomain() = default;
  explicit BoxDomain(std::vector<Box> boxes) : boxes_(std::move(boxes)) {
    if (boxes_.empty()) throw InvalidArgument("BoxDomain: needs at least one box");
    const std::size_t d = boxes_.front().size();
    if (d == 0) throw InvalidArgument("BoxDomain: boxes must have dimension >= 1");
    for (const auto& b : boxes_) {
      if (b.size() != d) throw InvalidArgument("BoxDomain: boxes have inconsistent dimensions");
      for (const auto& iv : b) check_interval(iv);
    }
    for (std::size_t i = 0; i < boxes_.size(); ++i)
      for (std::size_t j = i + 1; j < boxes_.size(); ++j)
        if (overlap_volume(boxes_[i], boxes_[j]) > 0.0)
          throw InvalidArgument("BoxDomain: boxes " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
  }

  static BoxDomain cube(int d, Interval iv) { return BoxDomain({Box(static_cast<std::size_t>(d), iv)}); }

  int dim() const { return boxes_.empty() ? 0 : static_cast<int>(boxes_.front().size()); }
  const std::vector<Box>& boxes() const { return boxes_; }

  double volume() const {
    double v = 0.0;
    for (const auto& b : boxes_) v += box_volume(b);
    return v;
  }

  /// Membership in the closure of the union.
  bool contains(std::span<const double> x) const {
    for (const auto& b : boxes_) {
      bool inside = true;
      for (std::size_t i = 0; i < b.size() && inside; ++i) inside = b[i].contains(x[i]);
      if (inside) return true;
    }
    return false;
  }

  Box bounding_box() const {
    Box bb = boxes_.front();
    for (const auto& b : boxes_)
      for (std::size_t i = 0; i < b.size(); ++i) {
        bb[i].a = std::min(bb[i].a, b[i].a);
        bb[i].b = std::max(bb[i].b, b[i].b);
      }
    return bb;
  }

  static double box_volume(const Box& b) {
    double v = 1.0;
    for (const auto& iv : b) v *= iv.length();
    return v;
  }

 private:
  static double overlap_volume(const Box& x, const Box& y) {
    double v = 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double lo = std::max(x[i].a, y[i].a);
      const double hi = std::min(x[i].b, y[i].b);
      if (hi <= lo) return 0.0;
      v *= hi - lo;
    }
    return v;
  }

  std::vector<Box> boxes_;
};

/// A tensor-product quadrature region: one 1-D rule per dimension.
struct Region {
  std::vector<Rule1D> rules;

  double measure() const {
    double m = 1.0;
    for (const auto& r : rules) m *= r.weight_sum();
    return m;
  }
};

/// Composite Gauss regions, one per box, with per-box per-dimension settings.
inline std::vector<Region> interior_regions(const BoxDomain& domain,
                                            const std::vector<std::vector<QuadratureSpec>>& per_box) {
  if (per_box.size() != domain.boxes().size())
    throw InvalidArgument("interior_regions: need quadrature settings for every box");
  std::vector<Region> regions;
  for (std::size_t b = 0; b < domain.boxes().size(); ++b) {
    const Box& box = domain.boxes()[b];
    if (per_box[b].size() != box.size()) throw InvalidArgument("interior_regions: quadrature/box dimension mismatch");
    Region r;
    for (std::size_t i = 0; i < box.size(); ++i) r.rules.push_back(composite_grid(box[i], per_box[b][i]));
    regions.push_back(std::move(r));
  }
  return regions;
}

inline std::vector<Region> interior_regions(const BoxDomain& domain, QuadratureSpec uniform) {
  std::vector<std::vector<QuadratureSpec>> per_box(domain.boxes().size(),
                                                   std::vector<QuadratureSpec>(domain.dim(), uniform));
  return interior_regions(domain, per_box);
}

/// One exterior boundary piece: a face rectangle with `axis` pinned at `coord`.
struct FacePatch {
  int axis = 0;
  double coord = 0.0;
  Box extent;  // extent[axis] is degenerate and ignored
};

/// Exterior faces of the box union, split so that facets shared by two boxes
/// (matched by exact coordinate equality) are removed.
inline std::vector<FacePatch> exterior_faces(const BoxDomain& domain) {
  const int d = domain.dim();
  const auto& boxes = domain.boxes();
  std::vector<FacePatch> patches;
  for (std::size_t ib = 0; ib < boxes.size(); ++ib) {
    const Box& A = boxes[ib];
    for (int m = 0; m < d; ++m) {
      for (int side = 0; side < 2; ++side) {
        const double c = side == 0 ? A[m].a : A[m].b;
        std::vector<Box> covered;
        for (std::size_t jb = 0; jb < boxes.size(); ++jb) {
          if (jb == ib) continue;
          const Box& B = boxes[jb];
          const double touch = side == 0 ? B[m].b : B[m].a;
          if (touch != c) continue;
          Box rect = A;
          bool positive = true;
          for (int j = 0; j < d && positive; ++j) {
            if (j == m) continue;
            rect[j].a = std::max(A[j].a, B[j].a);
            rect[j].b = std::min(A[j].b, B[j].b);
            positive = rect[j].b > rect[j].a;
          }
          if (positive) covered.push_back(rect);
        }
        // Split the face at every covered-rectangle breakpoint.
        std::vector<std::vector<double>> cuts(d);
        for (int j = 0; j < d; ++j) {
          if (j == m) continue;
          cuts[j] = {A[j].a, A[j].b};
          for (const auto& r : covered)
            for (double v : {r[j].a, r[j].b})
              if (v > A[j].a && v < A[j].b) cuts[j].push_back(v);
          std::sort(cuts[j].begin(), cuts[j].end());
          cuts[j].erase(std::unique(cuts[j].begin(), cuts[j].end()), cuts[j].end());
        }
        std::vector<std::size_t> idx(d, 0);
        while (true) {
          FacePatch p{m, c, A};
          std::vector<double> centre(d, c);
          for (int j = 0; j < d; ++j) {
            if (j == m) continue;
            p.extent[j] = Interval{cuts[j][idx[j]], cuts[j][idx[j] + 1]};
            centre[j] = 0.5 * (p.extent[j].a + p.extent[j].b);
          }
          p.extent[m] = Interval{c, c};
          bool hidden = false;
          for (const auto& r : covered) {
            bool in = true;
            for (int j = 0; j < d && in; ++j)
              if (j != m) in = r[j].a < centre[j] && centre[j] < r[j].b;
            if (in) {
              hidden = true;
              break;
            }
          }
          if (!hidden) patches.push_back(p);
          int j = d - 1;
          for (; j >= 0; --j) {
            if (j == m) continue;
            if (++idx[j] + 1 < cuts[j].size()) break;
            idx[j] = 0;
          }
          if (j < 0) break;
        }
      }
    }
  }
  return patches;
}

/// Rectangle-rule regions over the exterior boundary: cell midpoints with spacing
/// about dx (round(len / dx) cells per free axis), the pinned axis a unit-weight point.
inline std::vector<Region> boundary_regions(const BoxDomain& domain, double dx) {
  if (!(dx > 0.0)) throw InvalidArgument("boundary_regions: dx must be > 0");
  std::vector<Region> regions;
  for (const auto& p : exterior_faces(domain)) {
    Region r;
    for (int j = 0; j < domain.dim(); ++j) {
      if (j == p.axis) {
        r.rules.push_back(point_rule(p.coord));
      } else {
        const int cells = std::max(1, static_cast<int>(std::lround(p.extent[j].length() / dx)));
        r.rules.push_back(midpoint_rule(p.extent[j], cells));
      }
    }
    regions.push_back(std::move(r));
  }
  return regions;
}

}  // namespace fttnn
