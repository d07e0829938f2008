#ifndef TUMORKIT_MORPHOLOGY_HPP
#define TUMORKIT_MORPHOLOGY_HPP

// Binary-mask morphology: connected components, dilation, surface voxels and
// an exact, spacing-aware Euclidean distance transform.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "tumorkit/errors.hpp"
#include "tumorkit/volume.hpp"

namespace tumorkit {

enum class Connectivity { six = 6, eighteen = 18, twentysix = 26 };

inline Connectivity connectivity_from_int(int n) {
  switch (n) {
  case 6:
    return Connectivity::six;
  case 18:
    return Connectivity::eighteen;
  case 26:
    return Connectivity::twentysix;
  default:
    throw ConfigError("connectivity must be 6, 18 or 26, got " +
                      std::to_string(n));
  }
}

/// Neighbor offsets of a voxel: 6 shares a face, 18 a face or edge, 26 any
/// face, edge or corner.
inline std::vector<Index3> neighborhood(Connectivity c) {
  std::vector<Index3> out;
  for (std::ptrdiff_t dz = -1; dz <= 1; ++dz)
    for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
      for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
        const int nonzero = (dz != 0) + (dy != 0) + (dx != 0);
        if (nonzero == 0)
          continue;
        if ((c == Connectivity::six && nonzero > 1) ||
            (c == Connectivity::eighteen && nonzero > 2))
          continue;
        out.push_back({dz, dy, dx});
      }
  return out;
}

struct Lesion {
  int id = 0;
  std::vector<std::size_t> voxels; // ascending flat indices
  std::size_t volume_voxels = 0;
  double volume_mm3 = 0.0;
};

/// Connected components of a mask. Ids run from 1 in order of descending
/// volume; equal volumes are ordered by smallest flat index.
struct LesionSet {
  Dims dims;
  Spacing spacing;
  std::vector<Lesion> components;

  std::size_t size() const { return components.size(); }
  bool empty() const { return components.empty(); }

  /// Per-voxel component id, 0 for background.
  std::vector<std::int32_t> label_map() const {
    std::vector<std::int32_t> out(dims.voxels(), 0);
    for (const auto &c : components)
      for (auto i : c.voxels)
        out[i] = c.id;
    return out;
  }

  BinaryMask component_mask(const Lesion &c) const {
    BinaryMask m(dims, spacing);
    for (auto i : c.voxels)
      m[i] = 1;
    return m;
  }
};

inline LesionSet connected_components(const BinaryMask &mask,
                                      Connectivity conn = Connectivity::twentysix) {
  LesionSet out{mask.dims(), mask.spacing(), {}};
  const auto offsets = neighborhood(conn);
  std::vector<std::uint8_t> visited(mask.size(), 0);
  std::vector<std::size_t> stack;

  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (!mask[seed] || visited[seed])
      continue;
    Lesion lesion;
    visited[seed] = 1;
    stack.push_back(seed);
    while (!stack.empty()) {
      const auto cur = stack.back();
      stack.pop_back();
      lesion.voxels.push_back(cur);
      const auto c = mask.coords(cur);
      for (const auto &o : offsets) {
        const Index3 n{c.z + o.z, c.y + o.y, c.x + o.x};
        if (!mask.contains(n))
          continue;
        const auto ni = mask.index(static_cast<std::size_t>(n.z),
                                   static_cast<std::size_t>(n.y),
                                   static_cast<std::size_t>(n.x));
        if (mask[ni] && !visited[ni]) {
          visited[ni] = 1;
          stack.push_back(ni);
        }
      }
    }
    std::sort(lesion.voxels.begin(), lesion.voxels.end());
    lesion.volume_voxels = lesion.voxels.size();
    lesion.volume_mm3 =
        static_cast<double>(lesion.volume_voxels) * mask.spacing().voxel_volume();
    out.components.push_back(std::move(lesion));
  }

  // Seeds are visited in scan order, so a stable sort by volume leaves ties
  // ordered by their minimum flat index.
  std::stable_sort(out.components.begin(), out.components.end(),
                   [](const Lesion &a, const Lesion &b) {
                     return a.volume_voxels > b.volume_voxels;
                   });
  for (std::size_t k = 0; k < out.components.size(); ++k)
    out.components[k].id = static_cast<int>(k + 1);
  return out;
}

struct StructuringElement {
  enum class Kind { ball, cube };
  Kind kind = Kind::ball;
  int radius = 0; // voxels

  static StructuringElement ball(int r) { return {Kind::ball, r}; }
  static StructuringElement cube(int r) { return {Kind::cube, r}; }

  /// Offsets covered by the element, in voxel units.
  std::vector<Index3> offsets() const {
    if (radius < 0)
      throw ConfigError("structuring element radius must be >= 0");
    std::vector<Index3> out;
    const std::ptrdiff_t r = radius;
    for (std::ptrdiff_t dz = -r; dz <= r; ++dz)
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx)
          if (kind == Kind::cube || dz * dz + dy * dy + dx * dx <= r * r)
            out.push_back({dz, dy, dx});
    return out;
  }
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// One pass of the lower-envelope squared distance transform along a line:
/// out[p] = min_q (step * (p - q))^2 + f[q]. Sites with f = inf are skipped.
/// Scratch buffers are owned by the caller.
inline void edt_line(const double *f, double *out, std::size_t n, double step,
                     std::vector<std::size_t> &sites,
                     std::vector<double> &bounds) {
  sites.clear();
  bounds.clear();
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf)
      continue;
    const double pq = step * static_cast<double>(q);
    while (!sites.empty()) {
      const auto v = sites.back();
      const double pv = step * static_cast<double>(v);
      const double s =
          ((f[q] + pq * pq) - (f[v] + pv * pv)) / (2.0 * (pq - pv));
      if (s <= bounds.back()) {
        sites.pop_back();
        bounds.pop_back();
      } else {
        sites.push_back(q);
        bounds.push_back(s);
        break;
      }
    }
    if (sites.empty()) {
      sites.push_back(q);
      bounds.push_back(-kInf);
    }
  }
  if (sites.empty()) {
    std::fill(out, out + n, kInf);
    return;
  }
  std::size_t k = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const double pp = step * static_cast<double>(p);
    while (k + 1 < sites.size() && bounds[k + 1] < pp)
      ++k;
    const double d = step * (static_cast<double>(p) - static_cast<double>(sites[k]));
    out[p] = d * d + f[sites[k]];
  }
}

/// Applies edt_line along every line of one axis (0 depth, 1 height,
/// 2 width) of a dense grid, in place.
inline void edt_axis(std::vector<double> &g, const Dims &dims, int axis,
                     double step) {
  const std::size_t D = dims.depth, H = dims.height, W = dims.width;
  std::size_t n, stride, lines_outer, lines_inner, outer_stride, inner_stride;
  if (axis == 2) {
    n = W, stride = 1;
    lines_outer = D, outer_stride = H * W, lines_inner = H, inner_stride = W;
  } else if (axis == 1) {
    n = H, stride = W;
    lines_outer = D, outer_stride = H * W, lines_inner = W, inner_stride = 1;
  } else {
    n = D, stride = H * W;
    lines_outer = H, outer_stride = W, lines_inner = W, inner_stride = 1;
  }
  std::vector<double> in(n), out(n), bounds;
  std::vector<std::size_t> sites;
  for (std::size_t a = 0; a < lines_outer; ++a)
    for (std::size_t b = 0; b < lines_inner; ++b) {
      const std::size_t base = a * outer_stride + b * inner_stride;
      for (std::size_t i = 0; i < n; ++i)
        in[i] = g[base + i * stride];
      edt_line(in.data(), out.data(), n, step, sites, bounds);
      for (std::size_t i = 0; i < n; ++i)
        g[base + i * stride] = out[i];
    }
}

/// Squared distance from every voxel to the nearest true voxel, with
/// per-axis steps. Infinite everywhere if the mask is empty.
inline std::vector<double> squared_edt(const BinaryMask &mask,
                                       const Spacing &steps) {
  std::vector<double> g(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    g[i] = mask[i] ? 0.0 : kInf;
  edt_axis(g, mask.dims(), 2, steps.width);
  edt_axis(g, mask.dims(), 1, steps.height);
  edt_axis(g, mask.dims(), 0, steps.depth);
  return g;
}

/// Running maximum over a window of +-r along one axis.
inline void max_filter_axis(std::vector<std::uint8_t> &g, const Dims &dims,
                            int axis, int r) {
  const std::size_t D = dims.depth, H = dims.height, W = dims.width;
  std::size_t n, stride, lines_outer, lines_inner, outer_stride, inner_stride;
  if (axis == 2) {
    n = W, stride = 1;
    lines_outer = D, outer_stride = H * W, lines_inner = H, inner_stride = W;
  } else if (axis == 1) {
    n = H, stride = W;
    lines_outer = D, outer_stride = H * W, lines_inner = W, inner_stride = 1;
  } else {
    n = D, stride = H * W;
    lines_outer = H, outer_stride = W, lines_inner = W, inner_stride = 1;
  }
  std::vector<std::uint8_t> in(n);
  std::vector<std::ptrdiff_t> left(n);
  const auto rr = static_cast<std::ptrdiff_t>(r);
  const auto nn = static_cast<std::ptrdiff_t>(n);
  for (std::size_t a = 0; a < lines_outer; ++a)
    for (std::size_t b = 0; b < lines_inner; ++b) {
      const std::size_t base = a * outer_stride + b * inner_stride;
      for (std::size_t i = 0; i < n; ++i)
        in[i] = g[base + i * stride];
      // Distance to the most recent true sample, swept both ways.
      std::ptrdiff_t last = -nn - rr - 1;
      for (std::ptrdiff_t i = 0; i < nn; ++i) {
        if (in[static_cast<std::size_t>(i)])
          last = i;
        left[static_cast<std::size_t>(i)] = i - last;
      }
      last = 2 * nn + rr + 1;
      for (std::ptrdiff_t i = nn - 1; i >= 0; --i) {
        if (in[static_cast<std::size_t>(i)])
          last = i;
        const auto dl = left[static_cast<std::size_t>(i)];
        const auto dr = last - i;
        g[base + static_cast<std::size_t>(i) * stride] =
            (dl <= rr || dr <= rr) ? 1 : 0;
      }
    }
}

} // namespace detail

/// A voxel is true iff some true voxel of `mask` lies within the element
/// centered there. Ball membership is |offset|^2 <= r^2 in voxel units.
inline BinaryMask dilate(const BinaryMask &mask,
                         StructuringElement element = StructuringElement::ball(3)) {
  if (element.radius < 0)
    throw ConfigError("structuring element radius must be >= 0");
  BinaryMask out(mask.dims(), mask.spacing());
  if (element.radius == 0) {
    for (std::size_t i = 0; i < mask.size(); ++i)
      out[i] = mask[i] ? 1 : 0;
    return out;
  }
  if (element.kind == StructuringElement::Kind::cube) {
    std::vector<std::uint8_t> g(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
      g[i] = mask[i] ? 1 : 0;
    for (int axis = 0; axis < 3; ++axis)
      detail::max_filter_axis(g, mask.dims(), axis, element.radius);
    for (std::size_t i = 0; i < g.size(); ++i)
      out[i] = g[i];
    return out;
  }
  // Ball: squared voxel-unit distances are exact integers, so thresholding
  // the transform at r^2 reproduces the offset footprint exactly.
  const auto d2 = detail::squared_edt(mask, Spacing{1.0, 1.0, 1.0});
  const double r2 = static_cast<double>(element.radius) * element.radius;
  for (std::size_t i = 0; i < mask.size(); ++i)
    out[i] = d2[i] <= r2 ? 1 : 0;
  return out;
}

/// True voxels with at least one 6-neighbor that is false or off the grid.
inline std::vector<std::size_t> surface_voxels(const BinaryMask &mask) {
  std::vector<std::size_t> out;
  const auto &d = mask.dims();
  for (std::size_t z = 0; z < d.depth; ++z)
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x) {
        const auto i = mask.index(z, y, x);
        if (!mask[i])
          continue;
        const bool border = z == 0 || y == 0 || x == 0 || z + 1 == d.depth ||
                            y + 1 == d.height || x + 1 == d.width;
        if (border || !mask[i - 1] || !mask[i + 1] || !mask[i - d.width] ||
            !mask[i + d.width] || !mask[i - d.width * d.height] ||
            !mask[i + d.width * d.height])
          out.push_back(i);
      }
  return out;
}

inline BinaryMask surface_mask(const BinaryMask &mask) {
  BinaryMask out(mask.dims(), mask.spacing());
  for (auto i : surface_voxels(mask))
    out[i] = 1;
  return out;
}

/// Exact Euclidean distance (mm, using the mask's spacing) from every voxel
/// to the nearest true voxel. Throws EmptyMaskError on an empty mask.
inline std::vector<double> distance_transform_exact(const BinaryMask &mask,
                                                    const Spacing &steps) {
  if (count_true(mask) == 0)
    throw EmptyMaskError("distance transform of an empty mask");
  auto d = detail::squared_edt(mask, steps);
  for (auto &v : d)
    v = std::sqrt(v);
  return d;
}

/// Float-valued convenience wrapper over distance_transform_exact.
inline Volume3 distance_transform(const BinaryMask &mask) {
  const auto d = distance_transform_exact(mask, mask.spacing());
  std::vector<float> data(d.begin(), d.end());
  return Volume3(mask.dims(), mask.spacing(), std::move(data));
}

} // namespace tumorkit

#endif // TUMORKIT_MORPHOLOGY_HPP
