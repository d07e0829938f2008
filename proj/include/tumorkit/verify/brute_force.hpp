#ifndef TUMORKIT_VERIFY_BRUTE_FORCE_HPP
#define TUMORKIT_VERIFY_BRUTE_FORCE_HPP

// Exhaustive reference implementations. These deliberately share no code
// with the morphology and metrics modules: coordinates are enumerated
// directly and every distance is an all-pairs minimum.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "tumorkit/volume.hpp"

namespace tumorkit::verify {

struct Voxel {
  long z, y, x;
};

inline std::vector<Voxel> voxels_of(const BinaryMask &m) {
  std::vector<Voxel> out;
  const auto &d = m.dims();
  for (std::size_t z = 0; z < d.depth; ++z)
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x)
        if (m.at(z, y, x))
          out.push_back({static_cast<long>(z), static_cast<long>(y),
                         static_cast<long>(x)});
  return out;
}

/// Dice as an exact ratio of integers.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 0;
  double value() const {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
  }
};

inline Ratio dice_ratio(const BinaryMask &a, const BinaryMask &b) {
  Ratio r;
  const auto &d = a.dims();
  for (std::size_t z = 0; z < d.depth; ++z)
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x) {
        const bool p = a.at(z, y, x) != 0, q = b.at(z, y, x) != 0;
        r.num += 2 * (p && q);
        r.den += p + q;
      }
  return r;
}

inline bool is_surface(const BinaryMask &m, long z, long y, long x) {
  const auto &d = m.dims();
  auto on = [&](long zz, long yy, long xx) {
    if (zz < 0 || yy < 0 || xx < 0 || zz >= static_cast<long>(d.depth) ||
        yy >= static_cast<long>(d.height) || xx >= static_cast<long>(d.width))
      return false;
    return m.at(static_cast<std::size_t>(zz), static_cast<std::size_t>(yy),
                static_cast<std::size_t>(xx)) != 0;
  };
  if (!on(z, y, x))
    return false;
  return !on(z - 1, y, x) || !on(z + 1, y, x) || !on(z, y - 1, x) ||
         !on(z, y + 1, x) || !on(z, y, x - 1) || !on(z, y, x + 1);
}

inline std::vector<Voxel> surface_of(const BinaryMask &m) {
  std::vector<Voxel> out;
  for (const auto &v : voxels_of(m))
    if (is_surface(m, v.z, v.y, v.x))
      out.push_back(v);
  return out;
}

inline double distance(const Voxel &a, const Voxel &b, const Spacing &s) {
  const double dz = static_cast<double>(a.z - b.z) * s.depth;
  const double dy = static_cast<double>(a.y - b.y) * s.height;
  const double dx = static_cast<double>(a.x - b.x) * s.width;
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

inline double nearest(const Voxel &v, const std::vector<Voxel> &set,
                      const Spacing &s) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto &w : set)
    best = std::min(best, distance(v, w, s));
  return best;
}

/// All-pairs distance transform.
inline std::vector<double> distance_transform(const BinaryMask &m,
                                              const Spacing &s) {
  const auto sites = voxels_of(m);
  std::vector<double> out(m.size());
  const auto &d = m.dims();
  for (std::size_t z = 0; z < d.depth; ++z)
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x)
        out[m.index(z, y, x)] =
            nearest({static_cast<long>(z), static_cast<long>(y),
                     static_cast<long>(x)},
                    sites, s);
  return out;
}

inline std::vector<double> pooled_surface_distances(const BinaryMask &a,
                                                    const BinaryMask &b,
                                                    const Spacing &s) {
  const auto sa = surface_of(a), sb = surface_of(b);
  std::vector<double> out;
  for (const auto &v : sa)
    out.push_back(nearest(v, sb, s));
  for (const auto &v : sb)
    out.push_back(nearest(v, sa, s));
  return out;
}

/// Fully sorted pooled distances, nearest-rank 95th percentile.
inline double hd95(const BinaryMask &a, const BinaryMask &b, const Spacing &s) {
  auto d = pooled_surface_distances(a, b, s);
  std::sort(d.begin(), d.end());
  const std::size_t rank = (95 * d.size() + 99) / 100; // ceil(0.95 n)
  return d[rank - 1];
}

} // namespace tumorkit::verify

#endif // TUMORKIT_VERIFY_BRUTE_FORCE_HPP
