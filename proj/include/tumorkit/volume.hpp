#ifndef TUMORKIT_VOLUME_HPP
#define TUMORKIT_VOLUME_HPP

// Dense 3D grids with physical voxel spacing. Storage is row-major with
// width fastest: index = (z * height + y) * width + x.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tumorkit/errors.hpp"

namespace tumorkit {

struct Dims {
  std::size_t depth = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t voxels() const { return depth * height * width; }
  bool operator==(const Dims &) const = default;
};

/// Millimetres per voxel along (depth, height, width).
struct Spacing {
  double depth = 1.0;
  double height = 1.0;
  double width = 1.0;

  double voxel_volume() const { return depth * height * width; }
  bool operator==(const Spacing &) const = default;
};

struct Index3 {
  std::ptrdiff_t z = 0;
  std::ptrdiff_t y = 0;
  std::ptrdiff_t x = 0;
  bool operator==(const Index3 &) const = default;
};

inline std::string to_string(const Dims &d) {
  return std::to_string(d.depth) + "x" + std::to_string(d.height) + "x" +
         std::to_string(d.width);
}

template <typename T, typename Tag> class Grid {
public:
  using value_type = T;

  Grid() = default;

  Grid(Dims dims, Spacing spacing, T fill = T{})
      : dims_(dims), spacing_(spacing), data_(dims.voxels(), fill) {
    check_geometry();
  }

  Grid(Dims dims, Spacing spacing, std::vector<T> data)
      : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    check_geometry();
    if (data_.size() != dims_.voxels())
      throw ShapeError("payload has " + std::to_string(data_.size()) +
                       " voxels, dims " + to_string(dims_) + " need " +
                       std::to_string(dims_.voxels()));
  }

  const Dims &dims() const { return dims_; }
  const Spacing &spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T> &values() const { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T &operator[](std::size_t i) { return data_[i]; }

  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * dims_.height + y) * dims_.width + x;
  }
  T at(std::size_t z, std::size_t y, std::size_t x) const {
    return data_[index(z, y, x)];
  }
  T &at(std::size_t z, std::size_t y, std::size_t x) {
    return data_[index(z, y, x)];
  }

  Index3 coords(std::size_t i) const {
    const auto x = i % dims_.width;
    const auto rest = i / dims_.width;
    return {static_cast<std::ptrdiff_t>(rest / dims_.height),
            static_cast<std::ptrdiff_t>(rest % dims_.height),
            static_cast<std::ptrdiff_t>(x)};
  }

  bool contains(const Index3 &c) const {
    return c.z >= 0 && c.y >= 0 && c.x >= 0 &&
           c.z < static_cast<std::ptrdiff_t>(dims_.depth) &&
           c.y < static_cast<std::ptrdiff_t>(dims_.height) &&
           c.x < static_cast<std::ptrdiff_t>(dims_.width);
  }

  template <typename U, typename OtherTag>
  bool same_geometry(const Grid<U, OtherTag> &other) const {
    return dims_ == other.dims() && spacing_ == other.spacing();
  }

  bool operator==(const Grid &) const = default;

private:
  void check_geometry() const {
    if (dims_.depth == 0 || dims_.height == 0 || dims_.width == 0)
      throw ShapeError("dims must be positive, got " + to_string(dims_));
    for (double s : {spacing_.depth, spacing_.height, spacing_.width})
      if (!(s > 0.0) || !std::isfinite(s))
        throw ShapeError("spacing components must be finite and > 0");
  }

  Dims dims_;
  Spacing spacing_;
  std::vector<T> data_;
};

struct ImageTag {};
struct LabelTag {};
struct MaskTag {};

/// Scalar image (intensities, probabilities, distances).
using Volume3 = Grid<float, ImageTag>;
/// Tumor labels: 0 background, 1 NC, 2 ED, 3 ET.
using LabelVolume = Grid<std::uint8_t, LabelTag>;
/// Binary mask; every nonzero byte counts as true.
using BinaryMask = Grid<std::uint8_t, MaskTag>;

enum Label : std::uint8_t {
  kBackground = 0,
  kNonEnhancing = 1,
  kEdema = 2,
  kEnhancing = 3,
};

template <typename A, typename TA, typename B, typename TB>
void require_same_dims(const Grid<A, TA> &a, const Grid<B, TB> &b,
                       std::string_view what) {
  if (a.dims() != b.dims())
    throw ShapeError(std::string(what) + ": dims " + to_string(a.dims()) +
                     " vs " + to_string(b.dims()));
}

template <typename A, typename TA, typename B, typename TB>
void require_same_geometry(const Grid<A, TA> &a, const Grid<B, TB> &b,
                           std::string_view what) {
  require_same_dims(a, b, what);
  if (a.spacing() != b.spacing())
    throw ShapeError(std::string(what) + ": spacing mismatch");
}

inline std::size_t count_true(const BinaryMask &m) {
  std::size_t n = 0;
  for (auto v : m.data())
    n += v != 0;
  return n;
}

template <typename Pred>
BinaryMask make_mask(const LabelVolume &labels, Pred &&pred) {
  BinaryMask out(labels.dims(), labels.spacing());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i] = pred(labels[i]) ? 1 : 0;
  return out;
}

/// Channels for the three nested evaluation regions.
enum class Region { WT, TC, ET };

inline constexpr std::array<Region, 3> kRegions = {Region::ET, Region::TC,
                                                   Region::WT};

inline const char *region_name(Region r) {
  switch (r) {
  case Region::WT:
    return "WT";
  case Region::TC:
    return "TC";
  case Region::ET:
    return "ET";
  }
  return "?";
}

/// Three aligned [0,1] channels keyed WT, TC, ET.
class ProbabilityStack {
public:
  ProbabilityStack() = default;
  ProbabilityStack(Volume3 wt, Volume3 tc, Volume3 et)
      : wt_(std::move(wt)), tc_(std::move(tc)), et_(std::move(et)) {
    if (!wt_.same_geometry(tc_) || !wt_.same_geometry(et_))
      throw ShapeError("probability channels must share dims and spacing");
    for (const Volume3 *ch : {&wt_, &tc_, &et_})
      for (float v : ch->data())
        if (!(v >= 0.0f && v <= 1.0f))
          throw RangeError("probability outside [0,1]");
  }

  const Dims &dims() const { return wt_.dims(); }
  const Spacing &spacing() const { return wt_.spacing(); }

  const Volume3 &channel(Region r) const {
    switch (r) {
    case Region::WT:
      return wt_;
    case Region::TC:
      return tc_;
    default:
      return et_;
    }
  }
  const Volume3 &wt() const { return wt_; }
  const Volume3 &tc() const { return tc_; }
  const Volume3 &et() const { return et_; }

  bool operator==(const ProbabilityStack &) const = default;

private:
  Volume3 wt_, tc_, et_;
};

struct LabelViolation {
  std::size_t index;
  std::uint8_t value;
  bool operator==(const LabelViolation &) const = default;
};

inline constexpr std::size_t kMaxReportedViolations = 100;

/// Voxels whose label is outside {0,1,2,3}; empty means valid. Capped at
/// kMaxReportedViolations entries.
inline std::vector<LabelViolation>
validate_label_volume(const LabelVolume &v) {
  std::vector<LabelViolation> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > kEnhancing) {
      out.push_back({i, v[i]});
      if (out.size() == kMaxReportedViolations)
        break;
    }
  }
  return out;
}

inline void require_valid_labels(const LabelVolume &v) {
  auto bad = validate_label_volume(v);
  if (!bad.empty())
    throw LabelError("invalid label " + std::to_string(bad.front().value) +
                     " at index " + std::to_string(bad.front().index));
}

} // namespace tumorkit

#endif // TUMORKIT_VOLUME_HPP
