#ifndef TUMORKIT_REGION_CODEC_HPP
#define TUMORKIT_REGION_CODEC_HPP

// Label maps <-> nested region channels (WT = {1,2,3}, TC = {1,3}, ET = {3}),
// ensemble probability fusion and enhancing-tumor post-processing.

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "tumorkit/errors.hpp"
#include "tumorkit/morphology.hpp"
#include "tumorkit/volume.hpp"

namespace tumorkit {

inline bool in_region(std::uint8_t label, Region r) {
  switch (r) {
  case Region::WT:
    return label == kNonEnhancing || label == kEdema || label == kEnhancing;
  case Region::TC:
    return label == kNonEnhancing || label == kEnhancing;
  case Region::ET:
    return label == kEnhancing;
  }
  return false;
}

inline BinaryMask region_mask(const LabelVolume &labels, Region r) {
  return make_mask(labels, [r](std::uint8_t l) { return in_region(l, r); });
}

/// Binary-valued stack of the three regions.
inline ProbabilityStack labels_to_regions(const LabelVolume &labels) {
  require_valid_labels(labels);
  auto channel = [&](Region r) {
    Volume3 v(labels.dims(), labels.spacing());
    for (std::size_t i = 0; i < labels.size(); ++i)
      v[i] = in_region(labels[i], r) ? 1.0f : 0.0f;
    return v;
  };
  return {channel(Region::WT), channel(Region::TC), channel(Region::ET)};
}

struct DecodeConfig {
  double tau_wt = 0.5;
  double tau_tc = 0.5;
  double tau_et = 0.5;

  void validate() const {
    for (double t : {tau_wt, tau_tc, tau_et})
      if (!(t > 0.0 && t < 1.0))
        throw ConfigError("decode thresholds must lie strictly inside (0,1)");
  }
};

/// Hierarchical decode: ET -> 3, else TC -> 1 (NC), else WT -> 2 (ED), else 0.
/// Output regions are nested by construction.
inline LabelVolume regions_to_labels(const ProbabilityStack &p,
                                     const DecodeConfig &cfg = {}) {
  cfg.validate();
  LabelVolume out(p.dims(), p.spacing());
  const auto wt = p.wt().data(), tc = p.tc().data(), et = p.et().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (float v : {wt[i], tc[i], et[i]})
      if (!(v >= 0.0f && v <= 1.0f))
        throw RangeError("probability outside [0,1] at index " +
                         std::to_string(i));
    if (et[i] >= cfg.tau_et)
      out[i] = kEnhancing;
    else if (tc[i] >= cfg.tau_tc)
      out[i] = kNonEnhancing;
    else if (wt[i] >= cfg.tau_wt)
      out[i] = kEdema;
    else
      out[i] = kBackground;
  }
  return out;
}

/// Per-channel, per-voxel weighted arithmetic mean; uniform weights when
/// none are given.
inline ProbabilityStack
fuse_ensemble(std::span<const ProbabilityStack> stacks,
              std::optional<std::span<const double>> weights = std::nullopt) {
  if (stacks.empty())
    throw ArityError("fuse_ensemble needs at least one stack");
  for (const auto &s : stacks)
    if (s.dims() != stacks.front().dims() ||
        s.spacing() != stacks.front().spacing())
      throw ShapeError("ensemble members differ in dims or spacing");

  std::vector<double> w(stacks.size(), 1.0);
  if (weights) {
    if (weights->size() != stacks.size())
      throw ArityError("weights count differs from stack count");
    double total = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (!((*weights)[k] >= 0.0) || !std::isfinite((*weights)[k]))
        throw ConfigError("weights must be finite and non-negative");
      w[k] = (*weights)[k];
      total += w[k];
    }
    if (!(total > 0.0))
      throw ConfigError("weights must have a positive sum");
  }
  double wsum = 0.0;
  for (double x : w)
    wsum += x;

  const auto &ref = stacks.front();
  auto fuse = [&](Region r) {
    Volume3 out(ref.dims(), ref.spacing());
    for (std::size_t i = 0; i < out.size(); ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < stacks.size(); ++k)
        acc += w[k] * stacks[k].channel(r)[i];
      out[i] = static_cast<float>(std::clamp(acc / wsum, 0.0, 1.0));
    }
    return out;
  };
  return {fuse(Region::WT), fuse(Region::TC), fuse(Region::ET)};
}

struct PostprocessConfig {
  std::size_t et_total_min = 200;
  std::size_t et_component_min = 10;
  std::uint8_t relabel_target = kNonEnhancing;
  Connectivity connectivity = Connectivity::twentysix;

  void validate() const {
    if (relabel_target > kEdema)
      throw ConfigError("relabel_target must be 0, 1 or 2");
  }
};

/// Enhancing-tumor cleanup. ET is dropped entirely (relabelled to
/// relabel_target) when its total volume is below et_total_min; otherwise
/// components smaller than et_component_min are dropped, and the total check
/// is repeated on what remains so that the operation is idempotent.
inline LabelVolume postprocess_enhancing(const LabelVolume &labels,
                                         const PostprocessConfig &cfg = {}) {
  cfg.validate();
  require_valid_labels(labels);
  LabelVolume out = labels;
  auto et = region_mask(labels, Region::ET);
  std::size_t total = count_true(et);
  if (total == 0)
    return out;

  auto drop_all = [&] {
    for (auto &v : out.data())
      if (v == kEnhancing)
        v = cfg.relabel_target;
  };
  if (total < cfg.et_total_min) {
    drop_all();
    return out;
  }
  for (const auto &c : connected_components(et, cfg.connectivity).components) {
    if (c.volume_voxels >= cfg.et_component_min)
      continue;
    for (auto i : c.voxels)
      out[i] = cfg.relabel_target;
    total -= c.volume_voxels;
  }
  if (total < cfg.et_total_min)
    drop_all();
  return out;
}

} // namespace tumorkit

#endif // TUMORKIT_REGION_CODEC_HPP
