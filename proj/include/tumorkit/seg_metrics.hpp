#ifndef TUMORKIT_SEG_METRICS_HPP
#define TUMORKIT_SEG_METRICS_HPP

// Segmentation overlap and boundary metrics: Dice, HD95, and the legacy and
// lesion-wise per-case protocols over the WT/TC/ET regions.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorkit/errors.hpp"
#include "tumorkit/format.hpp"
#include "tumorkit/morphology.hpp"
#include "tumorkit/region_codec.hpp"
#include "tumorkit/volume.hpp"

namespace tumorkit {

/// HD95 in millimetres (spacing-weighted) or in unit voxels.
enum class DistanceUnits { mm, voxel };

inline double dice(const BinaryMask &pred, const BinaryMask &gt) {
  require_same_dims(pred, gt, "dice");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    a += p;
    b += g;
    both += p && g;
  }
  if (a + b == 0)
    return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

namespace detail {

inline std::vector<std::size_t> true_indices(const BinaryMask &m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i])
      out.push_back(i);
  return out;
}

/// Dice from two ascending index lists.
inline double dice_sorted(const std::vector<std::size_t> &a,
                          const std::vector<std::size_t> &b) {
  if (a.empty() && b.empty())
    return 1.0;
  std::size_t both = 0;
  for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
    if (a[i] == b[j])
      ++both, ++i, ++j;
    else if (a[i] < b[j])
      ++i;
    else
      ++j;
  }
  return 2.0 * static_cast<double>(both) /
         static_cast<double>(a.size() + b.size());
}

/// Pooled symmetric surface distances for two nonempty voxel sets. Work is
/// restricted to the bounding box of A u B: every voxel outside it is false,
/// so surface membership and nearest-surface distances are unchanged.
inline std::vector<double> pooled_surface_distances(
    const std::vector<std::size_t> &a, const std::vector<std::size_t> &b,
    const Dims &dims, const Spacing &steps) {
  if (a.empty() || b.empty())
    throw EmptyMaskError("surface distance needs two nonempty masks");
  auto coords = [&](std::size_t i) {
    const auto x = i % dims.width;
    const auto rest = i / dims.width;
    return Index3{static_cast<std::ptrdiff_t>(rest / dims.height),
                  static_cast<std::ptrdiff_t>(rest % dims.height),
                  static_cast<std::ptrdiff_t>(x)};
  };
  Index3 lo{std::numeric_limits<std::ptrdiff_t>::max(),
            std::numeric_limits<std::ptrdiff_t>::max(),
            std::numeric_limits<std::ptrdiff_t>::max()};
  Index3 hi{-1, -1, -1};
  for (const auto *set : {&a, &b})
    for (auto i : *set) {
      const auto c = coords(i);
      lo = {std::min(lo.z, c.z), std::min(lo.y, c.y), std::min(lo.x, c.x)};
      hi = {std::max(hi.z, c.z), std::max(hi.y, c.y), std::max(hi.x, c.x)};
    }
  const Dims crop{static_cast<std::size_t>(hi.z - lo.z + 1),
                  static_cast<std::size_t>(hi.y - lo.y + 1),
                  static_cast<std::size_t>(hi.x - lo.x + 1)};
  BinaryMask ma(crop, steps), mb(crop, steps);
  auto local = [&](std::size_t i) {
    const auto c = coords(i);
    return ma.index(static_cast<std::size_t>(c.z - lo.z),
                    static_cast<std::size_t>(c.y - lo.y),
                    static_cast<std::size_t>(c.x - lo.x));
  };
  for (auto i : a)
    ma[local(i)] = 1;
  for (auto i : b)
    mb[local(i)] = 1;

  const auto sa = surface_mask(ma);
  const auto sb = surface_mask(mb);
  const auto to_b = distance_transform_exact(sb, steps);
  const auto to_a = distance_transform_exact(sa, steps);
  std::vector<double> pooled;
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (sa[i])
      pooled.push_back(to_b[i]);
  for (std::size_t i = 0; i < sb.size(); ++i)
    if (sb[i])
      pooled.push_back(to_a[i]);
  return pooled;
}

inline Spacing unit_steps(const Spacing &s, DistanceUnits units) {
  return units == DistanceUnits::mm ? s : Spacing{1.0, 1.0, 1.0};
}

/// Nearest-rank 95th percentile: sorted[ceil(0.95 n) - 1].
inline double percentile95(std::vector<double> values) {
  const std::size_t n = values.size();
  const std::size_t k = (95 * n + 99) / 100 - 1;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k),
                   values.end());
  return values[k];
}

inline double hd95_sorted(const std::vector<std::size_t> &a,
                          const std::vector<std::size_t> &b, const Dims &dims,
                          const Spacing &spacing, DistanceUnits units) {
  return percentile95(
      pooled_surface_distances(a, b, dims, unit_steps(spacing, units)));
}

} // namespace detail

/// Pooled distances from each mask's surface voxels to the nearest surface
/// voxel of the other mask.
inline std::vector<double>
surface_distances(const BinaryMask &pred, const BinaryMask &gt,
                  DistanceUnits units = DistanceUnits::mm) {
  require_same_geometry(pred, gt, "surface_distances");
  return detail::pooled_surface_distances(
      detail::true_indices(pred), detail::true_indices(gt), pred.dims(),
      detail::unit_steps(pred.spacing(), units));
}

inline double hd95(const BinaryMask &pred, const BinaryMask &gt,
                   DistanceUnits units = DistanceUnits::mm) {
  return detail::percentile95(surface_distances(pred, gt, units));
}

struct LesionWiseConfig {
  int dilation_radius = 3;
  std::size_t min_lesion_volume = 50;
  double penalty_hd95 = 374.0;
  double penalty_dsc = 0.0;
  Connectivity connectivity = Connectivity::twentysix;
  DistanceUnits units = DistanceUnits::mm;

  void validate() const {
    if (dilation_radius < 0)
      throw ConfigError("dilation radius must be >= 0");
    if (!(penalty_hd95 >= 0.0) || !(penalty_dsc >= 0.0) ||
        !std::isfinite(penalty_hd95) || penalty_dsc > 1.0)
      throw ConfigError("penalties must be non-negative (dsc within [0,1])");
  }
};

enum class MetricsMode { legacy, lesion_wise };

inline const char *mode_name(MetricsMode m) {
  return m == MetricsMode::legacy ? "legacy" : "lesion_wise";
}

/// One scored entry of the lesion-wise protocol.
struct LesionEntry {
  enum class Kind { matched, missed, false_positive };
  Kind kind;
  double dsc;
  double hd95;
};

struct RegionMetrics {
  std::string region;
  double dsc = 1.0;
  double hd95 = 0.0;
  std::vector<LesionEntry> entries; // lesion-wise mode only
  std::size_t dropped_gt = 0;       // GT lesions below min_lesion_volume
};

struct MetricsReport {
  std::string case_id;
  MetricsMode mode = MetricsMode::legacy;
  std::array<RegionMetrics, 3> per_region; // ET, TC, WT
  RegionMetrics avg{"Avg", 1.0, 0.0, {}, 0};

  const RegionMetrics &region(Region r) const {
    for (const auto &m : per_region)
      if (m.region == region_name(r))
        return m;
    throw Error("region missing from report");
  }

  void finalize_avg() {
    avg.region = "Avg";
    avg.dsc = (per_region[0].dsc + per_region[1].dsc + per_region[2].dsc) / 3.0;
    avg.hd95 =
        (per_region[0].hd95 + per_region[1].hd95 + per_region[2].hd95) / 3.0;
  }
};

/// Whole-mask scoring with the empty-mask policy: both empty -> (1, 0);
/// exactly one empty -> (penalty_dsc, penalty_hd95).
inline RegionMetrics legacy_region_metrics(const BinaryMask &pred,
                                           const BinaryMask &gt,
                                           const LesionWiseConfig &cfg) {
  const auto a = detail::true_indices(pred);
  const auto b = detail::true_indices(gt);
  RegionMetrics m;
  if (a.empty() && b.empty())
    m.dsc = 1.0, m.hd95 = 0.0;
  else if (a.empty() || b.empty())
    m.dsc = cfg.penalty_dsc, m.hd95 = cfg.penalty_hd95;
  else {
    m.dsc = detail::dice_sorted(a, b);
    m.hd95 = detail::hd95_sorted(a, b, pred.dims(), pred.spacing(), cfg.units);
  }
  return m;
}

inline MetricsReport legacy_case_metrics(const LabelVolume &pred,
                                         const LabelVolume &gt,
                                         const LesionWiseConfig &cfg = {},
                                         std::string case_id = "") {
  require_same_geometry(pred, gt, "legacy_case_metrics");
  cfg.validate();
  MetricsReport rep;
  rep.case_id = std::move(case_id);
  rep.mode = MetricsMode::legacy;
  for (std::size_t k = 0; k < kRegions.size(); ++k) {
    const auto r = kRegions[k];
    rep.per_region[k] =
        legacy_region_metrics(region_mask(pred, r), region_mask(gt, r), cfg);
    rep.per_region[k].region = region_name(r);
  }
  rep.finalize_avg();
  return rep;
}

/// Lesion-wise scoring of one region.
///
/// GT lesions are the undilated GT voxels of each connected component of the
/// dilated GT mask; lesions smaller than min_lesion_volume are dropped. Each
/// kept lesion is scored against the union of prediction components touching
/// its dilated extent, or penalised when none does. Prediction components of
/// at least min_lesion_volume that touch no dilated GT component (kept or
/// dropped) are false positives and penalised. The region score is the mean
/// over all entries; no entries scores (1, 0).
inline RegionMetrics lesionwise_region_metrics(const BinaryMask &pred,
                                               const BinaryMask &gt,
                                               const LesionWiseConfig &cfg) {
  require_same_geometry(pred, gt, "lesionwise_region_metrics");
  RegionMetrics out;

  const auto gt_dilated =
      dilate(gt, StructuringElement::ball(cfg.dilation_radius));
  const auto gt_components = connected_components(gt_dilated, cfg.connectivity);
  const auto pred_components = connected_components(pred, cfg.connectivity);
  const auto pred_ids = pred_components.label_map();

  std::vector<std::uint8_t> pred_touches_gt(pred_components.size() + 1, 0);
  for (const auto &comp : gt_components.components) {
    std::vector<std::size_t> lesion;
    std::set<std::int32_t> touching;
    for (auto i : comp.voxels) {
      if (gt[i])
        lesion.push_back(i);
      if (pred_ids[i] != 0)
        touching.insert(pred_ids[i]);
    }
    for (auto id : touching)
      pred_touches_gt[static_cast<std::size_t>(id)] = 1;

    if (lesion.size() < cfg.min_lesion_volume) {
      ++out.dropped_gt;
      continue;
    }
    if (touching.empty()) {
      out.entries.push_back(
          {LesionEntry::Kind::missed, cfg.penalty_dsc, cfg.penalty_hd95});
      continue;
    }
    std::vector<std::size_t> matched;
    for (auto id : touching) {
      const auto &v = pred_components.components[static_cast<std::size_t>(id - 1)].voxels;
      matched.insert(matched.end(), v.begin(), v.end());
    }
    std::sort(matched.begin(), matched.end());
    out.entries.push_back(
        {LesionEntry::Kind::matched, detail::dice_sorted(lesion, matched),
         detail::hd95_sorted(lesion, matched, gt.dims(), gt.spacing(),
                             cfg.units)});
  }

  for (const auto &comp : pred_components.components)
    if (!pred_touches_gt[static_cast<std::size_t>(comp.id)] &&
        comp.volume_voxels >= cfg.min_lesion_volume)
      out.entries.push_back({LesionEntry::Kind::false_positive,
                             cfg.penalty_dsc, cfg.penalty_hd95});

  if (out.entries.empty()) {
    out.dsc = 1.0;
    out.hd95 = 0.0;
  } else {
    double sd = 0.0, sh = 0.0;
    for (const auto &e : out.entries)
      sd += e.dsc, sh += e.hd95;
    out.dsc = sd / static_cast<double>(out.entries.size());
    out.hd95 = sh / static_cast<double>(out.entries.size());
  }
  return out;
}

inline MetricsReport lesionwise_case_metrics(const LabelVolume &pred,
                                             const LabelVolume &gt,
                                             const LesionWiseConfig &cfg = {},
                                             std::string case_id = "") {
  require_same_geometry(pred, gt, "lesionwise_case_metrics");
  cfg.validate();
  MetricsReport rep;
  rep.case_id = std::move(case_id);
  rep.mode = MetricsMode::lesion_wise;
  for (std::size_t k = 0; k < kRegions.size(); ++k) {
    const auto r = kRegions[k];
    rep.per_region[k] = lesionwise_region_metrics(region_mask(pred, r),
                                                  region_mask(gt, r), cfg);
    rep.per_region[k].region = region_name(r);
  }
  rep.finalize_avg();
  return rep;
}

inline MetricsReport case_metrics(MetricsMode mode, const LabelVolume &pred,
                                  const LabelVolume &gt,
                                  const LesionWiseConfig &cfg,
                                  std::string case_id) {
  return mode == MetricsMode::legacy
             ? legacy_case_metrics(pred, gt, cfg, std::move(case_id))
             : lesionwise_case_metrics(pred, gt, cfg, std::move(case_id));
}

// --- serialization ---------------------------------------------------------

inline nlohmann::json to_json(const LesionWiseConfig &cfg) {
  return {{"dilation_radius", cfg.dilation_radius},
          {"min_lesion_volume", cfg.min_lesion_volume},
          {"penalty_hd95", cfg.penalty_hd95},
          {"penalty_dsc", cfg.penalty_dsc},
          {"connectivity", static_cast<int>(cfg.connectivity)},
          {"hd95_units", cfg.units == DistanceUnits::mm ? "mm" : "voxel"}};
}

inline nlohmann::json metric_pair_json(const RegionMetrics &m, bool percent) {
  return {{"dsc", percent ? 100.0 * m.dsc : m.dsc}, {"hd95", m.hd95}};
}

/// {case_id, mode, regions:{ET,TC,WT}, avg}; lesion-wise reports also carry
/// per-region entry counts under "lesions".
inline nlohmann::json to_json(const MetricsReport &r, bool percent = false) {
  nlohmann::json regions = nlohmann::json::object();
  for (const auto &m : r.per_region) {
    auto j = metric_pair_json(m, percent);
    if (r.mode == MetricsMode::lesion_wise) {
      std::size_t matched = 0, missed = 0, fp = 0;
      for (const auto &e : m.entries) {
        matched += e.kind == LesionEntry::Kind::matched;
        missed += e.kind == LesionEntry::Kind::missed;
        fp += e.kind == LesionEntry::Kind::false_positive;
      }
      j["lesions"] = {{"matched", matched},
                      {"missed", missed},
                      {"false_positive", fp},
                      {"dropped_gt", m.dropped_gt}};
    }
    regions[m.region] = std::move(j);
  }
  return {{"case_id", r.case_id},
          {"mode", mode_name(r.mode)},
          {"regions", std::move(regions)},
          {"avg", metric_pair_json(r.avg, percent)}};
}

inline constexpr const char *kSegCsvHeader = "case_id,mode,region,dsc,hd95";

/// Rows "case_id,mode,region,dsc,hd95" for ET, TC, WT and Avg.
inline std::string to_csv_rows(const MetricsReport &r, bool percent = false) {
  std::string out;
  auto row = [&](const RegionMetrics &m) {
    out += r.case_id + "," + mode_name(r.mode) + "," + m.region + "," +
           format_number(percent ? 100.0 * m.dsc : m.dsc) + "," +
           format_number(m.hd95) + "\n";
  };
  for (const auto &m : r.per_region)
    row(m);
  row(r.avg);
  return out;
}

} // namespace tumorkit

#endif // TUMORKIT_SEG_METRICS_HPP
