#ifndef TUMORKIT_INPAINT_EVAL_HPP
#define TUMORKIT_INPAINT_EVAL_HPP

// Inpainting evaluation: ROI and surrogate-mask construction, masked
// MSE/PSNR/SSIM, per-case score tables and equally weighted rank-sum.

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorkit/errors.hpp"
#include "tumorkit/format.hpp"
#include "tumorkit/morphology.hpp"
#include "tumorkit/random.hpp"
#include "tumorkit/volume.hpp"

namespace tumorkit {

/// Union of all tumor labels, dilated by a ball of `radius` voxels.
inline BinaryMask merge_and_dilate_roi(const LabelVolume &labels, int radius) {
  require_valid_labels(labels);
  const auto tumor =
      make_mask(labels, [](std::uint8_t l) { return l != kBackground; });
  return dilate(tumor, StructuringElement::ball(radius));
}

struct SurrogateConfig {
  std::size_t count = 3;
  int radius_min = 4;
  int radius_max = 8;

  void validate() const {
    if (count == 0)
      throw ConfigError("surrogate mask count must be positive");
    if (radius_min < 0 || radius_max < radius_min)
      throw ConfigError("surrogate radius range must satisfy 0 <= min <= max");
  }
};

/// Union of `count` balls centred on healthy voxels (brain minus tumor_roi),
/// restricted to healthy voxels. Deterministic in `seed`.
inline BinaryMask gen_surrogate_mask(const BinaryMask &brain,
                                     const BinaryMask &tumor_roi,
                                     std::uint64_t seed,
                                     const SurrogateConfig &cfg = {}) {
  require_same_dims(brain, tumor_roi, "gen_surrogate_mask");
  cfg.validate();
  std::vector<std::size_t> healthy;
  for (std::size_t i = 0; i < brain.size(); ++i)
    if (brain[i] && !tumor_roi[i])
      healthy.push_back(i);
  if (healthy.empty())
    throw InfeasibleError("no healthy brain voxels outside the tumor ROI");

  Rng rng(seed);
  BinaryMask out(brain.dims(), brain.spacing());
  for (std::size_t k = 0; k < cfg.count; ++k) {
    const auto center = brain.coords(healthy[rng.below(healthy.size())]);
    const auto span = static_cast<std::uint64_t>(cfg.radius_max - cfg.radius_min) + 1;
    const int radius = cfg.radius_min + static_cast<int>(rng.below(span));
    for (const auto &o : StructuringElement::ball(radius).offsets()) {
      const Index3 p{center.z + o.z, center.y + o.y, center.x + o.x};
      if (!brain.contains(p))
        continue;
      const auto i = brain.index(static_cast<std::size_t>(p.z),
                                 static_cast<std::size_t>(p.y),
                                 static_cast<std::size_t>(p.x));
      if (brain[i] && !tumor_roi[i])
        out[i] = 1;
    }
  }
  // Every centre is itself healthy, so this only trips on a logic error.
  if (count_true(out) == 0)
    throw InfeasibleError("surrogate mask came out empty");
  return out;
}

namespace detail {

inline std::size_t require_nonempty_mask(const Volume3 &pred,
                                         const Volume3 &ref,
                                         const BinaryMask &mask) {
  require_same_dims(pred, ref, "inpainting metric");
  require_same_dims(pred, mask, "inpainting metric mask");
  const auto n = count_true(mask);
  if (n == 0)
    throw EmptyMaskError("inpainting metric over an empty mask");
  return n;
}

} // namespace detail

inline double masked_mse(const Volume3 &pred, const Volume3 &ref,
                         const BinaryMask &mask) {
  const auto n = detail::require_nonempty_mask(pred, ref, mask);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i]) {
      const double d = static_cast<double>(pred[i]) - ref[i];
      sum += d * d;
    }
  return sum / static_cast<double>(n);
}

/// 10 log10(peak^2 / mse); +inf when mse is zero.
inline double psnr_from_mse(double mse, double peak = 1.0) {
  if (!(peak > 0.0))
    throw ConfigError("PSNR peak must be positive");
  if (mse == 0.0)
    return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

inline double masked_psnr(const Volume3 &pred, const Volume3 &ref,
                          const BinaryMask &mask, double peak = 1.0) {
  return psnr_from_mse(masked_mse(pred, ref, mask), peak);
}

struct SsimConfig {
  int window = 7;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }

  void validate() const {
    if (window < 1 || window % 2 == 0)
      throw ConfigError("SSIM window edge must be a positive odd integer");
    if (!(k1 > 0.0) || !(k2 > 0.0) || !(dynamic_range > 0.0))
      throw ConfigError("SSIM constants must be positive");
  }
};

namespace detail {

/// In-place clipped box sum of half-width r along one axis of a dense
/// [D,H,W] array.
inline void box_sum_axis(std::vector<double> &g, const Dims &dims, int axis,
                         std::size_t r) {
  const std::size_t D = dims.depth, H = dims.height, W = dims.width;
  std::size_t n, stride, outer, inner, outer_stride, inner_stride;
  if (axis == 2)
    n = W, stride = 1, outer = D, outer_stride = H * W, inner = H, inner_stride = W;
  else if (axis == 1)
    n = H, stride = W, outer = D, outer_stride = H * W, inner = W, inner_stride = 1;
  else
    n = D, stride = H * W, outer = H, outer_stride = W, inner = W, inner_stride = 1;
  std::vector<double> line(n);
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t b = 0; b < inner; ++b) {
      const std::size_t base = a * outer_stride + b * inner_stride;
      for (std::size_t i = 0; i < n; ++i)
        line[i] = g[base + i * stride];
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= r ? i - r : 0;
        const std::size_t hi = std::min(n - 1, i + r);
        double s = 0.0;
        for (std::size_t j = lo; j <= hi; ++j)
          s += line[j];
        g[base + i * stride] = s;
      }
    }
}

} // namespace detail

/// Mean local SSIM over every voxel of the mask. Each local window is the
/// cube of edge cfg.window centred on the voxel, clipped to the grid and
/// restricted to mask voxels, so values outside the mask never contribute.
/// Window statistics are unweighted population moments.
inline double masked_ssim(const Volume3 &pred, const Volume3 &ref,
                          const BinaryMask &mask, const SsimConfig &cfg = {}) {
  cfg.validate();
  detail::require_nonempty_mask(pred, ref, mask);
  const auto r = static_cast<std::size_t>(cfg.window / 2);
  const auto &dims = mask.dims();

  // Work on the mask's bounding box; nothing outside it is ever read.
  std::size_t z0 = dims.depth, y0 = dims.height, x0 = dims.width, z1 = 0,
              y1 = 0, x1 = 0;
  std::size_t first = mask.size();
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      const auto c = mask.coords(i);
      first = std::min(first, i);
      z0 = std::min(z0, static_cast<std::size_t>(c.z));
      y0 = std::min(y0, static_cast<std::size_t>(c.y));
      x0 = std::min(x0, static_cast<std::size_t>(c.x));
      z1 = std::max(z1, static_cast<std::size_t>(c.z));
      y1 = std::max(y1, static_cast<std::size_t>(c.y));
      x1 = std::max(x1, static_cast<std::size_t>(c.x));
    }
  const Dims crop{z1 - z0 + 1, y1 - y0 + 1, x1 - x0 + 1};
  const std::size_t n = crop.voxels();

  // Shift by the first masked value of each image to limit cancellation in
  // E[x^2] - E[x]^2.
  const double sx0 = pred[first], sy0 = ref[first];
  std::vector<double> cnt(n), sx(n), sy(n), sxx(n), syy(n), sxy(n);
  for (std::size_t z = 0; z < crop.depth; ++z)
    for (std::size_t y = 0; y < crop.height; ++y)
      for (std::size_t x = 0; x < crop.width; ++x) {
        const auto gi = mask.index(z + z0, y + y0, x + x0);
        if (!mask[gi])
          continue;
        const auto li = (z * crop.height + y) * crop.width + x;
        const double a = pred[gi] - sx0, b = ref[gi] - sy0;
        cnt[li] = 1.0;
        sx[li] = a;
        sy[li] = b;
        sxx[li] = a * a;
        syy[li] = b * b;
        sxy[li] = a * b;
      }
  for (auto *g : {&cnt, &sx, &sy, &sxx, &syy, &sxy})
    for (int axis = 0; axis < 3; ++axis)
      detail::box_sum_axis(*g, crop, axis, r);

  const double c1 = cfg.c1(), c2 = cfg.c2();
  double total = 0.0;
  std::size_t centers = 0;
  for (std::size_t z = 0; z < crop.depth; ++z)
    for (std::size_t y = 0; y < crop.height; ++y)
      for (std::size_t x = 0; x < crop.width; ++x) {
        if (!mask[mask.index(z + z0, y + y0, x + x0)])
          continue;
        const auto li = (z * crop.height + y) * crop.width + x;
        const double k = cnt[li];
        const double ma = sx[li] / k, mb = sy[li] / k;
        const double va = sxx[li] / k - ma * ma;
        const double vb = syy[li] / k - mb * mb;
        const double cov = sxy[li] / k - ma * mb;
        const double mu_a = ma + sx0, mu_b = mb + sy0;
        const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
        const double den =
            (mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2);
        total += num / den;
        ++centers;
      }
  return total / static_cast<double>(centers);
}

struct CaseScores {
  std::string case_id;
  std::string model_id;
  double mse = 0.0;
  double psnr = std::numeric_limits<double>::infinity();
  double ssim = 1.0;
};

inline CaseScores score_case(const Volume3 &pred, const Volume3 &ref,
                             const BinaryMask &mask, std::string model_id,
                             std::string case_id, double peak = 1.0,
                             const SsimConfig &ssim = {}) {
  CaseScores s;
  s.model_id = std::move(model_id);
  s.case_id = std::move(case_id);
  s.mse = masked_mse(pred, ref, mask);
  s.psnr = psnr_from_mse(s.mse, peak);
  s.ssim = masked_ssim(pred, ref, mask, ssim);
  return s;
}

// --- score tables -------------------------------------------------------------

inline constexpr const char *kScoreCsvHeader = "model_id,case_id,mse,psnr,ssim";

inline void write_scores_csv(std::ostream &os,
                             std::span<const CaseScores> rows) {
  os << kScoreCsvHeader << "\n";
  for (const auto &r : rows)
    os << r.model_id << "," << r.case_id << "," << format_number(r.mse) << ","
       << format_number(r.psnr) << "," << format_number(r.ssim) << "\n";
}

inline std::vector<CaseScores> read_scores_csv(std::istream &is) {
  std::string line;
  if (!std::getline(is, line))
    throw FormatError("score table is empty");
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
  if (line != kScoreCsvHeader)
    throw FormatError("score table header must be '" +
                      std::string(kScoreCsvHeader) + "'");
  std::vector<CaseScores> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      f.push_back(cell);
    if (f.size() != 5)
      throw FormatError("score table line " + std::to_string(lineno) +
                        ": expected 5 fields");
    out.push_back({f[1], f[0], parse_number(f[2]), parse_number(f[3]),
                   parse_number(f[4])});
  }
  return out;
}

inline nlohmann::json to_json(const CaseScores &s) {
  return {{"model_id", s.model_id},
          {"case_id", s.case_id},
          {"mse", json_number(s.mse)},
          {"psnr", json_number(s.psnr)},
          {"ssim", json_number(s.ssim)}};
}

/// Per-model means. PSNR is aggregated both ways: the mean of per-case
/// values and the PSNR of the mean MSE.
struct ModelAggregate {
  std::string model_id;
  std::size_t cases = 0;
  double mean_mse = 0.0;
  double mean_psnr = 0.0;
  double pooled_psnr = 0.0;
  double mean_ssim = 0.0;
};

inline std::vector<ModelAggregate>
aggregate_scores(std::span<const CaseScores> rows, double peak = 1.0) {
  std::map<std::string, ModelAggregate> acc;
  for (const auto &r : rows) {
    auto &a = acc[r.model_id];
    a.model_id = r.model_id;
    ++a.cases;
    a.mean_mse += r.mse;
    a.mean_psnr += r.psnr;
    a.mean_ssim += r.ssim;
  }
  std::vector<ModelAggregate> out;
  for (auto &[id, a] : acc) {
    const double n = static_cast<double>(a.cases);
    a.mean_mse /= n;
    a.mean_psnr /= n;
    a.mean_ssim /= n;
    a.pooled_psnr = psnr_from_mse(a.mean_mse, peak);
    out.push_back(a);
  }
  return out;
}

inline nlohmann::json to_json(const ModelAggregate &a) {
  return {{"model_id", a.model_id},
          {"cases", a.cases},
          {"mean_mse", json_number(a.mean_mse)},
          {"mean_psnr", json_number(a.mean_psnr)},
          {"pooled_psnr", json_number(a.pooled_psnr)},
          {"mean_ssim", json_number(a.mean_ssim)}};
}

// --- rank-sum ---------------------------------------------------------------

struct RankEntry {
  std::string model_id;
  double rank_sum = 0.0;
  std::size_t final_rank = 0;
  bool tied = false;
};

/// Equally weighted rank-sum. For every case and each metric (MSE lower is
/// better, PSNR and SSIM higher is better) models are ranked from 1, ties
/// sharing the mean of their ranks. Models are ordered by ascending sum;
/// equal sums are ordered by model_id and flagged as tied.
inline std::vector<RankEntry> rank_sum(std::span<const CaseScores> table) {
  std::set<std::string> models, cases;
  std::map<std::pair<std::string, std::string>, const CaseScores *> cell;
  for (const auto &r : table) {
    for (double v : {r.mse, r.psnr, r.ssim})
      if (std::isnan(v))
        throw RangeError("rank_sum: NaN score for " + r.model_id + "/" +
                         r.case_id);
    models.insert(r.model_id);
    cases.insert(r.case_id);
    if (!cell.emplace(std::make_pair(r.model_id, r.case_id), &r).second)
      throw ConfigError("rank_sum: duplicate score for " + r.model_id + "/" +
                        r.case_id);
  }
  for (const auto &m : models)
    for (const auto &c : cases)
      if (!cell.count({m, c}))
        throw IncompleteError("rank_sum: model '" + m +
                              "' has no score for case '" + c + "'");

  const std::vector<std::string> ids(models.begin(), models.end());
  std::vector<double> sums(ids.size(), 0.0);
  // Oriented so that larger is better.
  const auto metrics = {
      +[](const CaseScores &s) { return -s.mse; },
      +[](const CaseScores &s) { return s.psnr; },
      +[](const CaseScores &s) { return s.ssim; },
  };
  std::vector<double> vals(ids.size());
  for (const auto &c : cases)
    for (auto metric : metrics) {
      for (std::size_t i = 0; i < ids.size(); ++i)
        vals[i] = metric(*cell.at({ids[i], c}));
      for (std::size_t i = 0; i < ids.size(); ++i) {
        std::size_t better = 0, equal = 0;
        for (std::size_t j = 0; j < ids.size(); ++j) {
          better += vals[j] > vals[i];
          equal += vals[j] == vals[i];
        }
        sums[i] += static_cast<double>(better) +
                   (static_cast<double>(equal) + 1.0) / 2.0;
      }
    }

  std::vector<RankEntry> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    out.push_back({ids[i], sums[i], 0, false});
  std::stable_sort(out.begin(), out.end(),
                   [](const RankEntry &a, const RankEntry &b) {
                     return a.rank_sum < b.rank_sum;
                   });
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].final_rank = i + 1;
    out[i].tied = (i > 0 && out[i - 1].rank_sum == out[i].rank_sum) ||
                  (i + 1 < out.size() && out[i + 1].rank_sum == out[i].rank_sum);
  }
  return out;
}

inline nlohmann::json to_json(std::span<const RankEntry> ranking) {
  auto arr = nlohmann::json::array();
  for (const auto &r : ranking)
    arr.push_back({{"model_id", r.model_id},
                   {"rank_sum", r.rank_sum},
                   {"final_rank", r.final_rank},
                   {"tied", r.tied}});
  return arr;
}

} // namespace tumorkit

#endif // TUMORKIT_INPAINT_EVAL_HPP
