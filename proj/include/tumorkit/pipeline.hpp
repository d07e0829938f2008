#ifndef TUMORKIT_PIPELINE_HPP
#define TUMORKIT_PIPELINE_HPP

// Manifest-driven batch runs behind the command-line tool. Each run returns
// its report in memory together with the process exit code; writing files is
// left to the caller except for fuse and gen-masks, whose outputs are volumes.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tumorkit/errors.hpp"
#include "tumorkit/format.hpp"
#include "tumorkit/inpaint_eval.hpp"
#include "tumorkit/io.hpp"
#include "tumorkit/region_codec.hpp"
#include "tumorkit/seg_metrics.hpp"
#include "tumorkit/stats.hpp"
#include "tumorkit/verify/suites.hpp"

namespace tumorkit::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int { kOk = 0, kVerificationFailed = 1, kInputError = 2 };

enum class ReportFormat { json, csv };

struct ManifestEntry {
  std::string case_id;
  std::string model_id = "model";
  fs::path pred_path;
  fs::path gt_path;
  std::optional<fs::path> mask_path;
};

struct Manifest {
  fs::path source;
  std::vector<ManifestEntry> entries;
};

/// {"cases":[{case_id, pred_path, gt_path, mask_path?, model_id?}]}. Relative
/// paths resolve against the manifest's directory. A case_id may repeat only
/// across different model_ids.
inline Manifest load_manifest(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error &e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("cases") || !doc["cases"].is_array())
    throw FormatError("manifest must be an object with a \"cases\" array");

  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string &p) {
    fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  auto field = [&](const json &c, const char *key, std::size_t i) {
    if (!c.contains(key) || !c[key].is_string())
      throw FormatError("manifest case " + std::to_string(i) +
                        ": missing string field \"" + key + "\"");
    return c[key].get<std::string>();
  };

  Manifest m;
  m.source = path;
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 0; i < doc["cases"].size(); ++i) {
    const auto &c = doc["cases"][i];
    if (!c.is_object())
      throw FormatError("manifest case " + std::to_string(i) +
                        " is not an object");
    ManifestEntry e;
    e.case_id = field(c, "case_id", i);
    e.pred_path = resolve(field(c, "pred_path", i));
    e.gt_path = resolve(field(c, "gt_path", i));
    if (c.contains("mask_path"))
      e.mask_path = resolve(field(c, "mask_path", i));
    if (c.contains("model_id"))
      e.model_id = field(c, "model_id", i);
    if (!seen.emplace(e.model_id, e.case_id).second)
      throw ConfigError("duplicate case_id '" + e.case_id + "' in manifest");
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty())
    throw ConfigError("manifest lists no cases");
  return m;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
inline void parallel_for(std::size_t n, unsigned jobs,
                         const std::function<void(std::size_t)> &fn) {
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(std::max(1u, jobs), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++)
        fn(i);
    });
  for (auto &t : pool)
    t.join();
}

inline std::string error_kind(const std::exception &e) {
  if (dynamic_cast<const FormatError *>(&e)) return "format";
  if (dynamic_cast<const UnsupportedError *>(&e)) return "unsupported";
  if (dynamic_cast<const IoError *>(&e)) return "io";
  if (dynamic_cast<const ShapeError *>(&e)) return "shape";
  if (dynamic_cast<const EmptyMaskError *>(&e)) return "empty_mask";
  if (dynamic_cast<const LabelError *>(&e)) return "label";
  if (dynamic_cast<const RangeError *>(&e)) return "range";
  if (dynamic_cast<const ConfigError *>(&e)) return "config";
  return "error";
}

inline json case_error(const ManifestEntry &e, const std::exception &ex) {
  return {{"case_id", e.case_id},
          {"model_id", e.model_id},
          {"kind", error_kind(ex)},
          {"message", ex.what()}};
}

struct RunResult {
  int exit_code = kOk;
  json report;
  std::string csv;

  std::string render(ReportFormat f) const {
    return f == ReportFormat::csv ? csv : report.dump(2) + "\n";
  }
};

// --- eval-seg ---------------------------------------------------------------

struct SegRunConfig {
  MetricsMode mode = MetricsMode::lesion_wise;
  LesionWiseConfig metrics;
  bool percent = false;
  unsigned jobs = 1;
};

inline json to_json(const SegRunConfig &c) {
  return {{"mode", mode_name(c.mode)},
          {"percent", c.percent},
          {"metrics", to_json(c.metrics)}};
}

/// Pred adopts the reference geometry once the grid sizes agree.
inline MetricsReport evaluate_seg_case(const ManifestEntry &e,
                                       const SegRunConfig &cfg) {
  const auto gt = load_labels(e.gt_path, infer_format(e.gt_path));
  const auto raw_pred = load_labels(e.pred_path, infer_format(e.pred_path));
  require_same_dims(raw_pred, gt, "case " + e.case_id);
  const LabelVolume pred(gt.dims(), gt.spacing(), raw_pred.values());
  require_valid_labels(gt);
  require_valid_labels(pred);
  return case_metrics(cfg.mode, pred, gt, cfg.metrics, e.case_id);
}

inline RunResult run_eval_seg(const Manifest &manifest,
                              const SegRunConfig &cfg) {
  cfg.metrics.validate();
  const std::size_t n = manifest.entries.size();
  std::vector<std::optional<MetricsReport>> reports(n);
  std::vector<json> errors(n);
  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    try {
      reports[i] = evaluate_seg_case(manifest.entries[i], cfg);
    } catch (const std::exception &ex) {
      errors[i] = case_error(manifest.entries[i], ex);
    }
  });

  RunResult out;
  MetricsReport mean;
  mean.case_id = "mean";
  mean.mode = cfg.mode;
  for (std::size_t k = 0; k < kRegions.size(); ++k) {
    mean.per_region[k].region = region_name(kRegions[k]);
    mean.per_region[k].dsc = 0.0;
  }
  std::size_t ok = 0;
  json cases = json::array(), errs = json::array();
  out.csv = std::string(kSegCsvHeader) + "\n";
  for (std::size_t i = 0; i < n; ++i) {
    if (!reports[i]) {
      errs.push_back(errors[i]);
      continue;
    }
    const auto &r = *reports[i];
    ++ok;
    cases.push_back(to_json(r, cfg.percent));
    out.csv += to_csv_rows(r, cfg.percent);
    for (std::size_t k = 0; k < 3; ++k) {
      mean.per_region[k].dsc += r.per_region[k].dsc;
      mean.per_region[k].hd95 += r.per_region[k].hd95;
    }
  }
  json mean_json = nullptr;
  if (ok > 0) {
    for (auto &m : mean.per_region) {
      m.dsc /= static_cast<double>(ok);
      m.hd95 /= static_cast<double>(ok);
    }
    mean.finalize_avg();
    mean_json = to_json(mean, cfg.percent);
    mean_json.erase("case_id");
    mean_json["cases"] = ok;
    out.csv += to_csv_rows(mean, cfg.percent);
  }
  out.report = {{"schema_version", kSchemaVersion},
                {"command", "eval-seg"},
                {"config", to_json(cfg)},
                {"cases", cases},
                {"mean", mean_json},
                {"errors", errs}};
  out.exit_code = errs.empty() ? kOk : kInputError;
  return out;
}

// --- eval-inpaint -----------------------------------------------------------

struct InpaintRunConfig {
  double peak = 1.0;
  SsimConfig ssim;
  unsigned jobs = 1;
};

inline json to_json(const InpaintRunConfig &c) {
  return {{"peak", c.peak},
          {"ssim",
           {{"window", c.ssim.window},
            {"k1", c.ssim.k1},
            {"k2", c.ssim.k2},
            {"dynamic_range", c.ssim.dynamic_range}}}};
}

/// pred_path is the inpainted volume, gt_path the reference, mask_path the
/// evaluated region.
inline CaseScores evaluate_inpaint_case(const ManifestEntry &e,
                                        const InpaintRunConfig &cfg) {
  if (!e.mask_path)
    throw IoError("case " + e.case_id + " has no mask_path");
  for (const auto &p : {e.pred_path, e.gt_path, *e.mask_path})
    if (!fs::exists(p))
      throw IoError("case " + e.case_id + ": missing file " + p.string());
  const auto ref = load_volume(e.gt_path, infer_format(e.gt_path));
  const auto pred = load_volume(e.pred_path, infer_format(e.pred_path));
  const auto mask = load_mask(*e.mask_path, infer_format(*e.mask_path));
  require_same_dims(pred, ref, "case " + e.case_id);
  require_same_dims(mask, ref, "case " + e.case_id);
  return score_case(pred, ref, mask, e.model_id, e.case_id, cfg.peak, cfg.ssim);
}

/// Paired t-tests on per-case PSNR for every model pair over shared cases.
inline json pairwise_psnr_ttests(const std::vector<CaseScores> &rows) {
  std::map<std::string, std::map<std::string, double>> psnr;
  for (const auto &r : rows)
    psnr[r.model_id][r.case_id] = r.psnr;
  json out = json::array();
  for (auto a = psnr.begin(); a != psnr.end(); ++a)
    for (auto b = std::next(a); b != psnr.end(); ++b) {
      std::vector<double> xa, xb;
      for (const auto &[case_id, v] : a->second) {
        auto it = b->second.find(case_id);
        if (it != b->second.end()) {
          xa.push_back(v);
          xb.push_back(it->second);
        }
      }
      json j = {{"model_a", a->first},
                {"model_b", b->first},
                {"metric", "psnr"},
                {"n", xa.size()}};
      try {
        const auto t = paired_ttest(xa, xb);
        j["t"] = json_number(t.t);
        j["df"] = t.df;
        j["p_two_sided"] = json_number(t.p_two_sided);
      } catch (const std::exception &ex) {
        j["error"] = ex.what();
      }
      out.push_back(std::move(j));
    }
  return out;
}

inline RunResult run_eval_inpaint(const Manifest &manifest,
                                  const InpaintRunConfig &cfg) {
  cfg.ssim.validate();
  if (!(cfg.peak > 0.0))
    throw ConfigError("peak must be positive");
  const std::size_t n = manifest.entries.size();
  std::vector<std::optional<CaseScores>> scores(n);
  std::vector<json> errors(n);
  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    try {
      scores[i] = evaluate_inpaint_case(manifest.entries[i], cfg);
    } catch (const std::exception &ex) {
      errors[i] = case_error(manifest.entries[i], ex);
    }
  });

  std::vector<CaseScores> rows;
  json errs = json::array(), rows_json = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    if (scores[i]) {
      rows.push_back(*scores[i]);
      rows_json.push_back(to_json(*scores[i]));
    } else {
      errs.push_back(errors[i]);
    }
  }
  json aggregates = json::array();
  for (const auto &a : aggregate_scores(rows, cfg.peak))
    aggregates.push_back(to_json(a));

  RunResult out;
  out.report = {{"schema_version", kSchemaVersion},
                {"command", "eval-inpaint"},
                {"config", to_json(cfg)},
                {"scores", rows_json},
                {"aggregates", aggregates},
                {"errors", errs}};
  std::set<std::string> models;
  for (const auto &r : rows)
    models.insert(r.model_id);
  if (models.size() >= 2) {
    try {
      const auto ranking = rank_sum(rows);
      out.report["ranking"] = to_json(std::span<const RankEntry>(ranking));
    } catch (const std::exception &ex) {
      out.report["ranking"] = nullptr;
      out.report["ranking_error"] = ex.what();
    }
    out.report["ttests"] = pairwise_psnr_ttests(rows);
  }
  std::ostringstream csv;
  write_scores_csv(csv, rows);
  out.csv = csv.str();
  out.exit_code = errs.empty() ? kOk : kInputError;
  return out;
}

// --- fuse -------------------------------------------------------------------

struct FuseRunConfig {
  std::vector<fs::path> stacks;
  std::vector<double> weights; // empty: equal weights
  DecodeConfig decode;
  PostprocessConfig postprocess;
  fs::path out;
};

inline json to_json(const FuseRunConfig &c) {
  json inputs = json::array();
  for (const auto &p : c.stacks)
    inputs.push_back(p.string());
  return {{"stacks", inputs},
          {"weights", c.weights.empty() ? json(nullptr) : json(c.weights)},
          {"decode",
           {{"tau_wt", c.decode.tau_wt},
            {"tau_tc", c.decode.tau_tc},
            {"tau_et", c.decode.tau_et}}},
          {"postprocess",
           {{"et_total_min", c.postprocess.et_total_min},
            {"et_component_min", c.postprocess.et_component_min},
            {"relabel_target", c.postprocess.relabel_target},
            {"connectivity", static_cast<int>(c.postprocess.connectivity)}}},
          {"out", c.out.string()}};
}

inline json label_counts(const LabelVolume &labels) {
  std::array<std::size_t, 4> counts{};
  for (auto v : labels.data())
    ++counts[std::min<std::size_t>(v, 3)];
  return {{"background", counts[0]},
          {"NC", counts[1]},
          {"ED", counts[2]},
          {"ET", counts[3]}};
}

inline LabelVolume fuse_and_decode(const std::vector<ProbabilityStack> &stacks,
                                   const FuseRunConfig &cfg) {
  std::optional<std::span<const double>> weights;
  if (!cfg.weights.empty())
    weights = std::span<const double>(cfg.weights);
  const auto fused = fuse_ensemble(stacks, weights);
  return postprocess_enhancing(regions_to_labels(fused, cfg.decode),
                               cfg.postprocess);
}

/// Writes the label volume and a "<out>.provenance.json" sidecar.
inline RunResult run_fuse(const FuseRunConfig &cfg) {
  cfg.decode.validate();
  cfg.postprocess.validate();
  const auto out_format = infer_format(cfg.out);
  std::vector<ProbabilityStack> stacks;
  for (const auto &p : cfg.stacks)
    stacks.push_back(load_stack(p));
  const auto labels = fuse_and_decode(stacks, cfg);
  save_volume(labels, cfg.out, out_format);

  RunResult r;
  r.report = {{"schema_version", kSchemaVersion},
              {"command", "fuse"},
              {"config", to_json(cfg)},
              {"dims",
               {labels.dims().depth, labels.dims().height, labels.dims().width}},
              {"label_counts", label_counts(labels)}};
  std::ofstream side(cfg.out.string() + ".provenance.json");
  if (!side)
    throw IoError("cannot write provenance sidecar next to " + cfg.out.string());
  side << r.report.dump(2) << "\n";
  return r;
}

// --- gen-masks --------------------------------------------------------------

struct GenMasksConfig {
  fs::path labels;
  std::optional<fs::path> brain; // absent: every voxel is brain
  int roi_radius = 3;
  std::uint64_t seed = 0;
  SurrogateConfig surrogate;
  fs::path out;
  std::optional<fs::path> roi_out;
};

inline RunResult run_gen_masks(const GenMasksConfig &cfg) {
  if (cfg.roi_radius < 0)
    throw ConfigError("ROI dilation radius must be >= 0");
  const auto labels = load_labels(cfg.labels, infer_format(cfg.labels));
  const auto roi = merge_and_dilate_roi(labels, cfg.roi_radius);
  BinaryMask brain(labels.dims(), labels.spacing(), std::uint8_t{1});
  if (cfg.brain) {
    auto b = load_mask(*cfg.brain, infer_format(*cfg.brain));
    require_same_dims(b, labels, "gen-masks brain");
    brain = BinaryMask(labels.dims(), labels.spacing(), b.values());
  }
  const auto mask = gen_surrogate_mask(brain, roi, cfg.seed, cfg.surrogate);
  save_volume(mask, cfg.out, infer_format(cfg.out));
  if (cfg.roi_out)
    save_volume(roi, *cfg.roi_out, infer_format(*cfg.roi_out));

  RunResult r;
  r.report = {{"schema_version", kSchemaVersion},
              {"command", "gen-masks"},
              {"config",
               {{"labels", cfg.labels.string()},
                {"brain", cfg.brain ? json(cfg.brain->string()) : json(nullptr)},
                {"roi_radius", cfg.roi_radius},
                {"seed", cfg.seed},
                {"count", cfg.surrogate.count},
                {"radius_min", cfg.surrogate.radius_min},
                {"radius_max", cfg.surrogate.radius_max},
                {"out", cfg.out.string()}}},
              {"roi_voxels", count_true(roi)},
              {"mask_voxels", count_true(mask)}};
  return r;
}

// --- checks -----------------------------------------------------------------

enum class CheckSuite { kernels, metrics, all };

inline RunResult run_checks(CheckSuite suite, bool inject_fault = false) {
  RunResult r;
  json suites = json::array();
  bool pass = true;
  if (suite != CheckSuite::metrics) {
    const auto k = verify::run_kernel_suite(inject_fault);
    pass = pass && k.pass;
    suites.push_back(k.to_json());
  }
  if (suite != CheckSuite::kernels) {
    const auto m = verify::run_metric_suite();
    pass = pass && m.pass;
    suites.push_back(m.to_json());
  }
  r.report = {{"schema_version", kSchemaVersion},
              {"command", "checks"},
              {"inject_fault", inject_fault},
              {"pass", pass},
              {"suites", suites}};
  r.exit_code = pass ? kOk : kVerificationFailed;
  return r;
}

} // namespace tumorkit::pipeline

#endif // TUMORKIT_PIPELINE_HPP
