// tumorkit: batch evaluation, fusion and self-checks for brain tumor
// segmentation and inpainting outputs.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tumorkit/pipeline.hpp"

namespace pl = tumorkit::pipeline;

namespace {

int emit(const pl::RunResult &r, const std::string &out, pl::ReportFormat fmt) {
  const auto text = r.render(fmt);
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    std::ofstream f(out);
    if (!f) {
      std::cerr << "error: cannot write " << out << "\n";
      return pl::kInputError;
    }
    f << text;
  }
  for (const auto &e : r.report.value("errors", nlohmann::json::array()))
    std::cerr << "case " << e.value("case_id", "?") << ": "
              << e.value("message", "") << "\n";
  return r.exit_code;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"tumorkit: segmentation and inpainting evaluation"};
  app.require_subcommand(1);

  std::string manifest, out, format = "json";
  unsigned jobs = 1;
  bool percent = false;

  // eval-seg
  auto *seg = app.add_subcommand("eval-seg", "score label volumes against references");
  std::string mode = "lesion_wise";
  tumorkit::LesionWiseConfig lw;
  int connectivity = 26;
  std::string units = "mm";
  seg->add_option("manifest", manifest, "case manifest (JSON)")->required()->check(CLI::ExistingFile);
  seg->add_option("--mode", mode, "legacy or lesion_wise")
      ->check(CLI::IsMember({"legacy", "lesion_wise"}))->capture_default_str();
  seg->add_option("--dilation", lw.dilation_radius, "GT dilation radius (voxels)")->capture_default_str();
  seg->add_option("--min-lesion", lw.min_lesion_volume, "minimum lesion volume (voxels)")->capture_default_str();
  seg->add_option("--penalty-hd", lw.penalty_hd95, "HD95 penalty for unmatched lesions")->capture_default_str();
  seg->add_option("--penalty-dsc", lw.penalty_dsc, "DSC penalty for unmatched lesions")->capture_default_str();
  seg->add_option("--connectivity", connectivity, "6, 18 or 26")->capture_default_str();
  seg->add_option("--hd-units", units, "mm or voxel")->check(CLI::IsMember({"mm", "voxel"}))->capture_default_str();
  seg->add_flag("--percent", percent, "report DSC x100");

  // eval-inpaint
  auto *inp = app.add_subcommand("eval-inpaint", "score inpainted volumes inside masks");
  pl::InpaintRunConfig icfg;
  inp->add_option("manifest", manifest, "case manifest (JSON) with mask_path")->required()->check(CLI::ExistingFile);
  inp->add_option("--ssim-window", icfg.ssim.window, "SSIM window edge (odd)")->capture_default_str();
  inp->add_option("--ssim-k1", icfg.ssim.k1)->capture_default_str();
  inp->add_option("--ssim-k2", icfg.ssim.k2)->capture_default_str();
  inp->add_option("--ssim-range", icfg.ssim.dynamic_range, "SSIM dynamic range L")->capture_default_str();
  inp->add_option("--peak", icfg.peak, "PSNR peak value")->capture_default_str();

  for (auto *sub : {seg, inp}) {
    sub->add_option("--jobs,-j", jobs, "parallel cases")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--out,-o", out, "report path (default stdout)");
    sub->add_option("--format", format, "json or csv")
        ->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  }

  // fuse
  auto *fuse = app.add_subcommand("fuse", "average probability stacks, decode and post-process");
  pl::FuseRunConfig fcfg;
  std::vector<std::string> stacks;
  std::string fuse_out;
  int pp_conn = 26;
  int relabel = tumorkit::kNonEnhancing;
  fuse->add_option("stacks", stacks, "4D NIfTI stacks (WT, TC, ET)")->required()->check(CLI::ExistingFile);
  fuse->add_option("--weights", fcfg.weights, "per-stack weights");
  fuse->add_option("--tau-wt", fcfg.decode.tau_wt)->capture_default_str();
  fuse->add_option("--tau-tc", fcfg.decode.tau_tc)->capture_default_str();
  fuse->add_option("--tau-et", fcfg.decode.tau_et)->capture_default_str();
  fuse->add_option("--et-total-min", fcfg.postprocess.et_total_min)->capture_default_str();
  fuse->add_option("--et-component-min", fcfg.postprocess.et_component_min)->capture_default_str();
  fuse->add_option("--relabel", relabel, "label given to removed ET voxels")->capture_default_str();
  fuse->add_option("--connectivity", pp_conn, "6, 18 or 26")->capture_default_str();
  fuse->add_option("--out,-o", fuse_out, "output label volume")->required();

  // gen-masks
  auto *gen = app.add_subcommand("gen-masks", "build a tumor ROI and a surrogate inpainting mask");
  pl::GenMasksConfig gcfg;
  std::string labels_path, brain_path, mask_out, roi_out;
  gen->add_option("labels", labels_path, "tumor label volume")->required()->check(CLI::ExistingFile);
  gen->add_option("--brain", brain_path, "brain mask (default: whole grid)")->check(CLI::ExistingFile);
  gen->add_option("--dilation", gcfg.roi_radius, "ROI dilation radius (voxels)")->capture_default_str();
  gen->add_option("--seed", gcfg.seed)->capture_default_str();
  gen->add_option("--count", gcfg.surrogate.count, "number of balls")->capture_default_str();
  gen->add_option("--radius-min", gcfg.surrogate.radius_min)->capture_default_str();
  gen->add_option("--radius-max", gcfg.surrogate.radius_max)->capture_default_str();
  gen->add_option("--roi-out", roi_out, "also write the dilated ROI");
  gen->add_option("--out,-o", mask_out, "surrogate mask output")->required();

  // checks
  auto *chk = app.add_subcommand("checks", "run gradient and metric self-verification");
  std::string suite = "all", checks_out;
  bool inject = false;
  chk->add_option("--suite", suite, "kernels, metrics or all")
      ->check(CLI::IsMember({"kernels", "metrics", "all"}))->capture_default_str();
  chk->add_flag("--inject-fault", inject, "scale one analytic gradient to prove detection");
  chk->add_option("--out,-o", checks_out, "report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : pl::kInputError;
  }

  const auto fmt = format == "csv" ? pl::ReportFormat::csv : pl::ReportFormat::json;
  try {
    if (*seg) {
      pl::SegRunConfig cfg;
      cfg.mode = mode == "legacy" ? tumorkit::MetricsMode::legacy
                                  : tumorkit::MetricsMode::lesion_wise;
      cfg.metrics = lw;
      cfg.metrics.connectivity = tumorkit::connectivity_from_int(connectivity);
      cfg.metrics.units = units == "mm" ? tumorkit::DistanceUnits::mm
                                        : tumorkit::DistanceUnits::voxel;
      cfg.percent = percent;
      cfg.jobs = jobs;
      return emit(pl::run_eval_seg(pl::load_manifest(manifest), cfg), out, fmt);
    }
    if (*inp) {
      icfg.jobs = jobs;
      auto r = pl::run_eval_inpaint(pl::load_manifest(manifest), icfg);
      if (fmt == pl::ReportFormat::csv && !out.empty() && out != "-" &&
          r.report.contains("ranking")) {
        std::ofstream f(out + ".ranking.json");
        f << nlohmann::json{{"ranking", r.report["ranking"]},
                            {"ttests", r.report["ttests"]}}.dump(2) << "\n";
      }
      return emit(r, out, fmt);
    }
    if (*fuse) {
      for (const auto &s : stacks)
        fcfg.stacks.emplace_back(s);
      fcfg.out = fuse_out;
      fcfg.postprocess.connectivity = tumorkit::connectivity_from_int(pp_conn);
      if (relabel < 0 || relabel > 255)
        throw tumorkit::ConfigError("--relabel must be a label value");
      fcfg.postprocess.relabel_target = static_cast<std::uint8_t>(relabel);
      std::cout << pl::run_fuse(fcfg).report.dump(2) << "\n";
      return pl::kOk;
    }
    if (*gen) {
      gcfg.labels = labels_path;
      if (!brain_path.empty())
        gcfg.brain = brain_path;
      if (!roi_out.empty())
        gcfg.roi_out = roi_out;
      gcfg.out = mask_out;
      std::cout << pl::run_gen_masks(gcfg).report.dump(2) << "\n";
      return pl::kOk;
    }
    if (*chk) {
      const auto s = suite == "kernels"   ? pl::CheckSuite::kernels
                     : suite == "metrics" ? pl::CheckSuite::metrics
                                          : pl::CheckSuite::all;
      return emit(pl::run_checks(s, inject), checks_out, pl::ReportFormat::json);
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return pl::kInputError;
  }
  return pl::kInputError;
}
