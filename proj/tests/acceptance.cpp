// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "lesion_scenarios.hpp"
#include "synthetic.hpp"
#include "tumorkit/inpaint_eval.hpp"
#include "tumorkit/io.hpp"
#include "tumorkit/kernels.hpp"
#include "tumorkit/region_codec.hpp"
#include "tumorkit/stats.hpp"
#include "tumorkit/verify/suites.hpp"

using namespace tumorkit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string &what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

fs::path make_temp_dir() {
  std::mt19937_64 gen{std::random_device{}()};
  auto p = fs::temp_directory_path() / ("tumorkit_accept_" + std::to_string(gen()));
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string &args) {
  const std::string cmd = std::string(TUMORKIT_CLI) + " " + args;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome metric_oracle() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = verify::run_metric_suite(200);
  const double s = seconds_since(t0);
  o.require(r.pass, "oracle mismatch: " + r.to_json()["failing"].dump());
  o.require(s < 10.0, "runtime " + fmt(s) + " s");
  o.detail = o.detail.empty() ? "200 pairs in " + fmt(s) + " s" : o.detail;
  return o;
}

Outcome lesion_scenarios() {
  Outcome o;
  const auto all = scenarios::all();
  o.require(all.size() >= 10, "fewer than 10 scenarios");
  for (const auto &s : all) {
    const auto m = lesionwise_region_metrics(s.pred, s.gt, s.cfg);
    o.require(m.dsc == s.dsc && m.hd95 == s.hd95,
              s.name + " got (" + fmt(m.dsc) + ", " + fmt(m.hd95) + ")");
  }
  if (o.pass)
    o.detail = std::to_string(all.size()) + " scenarios exact";
  return o;
}

Outcome gradient_checks() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = verify::run_kernel_suite(false, 1e-4, 1e-5);
  const double s = seconds_since(t0);
  std::map<std::string, int> per_op;
  bool has_c64 = false;
  for (const auto &c : verify::gradient_cases()) {
    ++per_op[c.op.name];
    has_c64 = has_c64 || (c.op.name == "group_norm" && c.inputs[0].shape[0] == 64);
  }
  for (const char *op : {"group_norm", "sigmoid_bce_with_logits", "conv3_downsample",
                         "axial_attention"})
    o.require(per_op[op] >= 5, std::string(op) + " has fewer than 5 shapes");
  o.require(has_c64, "no C=64 group_norm case");
  o.require(r.pass, "failing " + r.to_json()["failing"].dump());
  o.require(s < 60.0, "runtime " + fmt(s) + " s");
  if (o.pass)
    o.detail = std::to_string(r.checks.size()) + " checks in " + fmt(s) + " s";
  return o;
}

AxialAttentionConfig attention_cfg(const Shape &s, Axis axis, std::size_t heads,
                                   std::size_t hd, Rng &rng) {
  const std::size_t C = s[0], E = heads * hd;
  AxialAttentionConfig cfg{axis, heads, hd, random_tensor({E, C}, rng),
                           random_tensor({E, C}, rng), random_tensor({E, C}, rng),
                           random_tensor({C, E}, rng), std::nullopt};
  cfg.pos = random_tensor({s[static_cast<std::size_t>(axis)], C}, rng);
  return cfg;
}

Outcome kernel_closed_forms() {
  Outcome o;
  Rng rng(4);

  const auto x = random_tensor({64, 4, 4, 4}, rng, -2.0, 3.0);
  const double eps = 1e-5;
  const auto y = group_norm(x, {32, eps, {}, {}});
  double worst_mean = 0, worst_var = 0;
  const std::size_t n = 2 * 64;
  for (std::size_t g = 0; g < 32; ++g) {
    double mx = 0, my = 0, vx = 0, vy = 0;
    for (std::size_t i = g * n; i < (g + 1) * n; ++i)
      mx += x[i], my += y[i];
    mx /= n, my /= n;
    for (std::size_t i = g * n; i < (g + 1) * n; ++i)
      vx += (x[i] - mx) * (x[i] - mx), vy += (y[i] - my) * (y[i] - my);
    vx /= n, vy /= n;
    worst_mean = std::max(worst_mean, std::fabs(my));
    worst_var = std::max(worst_var, std::fabs(vy * (vx + eps) / vx - 1.0));
  }
  o.require(worst_mean < 1e-10, "group mean " + fmt(worst_mean));
  o.require(worst_var < 1e-8, "group var " + fmt(worst_var));

  const Shape s1{3, 4, 1, 5};
  const auto x1 = random_tensor(s1, rng);
  const auto cfg1 = attention_cfg(s1, Axis::height, 2, 2, rng);
  const auto y1 = axial_attention(x1, cfg1);
  double value_err = 0;
  const std::size_t N = 20;
  for (std::size_t p = 0; p < N; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      double acc = 0;
      for (std::size_t e = 0; e < 4; ++e) {
        double v = 0;
        for (std::size_t k = 0; k < 3; ++k)
          v += cfg1.wv[e * 3 + k] * x1[k * N + p];
        acc += cfg1.wo[c * 4 + e] * v;
      }
      value_err = std::max(value_err, std::fabs(y1[c * N + p] - acc));
    }
  o.require(value_err < 1e-12, "extent-1 value pathway " + fmt(value_err));

  const auto xp = random_tensor({3, 4, 6, 8}, rng);
  o.require(unpatchify(patchify(xp, 2), xp.shape, 2) == xp, "patchify round trip");

  const Shape s2{3, 4, 4, 4};
  const auto x2 = random_tensor(s2, rng);
  const auto cfg2 = attention_cfg(s2, Axis::width, 1, 3, rng);
  auto x2b = x2;
  x2b[((1 * 4 + 2) * 4 + 3) * 4 + 1] += 4.0; // (c=1, z=2, y=3, x=1)
  const auto ya = axial_attention(x2, cfg2), yb = axial_attention(x2b, cfg2);
  bool local = true;
  for (std::size_t i = 0; i < ya.size(); ++i) {
    const std::size_t zy = (i / 4) % 16;
    if (zy != 2 * 4 + 3)
      local = local && ya[i] == yb[i];
  }
  o.require(local, "attention leaked across lines");
  if (o.pass)
    o.detail = "gn mean " + fmt(worst_mean) + ", var " + fmt(worst_var) +
               ", value pathway " + fmt(value_err);
  return o;
}

Outcome attention_scaling() {
  Outcome o;
  Rng rng(5);
  for (auto axis : {Axis::depth, Axis::height, Axis::width}) {
    Shape s{4, 4, 6, 5};
    const auto cfg = attention_cfg(s, axis, 2, 3, rng);
    for (std::size_t other = 1; other <= 3; ++other) {
      if (other == static_cast<std::size_t>(axis))
        continue;
      Shape big = s;
      big[other] *= 2;
      OpCounter a, b;
      axial_attention(random_tensor(s, rng), cfg, &a);
      axial_attention(random_tensor(big, rng), cfg, &b);
      o.require(b.multiplies == 2 * a.multiplies,
                std::string("axis ") + axis_name(axis) + ": " +
                    std::to_string(a.multiplies) + " -> " + std::to_string(b.multiplies));
    }
  }
  if (o.pass)
    o.detail = "exact doubling on all axis pairs";
  return o;
}

Outcome inpaint_metrics() {
  Outcome o;
  Rng rng(6);
  const Dims d{10, 10, 10};
  Volume3 a(d, {}), b(d, {});
  BinaryMask m(d, {});
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = static_cast<float>(rng.uniform());
    b[i] = static_cast<float>(rng.uniform());
    m[i] = rng.uniform() < 0.3;
  }
  const auto same = score_case(a, a, m, "m", "c");
  o.require(same.mse == 0.0 && std::isinf(same.psnr) && same.ssim == 1.0,
            "identical inputs gave (" + fmt(same.mse) + ", " + fmt(same.psnr) + ", " +
                fmt(same.ssim) + ")");
  o.require(psnr_from_mse(0.01, 1.0) == 20.0, "psnr(0.01) != 20");

  const Volume3 c1(d, {}, 0.5f), c2(d, {}, 0.6f);
  const double mu2 = static_cast<double>(0.6f), k = 1e-4;
  const double closed = (2 * 0.5 * mu2 + k) / (0.25 + mu2 * mu2 + k);
  const double got = masked_ssim(c1, c2, BinaryMask(d, {}, 1));
  o.require(std::fabs(got - closed) < 1e-9, "constant SSIM off by " + fmt(got - closed));

  const auto before = score_case(a, b, m, "m", "c");
  auto a2 = a, b2 = b;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!m[i]) {
      a2[i] = static_cast<float>(rng.uniform(-9, 9));
      b2[i] = static_cast<float>(rng.uniform(-9, 9));
    }
  const auto after = score_case(a2, b2, m, "m", "c");
  o.require(std::memcmp(&before.mse, &after.mse, sizeof(double)) == 0 &&
                std::memcmp(&before.psnr, &after.psnr, sizeof(double)) == 0 &&
                std::memcmp(&before.ssim, &after.ssim, sizeof(double)) == 0,
            "out-of-mask perturbation changed a metric");
  if (o.pass)
    o.detail = "constant SSIM " + fmt(got);
  return o;
}

// Two-sided Student-t tail by Simpson integration of the density.
double t_tail_by_quadrature(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) /
                   std::sqrt(df * M_PI);
  auto f = [&](double u) { return c * std::pow(1 + u * u / df, -(df + 1) / 2); };
  const int n = 200000;
  const double h = std::fabs(t) / n;
  double s = f(0) + f(std::fabs(t));
  for (int i = 1; i < n; ++i)
    s += (i % 2 ? 4 : 2) * f(i * h);
  return 1.0 - 2.0 * s * h / 3.0;
}

Outcome statistics() {
  Outcome o;
  const std::vector<double> a{3, 1, 7, 4, 6}, b{1, 2, 4, 4, 5}; // d = [2,-1,3,0,1]
  const auto r = paired_ttest(a, b);
  const double t_hand = 1.0 / (std::sqrt(2.5) / std::sqrt(5.0));
  o.require(std::fabs(r.t - t_hand) < 1e-9, "t = " + fmt(r.t));
  o.require(r.df == 4.0, "df");
  const double p_oracle = t_tail_by_quadrature(t_hand, 4.0);
  o.require(std::fabs(r.p_two_sided - p_oracle) < 1e-6,
            "p " + fmt(r.p_two_sided) + " vs " + fmt(p_oracle));

  auto row = [](const char *m, const char *c, double mse, double psnr, double ssim) {
    return CaseScores{c, m, mse, psnr, ssim};
  };
  // Hand ranks: A 3+7=10, B 6+6=12, C 9+5=14 (A,B tie on c2 mse and psnr).
  const std::vector<CaseScores> table{
      row("A", "c1", 0.1, 10, 0.9), row("B", "c1", 0.2, 7, 0.8),
      row("C", "c1", 0.3, 5, 0.7),  row("A", "c2", 0.2, 7, 0.5),
      row("B", "c2", 0.2, 7, 0.6),  row("C", "c2", 0.1, 10, 0.4)};
  const auto ranking = rank_sum(table);
  const bool ranks_ok = ranking.size() == 3 && ranking[0].model_id == "A" &&
                        ranking[0].rank_sum == 10.0 && ranking[1].model_id == "B" &&
                        ranking[1].rank_sum == 12.0 && ranking[2].model_id == "C" &&
                        ranking[2].rank_sum == 14.0;
  o.require(ranks_ok, "rank_sum table mismatch");
  if (o.pass)
    o.detail = "t " + fmt(r.t) + ", p " + fmt(r.p_two_sided);
  return o;
}

Outcome round_trips() {
  Outcome o;
  Rng rng(8);
  const Dims d{7, 6, 5};
  LabelVolume labels(d, {});
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<std::uint8_t>(rng.below(4));
  o.require(regions_to_labels(labels_to_regions(labels)) == labels, "codec round trip");

  const ProbabilityStack s{synthetic::smooth_image(d, rng), synthetic::smooth_image(d, rng),
                           synthetic::smooth_image(d, rng)};
  const std::vector<ProbabilityStack> copies(5, s);
  const auto f = fuse_ensemble(copies);
  o.require(f.wt() == s.wt() && f.tc() == s.tc() && f.et() == s.et(), "fusion identity");

  PostprocessConfig pp;
  pp.et_total_min = 30;
  pp.et_component_min = 3;
  const auto once = postprocess_enhancing(labels, pp);
  o.require(postprocess_enhancing(once, pp) == once, "postprocess not idempotent");

  const auto dir = make_temp_dir();
  const auto vol = synthetic::smooth_image(d, rng);
  for (auto fmt_ : {FileFormat::nifti, FileFormat::raw}) {
    const auto p = dir / (fmt_ == FileFormat::nifti ? "v.nii" : "v.json");
    save_volume(vol, p, fmt_);
    const auto back = load_volume(p, fmt_);
    o.require(back.dims() == vol.dims() &&
                  std::memcmp(back.data().data(), vol.data().data(),
                              vol.size() * sizeof(float)) == 0,
              "volume payload differs after " + p.filename().string());
    const auto lp = dir / (fmt_ == FileFormat::nifti ? "l.nii" : "l.json");
    save_volume(labels, lp, fmt_);
    o.require(load_labels(lp, fmt_).values() == labels.values(),
              "label payload differs after " + lp.filename().string());
  }
  fs::remove_all(dir);
  if (o.pass)
    o.detail = "codec, fusion, postprocess, nifti, raw";
  return o;
}

Outcome end_to_end() {
  Outcome o;
  const auto dir = make_temp_dir();
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = synthetic::write_corpus(dir, 5, {32, 32, 32});
  for (const char *mode : {"legacy", "lesion_wise"}) {
    const auto out = dir / (std::string("seg_") + mode + ".json");
    const int rc = run_cli("eval-seg " + corpus.seg_manifest.string() + " --mode " + mode +
                           " --jobs 2 --out " + out.string());
    o.require(rc == 0, std::string("eval-seg ") + mode + " exit " + std::to_string(rc));
    if (rc == 0) {
      const auto why = synthetic::check_seg_report(synthetic::read_json(out), 5);
      o.require(why.empty(), std::string("eval-seg ") + mode + " schema: " + why);
    }
  }
  const auto out = dir / "inpaint.json";
  const int rc = run_cli("eval-inpaint " + corpus.inpaint_manifest.string() + " --jobs 2 --out " +
                         out.string());
  o.require(rc == 0, "eval-inpaint exit " + std::to_string(rc));
  if (rc == 0) {
    const auto why = synthetic::check_inpaint_report(synthetic::read_json(out), 10);
    o.require(why.empty(), "eval-inpaint schema: " + why);
  }
  const double s = seconds_since(t0);
  o.require(s < 30.0, "runtime " + fmt(s) + " s");
  fs::remove_all(dir);
  if (o.pass)
    o.detail = "5 cases of 32^3 in " + fmt(s) + " s";
  return o;
}

} // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 metric oracle equivalence (dice exact, hd95 < 1e-9 mm, 200 pairs, < 10 s)",
       metric_oracle},
      {"2 lesion-wise scenario suite reproduces hand-computed means", lesion_scenarios},
      {"3 gradient checks (h 1e-4, rel tol 1e-5, >= 5 shapes per op, < 60 s)",
       gradient_checks},
      {"4 kernel closed forms (group norm, value pathway, patchify, locality)",
       kernel_closed_forms},
      {"5 axial attention multiply count doubles with a non-attended axis",
       attention_scaling},
      {"6 inpainting metrics (identity, psnr 20 dB, constant SSIM, mask isolation)",
       inpaint_metrics},
      {"7 statistics (t fixture, p vs quadrature, rank-sum hand table)", statistics},
      {"8 pipeline round trips (codec, fusion, postprocess, nifti/raw)", round_trips},
      {"9 end-to-end smoke on 5 synthetic 32^3 cases (< 30 s, exit 0)", end_to_end},
  };
  int failures = 0;
  for (const auto &[name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception &e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " [" << o.detail << "]\n";
  }
  std::cout << (failures ? "FAIL " : "PASS ") << 9 - failures << "/9 criteria\n";
  return failures ? 1 : 0;
}
