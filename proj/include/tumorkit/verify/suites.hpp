#ifndef TUMORKIT_VERIFY_SUITES_HPP
#define TUMORKIT_VERIFY_SUITES_HPP

// Self-verification suites: finite-difference gradient checks for the
// kernels and brute-force oracle comparisons for the metrics.

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorkit/kernels.hpp"
#include "tumorkit/random.hpp"
#include "tumorkit/seg_metrics.hpp"
#include "tumorkit/verify/brute_force.hpp"

namespace tumorkit::verify {

struct SuiteResult {
  std::string suite;
  bool pass = true;
  nlohmann::json checks = nlohmann::json::array();
  double seconds = 0.0;

  void add(nlohmann::json check) {
    pass = pass && check.value("pass", false);
    checks.push_back(std::move(check));
  }

  nlohmann::json to_json() const {
    nlohmann::json failing = nlohmann::json::array();
    for (const auto &c : checks)
      if (!c.value("pass", false))
        failing.push_back(c.value("name", c.value("op", "?")));
    return {{"suite", suite},
            {"pass", pass},
            {"seconds", seconds},
            {"failing", failing},
            {"checks", checks}};
  }
};

struct GradCase {
  DifferentiableOp op;
  std::vector<Tensor> inputs;
};

/// At least five randomized shapes per differentiable kernel, including the
/// 64-channel / 32-group normalization case.
inline std::vector<GradCase> gradient_cases(std::uint64_t seed = 2024) {
  Rng rng(seed);
  std::vector<GradCase> out;

  struct GnShape {
    Shape x;
    std::size_t groups;
  };
  for (const auto &s : {GnShape{{64, 4, 4, 4}, 32}, GnShape{{8, 3, 2, 5}, 4},
                        GnShape{{6, 2, 3, 3}, 3}, GnShape{{4, 5, 1, 2}, 2},
                        GnShape{{12, 2, 2, 2}, 1}}) {
    const Shape c{s.x[0]};
    out.push_back({group_norm_op(s.groups),
                   {random_tensor(s.x, rng), random_tensor(c, rng, 0.5, 1.5),
                    random_tensor(c, rng)}});
  }

  for (const auto &s : {Shape{10}, Shape{3, 4}, Shape{2, 3, 4}, Shape{1},
                        Shape{5, 2, 2}}) {
    out.push_back({sigmoid_bce_op(),
                   {random_tensor(s, rng, -6.0, 6.0),
                    random_tensor(s, rng, 0.0, 1.0)}});
  }

  struct ConvShape {
    Shape x;
    std::size_t cout;
  };
  for (const auto &s :
       {ConvShape{{1, 4, 4, 4}, 2}, ConvShape{{2, 5, 3, 4}, 3},
        ConvShape{{3, 3, 3, 3}, 1}, ConvShape{{1, 2, 2, 2}, 2},
        ConvShape{{2, 6, 5, 3}, 2}}) {
    out.push_back({conv3_downsample_op(),
                   {random_tensor(s.x, rng),
                    random_tensor({s.cout, s.x[0], 3, 3, 3}, rng)}});
  }

  struct AttnShape {
    Shape x;
    Axis axis;
    std::size_t heads, head_dim;
    bool pos;
  };
  for (const auto &s : {AttnShape{{8, 4, 4, 4}, Axis::width, 2, 4, true},
                        AttnShape{{4, 3, 5, 2}, Axis::depth, 1, 3, false},
                        AttnShape{{6, 2, 3, 4}, Axis::height, 3, 2, true},
                        AttnShape{{2, 5, 1, 1}, Axis::depth, 2, 1, false},
                        AttnShape{{3, 2, 2, 6}, Axis::width, 1, 4, true}}) {
    const std::size_t C = s.x[0], E = s.heads * s.head_dim;
    std::vector<Tensor> in{random_tensor(s.x, rng), random_tensor({E, C}, rng),
                           random_tensor({E, C}, rng), random_tensor({E, C}, rng),
                           random_tensor({C, E}, rng)};
    if (s.pos)
      in.push_back(
          random_tensor({s.x[static_cast<std::size_t>(s.axis)], C}, rng));
    out.push_back({axial_attention_op(s.axis, s.heads, s.head_dim, s.pos),
                   std::move(in)});
  }
  return out;
}

/// Wraps an op so that its backward pass is scaled; used to prove the
/// checker rejects a wrong gradient.
inline DifferentiableOp with_scaled_backward(DifferentiableOp op, double factor) {
  auto inner = op.backward;
  op.backward = [inner, factor](const std::vector<Tensor> &in,
                                const Tensor &dy) {
    auto g = inner(in, dy);
    for (auto &t : g)
      for (auto &v : t.data)
        v *= factor;
    return g;
  };
  op.name += "(scaled_backward)";
  return op;
}

inline SuiteResult run_kernel_suite(bool inject_fault = false,
                                    double h = 1e-4, double tol = 1e-5) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult res{"kernels"};
  for (auto &c : gradient_cases()) {
    auto report = grad_check(c.op, c.inputs, h, tol);
    auto j = to_json(report);
    j["name"] = "grad_check:" + report.op;
    res.add(std::move(j));
  }
  if (inject_fault) {
    auto c = gradient_cases().front();
    auto report = grad_check(with_scaled_backward(c.op, 1.01), c.inputs, h, tol);
    auto j = to_json(report);
    j["name"] = "grad_check:" + report.op;
    res.add(std::move(j));
  }
  res.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// A mask made of a few random boxes and balls; never empty.
inline BinaryMask random_blob_mask(const Dims &dims, const Spacing &spacing,
                                   Rng &rng) {
  BinaryMask m(dims, spacing);
  const std::size_t shapes = 1 + rng.below(3);
  for (std::size_t k = 0; k < shapes; ++k) {
    const long cz = static_cast<long>(rng.below(dims.depth));
    const long cy = static_cast<long>(rng.below(dims.height));
    const long cx = static_cast<long>(rng.below(dims.width));
    const long r = 1 + static_cast<long>(rng.below(4));
    const bool ball = rng.below(2) == 0;
    for (long z = cz - r; z <= cz + r; ++z)
      for (long y = cy - r; y <= cy + r; ++y)
        for (long x = cx - r; x <= cx + r; ++x) {
          if (z < 0 || y < 0 || x < 0 || z >= static_cast<long>(dims.depth) ||
              y >= static_cast<long>(dims.height) ||
              x >= static_cast<long>(dims.width))
            continue;
          const long dz = z - cz, dy = y - cy, dx = x - cx;
          if (ball && dz * dz + dy * dy + dx * dx > r * r)
            continue;
          m.at(static_cast<std::size_t>(z), static_cast<std::size_t>(y),
               static_cast<std::size_t>(x)) = 1;
        }
  }
  // Sprinkle isolated voxels so surfaces are not all convex.
  const std::size_t specks = rng.below(6);
  for (std::size_t k = 0; k < specks; ++k)
    m[rng.below(m.size())] = 1;
  return m;
}

inline SuiteResult run_metric_suite(std::size_t pairs = 200,
                                    std::uint64_t seed = 99) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult res{"metrics"};
  Rng rng(seed);
  const Dims dims{16, 16, 16};
  const Spacing spacings[] = {{1.0, 1.0, 1.0}, {2.0, 1.0, 1.0},
                              {1.5, 0.75, 1.25}, {3.0, 0.5, 0.5}};
  double max_dice_err = 0.0, max_hd_err = 0.0;
  std::size_t dice_fail = 0, hd_fail = 0;
  for (std::size_t k = 0; k < pairs; ++k) {
    const auto &sp = spacings[k % 4];
    const auto a = random_blob_mask(dims, sp, rng);
    const auto b = random_blob_mask(dims, sp, rng);
    const double de = std::fabs(dice(a, b) - dice_ratio(a, b).value());
    const double he = std::fabs(tumorkit::hd95(a, b) - verify::hd95(a, b, sp));
    max_dice_err = std::max(max_dice_err, de);
    max_hd_err = std::max(max_hd_err, he);
    dice_fail += !(de <= 1e-12);
    hd_fail += !(he < 1e-9);
  }
  res.add({{"name", "dice_vs_exact_ratio"},
           {"pairs", pairs},
           {"max_abs_err", max_dice_err},
           {"tol", 1e-12},
           {"pass", dice_fail == 0}});
  res.add({{"name", "hd95_vs_all_pairs"},
           {"pairs", pairs},
           {"max_abs_err", max_hd_err},
           {"tol", 1e-9},
           {"pass", hd_fail == 0}});

  double max_edt_err = 0.0;
  for (std::size_t k = 0; k < 8; ++k) {
    const auto &sp = spacings[k % 4];
    const Dims d{4 + rng.below(9), 4 + rng.below(9), 4 + rng.below(9)};
    BinaryMask m(d, sp);
    const std::size_t sites = 1 + rng.below(6);
    for (std::size_t s = 0; s < sites; ++s)
      m[rng.below(m.size())] = 1;
    const auto fast = distance_transform_exact(m, sp);
    const auto slow = verify::distance_transform(m, sp);
    for (std::size_t i = 0; i < fast.size(); ++i)
      max_edt_err = std::max(max_edt_err, std::fabs(fast[i] - slow[i]));
  }
  res.add({{"name", "edt_vs_all_pairs"},
           {"grids", 8},
           {"max_abs_err", max_edt_err},
           {"tol", 1e-9},
           {"pass", max_edt_err < 1e-9}});
  res.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

} // namespace tumorkit::verify

#endif // TUMORKIT_VERIFY_SUITES_HPP
