#ifndef TUMORKIT_STATS_HPP
#define TUMORKIT_STATS_HPP

// Student-t tail probabilities via the regularized incomplete beta function,
// and the paired t-test.

#include <cmath>
#include <limits>
#include <span>

#include "tumorkit/errors.hpp"

namespace tumorkit {

namespace detail {

/// Continued fraction for I_x(a, b), modified Lentz evaluation.
inline double ibeta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 1000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny)
    d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny)
      d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny)
      c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny)
      d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny)
      c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps)
      return h;
  }
  return h;
}

} // namespace detail

/// Regularized incomplete beta function I_x(a, b) for a, b > 0.
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0))
    throw ConfigError("incomplete_beta: a and b must be positive");
  if (x <= 0.0)
    return 0.0;
  if (x >= 1.0)
    return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) -
                           std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * detail::ibeta_cf(a, b, x) / a;
  return 1.0 - front * detail::ibeta_cf(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for Student's t with df degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0))
    throw ConfigError("student_t: df must be positive");
  if (std::isinf(t))
    return 0.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

inline double student_t_cdf(double t, double df) {
  const double tail = 0.5 * student_t_two_sided_p(t, df);
  return t >= 0.0 ? 1.0 - tail : tail;
}

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_two_sided = 1.0;
  std::size_t n = 0;
};

/// Paired t-test on d = a - b with the sample (n - 1) standard deviation.
/// Identical inputs give t = 0, p = 1; constant nonzero differences have no
/// defined statistic and raise DegenerateError.
inline TTestResult paired_ttest(std::span<const double> a,
                                std::span<const double> b) {
  if (a.size() != b.size())
    throw ArityError("paired_ttest: sample sizes differ");
  const std::size_t n = a.size();
  if (n < 2)
    throw ArityError("paired_ttest needs at least two pairs");

  bool constant = true;
  const double d0 = a[0] - b[0];
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    if (!std::isfinite(d))
      throw RangeError("paired_ttest: non-finite difference");
    constant = constant && d == d0;
    sum += d;
  }
  TTestResult r;
  r.n = n;
  r.df = static_cast<double>(n - 1);
  if (constant) {
    if (d0 != 0.0)
      throw DegenerateError("paired_ttest: all differences equal and nonzero");
    return r;
  }
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dev = (a[i] - b[i]) - mean;
    ss += dev * dev;
  }
  const double sd = std::sqrt(ss / r.df);
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p_two_sided = student_t_two_sided_p(r.t, r.df);
  return r;
}

} // namespace tumorkit

#endif // TUMORKIT_STATS_HPP
