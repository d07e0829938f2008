#ifndef TUMORKIT_KERNELS_HPP
#define TUMORKIT_KERNELS_HPP

// Reference numeric kernels in 64-bit arithmetic, each with an exact
// analytic backward pass: group normalization, sigmoid binary cross-entropy,
// stride-2 3x3x3 convolution, patch tokenization, axial multi-head attention
// and skip fusion. Tensors of rank 4 are laid out [C, D, H, W].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorkit/errors.hpp"
#include "tumorkit/random.hpp"

namespace tumorkit {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape &s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

inline std::size_t shape_volume(const Shape &s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(shape_volume(shape), fill) {
    check();
  }
  Tensor(Shape s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    check();
    if (data.size() != shape_volume(shape))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool defined() const { return !shape.empty(); }
  double operator[](std::size_t i) const { return data[i]; }
  double &operator[](std::size_t i) { return data[i]; }

  bool operator==(const Tensor &) const = default;

private:
  void check() const {
    for (auto d : shape)
      if (d == 0)
        throw ShapeError("tensor extents must be positive: " +
                         shape_string(shape));
  }
};

inline Tensor random_tensor(const Shape &shape, Rng &rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(shape);
  for (auto &v : t.data)
    v = rng.uniform(lo, hi);
  return t;
}

/// Multiply counter for kernels that support instrumentation.
struct OpCounter {
  std::uint64_t multiplies = 0;
};

namespace detail {

inline void require_rank4(const Tensor &x, const char *what) {
  if (x.rank() != 4)
    throw ShapeError(std::string(what) + " expects a [C,D,H,W] tensor, got " +
                     shape_string(x.shape));
}

inline void require_shape(const Tensor &t, const Shape &s, const char *what) {
  if (t.shape != s)
    throw ShapeError(std::string(what) + ": expected shape " + shape_string(s) +
                     ", got " + shape_string(t.shape));
}

} // namespace detail

// --- group normalization ----------------------------------------------------

struct GroupNormConfig {
  std::size_t groups = 32;
  double eps = 1e-5;
  Tensor gamma; // [C]; undefined means ones
  Tensor beta;  // [C]; undefined means zeros
};

struct GroupNormGrads {
  Tensor dx, dgamma, dbeta;
};

namespace detail {

struct GroupStats {
  std::size_t channels_per_group, spatial, count;
  std::vector<double> mean, inv_std;
};

inline GroupStats group_stats(const Tensor &x, const GroupNormConfig &cfg) {
  require_rank4(x, "group_norm");
  const std::size_t C = x.shape[0];
  if (cfg.groups == 0 || C % cfg.groups != 0)
    throw ConfigError("group_norm: " + std::to_string(C) +
                      " channels not divisible by " +
                      std::to_string(cfg.groups) + " groups");
  if (!(cfg.eps > 0.0))
    throw ConfigError("group_norm: eps must be positive");
  if (cfg.gamma.defined())
    require_shape(cfg.gamma, {C}, "group_norm gamma");
  if (cfg.beta.defined())
    require_shape(cfg.beta, {C}, "group_norm beta");

  GroupStats s;
  s.channels_per_group = C / cfg.groups;
  s.spatial = x.shape[1] * x.shape[2] * x.shape[3];
  s.count = s.channels_per_group * s.spatial;
  s.mean.resize(cfg.groups);
  s.inv_std.resize(cfg.groups);
  for (std::size_t g = 0; g < cfg.groups; ++g) {
    const double *p = x.data.data() + g * s.count;
    double sum = 0.0;
    for (std::size_t i = 0; i < s.count; ++i)
      sum += p[i];
    const double mean = sum / static_cast<double>(s.count);
    double sq = 0.0;
    for (std::size_t i = 0; i < s.count; ++i)
      sq += (p[i] - mean) * (p[i] - mean);
    const double var = sq / static_cast<double>(s.count);
    s.mean[g] = mean;
    s.inv_std[g] = 1.0 / std::sqrt(var + cfg.eps);
  }
  return s;
}

} // namespace detail

/// y = gamma * (x - mean_g) / sqrt(var_g + eps) + beta, with population
/// statistics over each group's channels and all voxels.
inline Tensor group_norm(const Tensor &x, const GroupNormConfig &cfg) {
  const auto s = detail::group_stats(x, cfg);
  Tensor y(x.shape);
  const std::size_t C = x.shape[0];
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t g = c / s.channels_per_group;
    const double gamma = cfg.gamma.defined() ? cfg.gamma[c] : 1.0;
    const double beta = cfg.beta.defined() ? cfg.beta[c] : 0.0;
    for (std::size_t i = c * s.spatial; i < (c + 1) * s.spatial; ++i)
      y[i] = gamma * (x[i] - s.mean[g]) * s.inv_std[g] + beta;
  }
  return y;
}

inline GroupNormGrads group_norm_backward(const Tensor &x,
                                          const GroupNormConfig &cfg,
                                          const Tensor &dy) {
  const auto s = detail::group_stats(x, cfg);
  detail::require_shape(dy, x.shape, "group_norm_backward dy");
  const std::size_t C = x.shape[0];
  GroupNormGrads out{Tensor(x.shape), Tensor({C}), Tensor({C})};
  const double m = static_cast<double>(s.count);

  for (std::size_t g = 0; g < cfg.groups; ++g) {
    const std::size_t begin = g * s.count, end = begin + s.count;
    // dxhat = dy * gamma; accumulate sum(dxhat) and sum(dxhat * xhat).
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t c = i / s.spatial;
      const double gamma = cfg.gamma.defined() ? cfg.gamma[c] : 1.0;
      const double xhat = (x[i] - s.mean[g]) * s.inv_std[g];
      const double dxhat = dy[i] * gamma;
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      out.dgamma[c] += dy[i] * xhat;
      out.dbeta[c] += dy[i];
    }
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t c = i / s.spatial;
      const double gamma = cfg.gamma.defined() ? cfg.gamma[c] : 1.0;
      const double xhat = (x[i] - s.mean[g]) * s.inv_std[g];
      const double dxhat = dy[i] * gamma;
      out.dx[i] =
          s.inv_std[g] / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
    }
  }
  return out;
}

// --- sigmoid + binary cross-entropy -----------------------------------------

struct BceResult {
  double loss = 0.0;
  Tensor grad_logits;
};

inline double stable_sigmoid(double z) {
  if (z >= 0.0)
    return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Mean of max(z,0) - z*t + log(1 + exp(-|z|)); gradient (sigmoid(z) - t)/N.
inline BceResult sigmoid_bce_with_logits(const Tensor &logits,
                                         const Tensor &targets) {
  if (logits.shape != targets.shape)
    throw ShapeError("bce: logits " + shape_string(logits.shape) +
                     " vs targets " + shape_string(targets.shape));
  if (logits.size() == 0)
    throw ShapeError("bce: empty input");
  const double n = static_cast<double>(logits.size());
  BceResult r{0.0, Tensor(logits.shape)};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i], t = targets[i];
    if (!(t >= 0.0 && t <= 1.0))
      throw RangeError("bce: target outside [0,1]");
    r.loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::fabs(z)));
    r.grad_logits[i] = (stable_sigmoid(z) - t) / n;
  }
  r.loss /= n;
  return r;
}

// --- stride-2 3x3x3 convolution ---------------------------------------------

struct ConvGrads {
  Tensor dx, dkernel;
};

namespace detail {

inline Shape conv3_output_shape(const Tensor &x, const Tensor &kernel) {
  require_rank4(x, "conv3_downsample");
  if (kernel.rank() != 5 || kernel.shape[2] != 3 || kernel.shape[3] != 3 ||
      kernel.shape[4] != 3 || kernel.shape[1] != x.shape[0])
    throw ShapeError("conv3_downsample: kernel " + shape_string(kernel.shape) +
                     " incompatible with input " + shape_string(x.shape));
  auto half = [](std::size_t n) { return (n + 1) / 2; };
  return {kernel.shape[0], half(x.shape[1]), half(x.shape[2]),
          half(x.shape[3])};
}

/// Visits every (output, kernel tap, input) triple with an in-bounds input;
/// zero padding contributes nothing.
template <typename Fn>
void conv3_for_each(const Shape &xs, const Shape &ys, Fn &&fn) {
  const std::size_t Cin = xs[0], D = xs[1], H = xs[2], W = xs[3];
  const std::size_t Cout = ys[0], OD = ys[1], OH = ys[2], OW = ys[3];
  for (std::size_t o = 0; o < Cout; ++o)
    for (std::size_t oz = 0; oz < OD; ++oz)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          const std::size_t yi = ((o * OD + oz) * OH + oy) * OW + ox;
          for (std::size_t c = 0; c < Cin; ++c)
            for (std::size_t kz = 0; kz < 3; ++kz) {
              const auto z = static_cast<std::ptrdiff_t>(2 * oz + kz) - 1;
              if (z < 0 || z >= static_cast<std::ptrdiff_t>(D))
                continue;
              for (std::size_t ky = 0; ky < 3; ++ky) {
                const auto y = static_cast<std::ptrdiff_t>(2 * oy + ky) - 1;
                if (y < 0 || y >= static_cast<std::ptrdiff_t>(H))
                  continue;
                for (std::size_t kx = 0; kx < 3; ++kx) {
                  const auto x = static_cast<std::ptrdiff_t>(2 * ox + kx) - 1;
                  if (x < 0 || x >= static_cast<std::ptrdiff_t>(W))
                    continue;
                  const std::size_t xi =
                      ((c * D + static_cast<std::size_t>(z)) * H +
                       static_cast<std::size_t>(y)) *
                          W +
                      static_cast<std::size_t>(x);
                  const std::size_t ki = (((o * Cin + c) * 3 + kz) * 3 + ky) * 3 + kx;
                  fn(yi, ki, xi);
                }
              }
            }
        }
}

} // namespace detail

/// Cross-correlation with a [Cout, Cin, 3, 3, 3] kernel, stride 2 and zero
/// padding 1; output extents are ceil(n / 2).
inline Tensor conv3_downsample(const Tensor &x, const Tensor &kernel,
                               OpCounter *counter = nullptr) {
  Tensor y(detail::conv3_output_shape(x, kernel));
  std::uint64_t muls = 0;
  detail::conv3_for_each(x.shape, y.shape,
                         [&](std::size_t yi, std::size_t ki, std::size_t xi) {
                           y[yi] += kernel[ki] * x[xi];
                           ++muls;
                         });
  if (counter)
    counter->multiplies += muls;
  return y;
}

inline ConvGrads conv3_downsample_backward(const Tensor &x,
                                           const Tensor &kernel,
                                           const Tensor &dy) {
  const auto ys = detail::conv3_output_shape(x, kernel);
  detail::require_shape(dy, ys, "conv3_downsample_backward dy");
  ConvGrads g{Tensor(x.shape), Tensor(kernel.shape)};
  detail::conv3_for_each(x.shape, ys,
                         [&](std::size_t yi, std::size_t ki, std::size_t xi) {
                           g.dx[xi] += kernel[ki] * dy[yi];
                           g.dkernel[ki] += x[xi] * dy[yi];
                         });
  return g;
}

// --- patch tokenization -----------------------------------------------------

/// [C,D,H,W] -> [(D/p)(H/p)(W/p), C p^3]. Tokens are row-major over the patch
/// grid; features are ordered (channel, dz, dy, dx).
inline Tensor patchify(const Tensor &x, std::size_t p) {
  detail::require_rank4(x, "patchify");
  const std::size_t C = x.shape[0], D = x.shape[1], H = x.shape[2],
                    W = x.shape[3];
  if (p == 0 || D % p || H % p || W % p)
    throw ConfigError("patchify: extents " + shape_string(x.shape) +
                      " not divisible by patch edge " + std::to_string(p));
  const std::size_t GD = D / p, GH = H / p, GW = W / p;
  Tensor t({GD * GH * GW, C * p * p * p});
  std::size_t out = 0;
  for (std::size_t pz = 0; pz < GD; ++pz)
    for (std::size_t py = 0; py < GH; ++py)
      for (std::size_t px = 0; px < GW; ++px)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t dz = 0; dz < p; ++dz)
            for (std::size_t dy = 0; dy < p; ++dy)
              for (std::size_t dx = 0; dx < p; ++dx)
                t[out++] = x[((c * D + pz * p + dz) * H + py * p + dy) * W +
                             px * p + dx];
  return t;
}

inline Tensor unpatchify(const Tensor &tokens, const Shape &volume_shape,
                         std::size_t p) {
  if (volume_shape.size() != 4)
    throw ShapeError("unpatchify: target shape must be [C,D,H,W]");
  const std::size_t C = volume_shape[0], D = volume_shape[1],
                    H = volume_shape[2], W = volume_shape[3];
  if (p == 0 || D % p || H % p || W % p)
    throw ConfigError("unpatchify: extents not divisible by patch edge");
  const std::size_t GD = D / p, GH = H / p, GW = W / p;
  detail::require_shape(tokens, {GD * GH * GW, C * p * p * p}, "unpatchify");
  Tensor x(volume_shape);
  std::size_t in = 0;
  for (std::size_t pz = 0; pz < GD; ++pz)
    for (std::size_t py = 0; py < GH; ++py)
      for (std::size_t px = 0; px < GW; ++px)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t dz = 0; dz < p; ++dz)
            for (std::size_t dy = 0; dy < p; ++dy)
              for (std::size_t dx = 0; dx < p; ++dx)
                x[((c * D + pz * p + dz) * H + py * p + dy) * W + px * p + dx] =
                    tokens[in++];
  return x;
}

// --- axial attention --------------------------------------------------------

enum class Axis { depth = 1, height = 2, width = 3 };

inline const char *axis_name(Axis a) {
  switch (a) {
  case Axis::depth:
    return "depth";
  case Axis::height:
    return "height";
  default:
    return "width";
  }
}

/// Multi-head attention along one spatial axis. Projections: wq, wk, wv are
/// [heads*head_dim, C], wo is [C, heads*head_dim]. The optional position
/// table [L, C] (L = extent of the attended axis) is added to the query and
/// key inputs only.
struct AxialAttentionConfig {
  Axis axis = Axis::width;
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  Tensor wq, wk, wv, wo;
  std::optional<Tensor> pos;
};

struct AxialAttentionGrads {
  Tensor dx, dwq, dwk, dwv, dwo, dpos;
};

namespace detail {

struct LineGeometry {
  std::size_t length, step, channel_stride;
  std::vector<std::size_t> starts; // flat offset of position 0 of each line
};

inline LineGeometry line_geometry(const Shape &s, Axis axis) {
  const std::size_t D = s[1], H = s[2], W = s[3];
  LineGeometry g;
  g.channel_stride = D * H * W;
  const std::size_t strides[4] = {D * H * W, H * W, W, 1};
  const auto a = static_cast<std::size_t>(axis);
  g.length = s[a];
  g.step = strides[a];
  for (std::size_t z = 0; z < (a == 1 ? 1 : D); ++z)
    for (std::size_t y = 0; y < (a == 2 ? 1 : H); ++y)
      for (std::size_t x = 0; x < (a == 3 ? 1 : W); ++x)
        g.starts.push_back((z * H + y) * W + x);
  return g;
}

inline void check_attention(const Tensor &x, const AxialAttentionConfig &cfg) {
  require_rank4(x, "axial_attention");
  const std::size_t C = x.shape[0];
  const std::size_t E = cfg.heads * cfg.head_dim;
  if (E == 0)
    throw ShapeError("axial_attention: heads and head_dim must be positive");
  require_shape(cfg.wq, {E, C}, "axial_attention wq");
  require_shape(cfg.wk, {E, C}, "axial_attention wk");
  require_shape(cfg.wv, {E, C}, "axial_attention wv");
  require_shape(cfg.wo, {C, E}, "axial_attention wo");
  if (cfg.pos)
    require_shape(*cfg.pos, {x.shape[static_cast<std::size_t>(cfg.axis)], C},
                  "axial_attention position table");
}

/// Dense row-major matrices for one line: X, Xqk [L,C]; Q, K, V, O [L,E];
/// attention weights per head [heads, L, L].
struct LineState {
  std::size_t L = 0, C = 0, E = 0;
  std::vector<double> X, Xqk, Q, K, V, O, A;
};

inline void line_forward(const Tensor &x, const AxialAttentionConfig &cfg,
                         const LineGeometry &g, std::size_t start,
                         LineState &st, std::uint64_t &muls) {
  const std::size_t L = g.length, C = x.shape[0], E = cfg.heads * cfg.head_dim;
  const std::size_t dh = cfg.head_dim;
  st.L = L, st.C = C, st.E = E;
  st.X.assign(L * C, 0.0);
  st.Xqk.assign(L * C, 0.0);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t c = 0; c < C; ++c) {
      const double v = x[start + l * g.step + c * g.channel_stride];
      st.X[l * C + c] = v;
      st.Xqk[l * C + c] = v + (cfg.pos ? (*cfg.pos)[l * C + c] : 0.0);
    }
  st.Q.assign(L * E, 0.0);
  st.K.assign(L * E, 0.0);
  st.V.assign(L * E, 0.0);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t e = 0; e < E; ++e) {
      double q = 0.0, k = 0.0, v = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        q += cfg.wq[e * C + c] * st.Xqk[l * C + c];
        k += cfg.wk[e * C + c] * st.Xqk[l * C + c];
        v += cfg.wv[e * C + c] * st.X[l * C + c];
      }
      st.Q[l * E + e] = q, st.K[l * E + e] = k, st.V[l * E + e] = v;
    }
  muls += 3 * L * E * C;

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  st.A.assign(cfg.heads * L * L, 0.0);
  st.O.assign(L * E, 0.0);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    double *A = st.A.data() + h * L * L;
    for (std::size_t i = 0; i < L; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < L; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d)
          s += st.Q[i * E + h * dh + d] * st.K[j * E + h * dh + d];
        A[i * L + j] = s * scale;
        mx = std::max(mx, A[i * L + j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        A[i * L + j] = std::exp(A[i * L + j] - mx);
        z += A[i * L + j];
      }
      for (std::size_t j = 0; j < L; ++j)
        A[i * L + j] /= z;
      for (std::size_t d = 0; d < dh; ++d) {
        double o = 0.0;
        for (std::size_t j = 0; j < L; ++j)
          o += A[i * L + j] * st.V[j * E + h * dh + d];
        st.O[i * E + h * dh + d] = o;
      }
    }
  }
  // scores (L*L*dh per head) + scaling + normalization + weighted values
  muls += cfg.heads * (L * L * dh + 2 * L * L + L * L * dh);
  muls += L * C * E; // output projection
}

} // namespace detail

inline Tensor axial_attention(const Tensor &x, const AxialAttentionConfig &cfg,
                              OpCounter *counter = nullptr) {
  detail::check_attention(x, cfg);
  const auto g = detail::line_geometry(x.shape, cfg.axis);
  Tensor y(x.shape);
  detail::LineState st;
  std::uint64_t muls = 0;
  const std::size_t C = x.shape[0], E = cfg.heads * cfg.head_dim;
  for (auto start : g.starts) {
    detail::line_forward(x, cfg, g, start, st, muls);
    for (std::size_t l = 0; l < g.length; ++l)
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t e = 0; e < E; ++e)
          acc += cfg.wo[c * E + e] * st.O[l * E + e];
        y[start + l * g.step + c * g.channel_stride] = acc;
      }
  }
  if (counter)
    counter->multiplies += muls;
  return y;
}

inline AxialAttentionGrads
axial_attention_backward(const Tensor &x, const AxialAttentionConfig &cfg,
                         const Tensor &dy) {
  detail::check_attention(x, cfg);
  detail::require_shape(dy, x.shape, "axial_attention_backward dy");
  const auto g = detail::line_geometry(x.shape, cfg.axis);
  const std::size_t C = x.shape[0], E = cfg.heads * cfg.head_dim,
                    dh = cfg.head_dim, L = g.length;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  AxialAttentionGrads out{Tensor(x.shape), Tensor(cfg.wq.shape),
                          Tensor(cfg.wk.shape), Tensor(cfg.wv.shape),
                          Tensor(cfg.wo.shape), {}};
  if (cfg.pos)
    out.dpos = Tensor(cfg.pos->shape);

  detail::LineState st;
  std::uint64_t muls = 0;
  std::vector<double> dY(L * C), dO(L * E), dQ(L * E), dK(L * E), dV(L * E),
      dA(L * L);
  for (auto start : g.starts) {
    detail::line_forward(x, cfg, g, start, st, muls);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < C; ++c)
        dY[l * C + c] = dy[start + l * g.step + c * g.channel_stride];

    std::fill(dO.begin(), dO.end(), 0.0);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t e = 0; e < E; ++e) {
          out.dwo[c * E + e] += dY[l * C + c] * st.O[l * E + e];
          dO[l * E + e] += dY[l * C + c] * cfg.wo[c * E + e];
        }

    std::fill(dQ.begin(), dQ.end(), 0.0);
    std::fill(dK.begin(), dK.end(), 0.0);
    std::fill(dV.begin(), dV.end(), 0.0);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const double *A = st.A.data() + h * L * L;
      for (std::size_t i = 0; i < L; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) {
            s += dO[i * E + h * dh + d] * st.V[j * E + h * dh + d];
            dV[j * E + h * dh + d] += A[i * L + j] * dO[i * E + h * dh + d];
          }
          dA[i * L + j] = s;
          row += A[i * L + j] * s;
        }
        for (std::size_t j = 0; j < L; ++j) {
          const double ds = A[i * L + j] * (dA[i * L + j] - row) * scale;
          for (std::size_t d = 0; d < dh; ++d) {
            dQ[i * E + h * dh + d] += ds * st.K[j * E + h * dh + d];
            dK[j * E + h * dh + d] += ds * st.Q[i * E + h * dh + d];
          }
        }
      }
    }

    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < C; ++c) {
        double dxqk = 0.0, dxv = 0.0;
        for (std::size_t e = 0; e < E; ++e) {
          out.dwq[e * C + c] += dQ[l * E + e] * st.Xqk[l * C + c];
          out.dwk[e * C + c] += dK[l * E + e] * st.Xqk[l * C + c];
          out.dwv[e * C + c] += dV[l * E + e] * st.X[l * C + c];
          dxqk += dQ[l * E + e] * cfg.wq[e * C + c] +
                  dK[l * E + e] * cfg.wk[e * C + c];
          dxv += dV[l * E + e] * cfg.wv[e * C + c];
        }
        out.dx[start + l * g.step + c * g.channel_stride] = dxqk + dxv;
        if (cfg.pos)
          out.dpos[l * C + c] += dxqk;
      }
  }
  return out;
}

// --- skip fusion ------------------------------------------------------------

enum class SkipMode { add, concat };

/// add: elementwise sum of equal shapes. concat: stack along axis 0 with a's
/// channels first; the remaining extents must match.
inline Tensor skip_fuse(const Tensor &a, const Tensor &b, SkipMode mode) {
  if (mode == SkipMode::add) {
    if (a.shape != b.shape)
      throw ShapeError("skip_fuse add: " + shape_string(a.shape) + " vs " +
                       shape_string(b.shape));
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i)
      out[i] = a[i] + b[i];
    return out;
  }
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape.begin() + 1, a.shape.end(), b.shape.begin() + 1))
    throw ShapeError("skip_fuse concat: " + shape_string(a.shape) + " vs " +
                     shape_string(b.shape));
  Shape s = a.shape;
  s[0] += b.shape[0];
  Tensor out(s);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(),
            out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

// --- finite-difference gradient check ---------------------------------------

/// A differentiable operation over a list of tensors. backward receives the
/// upstream gradient of the output and returns one gradient per input; an
/// undefined tensor marks an input that is not differentiated.
struct DifferentiableOp {
  std::string name;
  std::function<Tensor(const std::vector<Tensor> &)> forward;
  std::function<std::vector<Tensor>(const std::vector<Tensor> &,
                                    const Tensor &)>
      backward;
};

struct GradCheckReport {
  std::string op;
  std::vector<Shape> shapes;
  double h = 1e-4;
  double tol = 1e-5;
  double max_rel_err = 0.0;
  bool pass = false;
};

inline nlohmann::json to_json(const GradCheckReport &r) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto &s : r.shapes)
    shapes.push_back(s);
  return {{"op", r.op},       {"shapes", shapes},
          {"h", r.h},         {"tol", r.tol},
          {"max_rel_err", r.max_rel_err}, {"pass", r.pass}};
}

/// Compares the analytic gradient of L(x) = <u, op(x)>, for a random
/// upstream u, against central differences on every input element. Error
/// per element is |numeric - analytic| / max(1, |analytic|).
inline GradCheckReport grad_check(const DifferentiableOp &op,
                                  std::vector<Tensor> inputs, double h = 1e-4,
                                  double tol = 1e-5, std::uint64_t seed = 7) {
  GradCheckReport rep;
  rep.op = op.name;
  rep.h = h;
  rep.tol = tol;
  for (const auto &t : inputs)
    rep.shapes.push_back(t.shape);

  const Tensor y = op.forward(inputs);
  Rng rng(seed);
  const Tensor u = random_tensor(y.shape, rng);
  const auto analytic = op.backward(inputs, u);
  if (analytic.size() != inputs.size())
    throw ArityError("grad_check: backward returned " +
                     std::to_string(analytic.size()) + " gradients for " +
                     std::to_string(inputs.size()) + " inputs");

  auto objective = [&] {
    const Tensor out = op.forward(inputs);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i)
      s += u[i] * out[i];
    return s;
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!analytic[k].defined())
      continue;
    if (analytic[k].shape != inputs[k].shape)
      throw ShapeError("grad_check: gradient shape mismatch for input " +
                       std::to_string(k));
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double up = objective();
      inputs[k][i] = saved - h;
      const double down = objective();
      inputs[k][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double err = std::fabs(numeric - a) / std::max(1.0, std::fabs(a));
      if (!(err <= worst)) // NaN propagates
        worst = err;
    }
  }
  rep.max_rel_err = worst;
  rep.pass = std::isfinite(worst) && worst < tol;
  return rep;
}

// Ready-made operations for grad_check.

/// Inputs {x, gamma, beta}.
inline DifferentiableOp group_norm_op(std::size_t groups, double eps = 1e-5) {
  auto cfg_of = [groups, eps](const std::vector<Tensor> &in) {
    return GroupNormConfig{groups, eps, in[1], in[2]};
  };
  return {"group_norm",
          [cfg_of](const std::vector<Tensor> &in) {
            return group_norm(in[0], cfg_of(in));
          },
          [cfg_of](const std::vector<Tensor> &in, const Tensor &dy) {
            auto g = group_norm_backward(in[0], cfg_of(in), dy);
            return std::vector<Tensor>{g.dx, g.dgamma, g.dbeta};
          }};
}

/// Inputs {logits, targets}; output is the scalar loss as shape [1].
inline DifferentiableOp sigmoid_bce_op() {
  return {"sigmoid_bce_with_logits",
          [](const std::vector<Tensor> &in) {
            return Tensor({1}, {sigmoid_bce_with_logits(in[0], in[1]).loss});
          },
          [](const std::vector<Tensor> &in, const Tensor &dy) {
            auto r = sigmoid_bce_with_logits(in[0], in[1]);
            for (auto &v : r.grad_logits.data)
              v *= dy[0];
            return std::vector<Tensor>{r.grad_logits, Tensor{}};
          }};
}

/// Inputs {x, kernel}.
inline DifferentiableOp conv3_downsample_op() {
  return {"conv3_downsample",
          [](const std::vector<Tensor> &in) {
            return conv3_downsample(in[0], in[1]);
          },
          [](const std::vector<Tensor> &in, const Tensor &dy) {
            auto g = conv3_downsample_backward(in[0], in[1], dy);
            return std::vector<Tensor>{g.dx, g.dkernel};
          }};
}

/// Inputs {x, wq, wk, wv, wo} plus {pos} when with_position is set.
inline DifferentiableOp axial_attention_op(Axis axis, std::size_t heads,
                                           std::size_t head_dim,
                                           bool with_position) {
  auto cfg_of = [=](const std::vector<Tensor> &in) {
    AxialAttentionConfig cfg{axis, heads, head_dim, in[1], in[2], in[3], in[4],
                             std::nullopt};
    if (with_position)
      cfg.pos = in[5];
    return cfg;
  };
  return {"axial_attention",
          [cfg_of](const std::vector<Tensor> &in) {
            return axial_attention(in[0], cfg_of(in));
          },
          [cfg_of, with_position](const std::vector<Tensor> &in,
                                  const Tensor &dy) {
            auto g = axial_attention_backward(in[0], cfg_of(in), dy);
            std::vector<Tensor> out{g.dx, g.dwq, g.dwk, g.dwv, g.dwo};
            if (with_position)
              out.push_back(g.dpos);
            return out;
          }};
}

} // namespace tumorkit

#endif // TUMORKIT_KERNELS_HPP
