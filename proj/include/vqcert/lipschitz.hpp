#pragma once

// Certified operator-norm bounds for convolution layers and their
// composition into a Lipschitz constant for a whole network.
//
// Every certified bound goes through the same route: bound each single
// (out, in) channel block of the layer acting on the zero-padded input, then
// combine the c_o x c_i block bounds with the block-matrix lemma
// ||A|| <= sqrt(m n) max ||A_ij||. Three per-block bounds are available:
//
//   stride_dominant   s >= k in both axes: rows of the block have disjoint
//                     support, so the Gram matrix is ||ker_ij||_F^2 * I.
//   toeplitz_fourier  rows are uniform shifts of the first row, so the Gram
//                     matrix is symmetric Toeplitz and its spectral radius is
//                     at most the supremum of |f| for the symbol
//                     f(l) = c_0 + 2 sum_k c_k cos(k l).
//   block_composed    Schur test sqrt(max row sum * max column sum), valid for
//                     every layer.
//
// Power iteration on the unrolled matrix gives the exact norm numerically; it
// is used as an oracle and is never selected as a certified value.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vqcert/errors.hpp"
#include "vqcert/network.hpp"
#include "vqcert/tensor.hpp"

namespace vqcert {

enum class BoundMethod { stride_dominant, toeplitz_fourier, block_composed, oracle_power_iteration };

inline std::string to_string(BoundMethod m) {
  switch (m) {
    case BoundMethod::stride_dominant:
      return "stride_dominant";
    case BoundMethod::toeplitz_fourier:
      return "toeplitz_fourier";
    case BoundMethod::block_composed:
      return "block_composed";
    case BoundMethod::oracle_power_iteration:
      return "oracle_power_iteration";
  }
  return "?";
}

struct LayerBound {
  double value = 0.0;
  BoundMethod method = BoundMethod::block_composed;
  Matrix per_channel_bounds;  // c_o x c_i; empty for the oracle

  // Oracle estimates are numerical, not certified.
  bool certified() const { return method != BoundMethod::oracle_power_iteration; }
};

// ||A||_op <= sqrt(m n) * max_ij ||A_ij||_op for an m x n block matrix.
inline double block_lemma_bound(const Matrix& per_block) {
  require(!per_block.empty(), "block_lemma_bound: empty block matrix");
  double mx = 0.0;
  for (double v : per_block.values()) {
    require(v >= 0.0, "block_lemma_bound: block bounds must be >= 0");
    mx = std::max(mx, v);
  }
  return std::sqrt(static_cast<double>(per_block.rows() * per_block.cols())) * mx;
}

inline LayerBound stride_dominant_bound(const ConvLayer& layer) {
  require(layer.stride_dominant(), "stride_dominant_bound requires s_h >= k_h and s_w >= k_w");
  const Kernel4& k = layer.kernel;
  LayerBound b;
  b.method = BoundMethod::stride_dominant;
  b.per_channel_bounds = Matrix(k.out_channels(), k.in_channels());
  for (std::size_t o = 0; o < k.out_channels(); ++o)
    for (std::size_t i = 0; i < k.in_channels(); ++i) b.per_channel_bounds(o, i) = frobenius_norm(k.slice(o, i));
  b.value = block_lemma_bound(b.per_channel_bounds);
  return b;
}

// Schur test on each padded-domain block. Every row holds the whole kernel
// slice; a column collects at most the taps congruent to it modulo the stride.
inline LayerBound block_composed_bound(const ConvLayer& layer) {
  const Kernel4& k = layer.kernel;
  const std::size_t sh = layer.stride.h;
  const std::size_t sw = layer.stride.w;
  LayerBound b;
  b.method = BoundMethod::block_composed;
  b.per_channel_bounds = Matrix(k.out_channels(), k.in_channels());
  std::vector<double> residue(sh * sw);
  for (std::size_t o = 0; o < k.out_channels(); ++o)
    for (std::size_t i = 0; i < k.in_channels(); ++i) {
      std::fill(residue.begin(), residue.end(), 0.0);
      double row_sum = 0.0;
      for (std::size_t dy = 0; dy < k.kh(); ++dy)
        for (std::size_t dx = 0; dx < k.kw(); ++dx) {
          const double a = std::abs(k(o, i, dy, dx));
          row_sum += a;
          residue[(dy % sh) * sw + dx % sw] += a;
        }
      const double col_sum = *std::max_element(residue.begin(), residue.end());
      b.per_channel_bounds(o, i) = std::sqrt(row_sum * col_sum);
    }
  b.value = block_lemma_bound(b.per_channel_bounds);
  return b;
}

// ---------------------------------------------------------------------------
// Toeplitz symbol

// Supremum over [0, 2pi] of |f(l)| with f(l) = c_0 + 2 sum_{k>=1} c_k cos(k l)
// for real symmetric autocorrelations c_k. Dense grid followed by
// golden-section refinement around the best grid points.
inline double toeplitz_symbol_sup(std::span<const double> autocorr) {
  require(!autocorr.empty(), "toeplitz_symbol_sup: no autocorrelations");
  auto abs_f = [&](double l) {
    double f = autocorr[0];
    for (std::size_t k = 1; k < autocorr.size(); ++k) f += 2.0 * autocorr[k] * std::cos(static_cast<double>(k) * l);
    return std::abs(f);
  };
  constexpr std::size_t kGrid = 4096;
  const double step = 2.0 * std::numbers::pi / static_cast<double>(kGrid);
  std::vector<double> samples(kGrid + 1);
  for (std::size_t g = 0; g <= kGrid; ++g) samples[g] = abs_f(static_cast<double>(g) * step);

  // Local maxima of the sampled curve, best first.
  std::vector<std::size_t> peaks;
  for (std::size_t g = 0; g <= kGrid; ++g) {
    const double left = g == 0 ? samples[kGrid - 1] : samples[g - 1];
    const double right = g == kGrid ? samples[1 % (kGrid + 1)] : samples[g + 1];
    if (samples[g] >= left && samples[g] >= right) peaks.push_back(g);
  }
  std::sort(peaks.begin(), peaks.end(), [&](std::size_t a, std::size_t b) { return samples[a] > samples[b]; });
  if (peaks.size() > 4) peaks.resize(4);

  double best = *std::max_element(samples.begin(), samples.end());
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (std::size_t g : peaks) {
    double lo = (static_cast<double>(g) - 1.0) * step;
    double hi = (static_cast<double>(g) + 1.0) * step;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = abs_f(x1);
    double f2 = abs_f(x2);
    for (int it = 0; it < 80 && hi - lo > 1e-15; ++it) {
      if (f1 < f2) {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + inv_phi * (hi - lo);
        f2 = abs_f(x2);
      } else {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - inv_phi * (hi - lo);
        f1 = abs_f(x1);
      }
    }
    best = std::max({best, f1, f2});
  }
  return best;
}

// Row-shift structure of a matrix: every row k is the first row shifted right
// by k * shift with nothing shifted past the last column.
struct RowShift {
  bool uniform = false;
  std::size_t shift = 0;
};

inline RowShift detect_row_shift(const Matrix& m) {
  if (m.rows() <= 1) return {true, 0};
  auto first_nonzero = [&](std::size_t r) -> std::optional<std::size_t> {
    const auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c)
      if (row[c] != 0.0) return c;
    return std::nullopt;
  };
  const auto f0 = first_nonzero(0);
  const auto f1 = first_nonzero(1);
  if (!f0 && !f1) {
    // All-zero block: trivially shift-structured (norm 0).
    for (std::size_t r = 2; r < m.rows(); ++r)
      if (first_nonzero(r)) return {false, 0};
    return {true, 1};
  }
  if (!f0 || !f1 || *f1 <= *f0) return {false, 0};
  const std::size_t shift = *f1 - *f0;
  const auto row0 = m.row(0);
  const std::size_t total = (m.rows() - 1) * shift;
  if (total >= m.cols()) return {false, 0};
  // No truncation: the tail of row 0 that the last shift would drop is zero.
  for (std::size_t c = m.cols() - total; c < m.cols(); ++c)
    if (row0[c] != 0.0) return {false, 0};
  for (std::size_t r = 1; r < m.rows(); ++r) {
    const auto row = m.row(r);
    const std::size_t off = r * shift;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double expect = c >= off ? row0[c - off] : 0.0;
      if (row[c] != expect) return {false, 0};
    }
  }
  return {true, shift};
}

// Autocorrelations c_k = p . p[k * shift] of the first row, k = 0..rows-1,
// truncated after the last nonzero lag.
inline std::vector<double> row_autocorrelations(const Matrix& m, std::size_t shift) {
  const auto p = m.row(0);
  std::vector<double> c;
  const std::size_t lags = shift == 0 ? 1 : m.rows();
  for (std::size_t k = 0; k < lags; ++k) {
    const std::size_t off = k * shift;
    if (off >= p.size()) break;
    double acc = 0.0;
    for (std::size_t j = 0; j + off < p.size(); ++j) acc += p[j] * p[j + off];
    c.push_back(acc);
  }
  while (c.size() > 1 && c.back() == 0.0) c.pop_back();
  return c;
}

// Whether every channel block of the layer on `in` has uniform row shifts.
inline bool toeplitz_applicable(const ConvLayer& layer, const Shape3& in) {
  const Kernel4& k = layer.kernel;
  for (std::size_t o = 0; o < k.out_channels(); ++o)
    for (std::size_t i = 0; i < k.in_channels(); ++i)
      if (!detect_row_shift(unroll_padded_channel(layer, in, o, i)).uniform) return false;
  return true;
}

inline LayerBound toeplitz_fourier_bound(const ConvLayer& layer, const Shape3& in) {
  layer.output_shape(in);
  const Kernel4& k = layer.kernel;
  LayerBound b;
  b.method = BoundMethod::toeplitz_fourier;
  b.per_channel_bounds = Matrix(k.out_channels(), k.in_channels());
  for (std::size_t o = 0; o < k.out_channels(); ++o)
    for (std::size_t i = 0; i < k.in_channels(); ++i) {
      const Matrix block = unroll_padded_channel(layer, in, o, i);
      const RowShift rs = detect_row_shift(block);
      require(rs.uniform, "toeplitz_fourier_bound: channel block (" + std::to_string(o) + "," + std::to_string(i) +
                              ") rows are not uniform shifts of the first row");
      b.per_channel_bounds(o, i) = std::sqrt(toeplitz_symbol_sup(row_autocorrelations(block, rs.shift)));
    }
  b.value = block_lemma_bound(b.per_channel_bounds);
  return b;
}

// ---------------------------------------------------------------------------
// Power-iteration oracle

struct OracleNorm {
  double value = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  std::vector<double> right_singular_vector;  // unit vector in the input space
};

struct OracleOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
  std::uint64_t seed = 0x5eed;
};

// Power iteration on the smaller Gram matrix (A A^T or A^T A; same nonzero
// spectrum). Convergence is judged on the Rayleigh quotient, which settles
// even when the top singular value is repeated.
inline OracleNorm oracle_operator_norm(const Matrix& a, const OracleOptions& opt = {}) {
  require(!a.empty(), "oracle_operator_norm: empty matrix");
  const bool left = a.rows() < a.cols();
  const std::size_t n = left ? a.rows() : a.cols();
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);

  auto normalize = [](std::vector<double>& x) {
    const double s = frobenius_norm(x);
    if (s > 0.0)
      for (double& e : x) e /= s;
    return s;
  };
  auto gram = [&](const std::vector<double>& x) {
    return left ? a.apply(a.apply_transpose(x)) : a.apply_transpose(a.apply(x));
  };

  normalize(v);
  OracleNorm out;
  double rq = 0.0;
  for (out.iterations = 1; out.iterations <= opt.max_iterations; ++out.iterations) {
    std::vector<double> w = gram(v);
    double next = 0.0;
    for (std::size_t j = 0; j < n; ++j) next += v[j] * w[j];
    if (normalize(w) == 0.0) {
      rq = 0.0;
      out.converged = true;
      break;
    }
    v = std::move(w);
    if (out.iterations > 1 && std::abs(next - rq) <= opt.tolerance * std::abs(next)) {
      rq = next;
      out.converged = true;
      break;
    }
    rq = next;
  }
  out.iterations = std::min(out.iterations, opt.max_iterations);
  out.value = std::sqrt(std::max(rq, 0.0));
  if (left) {
    v = a.apply_transpose(v);
    normalize(v);
  }
  out.right_singular_vector = std::move(v);
  return out;
}

// ---------------------------------------------------------------------------
// Whole-network composition

struct LayerReport {
  std::size_t layer_index = 0;
  Shape3 input_shape;
  LayerBound chosen;
  std::vector<LayerBound> candidates;  // every certified method that applied
  std::optional<double> oracle;        // exact norm estimate, diagnostics only
};

struct LipschitzBound {
  double value = 1.0;
  std::vector<LayerBound> layer_bounds;      // one per conv layer
  std::vector<double> activation_constants;  // product of non-conv constants following each conv
  double prefix_constant = 1.0;              // non-conv layers before the first conv
  std::vector<LayerReport> reports;
};

struct ComposeOptions {
  bool with_oracle = false;
  std::size_t oracle_max_entries = 4'000'000;  // rows * cols of the unrolled layer
};

inline std::vector<LayerBound> certified_layer_bounds(const ConvLayer& layer, const Shape3& in) {
  std::vector<LayerBound> out;
  if (layer.stride_dominant()) out.push_back(stride_dominant_bound(layer));
  if (toeplitz_applicable(layer, in)) out.push_back(toeplitz_fourier_bound(layer, in));
  out.push_back(block_composed_bound(layer));
  return out;
}

inline LipschitzBound compose_network_bound(const NetworkSpec& net, Shape3 in, const ComposeOptions& opt = {}) {
  net.output_shape(in);
  LipschitzBound lb;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const Layer& layer = net.layers[k];
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      LayerReport rep;
      rep.layer_index = k;
      rep.input_shape = in;
      rep.candidates = certified_layer_bounds(*conv, in);
      rep.chosen = *std::min_element(rep.candidates.begin(), rep.candidates.end(),
                                     [](const LayerBound& a, const LayerBound& b) { return a.value < b.value; });
      const Shape3 out = conv->output_shape(in);
      if (opt.with_oracle && out.size() * in.size() <= opt.oracle_max_entries)
        rep.oracle = oracle_operator_norm(unroll_conv_matrix(*conv, in)).value;
      lb.layer_bounds.push_back(rep.chosen);
      lb.activation_constants.push_back(1.0);
      lb.reports.push_back(std::move(rep));
      in = out;
    } else {
      double c = 1.0;
      if (const auto* act = std::get_if<ActivationSpec>(&layer)) {
        c = act->lipschitz_constant();
      } else {
        const auto& up = std::get<Upsample>(layer);
        c = up.lipschitz_constant();
        in = {in.c, in.h * up.factor, in.w * up.factor};
      }
      if (lb.activation_constants.empty())
        lb.prefix_constant *= c;
      else
        lb.activation_constants.back() *= c;
    }
  }
  lb.value = lb.prefix_constant;
  for (std::size_t k = 0; k < lb.layer_bounds.size(); ++k)
    lb.value *= lb.layer_bounds[k].value * lb.activation_constants[k];
  return lb;
}

}  // namespace vqcert
