#pragma once

// Dense (c, h, w) tensors, zero-padded strided convolution without bias,
// activations with known Lipschitz constants, nearest-neighbour upsampling
// and the explicit matrix form of a convolution.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vqcert/errors.hpp"

namespace vqcert {

struct Shape3 {
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t size() const { return c * h * w; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

inline std::string to_string(const Shape3& s) {
  return std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

class Tensor {
 public:
  Tensor() : shape_{1, 1, 1}, data_(1, 0.0) {}

  explicit Tensor(Shape3 shape, double fill = 0.0) : shape_(shape) {
    require(shape.c >= 1 && shape.h >= 1 && shape.w >= 1,
            "tensor dimensions must be >= 1, got " + to_string(shape));
    data_.assign(shape.size(), fill);
  }

  Tensor(Shape3 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    require(shape.c >= 1 && shape.h >= 1 && shape.w >= 1,
            "tensor dimensions must be >= 1, got " + to_string(shape));
    require(data_.size() == shape.size(), "tensor data size " + std::to_string(data_.size()) +
                                              " does not match shape " + to_string(shape));
    require(all_finite(data_), "tensor values must be finite");
  }

  const Shape3& shape() const { return shape_; }
  std::size_t channels() const { return shape_.c; }
  std::size_t height() const { return shape_.h; }
  std::size_t width() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_.h + y) * shape_.w + x];
  }
  double operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.h + y) * shape_.w + x];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  Tensor& operator+=(const Tensor& o) {
    require(o.shape_ == shape_, "tensor add: shape " + to_string(o.shape_) + " vs " + to_string(shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require(o.shape_ == shape_, "tensor sub: shape " + to_string(o.shape_) + " vs " + to_string(shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape3 shape_;
  std::vector<double> data_;
};

// Same shape and the same bit pattern in every entry.
inline bool bit_identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

inline double frobenius_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double frobenius_norm(const Tensor& t) { return frobenius_norm(t.values()); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Convolution kernel of shape (out, in, kh, kw).
class Kernel4 {
 public:
  Kernel4() : Kernel4(1, 1, 1, 1) {}

  Kernel4(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw, double fill = 0.0)
      : out_(out), in_(in), kh_(kh), kw_(kw) {
    require(out >= 1 && in >= 1 && kh >= 1 && kw >= 1, "kernel dimensions must be >= 1");
    data_.assign(out * in * kh * kw, fill);
  }

  Kernel4(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw, std::vector<double> data)
      : out_(out), in_(in), kh_(kh), kw_(kw), data_(std::move(data)) {
    require(out >= 1 && in >= 1 && kh >= 1 && kw >= 1, "kernel dimensions must be >= 1");
    require(data_.size() == out * in * kh * kw, "kernel data size does not match its shape");
    require(all_finite(data_), "kernel values must be finite");
  }

  std::size_t out_channels() const { return out_; }
  std::size_t in_channels() const { return in_; }
  std::size_t kh() const { return kh_; }
  std::size_t kw() const { return kw_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t o, std::size_t i, std::size_t y, std::size_t x) {
    return data_[((o * in_ + i) * kh_ + y) * kw_ + x];
  }
  double operator()(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const {
    return data_[((o * in_ + i) * kh_ + y) * kw_ + x];
  }

  // The kh x kw slice connecting input channel i to output channel o.
  std::span<const double> slice(std::size_t o, std::size_t i) const {
    return std::span<const double>(data_).subspan((o * in_ + i) * kh_ * kw_, kh_ * kw_);
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  friend bool operator==(const Kernel4&, const Kernel4&) = default;

 private:
  std::size_t out_, in_, kh_, kw_;
  std::vector<double> data_;
};

struct Stride2 {
  std::size_t h = 1;
  std::size_t w = 1;
  friend bool operator==(const Stride2&, const Stride2&) = default;
};

// Total zero padding per axis; floor(p/2) goes before the data, the rest after.
struct Padding2 {
  std::size_t h = 0;
  std::size_t w = 0;
  friend bool operator==(const Padding2&, const Padding2&) = default;
};

struct ConvLayer {
  Kernel4 kernel;
  Stride2 stride;
  Padding2 padding;

  ConvLayer() = default;
  ConvLayer(Kernel4 k, Stride2 s = {}, Padding2 p = {}) : kernel(std::move(k)), stride(s), padding(p) {
    require(stride.h >= 1 && stride.w >= 1, "conv stride must be >= 1");
  }

  Shape3 padded_shape(const Shape3& in) const { return {in.c, in.h + padding.h, in.w + padding.w}; }

  // Output shape for `in`; throws naming the offending dimension if the
  // layer does not apply.
  Shape3 output_shape(const Shape3& in) const {
    require(in.c == kernel.in_channels(), "conv input channels " + std::to_string(in.c) +
                                              " != kernel input channels " +
                                              std::to_string(kernel.in_channels()));
    const std::size_t ph = in.h + padding.h;
    const std::size_t pw = in.w + padding.w;
    require(ph >= kernel.kh(), "conv kernel height " + std::to_string(kernel.kh()) +
                                   " exceeds padded height " + std::to_string(ph));
    require(pw >= kernel.kw(), "conv kernel width " + std::to_string(kernel.kw()) +
                                   " exceeds padded width " + std::to_string(pw));
    require((ph - kernel.kh()) % stride.h == 0,
            "height: stride " + std::to_string(stride.h) + " does not divide h-k_h+p_h=" +
                std::to_string(ph - kernel.kh()));
    require((pw - kernel.kw()) % stride.w == 0,
            "width: stride " + std::to_string(stride.w) + " does not divide w-k_w+p_w=" +
                std::to_string(pw - kernel.kw()));
    return {kernel.out_channels(), 1 + (ph - kernel.kh()) / stride.h, 1 + (pw - kernel.kw()) / stride.w};
  }

  bool stride_dominant() const { return stride.h >= kernel.kh() && stride.w >= kernel.kw(); }

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

// Zero-padding embedding; an isometry onto its image.
inline Tensor pad_embed(const Tensor& x, Padding2 p) {
  Tensor out({x.channels(), x.height() + p.h, x.width() + p.w});
  const std::size_t top = p.h / 2;
  const std::size_t left = p.w / 2;
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t y = 0; y < x.height(); ++y)
      for (std::size_t u = 0; u < x.width(); ++u) out(c, y + top, u + left) = x(c, y, u);
  return out;
}

inline Tensor crop_padding(const Tensor& padded, Padding2 p) {
  Tensor out({padded.channels(), padded.height() - p.h, padded.width() - p.w});
  const std::size_t top = p.h / 2;
  const std::size_t left = p.w / 2;
  for (std::size_t c = 0; c < out.channels(); ++c)
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t u = 0; u < out.width(); ++u) out(c, y, u) = padded(c, y + top, u + left);
  return out;
}

inline Tensor conv2d_forward(const Tensor& x, const ConvLayer& layer) {
  const Shape3 os = layer.output_shape(x.shape());
  const Tensor xp = pad_embed(x, layer.padding);
  const Kernel4& k = layer.kernel;
  Tensor y(os);
  for (std::size_t o = 0; o < os.c; ++o)
    for (std::size_t i = 0; i < k.in_channels(); ++i)
      for (std::size_t a = 0; a < os.h; ++a)
        for (std::size_t b = 0; b < os.w; ++b) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < k.kh(); ++dy)
            for (std::size_t dx = 0; dx < k.kw(); ++dx)
              acc += k(o, i, dy, dx) * xp(i, a * layer.stride.h + dy, b * layer.stride.w + dx);
          y(o, a, b) += acc;
        }
  return y;
}

struct ConvGrads {
  Tensor input;
  Kernel4 kernel;
};

// Reverse-mode step for y = conv(x): returns dL/dx and dL/dkernel given dL/dy.
inline ConvGrads conv2d_backward(const Tensor& x, const ConvLayer& layer, const Tensor& grad_out) {
  const Shape3 os = layer.output_shape(x.shape());
  require(grad_out.shape() == os, "conv backward: gradient shape mismatch");
  const Tensor xp = pad_embed(x, layer.padding);
  const Kernel4& k = layer.kernel;
  Tensor gxp(xp.shape());
  Kernel4 gk(k.out_channels(), k.in_channels(), k.kh(), k.kw());
  for (std::size_t o = 0; o < os.c; ++o)
    for (std::size_t i = 0; i < k.in_channels(); ++i)
      for (std::size_t a = 0; a < os.h; ++a)
        for (std::size_t b = 0; b < os.w; ++b) {
          const double g = grad_out(o, a, b);
          if (g == 0.0) continue;
          for (std::size_t dy = 0; dy < k.kh(); ++dy)
            for (std::size_t dx = 0; dx < k.kw(); ++dx) {
              const std::size_t r = a * layer.stride.h + dy;
              const std::size_t c = b * layer.stride.w + dx;
              gxp(i, r, c) += g * k(o, i, dy, dx);
              gk(o, i, dy, dx) += g * xp(i, r, c);
            }
        }
  return {crop_padding(gxp, layer.padding), std::move(gk)};
}

// ---------------------------------------------------------------------------
// Activations

enum class ActivationKind { identity, relu, leaky_relu, swish };

// max_x |d/dx (x * sigmoid(x))| = 1.0998393..., rounded up so the constant
// remains a valid upper bound.
inline constexpr double kSwishLipschitz = 1.09984;

struct ActivationSpec {
  ActivationKind kind = ActivationKind::identity;
  double alpha = 0.0;  // leaky_relu negative slope

  static ActivationSpec identity() { return {ActivationKind::identity, 0.0}; }
  static ActivationSpec relu() { return {ActivationKind::relu, 0.0}; }
  static ActivationSpec leaky_relu(double a) {
    require(a >= 0.0 && std::isfinite(a), "leaky_relu slope must be finite and >= 0");
    return {ActivationKind::leaky_relu, a};
  }
  static ActivationSpec swish() { return {ActivationKind::swish, 0.0}; }

  double lipschitz_constant() const {
    switch (kind) {
      case ActivationKind::identity:
      case ActivationKind::relu:
        return 1.0;
      case ActivationKind::leaky_relu:
        return std::max(1.0, alpha);
      case ActivationKind::swish:
        return kSwishLipschitz;
    }
    return 1.0;
  }

  double operator()(double u) const {
    switch (kind) {
      case ActivationKind::identity:
        return u;
      case ActivationKind::relu:
        return u > 0.0 ? u : 0.0;
      case ActivationKind::leaky_relu:
        return u > 0.0 ? u : alpha * u;
      case ActivationKind::swish:
        return u / (1.0 + std::exp(-u));
    }
    return u;
  }

  // Derivative; at the relu kink the right-hand branch is not used (u > 0).
  double derivative(double u) const {
    switch (kind) {
      case ActivationKind::identity:
        return 1.0;
      case ActivationKind::relu:
        return u > 0.0 ? 1.0 : 0.0;
      case ActivationKind::leaky_relu:
        return u > 0.0 ? 1.0 : alpha;
      case ActivationKind::swish: {
        const double s = 1.0 / (1.0 + std::exp(-u));
        return s * (1.0 + u * (1.0 - s));
      }
    }
    return 1.0;
  }

  friend bool operator==(const ActivationSpec&, const ActivationSpec&) = default;
};

inline std::string to_string(const ActivationSpec& a) {
  switch (a.kind) {
    case ActivationKind::identity:
      return "identity";
    case ActivationKind::relu:
      return "relu";
    case ActivationKind::leaky_relu:
      return "leaky_relu";
    case ActivationKind::swish:
      return "swish";
  }
  return "?";
}

inline Tensor apply_activation(Tensor x, const ActivationSpec& a) {
  for (double& v : x.values()) v = a(v);
  return x;
}

inline Tensor activation_backward(const Tensor& pre, const ActivationSpec& a, Tensor grad_out) {
  require(pre.shape() == grad_out.shape(), "activation backward: gradient shape mismatch");
  auto g = grad_out.values();
  auto u = pre.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= a.derivative(u[i]);
  return grad_out;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling by an integer factor in both axes.

struct Upsample {
  std::size_t factor = 2;

  // Each input pixel is copied factor^2 times, so ||up(x)||_F = factor * ||x||_F.
  double lipschitz_constant() const { return static_cast<double>(factor); }
  friend bool operator==(const Upsample&, const Upsample&) = default;
};

inline Tensor upsample_forward(const Tensor& x, const Upsample& u) {
  require(u.factor >= 1, "upsample factor must be >= 1");
  const std::size_t f = u.factor;
  Tensor y({x.channels(), x.height() * f, x.width() * f});
  for (std::size_t c = 0; c < y.channels(); ++c)
    for (std::size_t r = 0; r < y.height(); ++r)
      for (std::size_t q = 0; q < y.width(); ++q) y(c, r, q) = x(c, r / f, q / f);
  return y;
}

inline Tensor upsample_backward(const Shape3& in, const Upsample& u, const Tensor& grad_out) {
  const std::size_t f = u.factor;
  require(grad_out.shape() == Shape3{in.c, in.h * f, in.w * f}, "upsample backward: gradient shape mismatch");
  Tensor g(in);
  for (std::size_t c = 0; c < grad_out.channels(); ++c)
    for (std::size_t r = 0; r < grad_out.height(); ++r)
      for (std::size_t q = 0; q < grad_out.width(); ++q) g(c, r / f, q / f) += grad_out(c, r, q);
  return g;
}

// ---------------------------------------------------------------------------
// Dense row-major matrix, used for unrolled convolutions and oracles.

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<const double> values() const { return data_; }

  std::vector<double> apply(std::span<const double> x) const {
    require(x.size() == cols_, "matrix-vector product: size mismatch");
    std::vector<double> y(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      const double* rp = &data_[r * cols_];
      double acc = 0.0;
      for (std::size_t c = 0; c < cols_; ++c) acc += rp[c] * x[c];
      y[r] = acc;
    }
    return y;
  }

  std::vector<double> apply_transpose(std::span<const double> y) const {
    require(y.size() == rows_, "transposed matrix-vector product: size mismatch");
    std::vector<double> x(cols_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      const double* rp = &data_[r * cols_];
      const double yr = y[r];
      if (yr == 0.0) continue;
      for (std::size_t c = 0; c < cols_; ++c) x[c] += rp[c] * yr;
    }
    return x;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Explicit (c_o*o_h*o_w) x (c_i*h*w) matrix of the convolution, including the
// zero-padding embedding.
inline Matrix unroll_conv_matrix(const ConvLayer& layer, const Shape3& in) {
  const Shape3 os = layer.output_shape(in);
  const Kernel4& k = layer.kernel;
  const std::size_t top = layer.padding.h / 2;
  const std::size_t left = layer.padding.w / 2;
  Matrix m(os.size(), in.size());
  for (std::size_t o = 0; o < os.c; ++o)
    for (std::size_t a = 0; a < os.h; ++a)
      for (std::size_t b = 0; b < os.w; ++b) {
        const std::size_t row = (o * os.h + a) * os.w + b;
        for (std::size_t i = 0; i < in.c; ++i)
          for (std::size_t dy = 0; dy < k.kh(); ++dy)
            for (std::size_t dx = 0; dx < k.kw(); ++dx) {
              const std::size_t pr = a * layer.stride.h + dy;
              const std::size_t pc = b * layer.stride.w + dx;
              // Taps landing in the zero border have no input column.
              if (pr < top || pc < left || pr - top >= in.h || pc - left >= in.w) continue;
              const std::size_t col = (i * in.h + (pr - top)) * in.w + (pc - left);
              m(row, col) += k(o, i, dy, dx);
            }
      }
  return m;
}

// Single-channel (o, i) block of the convolution acting on the padded domain,
// i.e. without the padding embedding: (o_h*o_w) x ((h+p_h)*(w+p_w)).
inline Matrix unroll_padded_channel(const ConvLayer& layer, const Shape3& in, std::size_t o, std::size_t i) {
  const Shape3 os = layer.output_shape(in);
  const Shape3 ps = layer.padded_shape(in);
  const Kernel4& k = layer.kernel;
  Matrix m(os.h * os.w, ps.h * ps.w);
  for (std::size_t a = 0; a < os.h; ++a)
    for (std::size_t b = 0; b < os.w; ++b)
      for (std::size_t dy = 0; dy < k.kh(); ++dy)
        for (std::size_t dx = 0; dx < k.kw(); ++dx) {
          const std::size_t pr = a * layer.stride.h + dy;
          const std::size_t pc = b * layer.stride.w + dx;
          m(a * os.w + b, pr * ps.w + pc) = k(o, i, dy, dx);
        }
  return m;
}

}  // namespace vqcert
