#pragma once

// PSNR, masked PSNR and sliding-window sequence evaluation.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "vqcert/errors.hpp"
#include "vqcert/tensor.hpp"

namespace vqcert {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// 10 log10(peak^2 / MSE); +inf when the images are identical.
inline double psnr(const Tensor& a, const Tensor& b, double peak = 1.0) {
  require(a.shape() == b.shape(), "psnr: shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  require(peak > 0.0, "psnr: peak must be positive");
  double sse = 0.0;
  const auto va = a.values();
  const auto vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = va[i] - vb[i];
    sse += d * d;
  }
  if (sse == 0.0) return kInfinity;
  const double mse = sse / static_cast<double>(va.size());
  return 10.0 * std::log10(peak * peak / mse);
}

class RegionMask {
 public:
  RegionMask(std::size_t h, std::size_t w, bool fill = false) : h_(h), w_(w), on_(h * w, fill) {}

  static RegionMask full(std::size_t h, std::size_t w) { return RegionMask(h, w, true); }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  bool operator()(std::size_t y, std::size_t x) const { return on_[y * w_ + x]; }
  void set(std::size_t y, std::size_t x, bool v = true) { on_[y * w_ + x] = v; }

  std::size_t count() const {
    std::size_t n = 0;
    for (bool b : on_) n += b ? 1 : 0;
    return n;
  }

 private:
  std::size_t h_, w_;
  std::vector<bool> on_;
};

// PSNR over masked pixels; the MSE denominator is masked pixels x channels.
inline double region_psnr(const Tensor& a, const Tensor& b, const RegionMask& mask, double peak = 1.0) {
  require(a.shape() == b.shape(), "region_psnr: image shapes differ");
  require(mask.height() == a.height() && mask.width() == a.width(), "region_psnr: mask does not match the image");
  require(peak > 0.0, "region_psnr: peak must be positive");
  const std::size_t n = mask.count();
  require(n > 0, "region_psnr: empty mask");
  double sse = 0.0;
  for (std::size_t c = 0; c < a.channels(); ++c)
    for (std::size_t y = 0; y < a.height(); ++y)
      for (std::size_t x = 0; x < a.width(); ++x)
        if (mask(y, x)) {
          const double d = a(c, y, x) - b(c, y, x);
          sse += d * d;
        }
  if (sse == 0.0) return kInfinity;
  const double mse = sse / static_cast<double>(n * a.channels());
  return 10.0 * std::log10(peak * peak / mse);
}

using FrameSequence = std::vector<Tensor>;
using FrameMetric = std::function<double(const Tensor&, const Tensor&)>;

// Mean of per-frame values where +inf entries are counted separately and kept
// out of the finite average. Ordering: more infinite frames first, then the
// larger finite mean; an all-infinite mean compares above everything else.
struct MeanMetric {
  double finite_mean = 0.0;
  std::size_t finite_count = 0;
  std::size_t infinite_count = 0;

  double value() const { return finite_count == 0 ? kInfinity : finite_mean; }

  friend bool operator<(const MeanMetric& a, const MeanMetric& b) {
    if (a.infinite_count != b.infinite_count) return a.infinite_count < b.infinite_count;
    return a.value() < b.value();
  }
};

inline MeanMetric mean_metric(const std::vector<double>& values) {
  MeanMetric m;
  double sum = 0.0;
  for (double v : values) {
    if (std::isinf(v) && v > 0.0) {
      ++m.infinite_count;
    } else {
      sum += v;
      ++m.finite_count;
    }
  }
  if (m.finite_count > 0) m.finite_mean = sum / static_cast<double>(m.finite_count);
  return m;
}

struct SlidingResult {
  MeanMetric best;
  std::size_t best_offset = 0;
  std::vector<MeanMetric> per_offset;
};

// Aligns gen against every full-overlap window of gt and keeps the best mean;
// ties go to the smallest offset.
inline SlidingResult sliding_eval(const FrameSequence& gen, const FrameSequence& gt, const FrameMetric& metric) {
  require(!gen.empty() && !gt.empty(), "sliding_eval: empty sequence");
  require(gen.size() <= gt.size(), "sliding_eval: generated sequence (" + std::to_string(gen.size()) +
                                       ") longer than ground truth (" + std::to_string(gt.size()) + ")");
  SlidingResult r;
  std::vector<double> values(gen.size());
  for (std::size_t off = 0; off + gen.size() <= gt.size(); ++off) {
    for (std::size_t i = 0; i < gen.size(); ++i) values[i] = metric(gen[i], gt[off + i]);
    r.per_offset.push_back(mean_metric(values));
    if (off == 0 || r.best < r.per_offset.back()) {
      r.best = r.per_offset.back();
      r.best_offset = off;
    }
  }
  return r;
}

inline FrameMetric psnr_metric(double peak = 1.0) {
  return [peak](const Tensor& a, const Tensor& b) { return psnr(a, b, peak); };
}

}  // namespace vqcert
