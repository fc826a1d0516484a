#pragma once

// Codebook storage, channel-wise nearest-anchor matching and the codebook
// geometry (minimal anchor separation, maximal latent-to-anchor distance).

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "vqcert/errors.hpp"
#include "vqcert/nrb_io.hpp"
#include "vqcert/tensor.hpp"

namespace vqcert {

class Codebook {
 public:
  Codebook() = default;

  // `anchors` holds `count` vectors of length `dim`, anchor-major.
  Codebook(std::size_t count, std::size_t dim, std::vector<double> anchors)
      : count_(count), dim_(dim), data_(std::move(anchors)) {
    require(count >= 1 && dim >= 1, "codebook needs N >= 1 anchors of dimension c >= 1");
    require(data_.size() == count * dim, "codebook data size does not match N x c");
    require(all_finite(data_), "codebook anchors must be finite");
    for (std::size_t a = 0; a < count_; ++a)
      for (std::size_t b = a + 1; b < count_; ++b)
        require(squared_distance(anchor(a), anchor(b)) > 0.0,
                "codebook anchors " + std::to_string(a) + " and " + std::to_string(b) + " are identical");
  }

  std::size_t size() const { return count_; }
  std::size_t dim() const { return dim_; }

  std::span<const double> anchor(std::size_t n) const {
    return std::span<const double>(data_).subspan(n * dim_, dim_);
  }
  std::span<double> anchor_mut(std::size_t n) { return std::span<double>(data_).subspan(n * dim_, dim_); }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  std::size_t count_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

// Stored as an (N, c, 1) NRB1 tensor.
inline nrb::Array to_array(const Codebook& cb) {
  return {{static_cast<std::uint32_t>(cb.size()), static_cast<std::uint32_t>(cb.dim()), 1u},
          {cb.values().begin(), cb.values().end()}};
}

inline Codebook codebook_from_array(const nrb::Array& a) {
  if (a.dims.size() != 3 || a.dims[2] != 1) throw io_error("codebook file must be an (N, c, 1) tensor");
  return Codebook(a.dims[0], a.dims[1], a.data);
}

struct CodeGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> indices;  // row-major

  std::size_t operator()(std::size_t y, std::size_t x) const { return indices[y * width + x]; }
  friend bool operator==(const CodeGrid&, const CodeGrid&) = default;
};

struct NearestAnchor {
  std::size_t index = 0;
  double squared_distance = 0.0;
};

// Linear scan; ties go to the lowest index because only a strictly smaller
// distance replaces the incumbent.
inline NearestAnchor nearest_anchor_sq(std::span<const double> v, const Codebook& cb) {
  require(v.size() == cb.dim(), "nearest_anchor: vector dimension " + std::to_string(v.size()) +
                                    " != codebook dimension " + std::to_string(cb.dim()));
  NearestAnchor best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t n = 0; n < cb.size(); ++n) {
    const double d = squared_distance(v, cb.anchor(n));
    if (d < best.squared_distance) best = {n, d};
  }
  return best;
}

inline std::size_t nearest_anchor(std::span<const double> v, const Codebook& cb) {
  return nearest_anchor_sq(v, cb).index;
}

struct Quantized {
  CodeGrid codes;
  Tensor latent;
};

inline std::vector<double> site_vector(const Tensor& t, std::size_t y, std::size_t x) {
  std::vector<double> v(t.channels());
  for (std::size_t c = 0; c < t.channels(); ++c) v[c] = t(c, y, x);
  return v;
}

inline Quantized quantize_grid(const Tensor& latent, const Codebook& cb) {
  require(latent.channels() == cb.dim(), "quantize_grid: latent channels " + std::to_string(latent.channels()) +
                                             " != codebook dimension " + std::to_string(cb.dim()));
  Quantized q{{latent.height(), latent.width(), std::vector<std::size_t>(latent.height() * latent.width())},
              Tensor(latent.shape())};
  for (std::size_t y = 0; y < latent.height(); ++y)
    for (std::size_t x = 0; x < latent.width(); ++x) {
      const auto v = site_vector(latent, y, x);
      const std::size_t n = nearest_anchor(v, cb);
      q.codes.indices[y * latent.width() + x] = n;
      const auto a = cb.anchor(n);
      for (std::size_t c = 0; c < cb.dim(); ++c) q.latent(c, y, x) = a[c];
    }
  return q;
}

struct AnchorPair {
  std::size_t first = 0;
  std::size_t second = 0;
  double distance = 0.0;
};

// Closest pair of anchors; ties go to the lexicographically lowest (a, b).
inline AnchorPair closest_anchor_pair(const Codebook& cb) {
  require(cb.size() >= 2, "minimal anchor distance needs N >= 2");
  AnchorPair best{0, 1, std::numeric_limits<double>::infinity()};
  for (std::size_t a = 0; a < cb.size(); ++a)
    for (std::size_t b = a + 1; b < cb.size(); ++b) {
      const double d = squared_distance(cb.anchor(a), cb.anchor(b));
      if (d < best.distance) best = {a, b, d};
    }
  best.distance = std::sqrt(best.distance);
  return best;
}

inline double min_pairwise_distance(const Codebook& cb) { return closest_anchor_pair(cb).distance; }

// Maximal distance from any latent site to its nearest anchor.
inline double gamma(std::span<const Tensor> latents, const Codebook& cb) {
  require(!latents.empty(), "gamma: empty latent collection");
  double worst = 0.0;
  for (const Tensor& t : latents) {
    require(t.channels() == cb.dim(), "gamma: latent channels do not match codebook dimension");
    for (std::size_t y = 0; y < t.height(); ++y)
      for (std::size_t x = 0; x < t.width(); ++x)
        worst = std::max(worst, nearest_anchor_sq(site_vector(t, y, x), cb).squared_distance);
  }
  return std::sqrt(worst);
}

}  // namespace vqcert
