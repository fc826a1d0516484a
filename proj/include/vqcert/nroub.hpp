#pragma once

// Noise-robustness certificates for a VQ encoder/codebook pair, controlled
// degradations, and empirical checks that code assignments survive every
// perturbation inside the certified ball.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vqcert/errors.hpp"
#include "vqcert/lipschitz.hpp"
#include "vqcert/network.hpp"
#include "vqcert/quantizer.hpp"
#include "vqcert/sovqae.hpp"
#include "vqcert/tensor.hpp"

namespace vqcert {

struct NRoUBCertificate {
  double d_c = 0.0;
  double gamma = 0.0;
  double l_eps = 0.0;
  double bound = 0.0;
  bool degenerate = true;
  LipschitzBound lipschitz;  // provenance of l_eps
};

// bound = max(0, (d_c - 2 gamma) / (2 l_eps)); degenerate iff d_c <= 2 gamma.
inline NRoUBCertificate make_certificate(double d_c, double gamma_value, double l_eps) {
  require(d_c >= 0.0 && gamma_value >= 0.0, "certificate: d_C and gamma must be >= 0");
  require(l_eps > 0.0 && std::isfinite(l_eps), "certificate: L_eps must be positive and finite");
  NRoUBCertificate c;
  c.d_c = d_c;
  c.gamma = gamma_value;
  c.l_eps = l_eps;
  c.degenerate = d_c <= 2.0 * gamma_value;
  c.bound = c.degenerate ? 0.0 : (d_c - 2.0 * gamma_value) / (2.0 * l_eps);
  return c;
}

inline NRoUBCertificate compute_certificate(const NetworkSpec& encoder, const Shape3& input_shape, const Codebook& cb,
                                            std::span<const Tensor> train_latents) {
  require(cb.size() >= 2, "certificate needs a codebook with N >= 2");
  LipschitzBound lb = compose_network_bound(encoder, input_shape);
  for (const auto& b : lb.layer_bounds)
    require(b.certified() && std::isfinite(b.value), "certificate refused: layer without a certified bound");
  NRoUBCertificate c = make_certificate(min_pairwise_distance(cb), gamma(train_latents, cb), lb.value);
  c.lipschitz = std::move(lb);
  return c;
}

inline NRoUBCertificate compute_certificate(const ModelState& s, std::span<const Tensor> train_images) {
  const auto latents = encode_all(s.encoder, train_images);
  return compute_certificate(s.encoder, s.input_shape, s.codebook, latents);
}

// ---------------------------------------------------------------------------
// Perturbations

// Uniform direction on the Frobenius sphere scaled to `target_norm`.
inline Tensor sample_perturbation(const Shape3& shape, double target_norm, std::uint64_t seed) {
  require(target_norm >= 0.0 && std::isfinite(target_norm), "perturbation norm must be finite and >= 0");
  Tensor t(shape);
  if (target_norm == 0.0) return t;
  for (std::uint64_t s = seed;; ++s) {
    std::mt19937_64 rng(s);
    std::normal_distribution<double> normal;
    for (double& v : t.values()) v = normal(rng);
    const double n = frobenius_norm(t);
    if (n > 0.0) {
      t *= target_norm / n;
      return t;
    }
  }
}

struct Region {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

enum class DegradationKind { gaussian_noise, gaussian_blur };

struct DegradationSpec {
  DegradationKind kind = DegradationKind::gaussian_noise;
  std::optional<Region> region;  // full frame when empty
  std::optional<double> target_frobenius_norm;
  double blur_sigma = 1.0;
  double noise_sigma = 0.05;  // per-pixel std when no target norm is set
  std::uint64_t seed = 0;
};

struct Degraded {
  Tensor image;
  double realized_norm = 0.0;
};

inline Region resolve_region(const Tensor& image, const std::optional<Region>& r) {
  if (!r) return {0, 0, image.height(), image.width()};
  require(r->height >= 1 && r->width >= 1, "degradation region must be non-empty");
  require(r->top + r->height <= image.height() && r->left + r->width <= image.width(),
          "degradation region out of bounds");
  return *r;
}

// Normalized 1D Gaussian truncated at 3 sigma.
inline std::vector<double> gaussian_taps(double sigma) {
  require(sigma > 0.0 && std::isfinite(sigma), "blur sigma must be positive");
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t k = 0; k < taps.size(); ++k) {
    const double d = static_cast<double>(k) - static_cast<double>(radius);
    taps[k] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += taps[k];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

// Separable blur of the region; samples outside the image clamp to the edge,
// so constant images are left unchanged.
inline Tensor blur_region(const Tensor& image, const Region& r, double sigma) {
  const auto taps = gaussian_taps(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const auto H = static_cast<std::ptrdiff_t>(image.height());
  const auto W = static_cast<std::ptrdiff_t>(image.width());
  auto clamp = [](std::ptrdiff_t v, std::ptrdiff_t hi) { return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, hi - 1)); };

  Tensor horiz = image;
  for (std::size_t c = 0; c < image.channels(); ++c)
    for (std::size_t y = 0; y < image.height(); ++y)
      for (std::size_t x = r.left; x < r.left + r.width; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k)
          acc += taps[static_cast<std::size_t>(k + radius)] * image(c, y, clamp(static_cast<std::ptrdiff_t>(x) + k, W));
        horiz(c, y, x) = acc;
      }
  Tensor out = image;
  for (std::size_t c = 0; c < image.channels(); ++c)
    for (std::size_t y = r.top; y < r.top + r.height; ++y)
      for (std::size_t x = r.left; x < r.left + r.width; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k)
          acc += taps[static_cast<std::size_t>(k + radius)] * horiz(c, clamp(static_cast<std::ptrdiff_t>(y) + k, H), x);
        out(c, y, x) = acc;
      }
  return out;
}

inline Degraded degrade(const Tensor& image, const DegradationSpec& spec) {
  const Region r = resolve_region(image, spec.region);
  Degraded out{image, 0.0};
  if (spec.kind == DegradationKind::gaussian_noise) {
    Tensor noise;
    if (spec.target_frobenius_norm) {
      noise = sample_perturbation({image.channels(), r.height, r.width}, *spec.target_frobenius_norm, spec.seed);
    } else {
      require(spec.noise_sigma >= 0.0, "noise sigma must be >= 0");
      noise = Tensor({image.channels(), r.height, r.width});
      std::mt19937_64 rng(spec.seed);
      std::normal_distribution<double> normal(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
      if (spec.noise_sigma > 0.0)
        for (double& v : noise.values()) v = normal(rng);
    }
    for (std::size_t c = 0; c < image.channels(); ++c)
      for (std::size_t y = 0; y < r.height; ++y)
        for (std::size_t x = 0; x < r.width; ++x) out.image(c, r.top + y, r.left + x) += noise(c, y, x);
  } else {
    out.image = blur_region(image, r, spec.blur_sigma);
    if (spec.target_frobenius_norm) {
      Tensor delta = out.image - image;
      const double n = frobenius_norm(delta);
      require(n > 0.0 || *spec.target_frobenius_norm == 0.0,
              "blur left the region unchanged; cannot rescale to a nonzero target norm");
      if (n > 0.0) {
        delta *= *spec.target_frobenius_norm / n;
        out.image = image + delta;
      }
    }
  }
  out.realized_norm = frobenius_norm(out.image - image);
  return out;
}

// ---------------------------------------------------------------------------
// Invariance checks

inline bool verify_code_invariance(const NetworkSpec& encoder, const Codebook& cb, const Tensor& clean,
                                   const Tensor& perturbed) {
  require(clean.shape() == perturbed.shape(), "verify_code_invariance: shape mismatch " + to_string(clean.shape()) +
                                                  " vs " + to_string(perturbed.shape()));
  return quantize_grid(forward(encoder, clean), cb).codes == quantize_grid(forward(encoder, perturbed), cb).codes;
}

struct TrialReport {
  std::size_t trials = 0;
  std::size_t code_matches = 0;
  std::size_t decoded_identical = 0;  // matching trials whose decoded outputs are bit-identical
  double max_perturbation_norm = 0.0;
  double norm_fraction = 0.0;
  NRoUBCertificate certificate;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t image, std::uint64_t trial) {
  return splitmix64(splitmix64(seed ^ splitmix64(image)) ^ trial);
}

// Top right singular vector of the first encoder conv, the input direction the
// first layer amplifies most. Empty when the layer is too large to unroll.
inline std::vector<double> worst_case_direction(const NetworkSpec& encoder, const Shape3& in) {
  const auto convs = encoder.conv_layers();
  if (convs.empty() || encoder.layers.empty() || !std::holds_alternative<ConvLayer>(encoder.layers.front())) return {};
  const ConvLayer& first = *convs.front();
  if (first.output_shape(in).size() * in.size() > 4'000'000) return {};
  return oracle_operator_norm(unroll_conv_matrix(first, in)).right_singular_vector;
}

// Trials 0 and 1 per image probe +/- the worst-case direction; the rest are
// uniform random directions. Every perturbation has norm fraction * bound.
inline TrialReport run_trial_suite(const ModelState& s, std::span<const Tensor> images, const NRoUBCertificate& cert,
                                   std::size_t trials_per_image, double norm_fraction, std::uint64_t seed) {
  require(norm_fraction > 0.0 && norm_fraction <= 1.0, "norm fraction must lie in (0, 1]");
  require(!cert.degenerate && cert.bound > 0.0, "trial suite needs a non-degenerate certificate");
  TrialReport rep;
  rep.norm_fraction = norm_fraction;
  rep.certificate = cert;
  if (trials_per_image == 0) return rep;
  const double radius = norm_fraction * cert.bound;
  const auto probe = worst_case_direction(s.encoder, s.input_shape);

  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor& clean = images[i];
    require(clean.shape() == s.input_shape, "trial suite: image shape does not match the model");
    const Quantized clean_q = quantize_grid(forward(s.encoder, clean), s.codebook);
    const Tensor clean_decoded = forward(s.decoder, clean_q.latent);
    for (std::size_t t = 0; t < trials_per_image; ++t) {
      Tensor noise;
      if (t < 2 && !probe.empty()) {
        noise = Tensor(clean.shape(), probe);
        noise *= (t == 0 ? radius : -radius) / frobenius_norm(noise);
      } else {
        noise = sample_perturbation(clean.shape(), radius, trial_seed(seed, i, t));
      }
      const Tensor perturbed = clean + noise;
      const double n = frobenius_norm(perturbed - clean);
      rep.max_perturbation_norm = std::max(rep.max_perturbation_norm, n);
      ++rep.trials;
      const Quantized q = quantize_grid(forward(s.encoder, perturbed), s.codebook);
      if (q.codes == clean_q.codes) {
        ++rep.code_matches;
        if (bit_identical(forward(s.decoder, q.latent), clean_decoded)) ++rep.decoded_identical;
      }
    }
  }
  return rep;
}

}  // namespace vqcert
