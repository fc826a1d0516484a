#pragma once

// Toy space-optimized VQ autoencoder: VQ loss with stop-gradient routing,
// codebook separation regularizer, plain SGD and a finite-difference check of
// the hand-written gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqcert/errors.hpp"
#include "vqcert/network.hpp"
#include "vqcert/nrb_io.hpp"
#include "vqcert/quantizer.hpp"
#include "vqcert/tensor.hpp"

namespace vqcert {

enum class RegObjective { minimal_distance, average_distance };

inline std::string to_string(RegObjective r) { return r == RegObjective::minimal_distance ? "min" : "avg"; }

struct ArchitectureConfig {
  std::size_t latent_channels = 4;   // codebook dimension c
  std::size_t codebook_size = 8;     // N
  std::size_t hidden_channels = 8;
  std::size_t downsample_levels = 2;  // latent grid is input / 2^levels
  double init_scale = 0.5;            // encoder weight scale relative to He init
};

struct TrainConfig {
  double theta = 1.0;
  RegObjective reg_objective = RegObjective::minimal_distance;
  double reg_weight = 2.0;
  double vq_weight = 20.0;
  double recon_weight = 1.0;
  double learning_rate = 0.0005;
  std::size_t epochs = 1000;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  ArchitectureConfig arch;

  void validate() const {
    require(theta > 0.0 && std::isfinite(theta), "theta must be positive");
    require(reg_weight >= 0.0 && vq_weight >= 0.0 && recon_weight >= 0.0, "loss weights must be >= 0");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning rate must be positive");
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 1, "batch size must be >= 1");
  }
};

struct ModelState {
  Shape3 input_shape;
  NetworkSpec encoder{NetworkRole::encoder, {}};
  NetworkSpec decoder{NetworkRole::decoder, {}};
  Codebook codebook;
  std::uint64_t step = 0;

  Shape3 latent_shape() const { return encoder.output_shape(input_shape); }

  // Encoder kernels, decoder kernels, then the codebook.
  std::vector<std::span<double>> parameter_blocks() {
    std::vector<std::span<double>> out;
    for (auto* c : encoder.conv_layers()) out.push_back(c->kernel.values());
    for (auto* c : decoder.conv_layers()) out.push_back(c->kernel.values());
    out.push_back(codebook.values());
    return out;
  }

  std::size_t parameter_count() const {
    return encoder.parameter_count() + decoder.parameter_count() + codebook.values().size();
  }

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

struct ModelGrads {
  std::vector<Kernel4> encoder;
  std::vector<Kernel4> decoder;
  std::vector<double> codebook;

  static ModelGrads zeros(const ModelState& s) {
    ModelGrads g;
    g.encoder = zero_grads(s.encoder).kernels;
    g.decoder = zero_grads(s.decoder).kernels;
    g.codebook.assign(s.codebook.values().size(), 0.0);
    return g;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    for (const auto& k : encoder) out.insert(out.end(), k.values().begin(), k.values().end());
    for (const auto& k : decoder) out.insert(out.end(), k.values().begin(), k.values().end());
    out.insert(out.end(), codebook.begin(), codebook.end());
    return out;
  }

  void add_scaled(const ModelGrads& o, double s) {
    auto axpy = [s](std::span<double> dst, std::span<const double> src) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
    };
    for (std::size_t k = 0; k < encoder.size(); ++k) axpy(encoder[k].values(), o.encoder[k].values());
    for (std::size_t k = 0; k < decoder.size(); ++k) axpy(decoder[k].values(), o.decoder[k].values());
    axpy(codebook, o.codebook);
  }
};

// ---------------------------------------------------------------------------
// Architecture

inline NetworkSpec make_toy_encoder(std::size_t in_channels, const ArchitectureConfig& a) {
  require(a.downsample_levels >= 1, "encoder needs at least one downsample level");
  NetworkSpec net{NetworkRole::encoder, {}};
  std::size_t ch = in_channels;
  for (std::size_t l = 0; l < a.downsample_levels; ++l) {
    const bool last = l + 1 == a.downsample_levels;
    const std::size_t out = last ? a.latent_channels : a.hidden_channels;
    net.layers.emplace_back(ConvLayer(Kernel4(out, ch, 2, 2), {2, 2}, {0, 0}));
    if (!last) net.layers.emplace_back(ActivationSpec::leaky_relu(0.2));
    ch = out;
  }
  return net;
}

inline NetworkSpec make_toy_decoder(std::size_t out_channels, const ArchitectureConfig& a) {
  NetworkSpec net{NetworkRole::decoder, {}};
  const std::size_t h = a.hidden_channels;
  net.layers.emplace_back(ConvLayer(Kernel4(h, a.latent_channels, 1, 1)));
  net.layers.emplace_back(ActivationSpec::swish());
  for (std::size_t l = 0; l < a.downsample_levels; ++l) {
    const bool last = l + 1 == a.downsample_levels;
    net.layers.emplace_back(Upsample{2});
    net.layers.emplace_back(ConvLayer(Kernel4(last ? out_channels : h, h, 3, 3), {1, 1}, {2, 2}));
    if (!last) net.layers.emplace_back(ActivationSpec::swish());
  }
  return net;
}

inline void init_kernels(NetworkSpec& net, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> normal;
  for (auto* c : net.conv_layers()) {
    Kernel4& k = c->kernel;
    const double fan_in = static_cast<double>(k.in_channels() * k.kh() * k.kw());
    const double sd = scale * std::sqrt(2.0 / fan_in);
    for (double& v : k.values()) v = sd * normal(rng);
  }
}

// Farthest-point selection over the latent sites of the dataset; seeded jitter
// fills in when there are fewer distinct sites than anchors.
inline Codebook init_codebook(std::span<const Tensor> latents, std::size_t count, std::mt19937_64& rng) {
  require(!latents.empty(), "codebook init needs at least one latent");
  std::vector<std::vector<double>> sites;
  for (const Tensor& t : latents)
    for (std::size_t y = 0; y < t.height(); ++y)
      for (std::size_t x = 0; x < t.width(); ++x) sites.push_back(site_vector(t, y, x));
  const std::size_t dim = sites.front().size();
  double spread = 0.0;
  for (const auto& s : sites) spread = std::max(spread, frobenius_norm(s));
  if (spread == 0.0) spread = 1.0;

  std::vector<double> anchors;
  std::vector<double> nearest(sites.size(), std::numeric_limits<double>::infinity());
  std::size_t pick = 0;
  std::normal_distribution<double> normal;
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<double> a = sites[pick];
    if (n > 0 && nearest[pick] == 0.0)
      for (double& v : a) v += 0.05 * spread * normal(rng);
    anchors.insert(anchors.end(), a.begin(), a.end());
    std::size_t best = 0;
    for (std::size_t s = 0; s < sites.size(); ++s) {
      nearest[s] = std::min(nearest[s], squared_distance(sites[s], a));
      if (nearest[s] > nearest[best]) best = s;
    }
    pick = best;
  }
  return Codebook(count, dim, std::move(anchors));
}

inline ModelState init_model(std::span<const Tensor> dataset, const TrainConfig& cfg) {
  require(!dataset.empty(), "init_model: empty dataset");
  std::mt19937_64 rng(cfg.seed);
  ModelState s;
  s.input_shape = dataset.front().shape();
  s.encoder = make_toy_encoder(s.input_shape.c, cfg.arch);
  s.decoder = make_toy_decoder(s.input_shape.c, cfg.arch);
  s.encoder.output_shape(s.input_shape);
  init_kernels(s.encoder, rng, cfg.arch.init_scale);
  init_kernels(s.decoder, rng, 1.0);
  std::vector<Tensor> latents;
  for (const Tensor& x : dataset) latents.push_back(forward(s.encoder, x));
  s.codebook = init_codebook(latents, cfg.arch.codebook_size, rng);
  return s;
}

// ---------------------------------------------------------------------------
// Losses

struct LossWeights {
  double recon = 1.0;
  double vq = 1.0;
};

struct VqLoss {
  double reconstruction = 0.0;  // ||x - x_hat||^2
  double codebook = 0.0;        // ||sg[e] - q||^2
  double commitment = 0.0;      // ||sg[q] - e||^2
  double total = 0.0;           // weighted sum
  ModelGrads grads;
  CodeGrid codes;
};

inline double sum_squares(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

// Reconstruction gradient reaches the decoder and, straight through the
// quantizer, the encoder. The codebook term moves only the selected anchors;
// the commitment term moves only the encoder.
inline VqLoss vq_loss(const Tensor& x, const ModelState& s, LossWeights w = {}) {
  require(x.shape() == s.input_shape,
          "vq_loss: input shape " + to_string(x.shape()) + " != model input " + to_string(s.input_shape));
  VqLoss out;
  const ForwardTrace enc = forward_trace(s.encoder, x);
  const Tensor& e = enc.output();
  Quantized q = quantize_grid(e, s.codebook);
  const ForwardTrace dec = forward_trace(s.decoder, q.latent);

  Tensor resid = dec.output() - x;
  const Tensor diff = e - q.latent;  // e - q
  out.reconstruction = sum_squares(resid);
  out.codebook = sum_squares(diff);
  out.commitment = out.codebook;
  out.total = w.recon * out.reconstruction + w.vq * (out.codebook + out.commitment);

  out.grads = ModelGrads::zeros(s);
  resid *= 2.0 * w.recon;
  NetworkGrads dg = backward(s.decoder, dec, std::move(resid));
  out.grads.decoder = std::move(dg.kernels);

  Tensor grad_e = std::move(dg.input);  // straight-through copy
  const double c = 2.0 * w.vq;
  for (std::size_t y = 0; y < e.height(); ++y)
    for (std::size_t u = 0; u < e.width(); ++u) {
      const std::size_t n = q.codes(y, u);
      for (std::size_t ch = 0; ch < e.channels(); ++ch) {
        const double d = diff(ch, y, u);
        grad_e(ch, y, u) += c * d;
        out.grads.codebook[n * s.codebook.dim() + ch] -= c * d;
      }
    }
  out.grads.encoder = backward(s.encoder, enc, std::move(grad_e)).kernels;
  out.codes = std::move(q.codes);
  return out;
}

struct RegLoss {
  double value = 0.0;
  std::vector<double> codebook_grad;
};

// |d - theta| where d is the minimal (or mean) pairwise anchor distance.
// Subgradient 0 at d == theta; the minimal pair is the lowest-index pair on ties.
inline RegLoss reg_loss(const Codebook& cb, double theta, RegObjective objective) {
  require(cb.size() >= 2, "reg_loss needs N >= 2");
  RegLoss r;
  r.codebook_grad.assign(cb.values().size(), 0.0);
  const std::size_t dim = cb.dim();
  auto push_pair = [&](std::size_t a, std::size_t b, double d, double coeff) {
    if (d == 0.0) return;
    for (std::size_t ch = 0; ch < dim; ++ch) {
      const double g = coeff * (cb.anchor(a)[ch] - cb.anchor(b)[ch]) / d;
      r.codebook_grad[a * dim + ch] += g;
      r.codebook_grad[b * dim + ch] -= g;
    }
  };
  if (objective == RegObjective::minimal_distance) {
    const AnchorPair p = closest_anchor_pair(cb);
    const double gap = p.distance - theta;
    r.value = std::abs(gap);
    const double sign = gap > 0.0 ? 1.0 : (gap < 0.0 ? -1.0 : 0.0);
    push_pair(p.first, p.second, p.distance, sign);
    return r;
  }
  const std::size_t n = cb.size();
  const double pairs = static_cast<double>(n * (n - 1) / 2);
  double mean = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) mean += std::sqrt(squared_distance(cb.anchor(a), cb.anchor(b)));
  mean /= pairs;
  const double gap = mean - theta;
  r.value = std::abs(gap);
  const double sign = gap > 0.0 ? 1.0 : (gap < 0.0 ? -1.0 : 0.0);
  if (sign != 0.0)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        push_pair(a, b, std::sqrt(squared_distance(cb.anchor(a), cb.anchor(b))), sign / pairs);
  return r;
}

// ---------------------------------------------------------------------------
// Total loss over a batch

struct StepLoss {
  double reconstruction = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
  double regularization = 0.0;
  double total = 0.0;
  ModelGrads grads;
};

// Mean of the weighted VQ loss over `batch` plus reg_weight * regularizer.
inline StepLoss total_loss(std::span<const Tensor> batch, const ModelState& s, const TrainConfig& cfg) {
  require(!batch.empty(), "total_loss: empty batch");
  StepLoss out;
  out.grads = ModelGrads::zeros(s);
  const double inv = 1.0 / static_cast<double>(batch.size());
  const LossWeights w{cfg.recon_weight, cfg.vq_weight};
  for (const Tensor& x : batch) {
    VqLoss l = vq_loss(x, s, w);
    out.reconstruction += inv * l.reconstruction;
    out.codebook += inv * l.codebook;
    out.commitment += inv * l.commitment;
    out.total += inv * l.total;
    out.grads.add_scaled(l.grads, inv);
  }
  if (cfg.reg_weight > 0.0 && s.codebook.size() >= 2) {
    RegLoss r = reg_loss(s.codebook, cfg.theta, cfg.reg_objective);
    out.regularization = r.value;
    out.total += cfg.reg_weight * r.value;
    for (std::size_t i = 0; i < r.codebook_grad.size(); ++i) out.grads.codebook[i] += cfg.reg_weight * r.codebook_grad[i];
  }
  return out;
}

inline void sgd_step(ModelState& s, const ModelGrads& g, double lr) {
  auto blocks = s.parameter_blocks();
  const std::vector<double> flat = g.flatten();
  std::size_t off = 0;
  for (auto b : blocks)
    for (double& v : b) v -= lr * flat[off++];
  ++s.step;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

// Values held fixed by the stop-gradient operators, taken at the base point.
struct FrozenQuantization {
  std::vector<Tensor> encoded;
  std::vector<Tensor> quantized;
  std::vector<CodeGrid> codes;
};

inline FrozenQuantization freeze(std::span<const Tensor> batch, const ModelState& s) {
  FrozenQuantization f;
  for (const Tensor& x : batch) {
    Tensor e = forward(s.encoder, x);
    Quantized q = quantize_grid(e, s.codebook);
    f.encoded.push_back(std::move(e));
    f.quantized.push_back(std::move(q.latent));
    f.codes.push_back(std::move(q.codes));
  }
  return f;
}

// Loss whose ordinary gradient equals the stop-gradient / straight-through
// update: quantities under sg[] and the code assignment are frozen.
inline double surrogate_total_loss(std::span<const Tensor> batch, const ModelState& s, const TrainConfig& cfg,
                                   const FrozenQuantization& f) {
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor e = forward(s.encoder, batch[i]);
    Tensor st = e + (f.quantized[i] - f.encoded[i]);
    const Tensor xh = forward(s.decoder, st);
    const double recon = sum_squares(xh - batch[i]);
    double cb_term = 0.0;
    for (std::size_t y = 0; y < e.height(); ++y)
      for (std::size_t u = 0; u < e.width(); ++u) {
        const auto a = s.codebook.anchor(f.codes[i](y, u));
        for (std::size_t ch = 0; ch < e.channels(); ++ch) {
          const double d = f.encoded[i](ch, y, u) - a[ch];
          cb_term += d * d;
        }
      }
    const double commit = sum_squares(f.quantized[i] - e);
    total += inv * (cfg.recon_weight * recon + cfg.vq_weight * (cb_term + commit));
  }
  if (cfg.reg_weight > 0.0 && s.codebook.size() >= 2)
    total += cfg.reg_weight * reg_loss(s.codebook, cfg.theta, cfg.reg_objective).value;
  return total;
}

inline std::vector<double> analytic_gradient(std::span<const Tensor> batch, const ModelState& s, const TrainConfig& cfg) {
  return total_loss(batch, s, cfg).grads.flatten();
}

inline std::vector<double> finite_difference_gradient(std::span<const Tensor> batch, const ModelState& s,
                                                      const TrainConfig& cfg, double h = 1e-5) {
  const FrozenQuantization f = freeze(batch, s);
  ModelState probe = s;
  std::vector<double> g;
  for (auto block : probe.parameter_blocks())
    for (double& v : block) {
      const double base = v;
      v = base + h;
      const double up = surrogate_total_loss(batch, probe, cfg, f);
      v = base - h;
      const double down = surrogate_total_loss(batch, probe, cfg, f);
      v = base;
      g.push_back((up - down) / (2.0 * h));
    }
  return g;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|), denominator floored at 1e-8.
inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double grad_check(const ModelState& s, const Tensor& x, const TrainConfig& cfg = {}) {
  const std::span<const Tensor> batch(&x, 1);
  return max_relative_error(analytic_gradient(batch, s, cfg), finite_difference_gradient(batch, s, cfg));
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  double reconstruction = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
  double regularization = 0.0;
  double total = 0.0;
  double d_c = 0.0;
  double gamma = 0.0;
};

struct TrainResult {
  ModelState state;
  std::vector<EpochRecord> history;
};

class training_diverged : public std::runtime_error {
 public:
  training_diverged(std::uint64_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::uint64_t step() const { return step_; }

 private:
  std::uint64_t step_;
};

inline std::vector<Tensor> encode_all(const NetworkSpec& enc, std::span<const Tensor> images) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const Tensor& x : images) out.push_back(forward(enc, x));
  return out;
}

inline TrainResult train(std::span<const Tensor> dataset, const TrainConfig& cfg, ModelState initial) {
  cfg.validate();
  require(!dataset.empty(), "train: empty dataset");
  for (const Tensor& x : dataset)
    require(x.shape() == initial.input_shape, "train: inconsistent image shape " + to_string(x.shape()));

  TrainResult r{std::move(initial), {}};
  ModelState& s = r.state;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Tensor> batch;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch.push_back(dataset[order[k]]);
      const StepLoss l = total_loss(batch, s, cfg);
      if (!std::isfinite(l.total)) throw training_diverged(s.step, "non-finite loss");
      rec.reconstruction += l.reconstruction;
      rec.codebook += l.codebook;
      rec.commitment += l.commitment;
      rec.regularization += l.regularization;
      rec.total += l.total;
      ++steps;
      sgd_step(s, l.grads, cfg.learning_rate);
      if (!all_finite(s.codebook.values())) throw training_diverged(s.step, "non-finite parameters");
    }
    const double inv = 1.0 / static_cast<double>(steps);
    rec.reconstruction *= inv;
    rec.codebook *= inv;
    rec.commitment *= inv;
    rec.regularization *= inv;
    rec.total *= inv;
    rec.d_c = s.codebook.size() >= 2 ? min_pairwise_distance(s.codebook) : 0.0;
    const auto latents = encode_all(s.encoder, dataset);
    rec.gamma = gamma(latents, s.codebook);
    r.history.push_back(rec);
  }
  return r;
}

inline TrainResult train(std::span<const Tensor> dataset, const TrainConfig& cfg) {
  cfg.validate();
  return train(dataset, cfg, init_model(dataset, cfg));
}

// ---------------------------------------------------------------------------
// Model files: a key=value manifest terminated by a blank line, followed by
// one NRB1 array per conv kernel (encoder, then decoder) and the codebook.

namespace detail {

inline std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string layer_text(const Layer& l) {
  if (const auto* c = std::get_if<ConvLayer>(&l)) {
    const Kernel4& k = c->kernel;
    std::ostringstream os;
    os << "conv out=" << k.out_channels() << " in=" << k.in_channels() << " kh=" << k.kh() << " kw=" << k.kw()
       << " sh=" << c->stride.h << " sw=" << c->stride.w << " ph=" << c->padding.h << " pw=" << c->padding.w;
    return os.str();
  }
  if (const auto* u = std::get_if<Upsample>(&l)) return "upsample factor=" + std::to_string(u->factor);
  const auto& a = std::get<ActivationSpec>(l);
  std::string s = to_string(a);
  if (a.kind == ActivationKind::leaky_relu) s += " alpha=" + real_text(a.alpha);
  return s;
}

inline std::map<std::string, std::string> parse_fields(std::istringstream& is) {
  std::map<std::string, std::string> out;
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw io_error("model manifest: malformed field '" + tok + "'");
    out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

inline std::size_t to_count(const std::map<std::string, std::string>& f, const std::string& key) {
  const auto it = f.find(key);
  if (it == f.end()) throw io_error("model manifest: missing field '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw io_error("model manifest: bad number for '" + key + "'");
  }
}

inline Layer parse_layer(const std::string& text) {
  std::istringstream is(text);
  std::string kind;
  is >> kind;
  const auto f = parse_fields(is);
  if (kind == "conv") {
    return ConvLayer(Kernel4(to_count(f, "out"), to_count(f, "in"), to_count(f, "kh"), to_count(f, "kw")),
                     {to_count(f, "sh"), to_count(f, "sw")}, {to_count(f, "ph"), to_count(f, "pw")});
  }
  if (kind == "upsample") return Upsample{to_count(f, "factor")};
  if (kind == "identity") return ActivationSpec::identity();
  if (kind == "relu") return ActivationSpec::relu();
  if (kind == "swish") return ActivationSpec::swish();
  if (kind == "leaky_relu") {
    const auto it = f.find("alpha");
    if (it == f.end()) throw io_error("model manifest: leaky_relu without alpha");
    return ActivationSpec::leaky_relu(std::strtod(it->second.c_str(), nullptr));
  }
  throw io_error("model manifest: unknown layer kind '" + kind + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, ',')) out.push_back(static_cast<std::size_t>(std::stoull(part)));
  return out;
}

}  // namespace detail

inline void save_model(std::ostream& os, const ModelState& s) {
  std::size_t tensors = 1;
  os << "vqcert-model 1\n";
  os << "step=" << s.step << "\n";
  os << "input_shape=" << s.input_shape.c << "," << s.input_shape.h << "," << s.input_shape.w << "\n";
  os << "codebook_shape=" << s.codebook.size() << "," << s.codebook.dim() << "\n";
  for (const NetworkSpec* net : {&s.encoder, &s.decoder}) {
    const std::string name = to_string(net->role);
    os << name << "_layers=" << net->layers.size() << "\n";
    for (std::size_t k = 0; k < net->layers.size(); ++k) {
      os << name << "." << k << "=" << detail::layer_text(net->layers[k]) << "\n";
      if (std::holds_alternative<ConvLayer>(net->layers[k])) ++tensors;
    }
  }
  os << "tensors=" << tensors << "\n\n";
  for (const NetworkSpec* net : {&s.encoder, &s.decoder})
    for (const auto* c : net->conv_layers()) nrb::write(os, nrb::from_kernel(c->kernel));
  nrb::write(os, to_array(s.codebook));
  if (!os) throw io_error("model write failed");
}

inline ModelState load_model(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "vqcert-model 1") throw io_error("not a vqcert model file");
  std::map<std::string, std::string> kv;
  while (std::getline(is, line) && !line.empty()) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw io_error("model manifest: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw io_error("model manifest: missing key '" + k + "'");
    return it->second;
  };
  ModelState s;
  s.step = std::stoull(get("step"));
  const auto shape = detail::parse_list(get("input_shape"));
  if (shape.size() != 3) throw io_error("model manifest: input_shape needs 3 entries");
  s.input_shape = {shape[0], shape[1], shape[2]};
  for (NetworkSpec* net : {&s.encoder, &s.decoder}) {
    const std::string name = to_string(net->role);
    const std::size_t n = std::stoull(get(name + "_layers"));
    for (std::size_t k = 0; k < n; ++k) net->layers.push_back(detail::parse_layer(get(name + "." + std::to_string(k))));
  }
  for (NetworkSpec* net : {&s.encoder, &s.decoder})
    for (auto* c : net->conv_layers()) {
      Kernel4 k = nrb::to_kernel(nrb::read(is));
      if (k.out_channels() != c->kernel.out_channels() || k.in_channels() != c->kernel.in_channels() ||
          k.kh() != c->kernel.kh() || k.kw() != c->kernel.kw())
        throw io_error("model file: kernel shape disagrees with manifest");
      c->kernel = std::move(k);
    }
  s.codebook = codebook_from_array(nrb::read(is));
  const auto cb_shape = detail::parse_list(get("codebook_shape"));
  if (cb_shape.size() != 2 || cb_shape[0] != s.codebook.size() || cb_shape[1] != s.codebook.dim())
    throw io_error("model file: codebook shape disagrees with manifest");
  try {
    const Shape3 latent = s.encoder.output_shape(s.input_shape);
    require(latent.c == s.codebook.dim(), "encoder output channels do not match codebook dimension");
    s.decoder.output_shape(latent);
  } catch (const contract_error& e) {
    throw io_error(std::string("model file: ") + e.what());
  }
  return s;
}

inline void save_model(const std::filesystem::path& path, const ModelState& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path.string());
  save_model(os, s);
}

inline ModelState load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open: " + path.string());
  return load_model(is);
}

inline Tensor reconstruct(const ModelState& s, const Tensor& x) {
  return forward(s.decoder, quantize_grid(forward(s.encoder, x), s.codebook).latent);
}

}  // namespace vqcert
