#pragma once

// Command-line front end. Reports are key=value records, one record per line,
// grouped by blank lines. Needs CLI11 on the include path.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vqcert/errors.hpp"
#include "vqcert/lipschitz.hpp"
#include "vqcert/metrics.hpp"
#include "vqcert/nrb_io.hpp"
#include "vqcert/nroub.hpp"
#include "vqcert/sovqae.hpp"
#include "vqcert/toy_data.hpp"

namespace vqcert::cli {

inline std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string num(std::size_t v) { return std::to_string(v); }

class Record {
 public:
  Record& add(const std::string& key, const std::string& value) {
    fields_.emplace_back(key, value);
    return *this;
  }
  Record& add(const std::string& key, double v) { return add(key, num(v)); }
  Record& add(const std::string& key, std::size_t v) { return add(key, num(v)); }
  Record& add(const std::string& key, bool v) { return add(key, std::string(v ? "true" : "false")); }
  Record& add(const std::string& key, const char* v) { return add(key, std::string(v)); }

  std::string str() const {
    std::string s;
    for (const auto& [k, v] : fields_) {
      if (!s.empty()) s += ' ';
      s += k + "=" + v;
    }
    return s;
  }

 private:
  std::vector<std::pair<std::string, std::string>> fields_;
};

class Report {
 public:
  explicit Report(std::ostream& os) : os_(os) {}

  void group() {
    if (started_) os_ << "\n";
    started_ = true;
  }
  void line(const Record& r) {
    started_ = true;
    os_ << r.str() << "\n";
  }

 private:
  std::ostream& os_;
  bool started_ = false;
};

inline Region parse_region(const std::string& text) {
  const auto parts = detail::parse_list(text);
  require(parts.size() == 4, "region must be top,left,height,width");
  return {parts[0], parts[1], parts[2], parts[3]};
}

inline std::vector<Tensor> load_dataset(const std::string& dir) {
  auto images = nrb::load_frames(dir);
  if (images.empty()) throw io_error("no .nrb frames in " + dir);
  return images;
}

inline double mean_reconstruction_psnr(const ModelState& s, std::span<const Tensor> images, std::size_t* inf_count) {
  std::vector<double> v;
  for (const Tensor& x : images) v.push_back(psnr(reconstruct(s, x), x));
  const MeanMetric m = mean_metric(v);
  if (inf_count) *inf_count = m.infinite_count;
  return m.value();
}

inline Record certificate_record(const NRoUBCertificate& c) {
  Record r;
  r.add("d_C", c.d_c).add("gamma", c.gamma).add("L_eps", c.l_eps).add("bound", c.bound).add("degenerate", c.degenerate);
  return r;
}

struct TrainFlags {
  std::string data;
  std::string out;
  std::size_t log_every = 100;
};

inline void add_train_flags(CLI::App* app, TrainConfig& cfg, std::string& reg_objective) {
  app->add_option("--seed", cfg.seed, "RNG seed for initialization and shuffling");
  app->add_option("--theta", cfg.theta, "target codebook separation")->check(CLI::PositiveNumber);
  app->add_option("--reg-objective", reg_objective, "codebook regularizer")->check(CLI::IsMember({"min", "avg"}));
  app->add_option("--reg-weight", cfg.reg_weight, "weight of the separation regularizer");
  app->add_option("--vq-weight", cfg.vq_weight, "weight of the codebook and commitment terms");
  app->add_option("--recon-weight", cfg.recon_weight, "weight of the reconstruction term");
  app->add_option("--epochs", cfg.epochs, "training epochs");
  app->add_option("--lr", cfg.learning_rate, "SGD learning rate");
  app->add_option("--batch", cfg.batch_size, "images per SGD step");
  app->add_option("--codebook-size", cfg.arch.codebook_size, "number of anchors N");
  app->add_option("--latent-channels", cfg.arch.latent_channels, "codebook dimension c");
}

inline RegObjective parse_objective(const std::string& s) {
  return s == "avg" ? RegObjective::average_distance : RegObjective::minimal_distance;
}

inline Record config_record(const TrainConfig& cfg) {
  Record r;
  r.add("seed", std::to_string(cfg.seed))
      .add("theta", cfg.theta)
      .add("reg_objective", to_string(cfg.reg_objective))
      .add("reg_weight", cfg.reg_weight)
      .add("vq_weight", cfg.vq_weight)
      .add("recon_weight", cfg.recon_weight)
      .add("epochs", cfg.epochs)
      .add("lr", cfg.learning_rate)
      .add("batch", cfg.batch_size);
  return r;
}

inline Record epoch_record(const EpochRecord& e) {
  Record r;
  r.add("epoch", e.epoch)
      .add("total", e.total)
      .add("recon", e.reconstruction)
      .add("codebook", e.codebook)
      .add("commitment", e.commitment)
      .add("reg", e.regularization)
      .add("d_C", e.d_c)
      .add("gamma", e.gamma);
  return r;
}

inline int run_synth(std::ostream& out, const ToyDatasetConfig& cfg, const std::string& dir) {
  const auto images = make_toy_dataset(cfg);
  nrb::save_frames(dir, images);
  Report rep(out);
  rep.line(Record()
               .add("images", images.size())
               .add("shape", to_string(images.front().shape()))
               .add("motifs", cfg.motifs)
               .add("seed", std::to_string(cfg.seed))
               .add("out", dir));
  return 0;
}

inline int run_train(std::ostream& out, const TrainConfig& cfg, const TrainFlags& f) {
  const auto images = load_dataset(f.data);
  const TrainResult r = train(images, cfg);
  save_model(f.out, r.state);
  Report rep(out);
  rep.line(config_record(cfg));
  rep.group();
  for (const auto& e : r.history)
    if ((f.log_every > 0 && e.epoch % f.log_every == 0) || e.epoch == r.history.size()) rep.line(epoch_record(e));
  rep.group();
  std::size_t infs = 0;
  const double p = mean_reconstruction_psnr(r.state, images, &infs);
  rep.line(Record().add("model", f.out).add("step", std::to_string(r.state.step)).add("psnr", p).add("psnr_inf", infs));
  return 0;
}

inline int run_bound(std::ostream& out, const std::string& model_path, bool oracle) {
  const ModelState s = load_model(model_path);
  ComposeOptions opt;
  opt.with_oracle = oracle;
  const LipschitzBound lb = compose_network_bound(s.encoder, s.input_shape, opt);
  Report rep(out);
  for (std::size_t k = 0; k < lb.reports.size(); ++k) {
    const LayerReport& lr = lb.reports[k];
    Record r;
    r.add("layer", lr.layer_index)
        .add("input", to_string(lr.input_shape))
        .add("method", to_string(lr.chosen.method))
        .add("value", lr.chosen.value)
        .add("following", lb.activation_constants[k]);
    for (const LayerBound& c : lr.candidates) r.add(to_string(c.method), c.value);
    if (lr.oracle) r.add("oracle", *lr.oracle);
    rep.line(r);
  }
  rep.group();
  rep.line(Record().add("prefix", lb.prefix_constant).add("L_eps", lb.value));
  return 0;
}

struct CertifyFlags {
  std::string model;
  std::string data;
  std::size_t trials = 1000;
  std::vector<double> fractions{0.5, 0.9, 0.99};
  std::uint64_t seed = 1;
};

// Exit status 3 when a perturbation inside the certified ball changed a code.
inline int run_certify(std::ostream& out, std::ostream& err, const CertifyFlags& f) {
  const ModelState s = load_model(f.model);
  const auto images = load_dataset(f.data);
  const NRoUBCertificate cert = compute_certificate(s, images);
  Report rep(out);
  rep.line(certificate_record(cert));
  if (cert.degenerate) {
    rep.group();
    rep.line(Record().add("trials", std::size_t{0}).add("status", "degenerate"));
    return 0;
  }
  const std::size_t per_image = (f.trials + images.size() - 1) / images.size();
  bool violated = false;
  rep.group();
  for (double fraction : f.fractions) {
    const TrialReport t = run_trial_suite(s, images, cert, per_image, fraction, f.seed);
    rep.line(Record()
                 .add("trials", t.trials)
                 .add("matches", t.code_matches)
                 .add("decoded_identical", t.decoded_identical)
                 .add("fraction", fraction)
                 .add("max_norm", t.max_perturbation_norm));
    violated = violated || t.code_matches != t.trials || t.decoded_identical != t.trials;
  }
  if (violated) {
    err << "error: code assignment changed inside the certified radius\n";
    return 3;
  }
  return 0;
}

struct PerturbFlags {
  std::string model;
  std::string image;
  std::string kind = "noise";
  std::optional<double> norm;
  std::optional<double> norm_fraction;
  double noise_sigma = 0.05;
  double blur_sigma = 1.0;
  std::string region;
  std::string data;
  std::string out;
  std::uint64_t seed = 1;
};

inline int run_perturb(std::ostream& out, const PerturbFlags& f) {
  const ModelState s = load_model(f.model);
  const Tensor clean = nrb::load_tensor(f.image);
  require(clean.shape() == s.input_shape,
          "image shape " + to_string(clean.shape()) + " does not match model input " + to_string(s.input_shape));
  DegradationSpec spec;
  spec.kind = f.kind == "blur" ? DegradationKind::gaussian_blur : DegradationKind::gaussian_noise;
  spec.noise_sigma = f.noise_sigma;
  spec.blur_sigma = f.blur_sigma;
  spec.seed = f.seed;
  if (!f.region.empty()) spec.region = parse_region(f.region);

  std::optional<NRoUBCertificate> cert;
  if (!f.data.empty()) cert = compute_certificate(s, load_dataset(f.data));
  if (f.norm_fraction) {
    require(cert.has_value(), "--norm-fraction needs --data to compute the certificate");
    spec.target_frobenius_norm = *f.norm_fraction * cert->bound;
  } else if (f.norm) {
    spec.target_frobenius_norm = *f.norm;
  }

  const Degraded d = degrade(clean, spec);
  const Quantized qc = quantize_grid(forward(s.encoder, clean), s.codebook);
  const Quantized qd = quantize_grid(forward(s.encoder, d.image), s.codebook);
  const Tensor dec_clean = forward(s.decoder, qc.latent);
  const Tensor dec_degraded = forward(s.decoder, qd.latent);
  std::size_t changed = 0;
  for (std::size_t k = 0; k < qc.codes.indices.size(); ++k) changed += qc.codes.indices[k] != qd.codes.indices[k];

  if (!f.out.empty()) {
    std::filesystem::create_directories(f.out);
    const std::filesystem::path dir(f.out);
    nrb::save_tensor(dir / "degraded.nrb", d.image);
    nrb::save_tensor(dir / "decoded_clean.nrb", dec_clean);
    nrb::save_tensor(dir / "decoded_degraded.nrb", dec_degraded);
  }

  Report rep(out);
  Record r;
  r.add("kind", f.kind).add("realized_norm", d.realized_norm);
  if (cert) r.add("bound", cert->bound).add("within_bound", !cert->degenerate && d.realized_norm < cert->bound);
  rep.line(r);
  rep.group();
  rep.line(Record()
               .add("code_match", changed == 0)
               .add("changed_sites", changed)
               .add("decoded_identical", bit_identical(dec_clean, dec_degraded)));
  rep.line(Record()
               .add("psnr_degraded_input", psnr(d.image, clean))
               .add("psnr_clean_reconstruction", psnr(dec_clean, clean))
               .add("psnr_degraded_reconstruction", psnr(dec_degraded, clean))
               .add("psnr_decoded_pair", psnr(dec_degraded, dec_clean)));
  return 0;
}

inline int run_eval(std::ostream& out, const std::string& gen_dir, const std::string& gt_dir, double peak,
                    const std::string& region) {
  const auto gen = load_dataset(gen_dir);
  const auto gt = load_dataset(gt_dir);
  for (const auto* seq : {&gen, &gt})
    for (const Tensor& t : *seq)
      require(t.shape() == seq->front().shape(), "frames within a directory must share one shape");
  require(gen.front().shape() == gt.front().shape(), "generated and ground-truth frames differ in shape");

  FrameMetric metric = psnr_metric(peak);
  if (!region.empty()) {
    const Region r = parse_region(region);
    const Tensor& ref = gen.front();
    resolve_region(ref, r);
    RegionMask mask(ref.height(), ref.width());
    for (std::size_t y = r.top; y < r.top + r.height; ++y)
      for (std::size_t x = r.left; x < r.left + r.width; ++x) mask.set(y, x);
    metric = [mask, peak](const Tensor& a, const Tensor& b) { return region_psnr(a, b, mask, peak); };
  }

  const SlidingResult sr = sliding_eval(gen, gt, metric);
  Report rep(out);
  for (std::size_t i = 0; i < gen.size(); ++i)
    rep.line(Record().add("frame", i).add("gt_frame", sr.best_offset + i).add("psnr", metric(gen[i], gt[sr.best_offset + i])));
  rep.group();
  for (std::size_t o = 0; o < sr.per_offset.size(); ++o)
    rep.line(Record()
                 .add("offset", o)
                 .add("mean_psnr", sr.per_offset[o].value())
                 .add("inf_frames", sr.per_offset[o].infinite_count));
  rep.group();
  rep.line(Record()
               .add("best_offset", sr.best_offset)
               .add("best_psnr", sr.best.value())
               .add("inf_frames", sr.best.infinite_count)
               .add("frames", gen.size()));
  return 0;
}

inline int run_ablate(std::ostream& out, const TrainConfig& base, const std::string& data, const std::vector<double>& thetas) {
  const auto images = load_dataset(data);
  Report rep(out);
  rep.line(config_record(base));
  rep.group();
  struct Row {
    std::string objective;
    double theta;
    double reg_weight;
  };
  std::vector<Row> rows{{"none", 0.0, 0.0}};
  for (const char* obj : {"min", "avg"})
    for (double th : thetas) rows.push_back({obj, th, base.reg_weight});
  for (const Row& row : rows) {
    TrainConfig cfg = base;
    cfg.reg_weight = row.reg_weight;
    if (row.objective != "none") {
      cfg.reg_objective = parse_objective(row.objective);
      cfg.theta = row.theta;
    }
    const TrainResult r = train(images, cfg);
    const NRoUBCertificate c = compute_certificate(r.state, images);
    std::size_t infs = 0;
    const double p = mean_reconstruction_psnr(r.state, images, &infs);
    Record rec;
    rec.add("objective", row.objective);
    rec.add("theta", row.objective == "none" ? std::string("-") : num(row.theta));
    rec.add("d_C", c.d_c).add("gamma", c.gamma).add("L_eps", c.l_eps).add("bound", c.bound);
    rec.add("degenerate", c.degenerate).add("psnr", p).add("psnr_inf", infs);
    rep.line(rec);
  }
  return 0;
}

inline int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Noise-robustness certificates for vector-quantized conv autoencoders", "vqcert"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  ToyDatasetConfig synth_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write the synthetic motif dataset as .nrb frames");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_cfg.seed, "RNG seed");
  synth->add_option("--images", synth_cfg.images, "number of images");
  synth->add_option("--motifs", synth_cfg.motifs, "motif vocabulary size");

  TrainConfig train_cfg;
  std::string train_obj = "min";
  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train the toy VQ autoencoder");
  train_cmd->add_option("--data", train_flags.data, "directory of .nrb training images")->required();
  train_cmd->add_option("--out", train_flags.out, "output model file")->required();
  train_cmd->add_option("--log-every", train_flags.log_every, "epoch interval of loss records (0: final only)");
  add_train_flags(train_cmd, train_cfg, train_obj);

  std::string bound_model;
  bool bound_oracle = false;
  auto* bound = app.add_subcommand("bound", "per-layer Lipschitz bounds of a model's encoder");
  bound->add_option("--model", bound_model, "model file")->required();
  bound->add_flag("--oracle", bound_oracle, "also report power-iteration norms");

  CertifyFlags cert_flags;
  auto* certify = app.add_subcommand("certify", "certificate and perturbation trials");
  certify->add_option("--model", cert_flags.model, "model file")->required();
  certify->add_option("--data", cert_flags.data, "directory of .nrb images the certificate covers")->required();
  certify->add_option("--trials", cert_flags.trials, "trials per norm fraction, spread over the images");
  certify->add_option("--norm-fraction", cert_flags.fractions, "perturbation norms as fractions of the bound")
      ->check(CLI::Range(0.0, 1.0));
  certify->add_option("--seed", cert_flags.seed, "RNG seed for perturbation directions");

  PerturbFlags pert_flags;
  double pert_norm = 0.0, pert_fraction = 0.0;
  auto* perturb = app.add_subcommand("perturb", "degrade one image and compare codes and decodes");
  perturb->add_option("--model", pert_flags.model, "model file")->required();
  perturb->add_option("--image", pert_flags.image, ".nrb image")->required();
  perturb->add_option("--kind", pert_flags.kind, "degradation")->check(CLI::IsMember({"noise", "blur"}));
  auto* norm_opt = perturb->add_option("--norm", pert_norm, "target Frobenius norm of the perturbation");
  auto* frac_opt = perturb->add_option("--norm-fraction", pert_fraction, "target norm as a fraction of the bound")
                       ->check(CLI::Range(0.0, 1.0));
  norm_opt->excludes(frac_opt);
  perturb->add_option("--noise-sigma", pert_flags.noise_sigma, "per-pixel noise std without a target norm");
  perturb->add_option("--blur-sigma", pert_flags.blur_sigma, "Gaussian blur std in pixels");
  perturb->add_option("--region", pert_flags.region, "top,left,height,width (default: whole image)");
  perturb->add_option("--data", pert_flags.data, "training images, for the certificate");
  perturb->add_option("--out", pert_flags.out, "directory for degraded and decoded tensors");
  perturb->add_option("--seed", pert_flags.seed, "RNG seed");

  std::string eval_gen, eval_gt, eval_region;
  double eval_peak = 1.0;
  auto* eval = app.add_subcommand("eval", "PSNR table and sliding evaluation of two frame directories");
  eval->add_option("--gen", eval_gen, "generated frames")->required();
  eval->add_option("--gt", eval_gt, "ground-truth frames")->required();
  eval->add_option("--peak", eval_peak, "peak signal value")->check(CLI::PositiveNumber);
  eval->add_option("--region", eval_region, "top,left,height,width for region PSNR");

  TrainConfig ablate_cfg;
  std::string ablate_obj = "min", ablate_data;
  std::vector<double> ablate_thetas{1.0, 2.0};
  auto* ablate = app.add_subcommand("ablate", "unregularized, min and avg objectives over a theta grid");
  ablate->add_option("--data", ablate_data, "directory of .nrb training images")->required();
  ablate->add_option("--thetas", ablate_thetas, "theta grid");
  add_train_flags(ablate, ablate_cfg, ablate_obj);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*synth) return run_synth(out, synth_cfg, synth_out);
    if (*train_cmd) {
      train_cfg.reg_objective = parse_objective(train_obj);
      return run_train(out, train_cfg, train_flags);
    }
    if (*bound) return run_bound(out, bound_model, bound_oracle);
    if (*certify) return run_certify(out, err, cert_flags);
    if (*perturb) {
      if (norm_opt->count() > 0) pert_flags.norm = pert_norm;
      if (frac_opt->count() > 0) pert_flags.norm_fraction = pert_fraction;
      return run_perturb(out, pert_flags);
    }
    if (*eval) return run_eval(out, eval_gen, eval_gt, eval_peak, eval_region);
    if (*ablate) {
      ablate_cfg.reg_objective = parse_objective(ablate_obj);
      return run_ablate(out, ablate_cfg, ablate_data, ablate_thetas);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace vqcert::cli
