// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "test_support.hpp"
#include "vqcert/cli.hpp"
#include "vqcert/vqcert.hpp"

using namespace vqcert;
using testing_support::TempDir;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "vqcert");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Same generator family as the unit suite: c_i, c_o <= 4, k <= 3, input <= 12x12.
ConvLayer random_layer(std::mt19937_64& rng, Shape3& in) {
  std::uniform_int_distribution<std::size_t> ch(1, 4), k(1, 3), s(1, 3), p(0, 2);
  for (;;) {
    const std::size_t kh = k(rng), kw = k(rng), sh = s(rng), sw = s(rng), ph = p(rng), pw = p(rng);
    std::uniform_int_distribution<std::size_t> n(1, 6);
    const std::size_t H = kh + sh * (n(rng) - 1), W = kw + sw * (n(rng) - 1);
    if (H <= ph || W <= pw || H - ph > 12 || W - pw > 12) continue;
    in = {ch(rng), H - ph, W - pw};
    return ConvLayer(oracle::random_kernel(ch(rng), in.c, kh, kw, rng), {sh, sw}, {ph, pw});
  }
}

// Exact norm: Jacobi on the smaller Gram matrix when affordable, otherwise
// power iteration.
double exact_norm(const Matrix& m) {
  if (m.rows() <= 160) return oracle::jacobi_spectral_norm(m);
  if (m.cols() <= 160) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
    return oracle::jacobi_spectral_norm(t);
  }
  return oracle_operator_norm(m).value;
}

void criterion_1() {
  std::mt19937_64 rng(1001);
  double worst = kInfinity;
  bool ok = true;
  for (int t = 0; t < 200; ++t) {
    Shape3 in;
    const ConvLayer l = random_layer(rng, in);
    const Matrix m = unroll_conv_matrix(l, in);
    const double exact = std::max(exact_norm(m), oracle_operator_norm(m).value);
    for (const LayerBound& b : certified_layer_bounds(l, in)) {
      worst = std::min(worst, b.value - exact);
      ok = ok && b.certified() && b.value >= exact - 1e-9;
    }
  }
  report(1, ok, fmt("200 random layers; min(certified - exact) = %.3g", worst));
}

void criterion_2() {
  std::mt19937_64 rng(1002);
  std::uniform_int_distribution<std::size_t> k(1, 3), extra(0, 2), n(1, 4);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t kh = k(rng), kw = k(rng), sh = kh + extra(rng), sw = kw + extra(rng);
    const ConvLayer l(oracle::random_kernel(1, 1, kh, kw, rng), {sh, sw});
    const Shape3 in{1, kh + sh * (n(rng) - 1), kw + sw * (n(rng) - 1)};
    const double exact = exact_norm(unroll_conv_matrix(l, in));
    worst = std::max(worst, std::abs(stride_dominant_bound(l).value - exact) / exact);
  }
  report(2, worst <= 1e-6, fmt("100 single-channel layers with s >= k; max relative gap %.3g", worst));
}

void criterion_3() {
  bool ok = true;
  double worst = 0.0;
  for (std::size_t m = 3; m <= 50; ++m) {
    const ConvLayer l(Kernel4(1, 1, 1, 2, 1.0));
    const Shape3 in{1, 1, m + 1};
    if (!toeplitz_applicable(l, in)) {
      ok = false;
      continue;
    }
    const double b = toeplitz_fourier_bound(l, in).value;
    std::vector<std::vector<double>> gram(m, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < m; ++i) {
      gram[i][i] = 2.0;
      if (i + 1 < m) gram[i][i + 1] = gram[i + 1][i] = 1.0;
    }
    const auto ev = oracle::jacobi_eigenvalues(gram);
    const double rho = *std::max_element(ev.begin(), ev.end());
    const double analytic = 2.0 + 2.0 * std::cos(std::numbers::pi / static_cast<double>(m + 1));
    worst = std::max(worst, std::abs(rho - analytic));
    ok = ok && std::abs(b - 2.0) <= 1e-12 && rho <= 4.0 && std::abs(rho - analytic) <= 1e-10 && b >= std::sqrt(rho);
  }
  report(3, ok, fmt("tridiagonal m = 3..50: bound 2, rho <= 4, max |rho - analytic| %.3g", worst));
}

void criterion_4(const ModelState& s, const std::vector<Tensor>& images) {
  const double L = compose_network_bound(s.encoder, s.input_shape).value;
  std::mt19937_64 rng(1004);
  std::uniform_real_distribution<double> scale(1e-3, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Tensor x = t % 2 ? images[pick(rng)] : oracle::random_tensor(s.input_shape, rng, 0.0, 1.0);
    Tensor y = oracle::random_tensor(s.input_shape, rng, 0.0, 1.0);
    y = x + scale(rng) * (y - x);
    const double ratio = frobenius_norm(forward(s.encoder, x) - forward(s.encoder, y)) / frobenius_norm(x - y);
    worst = std::max(worst, ratio);
  }
  report(4, worst <= L * (1.0 + 1e-12), fmt("1000 pairs on the trained encoder; max ratio %.4g <= L_eps %.4g", worst, L));
}

void criteria_5_6(const ModelState& s, const std::vector<Tensor>& images) {
  const NRoUBCertificate c = compute_certificate(s, images);
  if (c.degenerate) {
    report(5, false, fmt("certificate degenerate: d_C %.4g, gamma %.4g", c.d_c, c.gamma));
    report(6, false, "no trials run");
    return;
  }
  const std::size_t per_image = (10000 + images.size() - 1) / images.size();
  bool match = true, identical = true;
  std::string detail5 = fmt("bound %.4g;", c.bound), detail6;
  for (double f : {0.5, 0.9, 0.99}) {
    const TrialReport r = run_trial_suite(s, images, c, per_image, f, 2024);
    match = match && r.trials >= 10000 && r.code_matches == r.trials && r.max_perturbation_norm <= f * c.bound * (1 + 1e-12);
    identical = identical && r.decoded_identical == r.trials;
    detail5 += fmt(" %.2f: %.0f/%.0f", f, static_cast<double>(r.code_matches), static_cast<double>(r.trials));
    detail6 += fmt(" %.2f: %.0f/%.0f", f, static_cast<double>(r.decoded_identical), static_cast<double>(r.trials));
  }
  report(5, match, detail5 + " codes unchanged");
  report(6, identical, "decodes bit-identical" + detail6);
}

void criterion_7() {
  double worst = 0.0, control = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed * 7919);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.arch.latent_channels = 2;
    cfg.arch.codebook_size = 4;
    cfg.arch.hidden_channels = 3;
    cfg.arch.init_scale = 1.0;
    cfg.vq_weight = 0.7;
    cfg.reg_weight = 0.3;
    cfg.reg_objective = seed % 2 ? RegObjective::minimal_distance : RegObjective::average_distance;
    const Tensor x = oracle::random_tensor({3, 8, 8}, rng, 0.0, 1.0);
    const std::vector<Tensor> data{x};
    ModelState s = init_model(data, cfg);
    std::normal_distribution<double> normal;
    for (double& v : s.codebook.values()) v += 0.3 * normal(rng);
    if (s.parameter_count() > 2000) {
      report(7, false, "tiny model exceeds 2000 parameters");
      return;
    }
    worst = std::max(worst, grad_check(s, x, cfg));
    if (seed == 1) {
      const std::span<const Tensor> batch(&x, 1);
      std::vector<double> a = analytic_gradient(batch, s, cfg);
      const auto n = finite_difference_gradient(batch, s, cfg);
      const auto big = std::max_element(a.begin(), a.end(), [](double p, double q) { return std::abs(p) < std::abs(q); });
      *big *= 2.0;
      control = max_relative_error(a, n);
    }
  }
  report(7, worst <= 1e-4 && control > 1e-2,
         fmt("20 tiny models: max relative error %.3g; corrupted-gradient control %.3g", worst, control));
}

void criterion_8(const ModelState& min_model, const std::vector<Tensor>& images) {
  TrainConfig none;
  none.reg_weight = 0.0;
  TrainConfig avg;
  avg.reg_objective = RegObjective::average_distance;
  const NRoUBCertificate cm = compute_certificate(min_model, images);
  const NRoUBCertificate cn = compute_certificate(train(images, none).state, images);
  const NRoUBCertificate ca = compute_certificate(train(images, avg).state, images);
  const bool ok = cm.d_c >= 0.95 && cm.bound > cn.bound && cm.bound > ca.bound;
  report(8, ok,
         fmt("min: d_C %.4g, bound %.4g", cm.d_c, cm.bound) + fmt("; none: bound %.4g; avg: bound %.4g", cn.bound, ca.bound));
}

void criterion_10() {
  std::mt19937_64 rng(1010);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  std::uniform_real_distribution<double> peak(0.5, 255.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Shape3 sh{dim(rng) % 4 + 1, dim(rng), dim(rng)};
    const Tensor a = oracle::random_tensor(sh, rng, 0.0, 1.0), b = oracle::random_tensor(sh, rng, 0.0, 1.0);
    const double pk = peak(rng);
    RegionMask mask(sh.h, sh.w);
    std::bernoulli_distribution on(0.5);
    for (std::size_t y = 0; y < sh.h; ++y)
      for (std::size_t x = 0; x < sh.w; ++x) mask.set(y, x, on(rng));
    mask.set(0, 0);
    long double sse = 0.0L, rsse = 0.0L;
    for (std::size_t c = 0; c < sh.c; ++c)
      for (std::size_t y = 0; y < sh.h; ++y)
        for (std::size_t x = 0; x < sh.w; ++x) {
          const long double d = static_cast<long double>(a(c, y, x)) - b(c, y, x);
          sse += d * d;
          if (mask(y, x)) rsse += d * d;
        }
    const long double p2 = static_cast<long double>(pk) * pk;
    const long double full = 10.0L * std::log10(p2 * sh.size() / sse);
    const long double region = 10.0L * std::log10(p2 * mask.count() * sh.c / rsse);
    worst = std::max(worst, std::abs(psnr(a, b, pk) - static_cast<double>(full)));
    worst = std::max(worst, std::abs(region_psnr(a, b, mask, pk) - static_cast<double>(region)));
  }

  bool sliding_ok = true;
  for (int t = 0; t < 30; ++t) {
    std::vector<Tensor> gen, gt;
    for (int i = 0; i < 5; ++i) gen.push_back(oracle::random_tensor({2, 3, 3}, rng, 0.0, 1.0));
    for (int i = 0; i < 12; ++i) gt.push_back(oracle::random_tensor({2, 3, 3}, rng, 0.0, 1.0));
    if (t % 3 == 0) gt[static_cast<std::size_t>(t % 8)] = gen[0];
    std::size_t best_off = 0, best_inf = 0;
    double best_mean = 0.0;
    for (std::size_t off = 0; off + gen.size() <= gt.size(); ++off) {
      std::size_t inf = 0, fin = 0;
      double sum = 0.0;
      for (std::size_t i = 0; i < gen.size(); ++i) {
        const double v = psnr(gen[i], gt[off + i]);
        if (v == kInfinity) {
          ++inf;
        } else {
          sum += v;
          ++fin;
        }
      }
      const double mean = fin ? sum / static_cast<double>(fin) : kInfinity;
      if (off == 0 || inf > best_inf || (inf == best_inf && mean > best_mean)) best_off = off, best_inf = inf, best_mean = mean;
    }
    const SlidingResult r = sliding_eval(gen, gt, psnr_metric());
    sliding_ok = sliding_ok && r.best_offset == best_off && r.best.infinite_count == best_inf && r.best.value() == best_mean;
  }
  report(10, worst <= 1e-10 && sliding_ok,
         fmt("100 metric cases: max |error| %.3g dB; sliding eval matches enumeration: ", worst) +
             (sliding_ok ? "yes" : "no"));
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();

  TempDir dir("acceptance");
  const std::string data = (dir / "data").string();
  const CliRun synth = run_cli({"synth", "--out", data});
  if (synth.code != 0) {
    std::printf("synthetic dataset failed: %s", synth.err.c_str());
    return 1;
  }
  const auto images = nrb::load_frames(data);

  // Two independent default training runs through the CLI.
  const CliRun ta = run_cli({"train", "--data", data, "--out", (dir / "a.model").string()});
  const CliRun tb = run_cli({"train", "--data", data, "--out", (dir / "b.model").string()});
  if (ta.code != 0 || tb.code != 0) {
    std::printf("training failed: %s%s", ta.err.c_str(), tb.err.c_str());
    return 1;
  }
  const ModelState model = load_model(dir / "a.model");

  criterion_4(model, images);
  criteria_5_6(model, images);
  criterion_7();
  criterion_8(model, images);

  const std::string ma = slurp(dir / "a.model"), mb = slurp(dir / "b.model");
  const std::vector<std::string> cert{"certify", "--model", (dir / "a.model").string(), "--data", data};
  const CliRun ca = run_cli(cert), cb = run_cli(cert);
  std::string ra = ta.out, rb = tb.out;
  // The reports name their output file; compare with that field normalized.
  const auto strip = [](std::string s, const std::string& name) {
    for (auto p = s.find(name); p != std::string::npos; p = s.find(name)) s.replace(p, name.size(), "MODEL");
    return s;
  };
  ra = strip(ra, (dir / "a.model").string());
  rb = strip(rb, (dir / "b.model").string());
  report(9, !ma.empty() && ma == mb && ra == rb && ca.code == 0 && ca.out == cb.out,
         "model files " + std::string(ma == mb ? "identical" : "differ") + "; train reports " +
             (ra == rb ? "identical" : "differ") + "; certify reports " + (ca.out == cb.out ? "identical" : "differ"));

  criterion_10();

  std::printf("%s: %d criterion(s) failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
