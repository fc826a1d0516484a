#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "vqcert/quantizer.hpp"

using namespace vqcert;

namespace {

Codebook random_codebook(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> a(n * c);
  for (double& v : a) v = normal(rng);
  return Codebook(n, c, std::move(a));
}

std::vector<double> random_vector(std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> v(c);
  for (double& x : v) x = normal(rng);
  return v;
}

// Scans from the last anchor down; `<=` keeps moving toward lower indices on
// ties, so it realizes the same lowest-index rule from the other direction.
std::size_t reversed_scan(std::span<const double> v, const Codebook& cb) {
  std::size_t best = cb.size() - 1;
  long double best_d = std::numeric_limits<long double>::infinity();
  for (std::size_t n = cb.size(); n-- > 0;) {
    long double d = 0.0L;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const long double e = static_cast<long double>(v[k]) - cb.anchor(n)[k];
      d += e * e;
    }
    if (d <= best_d) best_d = d, best = n;
  }
  return best;
}

// Orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
std::vector<std::vector<double>> random_rotation(std::size_t c, std::mt19937_64& rng) {
  std::vector<std::vector<double>> q;
  while (q.size() < c) {
    auto v = random_vector(c, rng);
    for (const auto& u : q) {
      const double d = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
      for (std::size_t k = 0; k < c; ++k) v[k] -= d * u[k];
    }
    const double n = frobenius_norm(v);
    if (n < 1e-8) continue;
    for (double& x : v) x /= n;
    q.push_back(v);
  }
  return q;
}

std::vector<double> rotate(const std::vector<std::vector<double>>& q, std::span<const double> v) {
  std::vector<double> out(q.size(), 0.0);
  for (std::size_t r = 0; r < q.size(); ++r)
    for (std::size_t k = 0; k < v.size(); ++k) out[r] += q[r][k] * v[k];
  return out;
}

}  // namespace

TEST(Codebook, Invariants) {
  EXPECT_THROW(Codebook(2, 2, {0, 0, 0, 0}), contract_error);
  EXPECT_THROW(Codebook(2, 2, {0, 0, 1}), contract_error);
  EXPECT_THROW(Codebook(1, 1, {std::nan("")}), contract_error);
  EXPECT_NO_THROW(Codebook(1, 2, {0, 0}));
}

TEST(NearestAnchor, Examples) {
  const Codebook cb(2, 2, {0, 0, 1, 0});
  const std::vector<double> a{0.1, 0.0}, tie{0.5, 0.0};
  EXPECT_EQ(nearest_anchor(a, cb), 0u);
  EXPECT_EQ(nearest_anchor(tie, cb), 0u);
  const std::vector<double> wrong{1.0};
  EXPECT_THROW(nearest_anchor(wrong, cb), contract_error);
}

TEST(NearestAnchor, MatchesReversedScan) {
  std::mt19937_64 rng(31);
  const Codebook cb = random_codebook(64, 8, rng);
  for (int t = 0; t < 2000; ++t) {
    const auto v = random_vector(8, rng);
    EXPECT_EQ(nearest_anchor(v, cb), reversed_scan(v, cb));
  }
  // Exact ties: a vector equidistant from anchors 3 and 7.
  std::vector<double> mid(8);
  for (std::size_t k = 0; k < 8; ++k) mid[k] = 0.5 * (cb.anchor(3)[k] + cb.anchor(7)[k]);
  const std::size_t got = nearest_anchor(mid, cb);
  EXPECT_EQ(got, reversed_scan(mid, cb));
}

TEST(QuantizeGrid, FixedPointAndSingleSite) {
  std::mt19937_64 rng(32);
  const Codebook cb = random_codebook(5, 3, rng);
  Tensor latent({3, 2, 2});
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t c = 0; c < 3; ++c) latent(c, s / 2, s % 2) = cb.anchor(s % 5)[c];
  const Quantized q = quantize_grid(latent, cb);
  EXPECT_EQ(q.latent, latent);
  EXPECT_EQ(q.codes.indices, (std::vector<std::size_t>{0, 1, 2, 3}));

  const auto v = random_vector(3, rng);
  const Quantized one = quantize_grid(Tensor({3, 1, 1}, v), cb);
  EXPECT_EQ(one.codes(0, 0), nearest_anchor(v, cb));
  EXPECT_THROW(quantize_grid(Tensor({2, 1, 1}), cb), contract_error);
}

TEST(QuantizeGrid, VoronoiMembershipAtEverySite) {
  std::mt19937_64 rng(33);
  const Codebook cb = random_codebook(16, 4, rng);
  for (int t = 0; t < 20; ++t) {
    const Tensor latent = oracle::random_tensor({4, 5, 6}, rng, -2, 2);
    const Quantized q = quantize_grid(latent, cb);
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        const auto v = site_vector(latent, y, x);
        const std::size_t n = q.codes(y, x);
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(q.latent(c, y, x), cb.anchor(n)[c]);
        for (std::size_t m = 0; m < cb.size(); ++m)
          EXPECT_LE(squared_distance(v, cb.anchor(n)), squared_distance(v, cb.anchor(m)));
      }
  }
}

TEST(QuantizeGrid, PermutingAnchorsPermutesIndices) {
  std::mt19937_64 rng(34);
  const Codebook cb = random_codebook(10, 3, rng);
  std::vector<std::size_t> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> pa;
  for (std::size_t n = 0; n < 10; ++n) pa.insert(pa.end(), cb.anchor(perm[n]).begin(), cb.anchor(perm[n]).end());
  const Codebook permuted(10, 3, pa);
  const Tensor latent = oracle::random_tensor({3, 4, 4}, rng, -2, 2);
  const Quantized a = quantize_grid(latent, cb), b = quantize_grid(latent, permuted);
  EXPECT_EQ(a.latent, b.latent);
  for (std::size_t s = 0; s < 16; ++s) EXPECT_EQ(perm[b.codes.indices[s]], a.codes.indices[s]);
}

TEST(MinPairwiseDistance, Examples) {
  EXPECT_EQ(min_pairwise_distance(Codebook(2, 2, {0, 0, 3, 4})), 5.0);
  EXPECT_EQ(min_pairwise_distance(Codebook(3, 2, {0, 0, 3, 4, 10, 0})), 5.0);
  EXPECT_THROW(min_pairwise_distance(Codebook(1, 2, {0, 0})), contract_error);
  const AnchorPair p = closest_anchor_pair(Codebook(4, 1, {0, 1, 2, 5}));
  EXPECT_EQ(p.first, 0u);  // (0,1) and (1,2) tie; lexicographically first wins
  EXPECT_EQ(p.second, 1u);
}

TEST(MinPairwiseDistance, MatchesDoubleLoop) {
  std::mt19937_64 rng(35);
  const Codebook cb = random_codebook(128, 16, rng);
  long double best = std::numeric_limits<long double>::infinity();
  for (std::size_t a = 0; a < 128; ++a)
    for (std::size_t b = 0; b < 128; ++b) {
      if (a == b) continue;
      long double d = 0.0L;
      for (std::size_t k = 0; k < 16; ++k) {
        const long double e = static_cast<long double>(cb.anchor(a)[k]) - cb.anchor(b)[k];
        d += e * e;
      }
      best = std::min(best, d);
    }
  EXPECT_NEAR(min_pairwise_distance(cb), static_cast<double>(std::sqrt(best)), 1e-12);
}

TEST(Gamma, Examples) {
  const Codebook cb(2, 2, {0, 0, 1, 0});
  const std::vector<Tensor> on{Tensor({2, 1, 2}, {0, 1, 0, 0})};
  EXPECT_EQ(gamma(on, cb), 0.0);
  const std::vector<Tensor> site{Tensor({2, 1, 1}, {0, 0.2})};
  EXPECT_NEAR(gamma(site, cb), 0.2, 1e-15);
  EXPECT_THROW(gamma(std::vector<Tensor>{}, cb), contract_error);
}

TEST(Geometry, InvariantUnderRotation) {
  std::mt19937_64 rng(36);
  for (int t = 0; t < 10; ++t) {
    const std::size_t c = 2 + t % 5;
    const Codebook cb = random_codebook(12, c, rng);
    std::vector<Tensor> latents;
    for (int k = 0; k < 3; ++k) latents.push_back(oracle::random_tensor({c, 3, 4}, rng, -2, 2));
    const auto q = random_rotation(c, rng);
    std::vector<double> ra;
    for (std::size_t n = 0; n < 12; ++n) {
      const auto r = rotate(q, cb.anchor(n));
      ra.insert(ra.end(), r.begin(), r.end());
    }
    const Codebook rcb(12, c, ra);
    std::vector<Tensor> rl;
    for (const Tensor& l : latents) {
      Tensor out(l.shape());
      for (std::size_t y = 0; y < l.height(); ++y)
        for (std::size_t x = 0; x < l.width(); ++x) {
          const auto r = rotate(q, site_vector(l, y, x));
          for (std::size_t k = 0; k < c; ++k) out(k, y, x) = r[k];
        }
      rl.push_back(out);
    }
    EXPECT_NEAR(min_pairwise_distance(rcb), min_pairwise_distance(cb), 1e-10);
    EXPECT_NEAR(gamma(rl, rcb), gamma(latents, cb), 1e-10);
  }
}
