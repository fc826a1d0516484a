#pragma once

// Synthetic images assembled from a small vocabulary of square motifs. With a
// stride-dominant encoder whose receptive field equals the motif size, every
// latent site sees exactly one motif, so the number of distinct latent vectors
// is bounded by the vocabulary size.

#include <cstdint>
#include <random>
#include <vector>

#include "vqcert/errors.hpp"
#include "vqcert/tensor.hpp"

namespace vqcert {

struct ToyDatasetConfig {
  std::size_t images = 16;
  std::size_t channels = 3;
  std::size_t size = 16;
  std::size_t tile = 4;
  std::size_t motifs = 8;
  std::uint64_t seed = 7;
};

inline std::vector<Tensor> make_motifs(const ToyDatasetConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Tensor> motifs;
  for (std::size_t m = 0; m < cfg.motifs; ++m) {
    Tensor t({cfg.channels, cfg.tile, cfg.tile});
    for (double& v : t.values()) v = unit(rng);
    motifs.push_back(std::move(t));
  }
  return motifs;
}

inline std::vector<Tensor> make_toy_dataset(const ToyDatasetConfig& cfg = {}) {
  require(cfg.images >= 1 && cfg.motifs >= 1 && cfg.tile >= 1, "toy dataset: counts must be >= 1");
  require(cfg.size % cfg.tile == 0, "toy dataset: image size must be a multiple of the tile size");
  std::mt19937_64 rng(cfg.seed);
  const auto motifs = make_motifs(cfg, rng);
  const std::size_t grid = cfg.size / cfg.tile;
  std::uniform_int_distribution<std::size_t> pick(0, cfg.motifs - 1);
  std::vector<Tensor> images;
  std::size_t next = 0;  // cycles through motifs first so each one appears
  for (std::size_t i = 0; i < cfg.images; ++i) {
    Tensor img({cfg.channels, cfg.size, cfg.size});
    for (std::size_t gy = 0; gy < grid; ++gy)
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const std::size_t m = next < cfg.motifs ? next++ : pick(rng);
        for (std::size_t c = 0; c < cfg.channels; ++c)
          for (std::size_t y = 0; y < cfg.tile; ++y)
            for (std::size_t x = 0; x < cfg.tile; ++x)
              img(c, gy * cfg.tile + y, gx * cfg.tile + x) = motifs[m](c, y, x);
      }
    images.push_back(std::move(img));
  }
  return images;
}

}  // namespace vqcert
