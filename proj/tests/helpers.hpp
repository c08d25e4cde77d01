#pragma once

#include "marat/data.hpp"
#include "marat/mlp.hpp"
#include "marat/training.hpp"

#include <random>
#include <vector>

namespace marat::testing {

/// Glorot weights plus small random biases.
inline Model random_model(std::vector<int> widths, std::uint64_t seed) {
  Model base = Model::glorot(widths, seed);
  Parameters<double> layers = base.layers();
  Rng rng(seed ^ 0xb1a5ULL);
  std::uniform_real_distribution<double> dist(-0.2, 0.2);
  for (auto& layer : layers)
    for (Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = dist(rng);
  return Model(std::move(layers));
}

inline Batch<double> random_batch(Index m, Index d, int classes, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, classes - 1);
  Batch<double> b{RowMatrixXd(m, d), {}};
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < d; ++j) b.inputs(i, j) = unit(rng);
    b.labels.push_back(label(rng));
  }
  return b;
}

inline std::vector<double> to_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

/// Two well-separated Gaussian blobs in [0,1]^2.
inline Dataset two_blobs(int n_per_class, std::uint64_t seed, double sigma = 0.05) {
  RowMatrixXd centers(2, 2);
  centers << 0.25, 0.25, 0.75, 0.75;
  return synth_gaussians(n_per_class, centers, sigma, seed);
}

/// Small ReLU net trained naturally on two_blobs.
inline Model trained_blob_model(std::uint64_t seed = 1, int epochs = 20) {
  TrainConfig cfg;
  cfg.regime = Regime::natural;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.lr = 0.2;
  cfg.seed = seed;
  return train(Model::glorot(std::vector<int>{2, 16, 2}, seed), two_blobs(100, seed), cfg).model;
}

}  // namespace marat::testing
