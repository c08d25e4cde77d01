#pragma once

#include "marat/mlp.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace marat {

/// Labeled examples with features in [0,1]^d. Validated on construction.
class Dataset {
 public:
  Dataset(RowMatrixXd features, std::vector<int> labels, int class_count, std::string name);

  Index size() const { return features_.rows(); }
  Index dim() const { return features_.cols(); }
  int class_count() const { return class_count_; }
  const std::string& name() const { return name_; }
  const RowMatrixXd& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }

  VectorXd example(Index i) const { return features_.row(i).transpose(); }
  int label(Index i) const { return labels_[static_cast<std::size_t>(i)]; }

  /// Rows `indices` in the given order.
  Batch<double> batch(std::span<const std::size_t> indices) const;
  Batch<double> all() const { return {features_, labels_}; }

  bool operator==(const Dataset& other) const {
    return class_count_ == other.class_count_ && labels_ == other.labels_ &&
           features_.rows() == other.features_.rows() && features_.cols() == other.features_.cols() &&
           features_ == other.features_;
  }

 private:
  RowMatrixXd features_;
  std::vector<int> labels_;
  int class_count_;
  std::string name_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX image/label file pair; pixels are scaled by 1/255.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

/// Writes features as round(255 * x) bytes with a rows x cols image header.
void write_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path, int rows,
               int cols);

/// Balanced Gaussian blobs around `centers` (one row per class), clamped to [0,1].
Dataset synth_gaussians(int n_per_class, const RowMatrixXd& centers, double sigma, std::uint64_t seed);

/// Seeded uniform sample of n examples without replacement, kept in original order.
Dataset subsample(const Dataset& data, Index n, std::uint64_t seed);
std::vector<std::size_t> subsample_indices(Index total, Index n, std::uint64_t seed);

/// Seeded per-(seed, epoch) permutation cut into consecutive chunks of m; the last may be short.
std::vector<std::vector<std::size_t>> minibatch_indices(Index total, Index m, std::uint64_t seed,
                                                        std::uint64_t epoch);
std::vector<Batch<double>> minibatches(const Dataset& data, Index m, std::uint64_t seed, std::uint64_t epoch);

/// CSV with header `label,x0,x1,...`; one row per example.
void save_dataset_csv(const Dataset& data, const std::string& path);
Dataset load_dataset_csv(const std::string& path, int class_count);

}  // namespace marat
