#include "marat/data.hpp"

#include "marat/csv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

namespace marat {

Dataset::Dataset(RowMatrixXd features, std::vector<int> labels, int class_count, std::string name)
    : features_(std::move(features)), labels_(std::move(labels)), class_count_(class_count), name_(std::move(name)) {
  if (features_.rows() < 1) throw DomainError("dataset '" + name_ + "' is empty");
  if (static_cast<Index>(labels_.size()) != features_.rows())
    throw DomainError("dataset '" + name_ + "': label count does not match example count");
  if (class_count_ < 1) throw DomainError("dataset '" + name_ + "': class count must be positive");
  for (int y : labels_)
    if (y < 0 || y >= class_count_) throw DomainError("dataset '" + name_ + "': label out of range");
  if (!features_.allFinite() || (features_.array() < 0.0).any() || (features_.array() > 1.0).any())
    throw DomainError("dataset '" + name_ + "': features must lie in [0,1]");
}

Batch<double> Dataset::batch(std::span<const std::size_t> indices) const {
  Batch<double> b{RowMatrixXd(static_cast<Index>(indices.size()), dim()), {}};
  b.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    b.inputs.row(static_cast<Index>(k)) = features_.row(static_cast<Index>(indices[k]));
    b.labels.push_back(labels_[indices[k]]);
  }
  return b;
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError(path + ": cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size()) throw IngestionError(path + ": truncated IDX header");
  std::uint32_t v = 0;
  for (std::size_t k = 0; k < 4; ++k) v = (v << 8) | static_cast<unsigned char>(bytes[offset + k]);
  return v;
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const std::string images = read_file(images_path);
  const std::string labels = read_file(labels_path);

  if (read_be32(images, 0, images_path) != kIdxImagesMagic)
    throw IngestionError(images_path + ": bad magic number for an IDX image file");
  if (read_be32(labels, 0, labels_path) != kIdxLabelsMagic)
    throw IngestionError(labels_path + ": bad magic number for an IDX label file");

  const std::uint64_t n_images = read_be32(images, 4, images_path);
  const std::uint64_t rows = read_be32(images, 8, images_path);
  const std::uint64_t cols = read_be32(images, 12, images_path);
  const std::uint64_t n_labels = read_be32(labels, 4, labels_path);
  const std::uint64_t d = rows * cols;

  if (images.size() != 16 + n_images * d)
    throw IngestionError(images_path + ": file size does not match its header (truncated or padded)");
  if (labels.size() != 8 + n_labels) throw IngestionError(labels_path + ": file size does not match its header");
  if (n_images != n_labels)
    throw IngestionError(labels_path + ": holds " + std::to_string(n_labels) + " labels but " + images_path +
                         " holds " + std::to_string(n_images) + " images");
  if (n_images == 0 || d == 0) throw IngestionError(images_path + ": no images");

  RowMatrixXd features(static_cast<Index>(n_images), static_cast<Index>(d));
  const auto* pixels = reinterpret_cast<const unsigned char*>(images.data() + 16);
  for (std::uint64_t i = 0; i < n_images; ++i)
    for (std::uint64_t j = 0; j < d; ++j)
      features(static_cast<Index>(i), static_cast<Index>(j)) = static_cast<double>(pixels[i * d + j]) / 255.0;

  std::vector<int> y(n_labels);
  int max_label = 0;
  for (std::uint64_t i = 0; i < n_labels; ++i) {
    y[i] = static_cast<unsigned char>(labels[8 + i]);
    max_label = std::max(max_label, y[i]);
  }
  if (max_label > 9) throw IngestionError(labels_path + ": label " + std::to_string(max_label) + " is not a digit");
  return Dataset(std::move(features), std::move(y), 10, "mnist");
}

void write_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path, int rows,
               int cols) {
  if (static_cast<Index>(rows) * cols != data.dim()) throw ConfigError("rows * cols must equal feature width");
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw std::runtime_error("cannot write IDX files " + images_path + ", " + labels_path);
  write_be32(img, kIdxImagesMagic);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  std::string pixels(static_cast<std::size_t>(data.size() * data.dim()), '\0');
  for (Index i = 0; i < data.size(); ++i)
    for (Index j = 0; j < data.dim(); ++j)
      pixels[static_cast<std::size_t>(i * data.dim() + j)] =
          static_cast<char>(static_cast<unsigned char>(std::lround(data.features()(i, j) * 255.0)));
  img.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));

  write_be32(lab, kIdxLabelsMagic);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int y : data.labels()) {
    if (y > 255) throw ConfigError("IDX labels must fit in a byte");
    lab.put(static_cast<char>(y));
  }
}

Dataset synth_gaussians(int n_per_class, const RowMatrixXd& centers, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  if (n_per_class < 1) throw DomainError("need at least one example per class");
  if (centers.rows() < 1 || centers.cols() < 1) throw DomainError("need at least one center");
  const Index classes = centers.rows();
  RowMatrixXd features(classes * n_per_class, centers.cols());
  std::vector<int> labels;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (Index c = 0; c < classes; ++c) {
    for (int k = 0; k < n_per_class; ++k) {
      const Index row = c * n_per_class + k;
      for (Index j = 0; j < centers.cols(); ++j)
        features(row, j) = std::clamp(centers(c, j) + normal(rng), 0.0, 1.0);
      labels.push_back(static_cast<int>(c));
    }
  }
  return Dataset(std::move(features), std::move(labels), static_cast<int>(classes), "synthetic");
}

std::vector<std::size_t> subsample_indices(Index total, Index n, std::uint64_t seed) {
  if (n < 1 || n > total)
    throw DomainError("subsample size " + std::to_string(n) + " outside [1, " + std::to_string(total) + "]");
  std::vector<std::size_t> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n == total) return idx;
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Dataset subsample(const Dataset& data, Index n, std::uint64_t seed) {
  const auto idx = subsample_indices(data.size(), n, seed);
  auto b = data.batch(idx);
  return Dataset(std::move(b.inputs), std::move(b.labels), data.class_count(), data.name());
}

std::vector<std::vector<std::size_t>> minibatch_indices(Index total, Index m, std::uint64_t seed,
                                                        std::uint64_t epoch) {
  if (m < 1) throw DomainError("batch size must be positive");
  std::vector<std::size_t> perm(static_cast<std::size_t>(total));
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, epoch));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> chunks;
  for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(m)) {
    const auto end = std::min(perm.size(), start + static_cast<std::size_t>(m));
    chunks.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return chunks;
}

std::vector<Batch<double>> minibatches(const Dataset& data, Index m, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<Batch<double>> out;
  for (const auto& chunk : minibatch_indices(data.size(), m, seed, epoch)) out.push_back(data.batch(chunk));
  return out;
}

void save_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "label";
  for (Index j = 0; j < data.dim(); ++j) out << ",x" << j;
  out << '\n';
  for (Index i = 0; i < data.size(); ++i) {
    out << data.label(i);
    for (Index j = 0; j < data.dim(); ++j) out << ',' << format_double(data.features()(i, j));
    out << '\n';
  }
}

Dataset load_dataset_csv(const std::string& path, int class_count) {
  std::ifstream in(path);
  if (!in) throw IngestionError(path + ": cannot open file");
  std::string line;
  if (!std::getline(in, line) || line.rfind("label", 0) != 0) throw IngestionError(path + ": missing CSV header");
  const auto width = static_cast<Index>(split(line, ',').size()) - 1;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (static_cast<Index>(cells.size()) != width + 1)
      throw IngestionError(path + ": row " + std::to_string(rows.size() + 1) + " has the wrong number of fields");
    try {
      labels.push_back(std::stoi(cells[0]));
      std::vector<double> row;
      for (std::size_t k = 1; k < cells.size(); ++k) row.push_back(std::stod(cells[k]));
      rows.push_back(std::move(row));
    } catch (const std::exception&) {
      throw IngestionError(path + ": unparsable number on row " + std::to_string(rows.size() + 1));
    }
  }
  RowMatrixXd features(static_cast<Index>(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index j = 0; j < width; ++j) features(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  try {
    return Dataset(std::move(features), std::move(labels), class_count, path);
  } catch (const DomainError& e) {
    throw IngestionError(path + ": " + e.what());
  }
}

}  // namespace marat
