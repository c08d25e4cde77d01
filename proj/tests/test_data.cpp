#include "marat/data.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace marat;
namespace fs = std::filesystem;

namespace {

const std::string kMnist = std::string(MARAT_DATA_DIR) + "/mnist5k/";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "marat_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 8),
          static_cast<unsigned char>(v)};
}

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                      const std::vector<unsigned char>& pixels, std::uint32_t magic = 0x803) {
  std::vector<unsigned char> out;
  for (auto v : {magic, n, rows, cols}) {
    const auto b = be32(v);
    out.insert(out.end(), b.begin(), b.end());
  }
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<unsigned char> idx_labels(std::uint32_t n, const std::vector<unsigned char>& labels,
                                      std::uint32_t magic = 0x801) {
  std::vector<unsigned char> out;
  for (auto v : {magic, n}) {
    const auto b = be32(v);
    out.insert(out.end(), b.begin(), b.end());
  }
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::string ingestion_message(const fs::path& img, const fs::path& lab) {
  try {
    load_mnist_idx(img.string(), lab.string());
  } catch (const IngestionError& e) {
    return e.what();
  }
  return "";
}

RowMatrixXd centers2() {
  RowMatrixXd c(2, 2);
  c << 0.25, 0.25, 0.75, 0.75;
  return c;
}

}  // namespace

TEST_CASE("dataset invariants are enforced on construction") {
  CHECK_THROWS_AS(Dataset(RowMatrixXd::Constant(2, 2, 0.5), {0}, 2, "short"), DomainError);
  CHECK_THROWS_AS(Dataset(RowMatrixXd::Constant(2, 2, 0.5), {0, 2}, 2, "label"), DomainError);
  CHECK_THROWS_AS(Dataset(RowMatrixXd::Constant(2, 2, 1.5), {0, 1}, 2, "range"), DomainError);
  CHECK_THROWS_AS(Dataset(RowMatrixXd::Constant(2, 2, -0.1), {0, 1}, 2, "range"), DomainError);
  CHECK_NOTHROW(Dataset(RowMatrixXd::Constant(2, 2, 1.0), {0, 1}, 2, "ok"));
}

TEST_CASE("bundled MNIST subset headers") {
  const Dataset test = load_mnist_idx(kMnist + "t10k-images-idx3-ubyte", kMnist + "t10k-labels-idx1-ubyte");
  CHECK(test.size() == 1000);
  CHECK(test.dim() == 28 * 28);
  CHECK(test.class_count() == 10);
  const Dataset train = load_mnist_idx(kMnist + "train-images-idx3-ubyte", kMnist + "train-labels-idx1-ubyte");
  CHECK(train.size() == 4000);
  CHECK(train.features().minCoeff() == 0.0);
  CHECK(train.features().maxCoeff() == 1.0);
  std::set<int> seen(train.labels().begin(), train.labels().end());
  CHECK(seen.size() == 10);

  std::ifstream raw(kMnist + "t10k-images-idx3-ubyte", std::ios::binary);
  unsigned char header[16];
  raw.read(reinterpret_cast<char*>(header), 16);
  CHECK(header[2] == 0x08);
  CHECK(header[3] == 0x03);
  CHECK(header[11] == 28);
  CHECK(header[15] == 28);
}

TEST_CASE("pixel bytes scale to the unit interval") {
  const auto img = scratch("scale-images");
  const auto lab = scratch("scale-labels");
  write_bytes(img, idx_images(2, 1, 3, {0, 255, 51, 255, 0, 102}));
  write_bytes(lab, idx_labels(2, {3, 7}));
  const Dataset d = load_mnist_idx(img.string(), lab.string());
  CHECK(d.features()(0, 0) == 0.0);
  CHECK(d.features()(0, 1) == 1.0);
  CHECK(d.features()(0, 2) == doctest::Approx(0.2));
  CHECK(d.labels() == std::vector<int>{3, 7});
  CHECK(d.dim() == 3);
}

TEST_CASE("malformed IDX files are rejected with the offending path") {
  const auto img = scratch("bad-images");
  const auto lab = scratch("bad-labels");
  const std::vector<unsigned char> pixels(2 * 4, 9);

  SUBCASE("count mismatch") {
    write_bytes(img, idx_images(2, 2, 2, pixels));
    write_bytes(lab, idx_labels(3, {1, 2, 3}));
    const auto msg = ingestion_message(img, lab);
    CHECK(msg.find(lab.string()) != std::string::npos);
    CHECK(msg.find(img.string()) != std::string::npos);
  }
  SUBCASE("bad image magic") {
    write_bytes(img, idx_images(2, 2, 2, pixels, 0x801));
    write_bytes(lab, idx_labels(2, {1, 2}));
    CHECK(ingestion_message(img, lab).find(img.string()) != std::string::npos);
  }
  SUBCASE("bad label magic") {
    write_bytes(img, idx_images(2, 2, 2, pixels));
    write_bytes(lab, idx_labels(2, {1, 2}, 0x803));
    CHECK(ingestion_message(img, lab).find(lab.string()) != std::string::npos);
  }
  SUBCASE("truncated pixels") {
    write_bytes(img, idx_images(2, 2, 2, std::vector<unsigned char>(7, 9)));
    write_bytes(lab, idx_labels(2, {1, 2}));
    CHECK(ingestion_message(img, lab).find(img.string()) != std::string::npos);
  }
  SUBCASE("truncated header") {
    write_bytes(img, {0, 0, 8});
    write_bytes(lab, idx_labels(2, {1, 2}));
    CHECK(ingestion_message(img, lab).find(img.string()) != std::string::npos);
  }
  SUBCASE("missing file") {
    CHECK(ingestion_message(scratch("nope"), lab).find("nope") != std::string::npos);
  }
}

TEST_CASE("IDX round trip") {
  RowMatrixXd x(3, 4);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 4; ++j) x(i, j) = static_cast<double>((i * 4 + j) * 20) / 255.0;
  const Dataset d(x, {0, 9, 4}, 10, "small");
  const auto img = scratch("rt-images");
  const auto lab = scratch("rt-labels");
  write_idx(d, img.string(), lab.string(), 2, 2);
  CHECK(load_mnist_idx(img.string(), lab.string()) == d);
  CHECK_THROWS_AS(write_idx(d, img.string(), lab.string(), 3, 2), ConfigError);
}

TEST_CASE("synthetic gaussians") {
  SUBCASE("seeded and balanced") {
    const Dataset a = synth_gaussians(50, centers2(), 0.1, 3);
    const Dataset b = synth_gaussians(50, centers2(), 0.1, 3);
    CHECK(a == b);
    CHECK_FALSE(a == synth_gaussians(50, centers2(), 0.1, 4));
    CHECK(std::count(a.labels().begin(), a.labels().end(), 0) == 50);
    CHECK(std::count(a.labels().begin(), a.labels().end(), 1) == 50);
    CHECK(a.features().minCoeff() >= 0.0);
    CHECK(a.features().maxCoeff() <= 1.0);
  }
  SUBCASE("tiny sigma collapses onto the centers") {
    const Dataset d = synth_gaussians(10, centers2(), 1e-12, 5);
    for (Index i = 0; i < d.size(); ++i)
      CHECK((d.features().row(i) - centers2().row(d.label(i))).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("argument checks") {
    CHECK_THROWS_AS(synth_gaussians(10, centers2(), 0.0, 1), DomainError);
    CHECK_THROWS_AS(synth_gaussians(0, centers2(), 0.1, 1), DomainError);
  }
}

TEST_CASE("subsample") {
  const Dataset data = synth_gaussians(30, centers2(), 0.1, 6);
  SUBCASE("full size is the identity") {
    CHECK(subsample(data, data.size(), 9) == data);
  }
  SUBCASE("different seeds give different index sets") {
    CHECK(subsample_indices(60, 20, 1) != subsample_indices(60, 20, 2));
    CHECK(subsample_indices(60, 20, 1) == subsample_indices(60, 20, 1));
  }
  SUBCASE("sorted, distinct, in range") {
    const auto idx = subsample_indices(60, 25, 3);
    CHECK(idx.size() == 25);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    CHECK(idx.back() < 60);
  }
  SUBCASE("size checks") {
    CHECK_THROWS_AS(subsample(data, 61, 1), DomainError);
    CHECK_THROWS_AS(subsample(data, 0, 1), DomainError);
  }
  SUBCASE("class proportions survive on MNIST") {
    const Dataset train = load_mnist_idx(kMnist + "train-images-idx3-ubyte", kMnist + "train-labels-idx1-ubyte");
    const Dataset sub = subsample(train, 1000, 11);
    for (int c = 0; c < 10; ++c) {
      const double p = std::count(train.labels().begin(), train.labels().end(), c) / 4000.0;
      const double q = std::count(sub.labels().begin(), sub.labels().end(), c) / 1000.0;
      CHECK(std::abs(p - q) < 0.05);
    }
  }
}

TEST_CASE("minibatches") {
  const Dataset data = synth_gaussians(25, centers2(), 0.1, 7);
  SUBCASE("large batch holds everything once") {
    const auto chunks = minibatch_indices(50, 64, 1, 0);
    REQUIRE(chunks.size() == 1);
    std::set<std::size_t> s(chunks[0].begin(), chunks[0].end());
    CHECK(s.size() == 50);
  }
  SUBCASE("chunks partition the index set") {
    const auto chunks = minibatch_indices(50, 8, 2, 3);
    CHECK(chunks.size() == 7);
    CHECK(chunks.back().size() == 2);
    std::multiset<std::size_t> all;
    for (const auto& c : chunks) all.insert(c.begin(), c.end());
    CHECK(all.size() == 50);
    CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 50);
  }
  SUBCASE("seeded per epoch") {
    CHECK(minibatch_indices(50, 8, 2, 3) == minibatch_indices(50, 8, 2, 3));
    CHECK(minibatch_indices(50, 8, 2, 3) != minibatch_indices(50, 8, 2, 4));
    const auto a = minibatches(data, 8, 2, 3);
    const auto b = minibatches(data, 8, 2, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].inputs == b[k].inputs);
      CHECK(a[k].labels == b[k].labels);
    }
  }
  SUBCASE("batch size must be positive") {
    CHECK_THROWS_AS(minibatch_indices(50, 0, 1, 0), DomainError);
  }
}

TEST_CASE("CSV round trip") {
  const Dataset data = synth_gaussians(7, centers2(), 0.13, 8);
  const auto path = scratch("blobs.csv");
  save_dataset_csv(data, path.string());
  CHECK(load_dataset_csv(path.string(), 2) == data);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "label,x0,x1");

  write_bytes(path, {'l', 'a', 'b', 'e', 'l', ',', 'x', '0', '\n', '1', ',', '2', '\n'});
  CHECK_THROWS_AS(load_dataset_csv(path.string(), 2), IngestionError);
}
