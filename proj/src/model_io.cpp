#include "marat/mlp.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace marat {
namespace {

constexpr char kMagic[8] = {'M', 'A', 'R', 'A', 'T', 'M', 'L', 'P'};

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw IngestionError("model file truncated");
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const Model& model) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kModelFileVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.depth()));
  for (int w : model.widths()) put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  for (const auto& layer : model.layers()) {
    for (Index r = 0; r < layer.weight.rows(); ++r)
      for (Index c = 0; c < layer.weight.cols(); ++c) put<double>(out, layer.weight(r, c));
    for (Index r = 0; r < layer.bias.size(); ++r) put<double>(out, layer.bias(r));
  }
  return out;
}

Model deserialize_model(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw IngestionError("not a model file (bad magic)");
  Reader in(bytes);
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) in.get<char>();
  const auto version = in.get<std::uint32_t>();
  if (version != kModelFileVersion) throw IngestionError("unsupported model file version " + std::to_string(version));
  const auto depth = in.get<std::uint32_t>();
  if (depth == 0 || depth > 1024) throw IngestionError("implausible layer count in model file");
  std::vector<std::uint32_t> widths(depth + 1);
  for (auto& w : widths) {
    w = in.get<std::uint32_t>();
    if (w == 0 || w > (1u << 24)) throw IngestionError("implausible layer width in model file");
  }
  Parameters<double> layers;
  for (std::uint32_t l = 0; l < depth; ++l) {
    DenseLayer<double> layer{ColMatrix<double>(widths[l + 1], widths[l]), VectorXd(widths[l + 1])};
    for (Index r = 0; r < layer.weight.rows(); ++r)
      for (Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = in.get<double>();
    for (Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = in.get<double>();
    layers.push_back(std::move(layer));
  }
  if (!in.exhausted()) throw IngestionError("trailing bytes after model parameters");
  return Model(std::move(layers));
}

void save_model(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write model file " + path);
  const std::string bytes = serialize_model(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing model file " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open model file " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_model(bytes);
  } catch (const IngestionError& e) {
    throw IngestionError(path + ": " + e.what());
  }
}

}  // namespace marat
