#include "countlab/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "countlab/error.hpp"

namespace countlab {

static_assert(std::endian::native == std::endian::little, "tensor files are written on little-endian hosts");

namespace {

constexpr char kMagic[8] = {'C', 'N', 'T', 'L', 'A', 'B', '0', '1'};

int64_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  fail("tensor file: unknown dtype '" + dtype + "'");
}

int64_t product(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t s : shape) {
    require(s >= 0, "tensor file: negative dimension");
    n *= s;
  }
  return n;
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  require(pos + sizeof(T) <= in.size(), "tensor file: truncated header");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

int64_t Tensor::elements() const { return product(shape); }

std::vector<float> Tensor::as_f32() const {
  require(dtype == "f32", "tensor " + name + " is not f32");
  std::vector<float> out(static_cast<std::size_t>(elements()));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::vector<double> Tensor::as_f64() const {
  require(dtype == "f64", "tensor " + name + " is not f64");
  std::vector<double> out(static_cast<std::size_t>(elements()));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

void TensorFile::add_f32(const std::string& name, std::vector<int64_t> shape, const float* data) {
  require(!has(name), "tensor file: duplicate tensor " + name);
  const auto n = static_cast<std::size_t>(product(shape));
  tensors.push_back({name, "f32", std::move(shape), std::string(reinterpret_cast<const char*>(data), n * 4)});
}

void TensorFile::add_f64(const std::string& name, std::vector<int64_t> shape, const double* data) {
  require(!has(name), "tensor file: duplicate tensor " + name);
  const auto n = static_cast<std::size_t>(product(shape));
  tensors.push_back({name, "f64", std::move(shape), std::string(reinterpret_cast<const char*>(data), n * 8)});
}

bool TensorFile::has(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

const Tensor& TensorFile::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  fail("tensor file: no tensor named " + name);
}

std::string TensorFile::encode() const {
  nlohmann::ordered_json manifest;
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::ordered_json::array();
  int64_t offset = 0;
  for (const auto& t : tensors) {
    nlohmann::ordered_json e;
    e["name"] = t.name;
    e["dtype"] = t.dtype;
    e["shape"] = t.shape;
    e["offset"] = offset;
    manifest["tensors"].push_back(e);
    offset += static_cast<int64_t>(t.bytes.size());
  }
  const std::string text = manifest.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<uint32_t>(out, kVersion);
  put<uint64_t>(out, text.size());
  out += text;
  for (const auto& t : tensors) out += t.bytes;
  return out;
}

TensorFile TensorFile::decode(const std::string& bytes) {
  require(bytes.size() >= sizeof(kMagic) && std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0,
          "tensor file: bad magic");
  std::size_t pos = sizeof(kMagic);
  const auto version = take<uint32_t>(bytes, pos);
  require(version == kVersion, "tensor file: unsupported version " + std::to_string(version));
  const auto length = take<uint64_t>(bytes, pos);
  require(pos + length <= bytes.size(), "tensor file: truncated manifest");
  const auto manifest = nlohmann::ordered_json::parse(bytes.substr(pos, length));
  pos += length;
  TensorFile file;
  file.meta = manifest.at("meta");
  for (const auto& e : manifest.at("tensors")) {
    Tensor t;
    t.name = e.at("name").get<std::string>();
    t.dtype = e.at("dtype").get<std::string>();
    t.shape = e.at("shape").get<std::vector<int64_t>>();
    const auto offset = e.at("offset").get<int64_t>();
    const auto size = static_cast<std::size_t>(t.elements() * dtype_size(t.dtype));
    require(offset >= 0 && pos + offset + size <= bytes.size(), "tensor file: payload out of range for " + t.name);
    t.bytes = bytes.substr(pos + offset, size);
    file.tensors.push_back(std::move(t));
  }
  return file;
}

void TensorFile::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write " + path.string());
  const auto bytes = encode();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TensorFile TensorFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return decode(buffer.str());
}

void add_params(TensorFile& file, const nn::ConstParamList& params) {
  for (const nn::Param* p : params) {
    file.add_f32(p->name, {p->value.rows(), p->value.cols()}, p->value.data());
  }
}

void load_params(const TensorFile& file, const nn::ParamList& params) {
  for (nn::Param* p : params) {
    const Tensor& t = file.get(p->name);
    require(t.shape == std::vector<int64_t>{p->value.rows(), p->value.cols()},
            "checkpoint: shape mismatch for " + p->name);
    const auto values = t.as_f32();
    std::memcpy(p->value.data(), values.data(), values.size() * sizeof(float));
  }
}

}  // namespace countlab
