#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "countlab/nn.hpp"

namespace countlab {

/// Named little-endian tensor. Payload bytes are kept as they will be written.
struct Tensor {
  std::string name;
  std::string dtype;  // "f32" or "f64"
  std::vector<int64_t> shape;
  std::string bytes;

  int64_t elements() const;
  std::vector<float> as_f32() const;
  std::vector<double> as_f64() const;
};

/// File layout: 8-byte magic "CNTLAB01", uint32 version, uint64 manifest
/// length, manifest JSON, then the payloads back to back.
struct TensorFile {
  static constexpr uint32_t kVersion = 1;

  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::vector<Tensor> tensors;

  void add_f32(const std::string& name, std::vector<int64_t> shape, const float* data);
  void add_f64(const std::string& name, std::vector<int64_t> shape, const double* data);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;

  std::string encode() const;
  static TensorFile decode(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static TensorFile load(const std::filesystem::path& path);
};

/// Stores every parameter value under its name.
void add_params(TensorFile& file, const nn::ConstParamList& params);
/// Restores parameter values; names and shapes must match.
void load_params(const TensorFile& file, const nn::ParamList& params);

}  // namespace countlab
