#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "countlab/datamodel.hpp"

namespace countlab {

/// Frozen text encoder: string -> d-vector, deterministic.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  virtual std::string identity() const = 0;
  virtual std::vector<double> encode(std::string_view text) const = 0;
};

/// Reference encoder: d standard normals from a counter-based generator keyed
/// by the 64-bit hash of the prompt, normalized to unit length.
class HashTextEncoder final : public TextEncoder {
 public:
  explicit HashTextEncoder(int dim);
  int dim() const override { return dim_; }
  std::string identity() const override { return "hash-normal-" + std::to_string(dim_); }
  std::vector<double> encode(std::string_view text) const override;

 private:
  int dim_;
};

/// Looks prompts up in a table of externally computed embeddings, e.g. from
/// a pretrained CLIP text tower, loaded from {"dim": d, "embeddings": {prompt: [...]}}.
class TableTextEncoder final : public TextEncoder {
 public:
  TableTextEncoder(int dim, std::map<std::string, std::vector<double>> table);
  static TableTextEncoder from_json_file(const std::string& path);

  int dim() const override { return dim_; }
  std::string identity() const override { return "table-" + std::to_string(dim_); }
  std::vector<double> encode(std::string_view text) const override;

 private:
  int dim_;
  std::map<std::string, std::vector<double>, std::less<>> table_;
};

/// Prompt for (category, bin) following the count-bin template.
std::string render_prompt(const std::string& category, int bin, int n);

/// m x (n+1) x d unit-norm anchors, row-major.
struct AnchorTensor {
  int categories = 0;
  int bins = 0;
  int dim = 0;
  std::vector<double> values;
  std::vector<std::string> prompts;  // categories x bins

  const double* anchor(int i, int j) const {
    return values.data() + (static_cast<std::size_t>(i) * bins + j) * dim;
  }
};

AnchorTensor build_anchor_tensor(const CategorySet& categories, const CountBinning& binning,
                                 const TextEncoder& encoder);

/// Class-agnostic anchors ("cell") used for teacher ranking.
AnchorTensor build_rats_anchors(const CountBinning& binning, const TextEncoder& encoder);

}  // namespace countlab
