#include "countlab/anchors.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "countlab/error.hpp"
#include "countlab/rng.hpp"

namespace countlab {

HashTextEncoder::HashTextEncoder(int dim) : dim_(dim) {
  require(dim >= 1, "HashTextEncoder: dim must be positive");
}

std::vector<double> HashTextEncoder::encode(std::string_view text) const {
  const uint64_t key = hash64(text);
  std::vector<double> v(static_cast<std::size_t>(dim_));
  double norm2 = 0.0;
  for (int k = 0; k < dim_; ++k) {
    v[static_cast<std::size_t>(k)] = counter_normal(key, static_cast<uint64_t>(k));
    norm2 += v[static_cast<std::size_t>(k)] * v[static_cast<std::size_t>(k)];
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

TableTextEncoder::TableTextEncoder(int dim, std::map<std::string, std::vector<double>> table)
    : dim_(dim), table_(table.begin(), table.end()) {
  for (const auto& [prompt, vec] : table_) {
    require(static_cast<int>(vec.size()) == dim_, "TableTextEncoder: wrong width for '" + prompt + "'");
  }
}

TableTextEncoder TableTextEncoder::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("TableTextEncoder: cannot open '" + path + "'");
  const auto doc = nlohmann::json::parse(in);
  return TableTextEncoder(doc.at("dim").get<int>(),
                          doc.at("embeddings").get<std::map<std::string, std::vector<double>>>());
}

std::vector<double> TableTextEncoder::encode(std::string_view text) const {
  auto it = table_.find(text);
  if (it == table_.end()) fail("TableTextEncoder: no embedding for prompt '" + std::string(text) + "'");
  return it->second;
}

std::string render_prompt(const std::string& category, int bin, int n) {
  require(!category.empty(), "render_prompt: empty category");
  require(bin >= 0 && bin <= n, "render_prompt: bin outside the binning");
  if (bin == n) return "There are more than " + std::to_string(n) + " " + category + "s";
  if (bin == 0) return "There is no " + category;
  if (bin == 1) return "There is 1 " + category;
  return "There are " + std::to_string(bin) + " " + category + "s";
}

AnchorTensor build_anchor_tensor(const CategorySet& categories, const CountBinning& binning,
                                 const TextEncoder& encoder) {
  require(encoder.dim() >= 8, "build_anchor_tensor: encoder dimension must be >= 8");
  AnchorTensor out;
  out.categories = categories.size();
  out.bins = binning.num_bins();
  out.dim = encoder.dim();
  out.values.reserve(static_cast<std::size_t>(out.categories) * out.bins * out.dim);
  std::set<std::string> seen;
  for (int i = 0; i < out.categories; ++i) {
    for (int j = 0; j < out.bins; ++j) {
      std::string prompt = render_prompt(categories.name(i), j, binning.n());
      require(seen.insert(prompt).second, "build_anchor_tensor: duplicate prompt '" + prompt + "'");
      auto v = encoder.encode(prompt);
      require(static_cast<int>(v.size()) == out.dim, "build_anchor_tensor: encoder returned wrong width");
      double norm2 = 0.0;
      for (double x : v) norm2 += x * x;
      if (!(norm2 > 0.0) || !std::isfinite(norm2)) {
        fail("build_anchor_tensor: encoder returned a zero vector for '" + prompt + "'");
      }
      const double inv = 1.0 / std::sqrt(norm2);
      for (double x : v) out.values.push_back(x * inv);
      out.prompts.push_back(std::move(prompt));
    }
  }
  return out;
}

AnchorTensor build_rats_anchors(const CountBinning& binning, const TextEncoder& encoder) {
  return build_anchor_tensor(CategorySet({"cell"}), binning, encoder);
}

}  // namespace countlab
