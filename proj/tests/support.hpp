#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "countlab/datamodel.hpp"
#include "countlab/densityhead.hpp"
#include "countlab/rng.hpp"

namespace testutil {

inline const nlohmann::json& oracles() {
  static const nlohmann::json doc = [] {
    std::ifstream in(std::string(COUNTLAB_TEST_DATA) + "/oracles.json");
    if (!in) throw std::runtime_error("cannot open oracles.json");
    return nlohmann::json::parse(in);
  }();
  return doc;
}

inline std::vector<double> to_vector(const nlohmann::json& j) { return j.get<std::vector<double>>(); }

/// Central differences of f at x, one coordinate at a time.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double keep = x[k];
    x[k] = keep + h;
    const double up = f(x);
    x[k] = keep - h;
    const double down = f(x);
    x[k] = keep;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

/// |a - b| / max(|a|, |b|) in the Euclidean norm; 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale < 1e-300 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("countlab-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Random probability map: softmax of normal logits over the bin axis.
inline countlab::ProbabilityMap random_probs(int rows, int cols, int m, int bins, countlab::Rng& rng,
                                             double spread = 1.0) {
  countlab::ProbabilityMap p(rows, cols, m, bins);
  for (std::size_t base = 0; base < p.values.size(); base += bins) {
    double sum = 0.0;
    for (int j = 0; j < bins; ++j) {
      p.values[base + j] = std::exp(spread * rng.normal());
      sum += p.values[base + j];
    }
    for (int j = 0; j < bins; ++j) p.values[base + j] /= sum;
  }
  return p;
}

inline std::vector<countlab::PointAnnotation> random_points(int count, int height, int width, int m,
                                                            countlab::Rng& rng) {
  std::vector<countlab::PointAnnotation> pts;
  for (int i = 0; i < count; ++i) {
    pts.push_back({static_cast<double>(rng.uniform_int(0, width - 1)), static_cast<double>(rng.uniform_int(0, height - 1)),
                   static_cast<int>(rng.uniform_int(0, m - 1))});
  }
  return pts;
}

}  // namespace testutil
