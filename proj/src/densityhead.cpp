#include "countlab/densityhead.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "countlab/error.hpp"
#include "countlab/kernels.hpp"

namespace countlab {

std::vector<double> DensityMap::plane(int i) const {
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  for (int u = 0; u < rows; ++u) {
    for (int v = 0; v < cols; ++v) out[static_cast<std::size_t>(u) * cols + v] = at(u, v, i);
  }
  return out;
}

ProbabilityMap similarity_probs(const FeatureMap& features, const AnchorTensor& anchors, double temperature) {
  require(features.dim == anchors.dim, "similarity_probs: feature width does not match anchor width");
  require(temperature > 0.0, "similarity_probs: temperature must be positive");
  ProbabilityMap probs(features.rows, features.cols, anchors.categories, anchors.bins);
  std::vector<double> cosines(probs.values.size());
  kernels::similarity_softmax(features.values, anchors.values, features.locations(), features.dim,
                              anchors.categories, anchors.bins, temperature, cosines, probs.values);
  return probs;
}

FeatureMap similarity_probs_backward(const FeatureMap& features, const AnchorTensor& anchors,
                                     double temperature, const ProbabilityMap& probs,
                                     const ProbabilityMap& grad_probs) {
  FeatureMap grad(features.rows, features.cols, features.dim);
  const int d = features.dim;
  const int m = anchors.categories;
  const int bins = anchors.bins;
  std::vector<double> dz(static_cast<std::size_t>(bins));
  for (int u = 0; u < features.rows; ++u) {
    for (int v = 0; v < features.cols; ++v) {
      const double* f = features.at(u, v);
      double norm2 = 0.0;
      for (int k = 0; k < d; ++k) norm2 += f[k] * f[k];
      // Cosine is pinned to 0 at a zero feature; treat it as locally constant.
      if (norm2 == 0.0) continue;
      const double norm = std::sqrt(norm2);
      double* g = grad.at(u, v);
      for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < bins; ++j) mean += probs.at(u, v, i, j) * grad_probs.at(u, v, i, j);
        for (int j = 0; j < bins; ++j) {
          dz[static_cast<std::size_t>(j)] = probs.at(u, v, i, j) * (grad_probs.at(u, v, i, j) - mean) / temperature;
        }
        for (int j = 0; j < bins; ++j) {
          const double* a = anchors.anchor(i, j);
          double dot = 0.0;
          for (int k = 0; k < d; ++k) dot += f[k] * a[k];
          // d cos / d f = a/|f| - (f.a) f / |f|^3
          const double s = dz[static_cast<std::size_t>(j)];
          const double c1 = s / norm;
          const double c2 = s * dot / (norm2 * norm);
          for (int k = 0; k < d; ++k) g[k] += c1 * a[k] - c2 * f[k];
        }
      }
    }
  }
  return grad;
}

DensityMap expected_density(const ProbabilityMap& probs, const CountBinning& binning) {
  require(probs.bins == binning.num_bins(), "expected_density: bin count mismatch");
  DensityMap density(probs.rows, probs.cols, probs.categories);
  std::vector<double> reps(static_cast<std::size_t>(probs.bins));
  for (int j = 0; j < probs.bins; ++j) reps[static_cast<std::size_t>(j)] = binning.representative(j);
  kernels::expected_density(probs.values, reps, probs.rows * probs.cols, probs.categories, probs.bins,
                            density.values);
  return density;
}

ProbabilityMap expected_density_backward(const DensityMap& grad_density, const CountBinning& binning, int bins) {
  ProbabilityMap grad(grad_density.rows, grad_density.cols, grad_density.categories, bins);
  for (std::size_t c = 0; c < grad_density.values.size(); ++c) {
    for (int j = 0; j < bins; ++j) {
      grad.values[c * static_cast<std::size_t>(bins) + static_cast<std::size_t>(j)] =
          grad_density.values[c] * binning.representative(j);
    }
  }
  return grad;
}

DensityBundle density_head(const FeatureMap& features, const AnchorTensor& anchors, double temperature,
                           const CountBinning& binning) {
  DensityBundle out;
  out.probs = similarity_probs(features, anchors, temperature);
  out.density = expected_density(out.probs, binning);
  return out;
}

std::vector<double> total_counts(const DensityMap& density) {
  std::vector<double> out(static_cast<std::size_t>(density.categories), 0.0);
  for (std::size_t c = 0; c < density.values.size(); ++c) out[c % static_cast<std::size_t>(density.categories)] += density.values[c];
  return out;
}

std::vector<BlockPeak> extract_centroids(const DensityMap& density, int category, double threshold,
                                         int min_distance) {
  require(category >= 0 && category < density.categories, "extract_centroids: category out of range");
  require(threshold >= 0.0, "extract_centroids: threshold must be >= 0");
  require(min_distance >= 1, "extract_centroids: min_distance must be >= 1");
  std::vector<BlockPeak> candidates;
  for (int u = 0; u < density.rows; ++u) {
    for (int v = 0; v < density.cols; ++v) {
      const double value = density.at(u, v, category);
      if (!(value > threshold)) continue;
      bool strict = true;
      for (int du = -1; du <= 1 && strict; ++du) {
        for (int dv = -1; dv <= 1; ++dv) {
          if (du == 0 && dv == 0) continue;
          const int uu = u + du, vv = v + dv;
          if (uu < 0 || vv < 0 || uu >= density.rows || vv >= density.cols) continue;
          if (density.at(uu, vv, category) >= value) {
            strict = false;
            break;
          }
        }
      }
      if (strict) candidates.push_back({u, v, value});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const BlockPeak& a, const BlockPeak& b) { return a.value > b.value; });
  std::vector<BlockPeak> kept;
  for (const auto& c : candidates) {
    const bool clear = std::all_of(kept.begin(), kept.end(), [&](const BlockPeak& k) {
      return std::max(std::abs(k.u - c.u), std::abs(k.v - c.v)) >= min_distance;
    });
    if (clear) kept.push_back(c);
  }
  return kept;
}

ProbabilityMap one_hot_probs(const BlockTargets& targets, int bins) {
  ProbabilityMap probs(targets.rows(), targets.cols(), targets.categories(), bins);
  for (int u = 0; u < targets.rows(); ++u) {
    for (int v = 0; v < targets.cols(); ++v) {
      for (int i = 0; i < targets.categories(); ++i) probs.at(u, v, i, targets.class_index(u, v, i)) = 1.0;
    }
  }
  return probs;
}

DensityMap clipped_count_density(const BlockTargets& targets, const CountBinning& binning) {
  DensityMap density(targets.rows(), targets.cols(), targets.categories());
  for (int u = 0; u < targets.rows(); ++u) {
    for (int v = 0; v < targets.cols(); ++v) {
      for (int i = 0; i < targets.categories(); ++i) {
        density.at(u, v, i) = binning.representative(binning.bin_of(targets.count(u, v, i)));
      }
    }
  }
  return density;
}

}  // namespace countlab
