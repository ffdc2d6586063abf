#pragma once

#include <vector>

#include "countlab/anchors.hpp"
#include "countlab/datamodel.hpp"

namespace countlab {

/// H' x W' x d feature grid (row-major, channel last).
struct FeatureMap {
  int rows = 0;
  int cols = 0;
  int dim = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(int rows_, int cols_, int dim_)
      : rows(rows_), cols(cols_), dim(dim_), values(static_cast<std::size_t>(rows_) * cols_ * dim_, 0.0) {}
  int locations() const { return rows * cols; }
  double* at(int u, int v) { return values.data() + (static_cast<std::size_t>(u) * cols + v) * dim; }
  const double* at(int u, int v) const { return values.data() + (static_cast<std::size_t>(u) * cols + v) * dim; }
};

/// H' x W' x m x (n+1) bin probabilities.
struct ProbabilityMap {
  int rows = 0;
  int cols = 0;
  int categories = 0;
  int bins = 0;
  std::vector<double> values;

  ProbabilityMap() = default;
  ProbabilityMap(int r, int c, int m, int b)
      : rows(r), cols(c), categories(m), bins(b), values(static_cast<std::size_t>(r) * c * m * b, 0.0) {}
  double& at(int u, int v, int i, int j) {
    return values[((static_cast<std::size_t>(u) * cols + v) * categories + i) * bins + j];
  }
  double at(int u, int v, int i, int j) const {
    return values[((static_cast<std::size_t>(u) * cols + v) * categories + i) * bins + j];
  }
};

/// H' x W' x m densities.
struct DensityMap {
  int rows = 0;
  int cols = 0;
  int categories = 0;
  std::vector<double> values;

  DensityMap() = default;
  DensityMap(int r, int c, int m) : rows(r), cols(c), categories(m), values(static_cast<std::size_t>(r) * c * m, 0.0) {}
  double& at(int u, int v, int i) { return values[(static_cast<std::size_t>(u) * cols + v) * categories + i]; }
  double at(int u, int v, int i) const { return values[(static_cast<std::size_t>(u) * cols + v) * categories + i]; }
  /// Single-category plane, row-major H' x W'.
  std::vector<double> plane(int i) const;
};

struct DensityBundle {
  ProbabilityMap probs;
  DensityMap density;
};

/// Softmax over bins of cos(F[u,v], A[i,j]) / temperature.
ProbabilityMap similarity_probs(const FeatureMap& features, const AnchorTensor& anchors, double temperature);

/// Gradient of a scalar through similarity_probs: given dL/dP returns dL/dF.
FeatureMap similarity_probs_backward(const FeatureMap& features, const AnchorTensor& anchors,
                                     double temperature, const ProbabilityMap& probs,
                                     const ProbabilityMap& grad_probs);

DensityMap expected_density(const ProbabilityMap& probs, const CountBinning& binning);

/// dL/dP contribution from dL/dD.
ProbabilityMap expected_density_backward(const DensityMap& grad_density, const CountBinning& binning, int bins);

DensityBundle density_head(const FeatureMap& features, const AnchorTensor& anchors, double temperature,
                           const CountBinning& binning);

std::vector<double> total_counts(const DensityMap& density);

struct BlockPeak {
  int u = 0;
  int v = 0;
  double value = 0.0;

  bool operator==(const BlockPeak&) const = default;
};

/// Strict 8-neighbourhood maxima above `threshold`, greedily thinned so that
/// survivors are at least `min_distance` apart (Chebyshev), strongest first.
std::vector<BlockPeak> extract_centroids(const DensityMap& density, int category, double threshold,
                                         int min_distance);

/// One-hot probability map at the target bins.
ProbabilityMap one_hot_probs(const BlockTargets& targets, int bins);

/// min(count_map, n) as densities.
DensityMap clipped_count_density(const BlockTargets& targets, const CountBinning& binning);

}  // namespace countlab
