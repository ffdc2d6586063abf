#pragma once

// Data-parallel inner loops. Every kernel writes each output element from
// exactly one thread, in a fixed order, so results do not depend on the
// thread count. Plain serial versions live in countlab::serial
// (serial/reference.hpp) and are used as test oracles and benchmark baselines.

#include <span>

#include "countlab/image.hpp"

namespace countlab::kernels {

/// Bilinear resample of `src` into `dst` (pixel-centre alignment, edge clamp).
void resize_bilinear(const Image& src, Image& dst);

/// For each of `locations` feature vectors (length `dim`), cosine similarity
/// against `groups * bins` unit anchors, then a softmax over bins within each
/// group with logits cos / temperature. A zero feature vector has cosine 0.
/// cosines and probs are locations x groups x bins.
void similarity_softmax(std::span<const double> features, std::span<const double> anchors,
                        int locations, int dim, int groups, int bins, double temperature,
                        std::span<double> cosines, std::span<double> probs);

/// density[l, g] = sum_j probs[l, g, j] * representatives[j]
void expected_density(std::span<const double> probs, std::span<const double> representatives,
                      int locations, int groups, int bins, std::span<double> density);

/// Soft c-transform used by log-domain Sinkhorn:
///   out[i] = -eps * log sum_j exp((potential[j] - cost[i, j]) / eps + log_weights[j])
/// cost is rows x cols, row-major.
void soft_c_transform(std::span<const double> cost, int rows, int cols,
                      std::span<const double> potential, std::span<const double> log_weights,
                      double eps, std::span<double> out);

}  // namespace countlab::kernels
