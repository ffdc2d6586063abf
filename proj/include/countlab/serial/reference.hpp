#pragma once

// Straightforward single-threaded versions of the kernels in kernels.hpp.

#include <span>

#include "countlab/image.hpp"

namespace countlab::serial {

void resize_bilinear(const Image& src, Image& dst);

void similarity_softmax(std::span<const double> features, std::span<const double> anchors,
                        int locations, int dim, int groups, int bins, double temperature,
                        std::span<double> cosines, std::span<double> probs);

void expected_density(std::span<const double> probs, std::span<const double> representatives,
                      int locations, int groups, int bins, std::span<double> density);

void soft_c_transform(std::span<const double> cost, int rows, int cols,
                      std::span<const double> potential, std::span<const double> log_weights,
                      double eps, std::span<double> out);

}  // namespace countlab::serial
