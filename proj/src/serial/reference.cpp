#include "countlab/serial/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace countlab::serial {

namespace {

double source_coord(int i, int src_len, int dst_len) {
  return std::max(0.0, (i + 0.5) * static_cast<double>(src_len) / dst_len - 0.5);
}

}  // namespace

void resize_bilinear(const Image& src, Image& dst) {
  for (int y = 0; y < dst.height(); ++y) {
    const double sy = source_coord(y, src.height(), dst.height());
    const int y0 = std::min(static_cast<int>(sy), src.height() - 1);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double fy = sy - y0;
    for (int x = 0; x < dst.width(); ++x) {
      const double sx = source_coord(x, src.width(), dst.width());
      const int x0 = std::min(static_cast<int>(sx), src.width() - 1);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double fx = sx - x0;
      for (int c = 0; c < Image::kChannels; ++c) {
        const double top = (1.0 - fx) * src.at(y0, x0, c) + fx * src.at(y0, x1, c);
        const double bottom = (1.0 - fx) * src.at(y1, x0, c) + fx * src.at(y1, x1, c);
        dst.at(y, x, c) = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
}

void similarity_softmax(std::span<const double> features, std::span<const double> anchors,
                        int locations, int dim, int groups, int bins, double temperature,
                        std::span<double> cosines, std::span<double> probs) {
  const int rows = groups * bins;
  for (int l = 0; l < locations; ++l) {
    double norm2 = 0.0;
    for (int k = 0; k < dim; ++k) norm2 += features[l * dim + k] * features[l * dim + k];
    const double norm = std::sqrt(norm2);
    for (int r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int k = 0; k < dim; ++k) dot += features[l * dim + k] * anchors[r * dim + k];
      cosines[l * rows + r] = norm > 0.0 ? dot / norm : 0.0;
    }
  }
  for (int l = 0; l < locations; ++l) {
    for (int g = 0; g < groups; ++g) {
      const int base = l * rows + g * bins;
      double zmax = cosines[base];
      for (int j = 1; j < bins; ++j) zmax = std::max(zmax, cosines[base + j]);
      double sum = 0.0;
      for (int j = 0; j < bins; ++j) sum += std::exp((cosines[base + j] - zmax) / temperature);
      for (int j = 0; j < bins; ++j) probs[base + j] = std::exp((cosines[base + j] - zmax) / temperature) / sum;
    }
  }
}

void expected_density(std::span<const double> probs, std::span<const double> representatives,
                      int locations, int groups, int bins, std::span<double> density) {
  for (int l = 0; l < locations; ++l) {
    for (int g = 0; g < groups; ++g) {
      double acc = 0.0;
      for (int j = 0; j < bins; ++j) acc += probs[(l * groups + g) * bins + j] * representatives[j];
      density[l * groups + g] = acc;
    }
  }
}

void soft_c_transform(std::span<const double> cost, int rows, int cols,
                      std::span<const double> potential, std::span<const double> log_weights,
                      double eps, std::span<double> out) {
  std::vector<double> z(static_cast<std::size_t>(cols));
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) z[j] = (potential[j] - cost[i * cols + j]) / eps + log_weights[j];
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    out[i] = -eps * (zmax + std::log(sum));
  }
}

}  // namespace countlab::serial
