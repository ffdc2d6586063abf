#include "countlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "countlab/error.hpp"

namespace countlab::kernels {

namespace {

struct Tap {
  int lo, hi;
  double frac;
};

std::vector<Tap> taps(int src_len, int dst_len) {
  std::vector<Tap> out(static_cast<std::size_t>(dst_len));
  for (int i = 0; i < dst_len; ++i) {
    const double s = std::max(0.0, (i + 0.5) * static_cast<double>(src_len) / dst_len - 0.5);
    const int lo = std::min(static_cast<int>(s), src_len - 1);
    out[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, src_len - 1), s - lo};
  }
  return out;
}

}  // namespace

void resize_bilinear(const Image& src, Image& dst) {
  require(!src.empty() && !dst.empty(), "resize_bilinear: empty image");
  const auto ty = taps(src.height(), dst.height());
  const auto tx = taps(src.width(), dst.width());
  const int h = dst.height();
  const int w = dst.width();
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < w; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < Image::kChannels; ++c) {
        const double top = (1.0 - b.frac) * src.at(a.lo, b.lo, c) + b.frac * src.at(a.lo, b.hi, c);
        const double bottom = (1.0 - b.frac) * src.at(a.hi, b.lo, c) + b.frac * src.at(a.hi, b.hi, c);
        dst.at(y, x, c) = static_cast<float>((1.0 - a.frac) * top + a.frac * bottom);
      }
    }
  }
}

void similarity_softmax(std::span<const double> features, std::span<const double> anchors,
                        int locations, int dim, int groups, int bins, double temperature,
                        std::span<double> cosines, std::span<double> probs) {
  const int rows = groups * bins;
  require(features.size() == static_cast<std::size_t>(locations) * dim, "similarity_softmax: feature size");
  require(anchors.size() == static_cast<std::size_t>(rows) * dim, "similarity_softmax: anchor size");
  require(cosines.size() == static_cast<std::size_t>(locations) * rows &&
              probs.size() == cosines.size(),
          "similarity_softmax: output size");
  const double inv_t = 1.0 / temperature;
#pragma omp parallel for schedule(static)
  for (int l = 0; l < locations; ++l) {
    const double* f = features.data() + static_cast<std::size_t>(l) * dim;
    double norm2 = 0.0;
    for (int k = 0; k < dim; ++k) norm2 += f[k] * f[k];
    const double inv_norm = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
    double* cos = cosines.data() + static_cast<std::size_t>(l) * rows;
    double* p = probs.data() + static_cast<std::size_t>(l) * rows;
    for (int r = 0; r < rows; ++r) {
      const double* a = anchors.data() + static_cast<std::size_t>(r) * dim;
      double dot = 0.0;
      for (int k = 0; k < dim; ++k) dot += f[k] * a[k];
      cos[r] = dot * inv_norm;
    }
    for (int g = 0; g < groups; ++g) {
      const double* z = cos + g * bins;
      double* q = p + g * bins;
      double zmax = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < bins; ++j) zmax = std::max(zmax, z[j]);
      double sum = 0.0;
      for (int j = 0; j < bins; ++j) {
        q[j] = std::exp((z[j] - zmax) * inv_t);
        sum += q[j];
      }
      for (int j = 0; j < bins; ++j) q[j] /= sum;
    }
  }
}

void expected_density(std::span<const double> probs, std::span<const double> representatives,
                      int locations, int groups, int bins, std::span<double> density) {
  require(probs.size() == static_cast<std::size_t>(locations) * groups * bins, "expected_density: prob size");
  require(density.size() == static_cast<std::size_t>(locations) * groups, "expected_density: output size");
  const int cells = locations * groups;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < cells; ++c) {
    const double* p = probs.data() + static_cast<std::size_t>(c) * bins;
    double acc = 0.0;
    for (int j = 0; j < bins; ++j) acc += p[j] * representatives[static_cast<std::size_t>(j)];
    density[static_cast<std::size_t>(c)] = acc;
  }
}

void soft_c_transform(std::span<const double> cost, int rows, int cols,
                      std::span<const double> potential, std::span<const double> log_weights,
                      double eps, std::span<double> out) {
  require(cost.size() == static_cast<std::size_t>(rows) * cols, "soft_c_transform: cost size");
  const double inv_eps = 1.0 / eps;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < rows; ++i) {
    const double* c = cost.data() + static_cast<std::size_t>(i) * cols;
    double zmax = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j) {
      zmax = std::max(zmax, (potential[static_cast<std::size_t>(j)] - c[j]) * inv_eps + log_weights[static_cast<std::size_t>(j)]);
    }
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      sum += std::exp((potential[static_cast<std::size_t>(j)] - c[j]) * inv_eps + log_weights[static_cast<std::size_t>(j)] - zmax);
    }
    out[static_cast<std::size_t>(i)] = -eps * (zmax + std::log(sum));
  }
}

}  // namespace countlab::kernels
