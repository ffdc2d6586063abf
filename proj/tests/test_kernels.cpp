#include <doctest.h>

#include <cmath>

#include "countlab/kernels.hpp"
#include "countlab/serial/reference.hpp"
#include "support.hpp"

using namespace countlab;

namespace {

std::vector<double> normals(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return d;
}

}  // namespace

TEST_CASE("resize matches the serial reference") {
  Rng rng(1);
  for (auto [h, w, oh, ow] : {std::array{20, 30, 14, 14}, std::array{7, 9, 21, 18}, std::array{16, 16, 16, 16}}) {
    Image src(h, w);
    for (float& v : src.pixels()) v = static_cast<float>(rng.uniform());
    Image a(oh, ow), b(oh, ow);
    kernels::resize_bilinear(src, a);
    serial::resize_bilinear(src, b);
    CHECK(a == b);
    if (h == oh && w == ow) CHECK(a == src);
  }
  Image flat(10, 12, 0.25f), out(5, 7);
  kernels::resize_bilinear(flat, out);
  for (float v : out.pixels()) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("similarity softmax matches the serial reference") {
  Rng rng(2);
  const int locations = 37, dim = 16, groups = 2, bins = 5;
  auto features = normals(locations * dim, rng);
  std::fill(features.begin(), features.begin() + dim, 0.0);
  auto anchors = normals(groups * bins * dim, rng);
  for (int a = 0; a < groups * bins; ++a) {
    double n = 0.0;
    for (int d = 0; d < dim; ++d) n += anchors[a * dim + d] * anchors[a * dim + d];
    for (int d = 0; d < dim; ++d) anchors[a * dim + d] /= std::sqrt(n);
  }
  const std::size_t out = locations * groups * bins;
  std::vector<double> c1(out), p1(out), c2(out), p2(out);
  kernels::similarity_softmax(features, anchors, locations, dim, groups, bins, 0.07, c1, p1);
  serial::similarity_softmax(features, anchors, locations, dim, groups, bins, 0.07, c2, p2);
  CHECK(max_diff(c1, c2) < 1e-15);
  CHECK(max_diff(p1, p2) < 1e-15);
  for (int j = 0; j < groups * bins; ++j) CHECK(c1[j] == 0.0);
  for (int j = 0; j < bins; ++j) CHECK(p1[j] == doctest::Approx(0.2));
}

TEST_CASE("expected density matches the serial reference") {
  Rng rng(3);
  const int locations = 50, groups = 3, bins = 5;
  std::vector<double> probs(locations * groups * bins);
  for (double& x : probs) x = rng.uniform();
  const std::vector<double> reps{0, 1, 2, 3, 4};
  std::vector<double> a(locations * groups), b(locations * groups);
  kernels::expected_density(probs, reps, locations, groups, bins, a);
  serial::expected_density(probs, reps, locations, groups, bins, b);
  CHECK(max_diff(a, b) == 0.0);
}

TEST_CASE("soft c-transform matches the serial reference") {
  Rng rng(4);
  const int rows = 36, cols = 36;
  std::vector<double> cost(rows * cols);
  for (double& x : cost) x = rng.uniform(0, 50);
  const auto pot = normals(cols, rng, 3.0);
  std::vector<double> logw(cols);
  for (double& x : logw) x = std::log(rng.uniform(1e-12, 1.0));
  for (double eps : {0.05, 0.5, 5.0}) {
    std::vector<double> a(rows), b(rows);
    kernels::soft_c_transform(cost, rows, cols, pot, logw, eps, a);
    serial::soft_c_transform(cost, rows, cols, pot, logw, eps, b);
    CHECK(max_diff(a, b) < 1e-12);
    // Tends to the hard c-transform as eps shrinks.
    for (int i = 0; i < rows; ++i) {
      double hard = 1e300;
      for (int j = 0; j < cols; ++j) hard = std::min(hard, cost[i * cols + j] - pot[j]);
      CHECK(a[i] <= hard + eps * 40);
    }
  }
}
