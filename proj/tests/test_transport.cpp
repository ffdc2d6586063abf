#include <doctest.h>

#include <cmath>

#include "countlab/error.hpp"
#include "countlab/transport.hpp"
#include "criteria.hpp"
#include "support.hpp"

using namespace countlab;

TEST_CASE("grid cost") {
  const auto c = grid_cost(2, 3);
  CHECK(c.rows == 6);
  CHECK(c(0, 0) == 0.0);
  CHECK(c(0, 2) == 4.0);
  CHECK(c(0, 5) == 5.0);
  CHECK(c(4, 1) == 1.0);
}

TEST_CASE("exact solver: closed-form cases") {
  const auto c = grid_cost(1, 4);
  const std::vector<double> a{1, 0, 0, 0}, b{0, 0, 0, 1};
  CHECK(exact_transport_cost(a, b, c) == doctest::Approx(9.0).epsilon(1e-15));
  CHECK(exact_transport_cost(a, a, c) == 0.0);
  // Half the mass moves two blocks.
  const auto c3 = grid_cost(1, 3);
  const std::vector<double> split{0.5, 0, 0.5}, left{1, 0, 0};
  CHECK(exact_transport_cost(split, left, c3) == doctest::Approx(2.0).epsilon(1e-15));
  // Diagonal neighbours.
  const auto c2 = grid_cost(2, 2);
  CHECK(exact_transport_cost(std::vector<double>{1, 0, 0, 0}, std::vector<double>{0, 0, 0, 1}, c2) ==
        doctest::Approx(2.0));
}

TEST_CASE("entropic solver against the frozen oracles") {
  for (const auto& c : testutil::oracles()["transport"]) {
    const auto mu = testutil::to_vector(c["mu"]);
    const auto nu = testutil::to_vector(c["nu"]);
    const auto cost = grid_cost(c["rows"], c["cols"]);
    SinkhornOptions opts;
    opts.tol = 1e-12;
    const auto r = entropic_transport(mu, nu, cost, opts);
    CHECK(r.cost == doctest::Approx(c["entropic_0.05"].get<double>()).epsilon(1e-8));
    CHECK(exact_transport_cost(mu, nu, cost) == doctest::Approx(c["exact"].get<double>()).epsilon(1e-9));
  }
  const auto check = criteria::transport_oracle(0.05);
  CHECK(check.instances == 50);
  CHECK(check.worst_gap <= check.allowed_gap);
  CHECK(check.worst_identity <= 5 * 0.05);
}

TEST_CASE("entropic solver: smaller regularisation approaches the exact cost") {
  const auto check = criteria::transport_oracle(0.005);
  CHECK(check.worst_gap <= check.allowed_gap);
}

TEST_CASE("potentials are the gradient of the entropic cost") {
  Rng rng(31);
  for (int t = 0; t < 10; ++t) {
    const int rows = 3, cols = 3;
    std::vector<double> mu(9), nu(9);
    double sm = 0, sn = 0;
    for (int k = 0; k < 9; ++k) {
      sm += (mu[k] = rng.uniform(0.05, 1.0));
      sn += (nu[k] = rng.uniform(0.05, 1.0));
    }
    for (int k = 0; k < 9; ++k) {
      mu[k] /= sm;
      nu[k] /= sn;
    }
    SinkhornOptions opts;
    opts.tol = 1e-12;
    const auto cost = grid_cost(rows, cols);
    const auto r = entropic_transport(mu, nu, cost, opts);
    // Directional derivative along a mass-preserving direction.
    std::vector<double> dir(9);
    double mean = 0;
    for (double& x : dir) mean += (x = rng.normal());
    for (double& x : dir) x -= mean / 9;
    const double h = 1e-6;
    std::vector<double> up = nu, down = nu;
    for (int k = 0; k < 9; ++k) {
      up[k] += h * dir[k];
      down[k] -= h * dir[k];
    }
    const double numeric =
        (entropic_transport(mu, up, cost, opts).cost - entropic_transport(mu, down, cost, opts).cost) / (2 * h);
    double analytic = 0;
    for (int k = 0; k < 9; ++k) analytic += r.grad_nu[k] * dir[k];
    CHECK(analytic == doctest::Approx(numeric).epsilon(1e-6));
  }
}

TEST_CASE("hard instances converge") {
  // Near-perfect prediction with tiny leakage into far blocks, and marginals
  // spanning many orders of magnitude.
  Rng rng(37);
  const auto cost = grid_cost(6, 6);
  for (int t = 0; t < 60; ++t) {
    std::vector<double> mu(36, 0.0), nu(36);
    double sm = 0, sn = 0;
    for (int k = 0; k < 36; ++k) {
      if (t % 2 == 0) {
        mu[k] = rng.uniform() < 0.2 ? static_cast<double>(rng.uniform_int(1, 4)) : 0.0;
        nu[k] = mu[k] > 0 ? mu[k] * rng.uniform(0.9, 1.1) : std::pow(10.0, -2 - 8 * rng.uniform());
      } else {
        mu[k] = std::exp(20 * (rng.uniform() - 1));
        nu[k] = std::exp(20 * (rng.uniform() - 1));
      }
      sm += mu[k];
      sn += nu[k];
    }
    if (sm == 0) {
      mu[0] = 1;
      sm = 1;
    }
    for (int k = 0; k < 36; ++k) {
      mu[k] /= sm;
      nu[k] /= sn;
    }
    for (double reg : {0.05, 0.01}) {
      SinkhornOptions opts;
      opts.reg = reg;
      const auto r = entropic_transport(mu, nu, cost, opts);
      CHECK(r.residual < opts.tol);
      CHECK(std::abs(r.cost - exact_transport_cost(mu, nu, cost)) <= std::max(1e-3, 10 * reg));
    }
  }
}

TEST_CASE("input validation") {
  const auto c = grid_cost(1, 2);
  SinkhornOptions opts;
  CHECK_THROWS_WITH_AS(entropic_transport(std::vector<double>{0.5, 0.6}, std::vector<double>{0.5, 0.5}, c, opts),
                       doctest::Contains("not normalized"), Error);
  CHECK_THROWS_AS(entropic_transport(std::vector<double>{1.5, -0.5}, std::vector<double>{0.5, 0.5}, c, opts), Error);
  CHECK_THROWS_AS(entropic_transport(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}, c, opts), Error);
  // An iteration budget that cannot be met reports the residual.
  opts.max_iters = 1;
  opts.tol = 1e-15;
  CHECK_THROWS_WITH_AS(entropic_transport(std::vector<double>{0.9, 0.1}, std::vector<double>{0.2, 0.8}, c, opts),
                       doctest::Contains("residual"), Error);
}
