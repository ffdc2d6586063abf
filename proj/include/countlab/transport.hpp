#pragma once

#include <span>
#include <vector>

namespace countlab {

/// Dense cost matrix, rows x cols, row-major.
struct CostMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  double operator()(int i, int j) const { return values[static_cast<std::size_t>(i) * cols + j]; }
};

/// Squared Euclidean distance between block centres of an H x W grid with
/// unit block side; cells indexed row-major.
CostMatrix grid_cost(int rows, int cols);

struct SinkhornOptions {
  double reg = 0.05;
  int max_iters = 500;
  double tol = 1e-7;  // L1 marginal violation
};

struct SinkhornResult {
  /// Entropic transport cost: min <P, C> + reg * KL(P | mu x nu).
  double cost = 0.0;
  /// Dual potentials, i.e. d cost / d mu and d cost / d nu (each defined up to
  /// an additive constant on the simplex). Zero-mass entries carry the soft
  /// c-transform value.
  std::vector<double> grad_mu;
  std::vector<double> grad_nu;
  int iterations = 0;
  double residual = 0.0;
};

/// Log-domain Sinkhorn sweeps with reg annealing for a warm start, then
/// Newton steps on the semi-dual at the target reg. Throws if the marginal
/// violation is not below `tol` within `max_iters` Newton steps.
SinkhornResult entropic_transport(std::span<const double> mu, std::span<const double> nu,
                                  const CostMatrix& cost, const SinkhornOptions& options);

/// Exact transport cost by successive shortest paths on the transportation
/// network. Intended for small problems (test oracle).
double exact_transport_cost(std::span<const double> mu, std::span<const double> nu, const CostMatrix& cost);

}  // namespace countlab
