#pragma once

#include <span>
#include <utility>
#include <vector>

#include "countlab/datamodel.hpp"
#include "countlab/densityhead.hpp"
#include "countlab/transport.hpp"

namespace countlab {

struct LossConfig {
  double epsilon_rank = 0.0;
  double alpha = 10.0;
  double tau = 0.3;
  std::vector<double> lambda{0.4, 0.6};  // per category, category order
  double gamma = 0.5;
  double ot_reg = 0.05;
  int ot_iters = 500;
  double ot_tol = 1e-7;
  double norm_floor = 1e-8;

  void validate(int categories) const;
  SinkhornOptions sinkhorn() const { return {ot_reg, ot_iters, ot_tol}; }
};

enum class TransportSolver { entropic, exact };

/// Mean over `tokens` rows of (1 - cos(s, t)) + mean_k smoothL1(s_k - t_k).
/// `grad_student`, when non-empty, receives dL/ds.
double distill_loss(std::span<const double> student, std::span<const double> teacher, int tokens, int dim,
                    std::span<double> grad_student = {});

/// Sum over groups and ordered pairs (i, j) of max(0, -(c_j - c_i) + epsilon).
double rank_loss(const std::vector<std::vector<double>>& counts,
                 const std::vector<std::vector<std::pair<int, int>>>& pairs, double epsilon,
                 std::vector<std::vector<double>>* grad = nullptr);

/// -sum_{u,v} log P[u, v, category, target]; probabilities are floored at
/// norm_floor before the log. grad (same shape as probs) is accumulated into.
double ce_loss(const ProbabilityMap& probs, const BlockTargets& targets, int category, double norm_floor,
               ProbabilityMap* grad = nullptr);

/// Count L1 + W2^2 of normalized maps + (1/2)|D_gt|_1 * |normalized difference|_1.
/// Maps are single-category planes on a rows x cols grid. grad_pred is
/// overwritten with dL/dD_hat.
double dm_loss(std::span<const double> gt, std::span<const double> pred, int rows, int cols,
               const LossConfig& cfg, std::span<double> grad_pred = {},
               TransportSolver solver = TransportSolver::entropic);

/// Mean over blocks of sigmoid(alpha (D1 - tau)) * sigmoid(alpha (D2 - tau)).
double se_loss(std::span<const double> d1, std::span<const double> d2, double alpha, double tau,
               std::span<double> grad1 = {}, std::span<double> grad2 = {});

struct LossBreakdown {
  double total = 0.0;
  double count = 0.0;
  double exclusivity = 0.0;
  std::vector<double> ce;  // per category, unweighted
  std::vector<double> dm;
};

struct LossGradients {
  ProbabilityMap probs;
  DensityMap density;
};

/// sum_i lambda_i (ce_i + dm_i) with D_gt = min(count_map, n).
LossBreakdown count_loss(const ProbabilityMap& probs, const DensityMap& density, const BlockTargets& targets,
                         const CountBinning& binning, const LossConfig& cfg, LossGradients* grad = nullptr);

/// count_loss + gamma * exclusivity, where exclusivity averages se_loss over
/// all unordered category pairs.
LossBreakdown total_loss(const ProbabilityMap& probs, const DensityMap& density, const BlockTargets& targets,
                         const CountBinning& binning, const LossConfig& cfg, LossGradients* grad = nullptr);

double smooth_l1(double x);

}  // namespace countlab
