#include "countlab/losses.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "countlab/error.hpp"

namespace countlab {

void LossConfig::validate(int categories) const {
  require(epsilon_rank >= 0.0, "LossConfig: epsilon_rank must be >= 0");
  require(alpha > 0.0 && tau > 0.0 && gamma >= 0.0, "LossConfig: alpha, tau must be positive and gamma >= 0");
  require(ot_reg > 0.0 && ot_iters > 0 && ot_tol > 0.0 && norm_floor > 0.0, "LossConfig: bad transport settings");
  require(static_cast<int>(lambda.size()) == categories, "LossConfig: need one lambda per category");
  for (double l : lambda) require(l > 0.0, "LossConfig: lambda entries must be positive");
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

namespace {

double smooth_l1_grad(double x) { return std::abs(x) < 1.0 ? x : (x > 0 ? 1.0 : -1.0); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sign(double x) { return (x > 0) - (x < 0); }

}  // namespace

double distill_loss(std::span<const double> student, std::span<const double> teacher, int tokens, int dim,
                    std::span<double> grad_student) {
  require(student.size() == teacher.size() && student.size() == static_cast<std::size_t>(tokens) * dim,
          "distill_loss: shape mismatch");
  require(tokens >= 1 && dim >= 1, "distill_loss: empty input");
  const bool want_grad = !grad_student.empty();
  if (want_grad) require(grad_student.size() == student.size(), "distill_loss: gradient buffer size");

  double total = 0.0;
  int degenerate = 0;
  for (int t = 0; t < tokens; ++t) {
    const double* s = student.data() + t * dim;
    const double* q = teacher.data() + t * dim;
    double ss = 0.0, qq = 0.0, sq = 0.0, l1 = 0.0;
    for (int k = 0; k < dim; ++k) {
      if (!std::isfinite(s[k]) || !std::isfinite(q[k])) fail("distill_loss: non-finite input");
      ss += s[k] * s[k];
      qq += q[k] * q[k];
      sq += s[k] * q[k];
      l1 += smooth_l1(s[k] - q[k]);
    }
    double cos = 0.0;
    const bool zero = ss == 0.0 || qq == 0.0;
    if (zero) {
      ++degenerate;
    } else {
      cos = sq / std::sqrt(ss * qq);
    }
    total += (1.0 - cos) + l1 / dim;
    if (want_grad) {
      double* g = grad_student.data() + t * dim;
      const double ns = std::sqrt(ss), nq = std::sqrt(qq);
      for (int k = 0; k < dim; ++k) {
        double d = smooth_l1_grad(s[k] - q[k]) / dim;
        if (!zero) d -= q[k] / (ns * nq) - cos * s[k] / ss;
        g[k] = d / tokens;
      }
    }
  }
  if (degenerate > 0) spdlog::warn("distill_loss: {} zero-norm token(s); cosine term set to 1", degenerate);
  return total / tokens;
}

double rank_loss(const std::vector<std::vector<double>>& counts,
                 const std::vector<std::vector<std::pair<int, int>>>& pairs, double epsilon,
                 std::vector<std::vector<double>>* grad) {
  require(counts.size() == pairs.size(), "rank_loss: one pair set per group");
  if (grad) {
    grad->clear();
    for (const auto& c : counts) grad->emplace_back(c.size(), 0.0);
  }
  double total = 0.0;
  for (std::size_t g = 0; g < counts.size(); ++g) {
    const auto& c = counts[g];
    for (auto [i, j] : pairs[g]) {
      require(i >= 0 && j >= 0 && i < static_cast<int>(c.size()) && j < static_cast<int>(c.size()),
              "rank_loss: pair index outside the group");
      const double hinge = -(c[j] - c[i]) + epsilon;
      if (hinge > 0.0) {
        total += hinge;
        if (grad) {
          (*grad)[g][j] -= 1.0;
          (*grad)[g][i] += 1.0;
        }
      }
    }
  }
  return total;
}

double ce_loss(const ProbabilityMap& probs, const BlockTargets& targets, int category, double norm_floor,
               ProbabilityMap* grad) {
  require(probs.rows == targets.rows() && probs.cols == targets.cols() && probs.categories == targets.categories(),
          "ce_loss: shape mismatch with targets");
  require(category >= 0 && category < probs.categories, "ce_loss: category out of range");
  double total = 0.0;
  int clamped = 0;
  for (int u = 0; u < probs.rows; ++u) {
    for (int v = 0; v < probs.cols; ++v) {
      const int target = targets.class_index(u, v, category);
      require(target >= 0 && target < probs.bins, "ce_loss: target bin out of range");
      const double p = probs.at(u, v, category, target);
      if (p < norm_floor) {
        ++clamped;
        total -= std::log(norm_floor);
      } else {
        total -= std::log(p);
        if (grad) grad->at(u, v, category, target) -= 1.0 / p;
      }
    }
  }
  if (clamped > 0) spdlog::warn("ce_loss: {} target probabilit(ies) clamped at {}", clamped, norm_floor);
  return total;
}

double dm_loss(std::span<const double> gt, std::span<const double> pred, int rows, int cols,
               const LossConfig& cfg, std::span<double> grad_pred, TransportSolver solver) {
  const std::size_t cells = static_cast<std::size_t>(rows) * cols;
  require(gt.size() == cells && pred.size() == cells, "dm_loss: shape mismatch");
  const bool want_grad = !grad_pred.empty();
  if (want_grad) {
    require(grad_pred.size() == cells, "dm_loss: gradient buffer size");
    require(solver == TransportSolver::entropic, "dm_loss: gradients need the entropic solver");
  }
  for (std::size_t k = 0; k < cells; ++k) {
    if (!(gt[k] >= 0.0) || !(pred[k] >= 0.0)) fail("dm_loss: negative density entry");
  }
  const double mass_gt = std::accumulate(gt.begin(), gt.end(), 0.0);
  const double mass_pred = std::accumulate(pred.begin(), pred.end(), 0.0);

  double value = std::abs(mass_gt - mass_pred);
  if (want_grad) std::fill(grad_pred.begin(), grad_pred.end(), -sign(mass_gt - mass_pred));
  if (mass_gt < cfg.norm_floor || mass_pred < cfg.norm_floor) return value;

  std::vector<double> mu(cells), nu(cells);
  for (std::size_t k = 0; k < cells; ++k) {
    mu[k] = gt[k] / mass_gt;
    nu[k] = pred[k] / mass_pred;
  }
  const CostMatrix cost = grid_cost(rows, cols);
  std::vector<double> h(cells, 0.0);  // d(W + L1 term) / d nu
  if (solver == TransportSolver::exact) {
    value += exact_transport_cost(mu, nu, cost);
  } else {
    const auto ot = entropic_transport(mu, nu, cost, cfg.sinkhorn());
    value += ot.cost;
    h = ot.grad_nu;
  }
  double l1 = 0.0;
  for (std::size_t k = 0; k < cells; ++k) {
    l1 += std::abs(mu[k] - nu[k]);
    h[k] += 0.5 * mass_gt * sign(nu[k] - mu[k]);
  }
  value += 0.5 * mass_gt * l1;

  if (want_grad) {
    // Chain through nu = pred / |pred|_1.
    double mean = 0.0;
    for (std::size_t k = 0; k < cells; ++k) mean += nu[k] * h[k];
    for (std::size_t k = 0; k < cells; ++k) grad_pred[k] += (h[k] - mean) / mass_pred;
  }
  return value;
}

double se_loss(std::span<const double> d1, std::span<const double> d2, double alpha, double tau,
               std::span<double> grad1, std::span<double> grad2) {
  require(d1.size() == d2.size() && !d1.empty(), "se_loss: maps must have the same non-empty shape");
  const double inv = 1.0 / static_cast<double>(d1.size());
  double total = 0.0;
  for (std::size_t k = 0; k < d1.size(); ++k) {
    const double s1 = sigmoid(alpha * (d1[k] - tau));
    const double s2 = sigmoid(alpha * (d2[k] - tau));
    total += s1 * s2;
    if (!grad1.empty()) grad1[k] += inv * alpha * s1 * (1.0 - s1) * s2;
    if (!grad2.empty()) grad2[k] += inv * alpha * s2 * (1.0 - s2) * s1;
  }
  return total * inv;
}

LossBreakdown count_loss(const ProbabilityMap& probs, const DensityMap& density, const BlockTargets& targets,
                         const CountBinning& binning, const LossConfig& cfg, LossGradients* grad) {
  const int m = targets.categories();
  require(probs.categories == m && density.categories == m, "count_loss: category count mismatch");
  require(density.rows == targets.rows() && density.cols == targets.cols(), "count_loss: grid mismatch");
  require(static_cast<int>(cfg.lambda.size()) == m, "count_loss: need one lambda per category");
  if (grad) {
    grad->probs = ProbabilityMap(probs.rows, probs.cols, probs.categories, probs.bins);
    grad->density = DensityMap(density.rows, density.cols, density.categories);
  }
  const DensityMap gt = clipped_count_density(targets, binning);
  LossBreakdown out;
  ProbabilityMap ce_grad(probs.rows, probs.cols, probs.categories, probs.bins);
  for (int i = 0; i < m; ++i) {
    const double ce = ce_loss(probs, targets, i, cfg.norm_floor, grad ? &ce_grad : nullptr);
    const auto gt_plane = gt.plane(i);
    const auto pred_plane = density.plane(i);
    std::vector<double> dm_grad(grad ? pred_plane.size() : 0);
    const double dm = dm_loss(gt_plane, pred_plane, density.rows, density.cols, cfg, dm_grad);
    out.ce.push_back(ce);
    out.dm.push_back(dm);
    out.count += cfg.lambda[i] * (ce + dm);
    if (grad) {
      for (int u = 0; u < density.rows; ++u) {
        for (int v = 0; v < density.cols; ++v) grad->density.at(u, v, i) += cfg.lambda[i] * dm_grad[u * density.cols + v];
      }
    }
  }
  if (grad) {
    // ce_grad holds per-category unweighted gradients.
    for (std::size_t k = 0; k < ce_grad.values.size(); ++k) {
      const int i = static_cast<int>((k / probs.bins) % m);
      grad->probs.values[k] += cfg.lambda[i] * ce_grad.values[k];
    }
  }
  out.total = out.count;
  return out;
}

LossBreakdown total_loss(const ProbabilityMap& probs, const DensityMap& density, const BlockTargets& targets,
                         const CountBinning& binning, const LossConfig& cfg, LossGradients* grad) {
  LossBreakdown out = count_loss(probs, density, targets, binning, cfg, grad);
  const int m = density.categories;
  const int pairs = m * (m - 1) / 2;
  if (pairs > 0) {
    std::vector<std::vector<double>> planes, grads;
    for (int i = 0; i < m; ++i) {
      planes.push_back(density.plane(i));
      grads.emplace_back(planes.back().size(), 0.0);
    }
    double se = 0.0;
    for (int a = 0; a < m; ++a) {
      for (int b = a + 1; b < m; ++b) {
        se += se_loss(planes[a], planes[b], cfg.alpha, cfg.tau, grads[a], grads[b]);
      }
    }
    out.exclusivity = se / pairs;
    if (grad && cfg.gamma > 0.0) {
      const double w = cfg.gamma / pairs;
      for (int i = 0; i < m; ++i) {
        for (int u = 0; u < density.rows; ++u) {
          for (int v = 0; v < density.cols; ++v) grad->density.at(u, v, i) += w * grads[i][u * density.cols + v];
        }
      }
    }
  }
  out.total = out.count + cfg.gamma * out.exclusivity;
  return out;
}

}  // namespace countlab
