#include "countlab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "countlab/error.hpp"
#include "countlab/kernels.hpp"

namespace countlab {

CostMatrix grid_cost(int rows, int cols) {
  const int cells = rows * cols;
  CostMatrix c{cells, cells, std::vector<double>(static_cast<std::size_t>(cells) * cells)};
  for (int a = 0; a < cells; ++a) {
    for (int b = 0; b < cells; ++b) {
      const double du = a / cols - b / cols;
      const double dv = a % cols - b % cols;
      c.values[a * cells + b] = du * du + dv * dv;
    }
  }
  return c;
}

namespace {

constexpr double kMassTolerance = 1e-6;
constexpr int kAnnealStageIters = 10;
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_marginal(std::span<const double> w, const char* name) {
  double sum = 0.0;
  for (double x : w) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      fail(std::string("transport: ") + name + " has a negative or non-finite entry");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > kMassTolerance) {
    std::ostringstream msg;
    msg << "transport: " << name << " is not normalized (sum = " << sum << ")";
    fail(msg.str());
  }
}

std::vector<int> support(std::span<const double> w) {
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(w.size()); ++i) {
    if (w[i] > 0.0) idx.push_back(i);
  }
  return idx;
}

// -eps * log sum_k exp((pot[k] - c_k) / eps + logw[k])
template <typename CostFn>
double soft_min(const std::vector<double>& pot, const std::vector<double>& logw, CostFn cost_of, double eps) {
  double zmax = -kInf;
  std::vector<double> z(pot.size());
  for (std::size_t k = 0; k < pot.size(); ++k) {
    z[k] = (pot[k] - cost_of(k)) / eps + logw[k];
    zmax = std::max(zmax, z[k]);
  }
  double s = 0.0;
  for (double v : z) s += std::exp(v - zmax);
  return -eps * (zmax + std::log(s));
}

}  // namespace

SinkhornResult entropic_transport(std::span<const double> mu, std::span<const double> nu,
                                  const CostMatrix& cost, const SinkhornOptions& options) {
  require(static_cast<int>(mu.size()) == cost.rows && static_cast<int>(nu.size()) == cost.cols,
          "entropic_transport: marginal sizes do not match the cost matrix");
  require(options.reg > 0.0 && options.max_iters >= 1, "entropic_transport: bad options");
  check_marginal(mu, "mu");
  check_marginal(nu, "nu");

  const auto rows = support(mu);
  const auto cols = support(nu);
  const int n = static_cast<int>(rows.size());
  const int m = static_cast<int>(cols.size());

  // Cost restricted to the supports, and its transpose.
  std::vector<double> c(n * m), ct(n * m);
  double cmax = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double v = cost(rows[i], cols[j]);
      c[i * m + j] = v;
      ct[j * n + i] = v;
      cmax = std::max(cmax, v);
    }
  }
  std::vector<double> log_a(n), log_b(m);
  for (int i = 0; i < n; ++i) log_a[i] = std::log(mu[rows[i]]);
  for (int j = 0; j < m; ++j) log_b[j] = std::log(nu[cols[j]]);

  std::vector<double> f(n, 0.0), g(m, 0.0);

  auto plan = [&](int i, int j, double eps) {
    return std::exp((f[i] + g[j] - c[i * m + j]) / eps + log_a[i] + log_b[j]);
  };
  // Column marginals are exact after a sweep, so only rows are checked.
  auto row_residual = [&](double eps) {
    double res = 0.0;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += plan(i, j, eps);
      res += std::abs(s - mu[rows[i]]);
    }
    return res;
  };
  auto sweep = [&](double eps) {
    kernels::soft_c_transform(c, n, m, g, log_b, eps, f);
    kernels::soft_c_transform(ct, m, n, f, log_a, eps, g);
  };

  // Anneal reg geometrically from the cost scale down to the target, warm
  // starting the potentials at each stage.
  for (double eps = std::max(cmax, options.reg) / 2.0; eps > options.reg; eps /= 2.0) {
    for (int it = 0; it < kAnnealStageIters; ++it) {
      sweep(eps);
      if (it % 10 == 9 && row_residual(eps) < options.tol) break;
    }
  }

  // At the target reg, damped Newton ascent on the semi-dual in g, with f
  // always the soft c-transform of g (so row marginals hold exactly).
  const double eps = options.reg;
  auto semi_dual = [&](const std::vector<double>& pot, std::vector<double>& f_out) {
    kernels::soft_c_transform(c, n, m, pot, log_b, eps, f_out);
    double d = 0.0;
    for (int i = 0; i < n; ++i) d += mu[rows[i]] * f_out[i];
    for (int j = 0; j < m; ++j) d += nu[cols[j]] * pot[j];
    return d;
  };
  SinkhornResult result;
  double objective = semi_dual(g, f);
  Eigen::MatrixXd P(n, m), hess(m, m);
  Eigen::VectorXd grad(m);
  std::vector<double> g_try(m), f_try(n);
  const double step_cap = std::max(cmax, 1.0);
  for (int it = 0;; ++it) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) P(i, j) = plan(i, j, eps);
    }
    const Eigen::VectorXd colsum = P.colwise().sum().transpose();
    result.residual = 0.0;
    for (int j = 0; j < m; ++j) {
      grad(j) = nu[cols[j]] - colsum(j);
      result.residual += std::abs(grad(j));
    }
    result.iterations = it;
    if (result.residual < options.tol || it == options.max_iters) break;

    Eigen::MatrixXd scaled = P;
    for (int i = 0; i < n; ++i) scaled.row(i) /= mu[rows[i]];
    hess = -(P.transpose() * scaled);
    hess.diagonal() += colsum;
    hess /= eps;
    // The constant vector spans the null space; pin it.
    const double scale = std::max(hess.trace() / m, 1e-300);
    hess.array() += scale / m;
    // Columns whose plan mass has underflowed make the system numerically
    // indefinite; solve through the spectrum with a floor on the eigenvalues.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
    const Eigen::VectorXd& lambda = eig.eigenvalues();
    const double floor = std::max(lambda.maxCoeff(), 1e-300) * 1e-13;
    const Eigen::MatrixXd& V = eig.eigenvectors();
    Eigen::VectorXd step = V * ((V.transpose() * grad).array() / lambda.array().max(floor)).matrix();
    // Potential differences never exceed the cost range, so longer steps are
    // noise from near-singular directions.
    const double longest = step.cwiseAbs().maxCoeff();
    if (longest > step_cap) step *= step_cap / longest;
    const double slope = grad.dot(step);

    if (slope > 0.0) {
      double t = 1.0;
      for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
        for (int j = 0; j < m; ++j) g_try[j] = g[j] + t * step(j);
        const double trial = semi_dual(g_try, f_try);
        if (trial >= objective + 1e-4 * t * slope) {
          g.swap(g_try);
          f.swap(f_try);
          objective = trial;
          break;
        }
      }
    }
    // A block coordinate sweep after every step. It never decreases the dual
    // and fixes the scale of columns with vanishing plan mass, where Newton
    // crawls.
    kernels::soft_c_transform(ct, m, n, f, log_a, eps, g);
    objective = semi_dual(g, f);
  }

  if (!(result.residual < options.tol)) {
    std::ostringstream msg;
    msg << "entropic_transport: no convergence after " << options.max_iters
        << " iterations (marginal residual " << result.residual << ")";
    fail(msg.str());
  }

  double plan_mass = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) plan_mass += plan(i, j, eps);
  }
  double value = 0.0;
  for (int i = 0; i < n; ++i) value += mu[rows[i]] * f[i];
  for (int j = 0; j < m; ++j) value += nu[cols[j]] * g[j];
  result.cost = value - eps * (plan_mass - 1.0);

  result.grad_mu.assign(mu.size(), 0.0);
  result.grad_nu.assign(nu.size(), 0.0);
  for (int i = 0; i < n; ++i) result.grad_mu[rows[i]] = f[i];
  for (int j = 0; j < m; ++j) result.grad_nu[cols[j]] = g[j];
  for (int i = 0; i < static_cast<int>(mu.size()); ++i) {
    if (mu[i] > 0.0) continue;
    result.grad_mu[i] = soft_min(g, log_b, [&](std::size_t k) { return cost(i, cols[k]); }, eps);
  }
  for (int j = 0; j < static_cast<int>(nu.size()); ++j) {
    if (nu[j] > 0.0) continue;
    result.grad_nu[j] = soft_min(f, log_a, [&](std::size_t k) { return cost(rows[k], j); }, eps);
  }
  return result;
}

double exact_transport_cost(std::span<const double> mu, std::span<const double> nu, const CostMatrix& cost) {
  require(static_cast<int>(mu.size()) == cost.rows && static_cast<int>(nu.size()) == cost.cols,
          "exact_transport_cost: marginal sizes do not match the cost matrix");
  check_marginal(mu, "mu");
  check_marginal(nu, "nu");

  // Nodes: 0 = source, 1..R = supplies, R+1..R+C = demands, R+C+1 = sink.
  const int R = cost.rows, C = cost.cols;
  const int nodes = R + C + 2;
  const int source = 0, sink = R + C + 1;
  struct Arc {
    int to;
    double cap;
    double cost;
    int rev;
  };
  std::vector<std::vector<Arc>> graph(nodes);
  auto add = [&](int from, int to, double cap, double c) {
    graph[from].push_back({to, cap, c, static_cast<int>(graph[to].size())});
    graph[to].push_back({from, 0.0, -c, static_cast<int>(graph[from].size()) - 1});
  };
  for (int i = 0; i < R; ++i) {
    if (mu[i] > 0.0) add(source, 1 + i, mu[i], 0.0);
  }
  for (int j = 0; j < C; ++j) {
    if (nu[j] > 0.0) add(1 + R + j, sink, nu[j], 0.0);
  }
  for (int i = 0; i < R; ++i) {
    for (int j = 0; j < C; ++j) add(1 + i, 1 + R + j, kInf, cost(i, j));
  }

  constexpr double kCapEps = 1e-15;
  double remaining = std::min(std::accumulate(mu.begin(), mu.end(), 0.0), std::accumulate(nu.begin(), nu.end(), 0.0));
  double total = 0.0;
  while (remaining > kCapEps) {
    // Bellman-Ford: residual arcs may carry negative cost.
    std::vector<double> dist(nodes, kInf);
    std::vector<int> prev_node(nodes, -1), prev_arc(nodes, -1);
    dist[source] = 0.0;
    for (int round = 0; round < nodes; ++round) {
      bool changed = false;
      for (int u = 0; u < nodes; ++u) {
        if (dist[u] == kInf) continue;
        for (int a = 0; a < static_cast<int>(graph[u].size()); ++a) {
          const Arc& arc = graph[u][a];
          if (arc.cap <= kCapEps) continue;
          const double nd = dist[u] + arc.cost;
          if (nd < dist[arc.to] - 1e-12) {
            dist[arc.to] = nd;
            prev_node[arc.to] = u;
            prev_arc[arc.to] = a;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    if (dist[sink] == kInf) break;
    double push = remaining;
    for (int v = sink; v != source; v = prev_node[v]) push = std::min(push, graph[prev_node[v]][prev_arc[v]].cap);
    for (int v = sink; v != source; v = prev_node[v]) {
      Arc& arc = graph[prev_node[v]][prev_arc[v]];
      arc.cap -= push;
      graph[v][arc.rev].cap += push;
    }
    total += push * dist[sink];
    remaining -= push;
  }
  return total;
}

}  // namespace countlab
