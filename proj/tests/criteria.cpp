#include "criteria.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "countlab/anchors.hpp"
#include "countlab/encoders.hpp"
#include "countlab/losses.hpp"
#include "countlab/metrics.hpp"
#include "countlab/patchgroup.hpp"
#include "countlab/rats.hpp"
#include "countlab/synthdata.hpp"
#include "countlab/transport.hpp"
#include "support.hpp"

namespace criteria {

using namespace countlab;

LossAnalytics loss_analytics() {
  LossAnalytics out;
  const auto pairs4 = group_count_order(4);
  out.rank_reversed = rank_loss({{3, 2, 1, 0}}, {pairs4}, 0.0);

  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    const int k = static_cast<int>(rng.uniform_int(1, 8));
    std::vector<double> c(k);
    for (double& x : c) x = rng.uniform(-5, 5);
    std::sort(c.begin(), c.end());
    out.rank_sorted_worst = std::max(out.rank_sorted_worst, rank_loss({c}, {group_count_order(k)}, 0.0));
  }

  const std::vector<double> tau(9, 0.3);
  out.se_at_tau = se_loss(tau, tau, 10.0, 0.3);

  std::vector<double> s(4 * 6);
  for (double& x : s) x = rng.normal();
  out.distill_identical = distill_loss(s, s, 4, 6);

  BlockTargets targets = build_block_targets({{3, 3, 0}}, 14, 14, 14, CountBinning(4), 1);
  ProbabilityMap uniform(1, 1, 1, 5);
  std::fill(uniform.values.begin(), uniform.values.end(), 0.2);
  out.ce_uniform_per_block = ce_loss(uniform, targets, 0, 1e-8);
  return out;
}

namespace {

// Random instances are kept away from the kinks of |.|, max(0, .) and the
// smooth-L1 transition so that central differences are meaningful.
constexpr double kKinkMargin = 1e-3;

double distill_case(Rng& rng) {
  const int tokens = 3, dim = 5;
  std::vector<double> s(tokens * dim), t(tokens * dim);
  for (;;) {
    for (auto& x : s) x = rng.normal();
    for (auto& x : t) x = rng.normal();
    bool clear = true;
    for (std::size_t k = 0; k < s.size(); ++k) clear &= std::abs(std::abs(s[k] - t[k]) - 1.0) > kKinkMargin;
    if (clear) break;
  }
  std::vector<double> grad(s.size());
  distill_loss(s, t, tokens, dim, grad);
  const auto numeric = testutil::numeric_gradient(
      [&](const std::vector<double>& x) { return distill_loss(x, t, tokens, dim); }, s, 1e-6);
  return testutil::relative_error(grad, numeric);
}

double rank_case(Rng& rng) {
  const int groups = 3, k = 4;
  const double eps = rng.uniform() < 0.5 ? 0.0 : 0.3;
  std::vector<std::vector<std::pair<int, int>>> pairs(groups, group_count_order(k));
  std::vector<std::vector<double>> counts(groups, std::vector<double>(k));
  for (;;) {
    for (auto& g : counts) {
      for (double& x : g) x = rng.uniform(0, 4);
    }
    bool clear = true;
    for (int g = 0; g < groups; ++g) {
      for (auto [i, j] : pairs[g]) clear &= std::abs(counts[g][j] - counts[g][i] - eps) > kKinkMargin;
    }
    if (clear) break;
  }
  std::vector<std::vector<double>> grad;
  rank_loss(counts, pairs, eps, &grad);
  std::vector<double> flat, flat_grad;
  for (int g = 0; g < groups; ++g) {
    flat.insert(flat.end(), counts[g].begin(), counts[g].end());
    flat_grad.insert(flat_grad.end(), grad[g].begin(), grad[g].end());
  }
  const auto numeric = testutil::numeric_gradient(
      [&](const std::vector<double>& x) {
        std::vector<std::vector<double>> c(groups);
        for (int g = 0; g < groups; ++g) c[g].assign(x.begin() + g * k, x.begin() + (g + 1) * k);
        return rank_loss(c, pairs, eps);
      },
      flat, 1e-6);
  return testutil::relative_error(flat_grad, numeric);
}

BlockTargets random_targets(int rows, int cols, Rng& rng) {
  const auto pts = testutil::random_points(static_cast<int>(rng.uniform_int(3, 12)), rows * 14, cols * 14, 2, rng);
  return build_block_targets(pts, rows * 14, cols * 14, 14, CountBinning(4), 2);
}

double ce_case(Rng& rng) {
  const auto targets = random_targets(2, 3, rng);
  const auto probs = testutil::random_probs(2, 3, 2, 5, rng);
  const int category = static_cast<int>(rng.uniform_int(0, 1));
  ProbabilityMap grad(2, 3, 2, 5);
  ce_loss(probs, targets, category, 1e-8, &grad);
  const auto numeric = testutil::numeric_gradient(
      [&](const std::vector<double>& x) {
        ProbabilityMap p = probs;
        p.values = x;
        return ce_loss(p, targets, category, 1e-8);
      },
      probs.values, 1e-7);
  return testutil::relative_error(grad.values, numeric);
}

LossConfig tight_loss_config() {
  LossConfig cfg;
  cfg.ot_tol = 1e-12;
  return cfg;
}

std::vector<double> random_density(int cells, Rng& rng) {
  std::vector<double> d(cells);
  for (double& x : d) x = rng.uniform(0.05, 3.0);
  return d;
}

double dm_case(Rng& rng) {
  const int rows = static_cast<int>(rng.uniform_int(2, 4)), cols = static_cast<int>(rng.uniform_int(2, 4));
  const int cells = rows * cols;
  const LossConfig cfg = tight_loss_config();
  std::vector<double> gt(cells), pred;
  for (;;) {
    for (double& x : gt) x = static_cast<double>(rng.uniform_int(0, 3));
    pred = random_density(cells, rng);
    const double mg = std::accumulate(gt.begin(), gt.end(), 0.0);
    const double mp = std::accumulate(pred.begin(), pred.end(), 0.0);
    if (mg == 0.0 || std::abs(mg - mp) < kKinkMargin) continue;
    bool clear = true;
    for (int k = 0; k < cells; ++k) clear &= std::abs(gt[k] / mg - pred[k] / mp) > kKinkMargin;
    if (clear) break;
  }
  std::vector<double> grad(cells);
  dm_loss(gt, pred, rows, cols, cfg, grad);
  const auto numeric = testutil::numeric_gradient(
      [&](const std::vector<double>& x) { return dm_loss(gt, x, rows, cols, cfg); }, pred, 1e-6);
  return testutil::relative_error(grad, numeric);
}

double se_case(Rng& rng) {
  const int cells = 12;
  std::vector<double> d1(cells), d2(cells);
  for (double& x : d1) x = rng.uniform(0.0, 0.7);
  for (double& x : d2) x = rng.uniform(0.0, 0.7);
  std::vector<double> g1(cells, 0.0), g2(cells, 0.0);
  se_loss(d1, d2, 10.0, 0.3, g1, g2);
  std::vector<double> both = d1, grad = g1;
  both.insert(both.end(), d2.begin(), d2.end());
  grad.insert(grad.end(), g2.begin(), g2.end());
  const auto numeric = testutil::numeric_gradient(
      [&](const std::vector<double>& x) {
        return se_loss(std::span<const double>(x.data(), cells), std::span<const double>(x.data() + cells, cells), 10.0,
                       0.3);
      },
      both, 1e-6);
  return testutil::relative_error(grad, numeric);
}

double total_case(Rng& rng) {
  const int rows = 2, cols = 3;
  const CountBinning bins(4);
  const LossConfig cfg = tight_loss_config();
  BlockTargets targets = random_targets(rows, cols, rng);
  ProbabilityMap probs;
  DensityMap density;
  for (;;) {
    targets = random_targets(rows, cols, rng);
    probs = testutil::random_probs(rows, cols, 2, 5, rng);
    density = expected_density(probs, bins);
    const auto gt = clipped_count_density(targets, bins);
    bool clear = true;
    for (int i = 0; i < 2; ++i) {
      const auto g = gt.plane(i), p = density.plane(i);
      const double mg = std::accumulate(g.begin(), g.end(), 0.0), mp = std::accumulate(p.begin(), p.end(), 0.0);
      clear &= std::abs(mg - mp) > kKinkMargin;
      for (std::size_t k = 0; k < g.size() && mg > 0; ++k) clear &= std::abs(g[k] / mg - p[k] / mp) > kKinkMargin;
    }
    if (clear) break;
  }
  LossGradients grad;
  total_loss(probs, density, targets, bins, cfg, &grad);
  std::vector<double> x = probs.values, analytic = grad.probs.values;
  x.insert(x.end(), density.values.begin(), density.values.end());
  analytic.insert(analytic.end(), grad.density.values.begin(), grad.density.values.end());
  const std::size_t np = probs.values.size();
  const auto numeric = testutil::numeric_gradient(
      [&](const std::vector<double>& v) {
        ProbabilityMap p = probs;
        DensityMap d = density;
        std::copy(v.begin(), v.begin() + np, p.values.begin());
        std::copy(v.begin() + np, v.end(), d.values.begin());
        return total_loss(p, d, targets, bins, cfg).total;
      },
      x, 1e-6);
  return testutil::relative_error(analytic, numeric);
}

}  // namespace

std::map<std::string, double> gradient_suite(int instances, uint64_t seed) {
  std::map<std::string, double> worst;
  const std::vector<std::pair<std::string, double (*)(Rng&)>> cases{
      {"distill", distill_case}, {"rank", rank_case}, {"ce", ce_case},
      {"dm", dm_case},           {"se", se_case},     {"total", total_case}};
  for (const auto& [name, fn] : cases) {
    Rng rng(hash_combine(seed, hash64(name)));
    double w = 0.0;
    for (int t = 0; t < instances; ++t) w = std::max(w, fn(rng));
    worst[name] = w;
  }
  return worst;
}

TransportCheck transport_oracle(double reg) {
  TransportCheck out;
  out.allowed_gap = std::max(1e-3, 10.0 * reg);
  SinkhornOptions opts;
  opts.reg = reg;
  for (const auto& c : testutil::oracles()["transport"]) {
    const auto mu = testutil::to_vector(c["mu"]);
    const auto nu = testutil::to_vector(c["nu"]);
    const auto cost = grid_cost(c["rows"], c["cols"]);
    const double exact = c["exact"];
    out.worst_gap = std::max(out.worst_gap, std::abs(entropic_transport(mu, nu, cost, opts).cost - exact));
    out.exact_vs_oracle = std::max(out.exact_vs_oracle, std::abs(exact_transport_cost(mu, nu, cost) - exact));
    ++out.instances;
  }
  Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    const int rows = static_cast<int>(rng.uniform_int(1, 4)), cols = static_cast<int>(rng.uniform_int(2, 4));
    std::vector<double> mu(rows * cols);
    double s = 0.0;
    for (double& x : mu) s += (x = rng.uniform());
    for (double& x : mu) x /= s;
    out.worst_identity = std::max(out.worst_identity, entropic_transport(mu, mu, grid_cost(rows, cols), opts).cost);
  }
  return out;
}

RatsCheck rats_selection(int batches, int groups_per_batch, uint64_t seed) {
  const CountBinning bins(4);
  const HashTextEncoder enc(64);
  const auto classes = build_anchor_tensor(CategorySet::ihc_default(), bins, enc);
  const auto rats = build_rats_anchors(bins, enc);
  const double temperature = 0.07;
  SynthConfig synth;
  synth.seed = seed;

  TeacherPool pool;
  Rng rng(seed);
  for (double sigma : {0.0, 5.0, 10.0}) {
    pool.add(make_synthetic_teacher(sigma, hash_combine(seed, static_cast<uint64_t>(sigma)), classes, rats,
                                    temperature, synth.image_size, 14),
             64, rng);
  }
  const std::vector<double> ratios{0.625, 0.75, 0.875, 1.0};
  RatsCheck out;
  int image = 0;
  for (int b = 0; b < batches; ++b) {
    std::vector<RankedPatchGroup> groups;
    for (int g = 0; g < groups_per_batch; ++g) {
      groups.push_back(make_ranked_group(generate_image(synth, image++), synth.image_size, ratios, seed));
    }
    const auto rec = select_teacher(pool, groups, rats, temperature, 0.0, b);
    // Recompute every teacher's loss through the public per-group path.
    std::vector<double> losses;
    for (int i = 0; i < pool.size(); ++i) {
      std::vector<std::vector<double>> counts;
      for (const auto& g : groups) counts.push_back(predict_group_counts(*pool.teachers[i], pool.projectors[i], g, rats, temperature));
      losses.push_back(rank_loss(counts, std::vector(groups.size(), group_count_order(4)), 0.0));
    }
    const int argmin = static_cast<int>(std::min_element(losses.begin(), losses.end()) - losses.begin());
    const bool tie = std::count(losses.begin(), losses.end(), losses[argmin]) > 1;
    if (rec.losses != losses || rec.selected_index != argmin || rec.tie_broken != tie || rec.batch_id != b) {
      ++out.bookkeeping_errors;
    }
    out.noiseless_selected += rec.selected_index == 0;
    ++out.batches;
  }
  return out;
}

TargetCheck target_construction(int images, uint64_t seed) {
  SynthConfig synth;
  synth.seed = seed;
  synth.image_size = 98;
  const CountBinning bins(4);
  TargetCheck out;
  for (int i = 0; i < images; ++i) {
    const auto img = generate_image(synth, i);
    const auto t = build_block_targets(img.points, img.height(), img.width(), 14, bins, 2);
    std::vector<int64_t> expected(2, 0);
    for (const auto& p : img.points) ++expected[p.category];
    out.conservation_failures += t.totals() != expected;
    bool ok = true;
    for (std::size_t k = 0; k < t.count_map().size(); ++k) ok &= t.class_index_map()[k] == std::min<int64_t>(t.count_map()[k], 4);
    out.truncation_failures += !ok;
    ++out.images;
  }
  return out;
}

MetricCheck metric_verification(uint64_t seed) {
  MetricCheck out;
  out.wmse_symmetric = wmse(std::vector<double>{4, 8}, std::vector<double>{50, 50}).value;
  const auto skew = wmse(std::vector<double>{1, 1}, std::vector<double>{100, 400});
  out.wmse_skewed = skew.value;
  out.weight_low = skew.weights[0];
  out.weight_high = skew.weights[1];

  Rng rng(seed);
  for (int t = 0; t < 1000; ++t) {
    const int n = static_cast<int>(rng.uniform_int(1, 50));
    std::vector<double> a(n), b(n);
    for (int k = 0; k < n; ++k) {
      a[k] = rng.uniform(0, 40) * (rng.uniform() < 0.1 ? 10 : 1);
      b[k] = rng.uniform(0, 40);
    }
    out.rmse_below_mae += rmse(a, b) < mae(a, b);
  }

  std::vector<int> x(10000), y(10000);
  for (int k = 0; k < 10000; ++k) {
    x[k] = static_cast<int>(rng.uniform_int(0, 3));
    y[k] = static_cast<int>(rng.uniform_int(0, 3));
  }
  out.qwk_identical = qwk(x, x, 4);
  out.qwk_independent = qwk(x, y, 4);
  return out;
}

}  // namespace criteria
