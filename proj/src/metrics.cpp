#include "countlab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "countlab/error.hpp"

namespace countlab {

namespace {

void check_pair(std::span<const double> preds, std::span<const double> gts) {
  require(preds.size() == gts.size(), "metrics: length mismatch");
  require(!preds.empty(), "metrics: need at least one sample");
}

}  // namespace

double mae(std::span<const double> preds, std::span<const double> gts) {
  check_pair(preds, gts);
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(gts[i] - preds[i]);
  return s / static_cast<double>(preds.size());
}

double mse(std::span<const double> preds, std::span<const double> gts) {
  check_pair(preds, gts);
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += (gts[i] - preds[i]) * (gts[i] - preds[i]);
  return s / static_cast<double>(preds.size());
}

double rmse(std::span<const double> preds, std::span<const double> gts) { return std::sqrt(mse(preds, gts)); }

TpsValue tps(double c_pos, double c_neg) {
  require(c_pos >= 0.0 && c_neg >= 0.0, "tps: negative count");
  if (c_pos + c_neg == 0.0) return {0.0, true};
  return {c_pos / (c_pos + c_neg), false};
}

WmseResult wmse(std::span<const double> per_category_mse, std::span<const double> per_category_total_gt,
                double norm_floor) {
  const std::size_t m = per_category_mse.size();
  require(m >= 1 && per_category_total_gt.size() == m, "wmse: need one MSE and one total per category");
  WmseResult out;
  std::vector<double> totals(per_category_total_gt.begin(), per_category_total_gt.end());
  require(std::any_of(totals.begin(), totals.end(), [](double t) { return t > 0.0; }),
          "wmse: all category totals are zero");
  for (double& t : totals) {
    require(t >= 0.0, "wmse: negative category total");
    out.floored.push_back(t == 0.0);
    if (t == 0.0) t = norm_floor;
  }
  std::vector<double> sorted = totals;
  std::sort(sorted.begin(), sorted.end());
  const double median = m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);

  std::vector<double> f(m);
  for (std::size_t i = 0; i < m; ++i) f[i] = std::log(totals[i] / median);
  const double fmax = *std::max_element(f.begin(), f.end());
  double z = 0.0;
  for (double x : f) z += std::exp(x - fmax);
  for (std::size_t i = 0; i < m; ++i) {
    out.weights.push_back(std::exp(f[i] - fmax) / z);
    out.value += out.weights.back() * per_category_mse[i];
  }
  out.value /= static_cast<double>(m);
  return out;
}

std::vector<std::vector<int64_t>> confusion_matrix(std::span<const int> labels_a, std::span<const int> labels_b,
                                                   int num_levels) {
  require(labels_a.size() == labels_b.size(), "confusion_matrix: length mismatch");
  require(num_levels >= 1, "confusion_matrix: need at least one level");
  std::vector<std::vector<int64_t>> out(num_levels, std::vector<int64_t>(num_levels, 0));
  for (std::size_t k = 0; k < labels_a.size(); ++k) {
    const int a = labels_a[k], b = labels_b[k];
    require(a >= 0 && a < num_levels && b >= 0 && b < num_levels, "confusion_matrix: label out of range");
    ++out[a][b];
  }
  return out;
}

double qwk(std::span<const int> labels_a, std::span<const int> labels_b, int num_levels) {
  require(!labels_a.empty(), "qwk: empty input");
  const auto observed = confusion_matrix(labels_a, labels_b, num_levels);
  std::vector<int64_t> row(num_levels, 0), col(num_levels, 0);
  for (int i = 0; i < num_levels; ++i) {
    for (int j = 0; j < num_levels; ++j) {
      row[i] += observed[i][j];
      col[j] += observed[i][j];
    }
  }
  // Integer sums keep the statistic exactly symmetric in its arguments. The
  // 1/(L-1)^2 weight scale cancels in the ratio.
  int64_t num = 0, den = 0;
  for (int i = 0; i < num_levels; ++i) {
    for (int j = 0; j < num_levels; ++j) {
      const int64_t w = static_cast<int64_t>(i - j) * (i - j);
      num += w * observed[i][j];
      den += w * row[i] * col[j];
    }
  }
  if (den == 0) {
    if (std::equal(labels_a.begin(), labels_a.end(), labels_b.begin())) return 1.0;
    fail("qwk: undefined (expected disagreement is zero)");
  }
  const double n = static_cast<double>(labels_a.size());
  return 1.0 - static_cast<double>(num) * n / static_cast<double>(den);
}

int tps_grade(double tps_value, std::span<const double> thresholds) {
  int grade = 0;
  for (double t : thresholds) {
    if (tps_value >= t) ++grade;
  }
  return grade;
}

CountReport summarize_counts(const std::vector<ImageCounts>& records, int negative_index, int positive_index,
                             double norm_floor) {
  require(!records.empty(), "summarize_counts: no records");
  const std::size_t m = records.front().truth.size();
  require(negative_index >= 0 && positive_index >= 0 && static_cast<std::size_t>(negative_index) < m &&
              static_cast<std::size_t>(positive_index) < m,
          "summarize_counts: category index out of range");
  std::vector<std::vector<double>> pred(m), truth(m);
  std::vector<double> tps_pred, tps_truth;
  CountReport report;
  for (const auto& r : records) {
    require(r.predicted.size() == m && r.truth.size() == m, "summarize_counts: inconsistent category count");
    for (std::size_t i = 0; i < m; ++i) {
      require(r.predicted[i] >= 0.0 && r.truth[i] >= 0.0, "summarize_counts: negative count");
      pred[i].push_back(r.predicted[i]);
      truth[i].push_back(r.truth[i]);
    }
    const auto tp = tps(r.predicted[positive_index], r.predicted[negative_index]);
    const auto tt = tps(r.truth[positive_index], r.truth[negative_index]);
    report.degenerate_tps += tt.degenerate ? 1 : 0;
    tps_pred.push_back(tp.value);
    tps_truth.push_back(tt.value);
  }
  report.nm = mae(pred[negative_index], truth[negative_index]);
  report.nr = rmse(pred[negative_index], truth[negative_index]);
  report.pm = mae(pred[positive_index], truth[positive_index]);
  report.pr = rmse(pred[positive_index], truth[positive_index]);
  report.tm = mae(tps_pred, tps_truth);
  std::vector<double> mses, totals;
  for (std::size_t i = 0; i < m; ++i) {
    mses.push_back(mse(pred[i], truth[i]));
    double t = 0.0;
    for (double x : truth[i]) t += x;
    totals.push_back(t);
  }
  const auto w = wmse(mses, totals, norm_floor);
  report.wm = w.value;
  report.floored_categories = w.floored;
  return report;
}

}  // namespace countlab
