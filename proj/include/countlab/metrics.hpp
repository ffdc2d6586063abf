#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace countlab {

double mae(std::span<const double> preds, std::span<const double> gts);
double mse(std::span<const double> preds, std::span<const double> gts);
double rmse(std::span<const double> preds, std::span<const double> gts);

struct TpsValue {
  double value = 0.0;
  bool degenerate = false;  // no tumor cells at all
};

/// c_pos / (c_pos + c_neg); 0 with the degenerate flag when both are zero.
TpsValue tps(double c_pos, double c_neg);

struct WmseResult {
  double value = 0.0;
  std::vector<double> weights;
  std::vector<bool> floored;  // category total was zero and replaced by the floor
};

/// (1/m) sum_i w_i MSE_i with w = softmax(ln(total_i / median(total))).
WmseResult wmse(std::span<const double> per_category_mse, std::span<const double> per_category_total_gt,
                double norm_floor = 1e-8);

std::vector<std::vector<int64_t>> confusion_matrix(std::span<const int> labels_a, std::span<const int> labels_b,
                                                   int num_levels);

/// Quadratic weighted kappa.
double qwk(std::span<const int> labels_a, std::span<const int> labels_b, int num_levels);

/// Ordinal grade of a TPS value: the number of thresholds it reaches.
int tps_grade(double tps_value, std::span<const double> thresholds);

/// Per-image counts, one entry per category.
struct ImageCounts {
  std::string id;
  std::vector<double> predicted;
  std::vector<double> truth;
};

/// Flat report keyed like the reporting tables: NM/NR = MAE/RMSE of the
/// negative category, PM/PR of the positive, TM = MAE of TPS (fraction),
/// WM = WMSE over all categories.
struct CountReport {
  double nm = 0, nr = 0, pm = 0, pr = 0, tm = 0, wm = 0;
  int degenerate_tps = 0;
  std::vector<bool> floored_categories;
};

CountReport summarize_counts(const std::vector<ImageCounts>& records, int negative_index, int positive_index,
                             double norm_floor = 1e-8);

}  // namespace countlab
