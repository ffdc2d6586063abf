#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "countlab/encoders.hpp"

namespace countlab {

/// Outcome of one teacher selection.
struct SelectionRecord {
  int64_t batch_id = 0;
  int group = -1;  // -1 for whole-batch selection
  std::vector<double> losses;
  int selected_index = 0;
  bool tie_broken = false;
};

enum class Strategy { rats, equal, tdrop };

Strategy parse_strategy(const std::string& text);
std::string to_string(Strategy s);

/// Expected count under the softmax of cos(x, anchor_j) / temperature.
double anchor_expectation(const nn::RowVector& pooled, const AnchorTensor& anchors, double temperature);

/// Projected pooled embedding of every patch, read out as an expected count.
std::vector<double> predict_group_counts(const Encoder& teacher, const nn::Projector& projector,
                                         const RankedPatchGroup& group, const AnchorTensor& anchors,
                                         double temperature);

/// argmin over losses, lowest index on ties.
SelectionRecord make_record(int64_t batch_id, std::vector<double> losses);

/// Rank loss of every teacher over the whole batch and the argmin.
SelectionRecord select_teacher(const TeacherPool& pool, const std::vector<RankedPatchGroup>& groups,
                               const AnchorTensor& anchors, double temperature, double epsilon,
                               int64_t batch_id = 0);

struct AgglomerateOptions {
  Strategy strategy = Strategy::rats;
  bool per_group = false;
  double tdrop_keep = 0.5;
  double epsilon_rank = 0.0;
  double temperature = 0.07;
  double learning_rate = 1e-3;
};

struct StepResult {
  std::vector<SelectionRecord> records;  // empty unless strategy is rats
  double loss = 0.0;                     // distillation loss before the update
  std::vector<int> teachers_used;
};

/// One distillation update of the student on a batch of ranked groups.
StepResult agglomerate_step(StudentModel& student, const TeacherPool& pool,
                            const std::vector<RankedPatchGroup>& batch, const AnchorTensor& anchors,
                            nn::AdamW& optimizer, const AgglomerateOptions& options, int64_t batch_id, Rng& rng);

std::string selection_to_json(const SelectionRecord& record);
/// Appends one JSON object per line.
void append_selection_log(const std::filesystem::path& path, const std::vector<SelectionRecord>& records);
std::vector<SelectionRecord> read_selection_log(const std::filesystem::path& path);

/// How often each teacher was selected.
std::vector<int64_t> selection_histogram(const std::vector<SelectionRecord>& records, int pool_size);

}  // namespace countlab
