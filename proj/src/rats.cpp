#include "countlab/rats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "countlab/error.hpp"

namespace countlab {

Strategy parse_strategy(const std::string& text) {
  if (text == "rats") return Strategy::rats;
  if (text == "equal") return Strategy::equal;
  if (text == "tdrop") return Strategy::tdrop;
  fail("unknown strategy '" + text + "' (expected rats, equal or tdrop)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::rats: return "rats";
    case Strategy::equal: return "equal";
    case Strategy::tdrop: return "tdrop";
  }
  return "?";
}

double anchor_expectation(const nn::RowVector& pooled, const AnchorTensor& anchors, double temperature) {
  require(pooled.size() == anchors.dim, "anchor_expectation: embedding width does not match anchors");
  require(anchors.categories == 1, "anchor_expectation: expected class-agnostic anchors");
  const int bins = anchors.bins;
  double norm = 0.0;
  for (int k = 0; k < anchors.dim; ++k) norm += double(pooled(k)) * pooled(k);
  norm = std::sqrt(norm);
  std::vector<double> logits(bins, 0.0);
  if (norm > 0.0) {
    for (int j = 0; j < bins; ++j) {
      const double* a = anchors.anchor(0, j);
      double dot = 0.0;
      for (int k = 0; k < anchors.dim; ++k) dot += pooled(k) * a[k];
      logits[j] = dot / norm / temperature;
    }
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0, e = 0.0;
  for (int j = 0; j < bins; ++j) {
    const double w = std::exp(logits[j] - mx);
    z += w;
    e += w * j;  // bin representatives are the bin indices
  }
  return e / z;
}

std::vector<double> predict_group_counts(const Encoder& teacher, const nn::Projector& projector,
                                         const RankedPatchGroup& group, const AnchorTensor& anchors,
                                         double temperature) {
  require(projector.in_features() == teacher.width(), "predict_group_counts: projector does not match teacher");
  require(projector.out_features() == anchors.dim, "predict_group_counts: projector does not match anchors");
  std::vector<double> out;
  for (const auto& patch : group.patches) {
    const auto pooled = projector.forward(teacher.forward(patch).pooled, nullptr);
    out.push_back(anchor_expectation(pooled, anchors, temperature));
  }
  return out;
}

SelectionRecord make_record(int64_t batch_id, std::vector<double> losses) {
  require(!losses.empty(), "select_teacher: empty teacher pool");
  SelectionRecord rec;
  rec.batch_id = batch_id;
  rec.losses = std::move(losses);
  const auto best = std::min_element(rec.losses.begin(), rec.losses.end());
  rec.selected_index = static_cast<int>(best - rec.losses.begin());
  rec.tie_broken = std::count(rec.losses.begin(), rec.losses.end(), *best) > 1;
  return rec;
}

namespace {

void check_batch(const std::vector<RankedPatchGroup>& groups) {
  require(!groups.empty(), "select_teacher: empty batch");
  const int k = groups.front().size();
  require(k >= 1, "select_teacher: empty group");
  for (const auto& g : groups) require(g.size() == k, "select_teacher: incomplete group in batch");
}

struct TeacherView {
  std::vector<EncoderOutput> outputs;       // projected, batch order
  std::vector<std::vector<double>> counts;  // per group
};

TeacherView view_teacher(const TeacherPool& pool, int index, const std::vector<RankedPatchGroup>& groups,
                         const AnchorTensor& anchors, double temperature, bool keep_outputs) {
  TeacherView view;
  const Encoder& teacher = *pool.teachers[index];
  for (const auto& group : groups) {
    std::vector<double> counts;
    for (const auto& patch : group.patches) {
      EncoderOutput projected = pool.project(index, teacher.forward(patch));
      counts.push_back(anchor_expectation(projected.pooled, anchors, temperature));
      if (keep_outputs) view.outputs.push_back(std::move(projected));
    }
    view.counts.push_back(std::move(counts));
  }
  return view;
}

std::vector<std::vector<std::pair<int, int>>> batch_pairs(const std::vector<RankedPatchGroup>& groups) {
  return std::vector<std::vector<std::pair<int, int>>>(groups.size(), group_count_order(groups.front().size()));
}

}  // namespace

SelectionRecord select_teacher(const TeacherPool& pool, const std::vector<RankedPatchGroup>& groups,
                               const AnchorTensor& anchors, double temperature, double epsilon,
                               int64_t batch_id) {
  require(pool.size() > 0, "select_teacher: empty teacher pool");
  check_batch(groups);
  const auto pairs = batch_pairs(groups);
  std::vector<double> losses;
  for (int i = 0; i < pool.size(); ++i) {
    const auto view = view_teacher(pool, i, groups, anchors, temperature, false);
    losses.push_back(rank_loss(view.counts, pairs, epsilon));
  }
  return make_record(batch_id, std::move(losses));
}

StepResult agglomerate_step(StudentModel& student, const TeacherPool& pool,
                            const std::vector<RankedPatchGroup>& batch, const AnchorTensor& anchors,
                            nn::AdamW& optimizer, const AgglomerateOptions& options, int64_t batch_id, Rng& rng) {
  require(pool.size() > 0, "agglomerate_step: empty teacher pool");
  check_batch(batch);
  const int teachers = pool.size();
  const int k = batch.front().size();
  const int groups = static_cast<int>(batch.size());
  const int patches = groups * k;
  const int tokens = student.grid() * student.grid();
  const int dim = student.anchor_dim();
  for (const auto& t : pool.teachers) {
    require(t->tokens() == tokens, "agglomerate_step: teacher token grid differs from the student's");
  }

  std::vector<TeacherView> views;
  for (int i = 0; i < teachers; ++i) views.push_back(view_teacher(pool, i, batch, anchors, options.temperature, true));

  // Weight of teacher i for patch s.
  StepResult result;
  std::vector<std::vector<double>> weight(patches, std::vector<double>(teachers, 0.0));
  if (options.strategy == Strategy::rats) {
    const auto pairs = batch_pairs(batch);
    if (options.per_group) {
      for (int g = 0; g < groups; ++g) {
        std::vector<double> losses;
        for (int i = 0; i < teachers; ++i) {
          losses.push_back(rank_loss({views[i].counts[g]}, {pairs[g]}, options.epsilon_rank));
        }
        auto rec = make_record(batch_id, std::move(losses));
        rec.group = g;
        for (int s = g * k; s < (g + 1) * k; ++s) weight[s][rec.selected_index] = 1.0;
        result.records.push_back(std::move(rec));
      }
    } else {
      std::vector<double> losses;
      for (int i = 0; i < teachers; ++i) losses.push_back(rank_loss(views[i].counts, pairs, options.epsilon_rank));
      auto rec = make_record(batch_id, std::move(losses));
      for (auto& w : weight) w[rec.selected_index] = 1.0;
      result.records.push_back(std::move(rec));
    }
  } else {
    for (auto& w : weight) std::fill(w.begin(), w.end(), 1.0);
  }

  // Student pass; per-teacher losses and gradients are kept so that tdrop
  // can decide after seeing the whole batch.
  std::vector<StudentModel::Cache> caches(patches);
  std::vector<std::vector<nn::Matrix>> grad_tokens(patches, std::vector<nn::Matrix>(teachers));
  std::vector<std::vector<nn::RowVector>> grad_pooled(patches, std::vector<nn::RowVector>(teachers));
  std::vector<double> teacher_loss(teachers, 0.0);
  for (int s = 0; s < patches; ++s) {
    const Patch& patch = batch[s / k].patches[s % k];
    const auto out = student.forward(patch.image, &caches[s]);
    const Eigen::MatrixXd agg = out.aggregate.cast<double>();
    const Eigen::RowVectorXd pooled = out.pooled.cast<double>();
    for (int i = 0; i < teachers; ++i) {
      if (weight[s][i] == 0.0) continue;
      const Eigen::MatrixXd target = views[i].outputs[s].tokens.cast<double>();
      const Eigen::RowVectorXd target_pooled = views[i].outputs[s].pooled.cast<double>();
      // Row-major copies so that tokens are contiguous.
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> a = agg, t = target, ga(tokens, dim);
      Eigen::RowVectorXd gp(dim);
      const double lt = distill_loss({a.data(), std::size_t(a.size())}, {t.data(), std::size_t(t.size())}, tokens,
                                     dim, {ga.data(), std::size_t(ga.size())});
      const double lp = distill_loss({pooled.data(), std::size_t(dim)}, {target_pooled.data(), std::size_t(dim)}, 1,
                                     dim, {gp.data(), std::size_t(dim)});
      teacher_loss[i] += (lt + lp) / patches;
      grad_tokens[s][i] = ga.cast<float>();
      grad_pooled[s][i] = gp.cast<float>();
    }
  }

  std::vector<double> mix(teachers, 0.0);
  if (options.strategy == Strategy::rats) {
    // Each patch follows its own selection; teacher_loss already holds the
    // per-patch contributions.
    for (int i = 0; i < teachers; ++i) result.loss += teacher_loss[i];
    for (int i = 0; i < teachers; ++i) {
      for (int s = 0; s < patches; ++s) {
        if (weight[s][i] > 0.0) {
          result.teachers_used.push_back(i);
          break;
        }
      }
    }
  } else {
    std::vector<bool> keep(teachers, true);
    if (options.strategy == Strategy::tdrop) {
      const int hardest = static_cast<int>(std::max_element(teacher_loss.begin(), teacher_loss.end()) -
                                           teacher_loss.begin());
      for (int i = 0; i < teachers; ++i) keep[i] = i == hardest || rng.uniform() < options.tdrop_keep;
    }
    const double kept = static_cast<double>(std::count(keep.begin(), keep.end(), true));
    for (int i = 0; i < teachers; ++i) {
      if (!keep[i]) continue;
      mix[i] = 1.0 / kept;
      result.loss += mix[i] * teacher_loss[i];
      result.teachers_used.push_back(i);
    }
  }
  if (!std::isfinite(result.loss)) {
    fail("agglomerate_step: non-finite distillation loss in batch " + std::to_string(batch_id));
  }

  const auto params = student.parameters();
  nn::zero_grad(params);
  const float inv_patches = 1.0f / static_cast<float>(patches);
  for (int s = 0; s < patches; ++s) {
    nn::Matrix d_tokens = nn::Matrix::Zero(tokens, dim);
    nn::RowVector d_pooled = nn::RowVector::Zero(dim);
    for (int i = 0; i < teachers; ++i) {
      const double w = options.strategy == Strategy::rats ? weight[s][i] : mix[i];
      if (w == 0.0) continue;
      d_tokens += static_cast<float>(w) * inv_patches * grad_tokens[s][i];
      d_pooled += static_cast<float>(w) * inv_patches * grad_pooled[s][i];
    }
    student.backward(d_tokens, d_pooled, caches[s]);
  }
  optimizer.step(params, options.learning_rate);
  return result;
}

std::string selection_to_json(const SelectionRecord& record) {
  nlohmann::ordered_json j;
  j["batch_id"] = record.batch_id;
  if (record.group >= 0) j["group"] = record.group;
  j["losses"] = record.losses;
  j["selected_index"] = record.selected_index;
  j["tie_broken"] = record.tie_broken;
  return j.dump();
}

void append_selection_log(const std::filesystem::path& path, const std::vector<SelectionRecord>& records) {
  std::ofstream out(path, std::ios::app);
  if (!out) fail("cannot open selection log " + path.string());
  for (const auto& r : records) out << selection_to_json(r) << '\n';
}

std::vector<SelectionRecord> read_selection_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open selection log " + path.string());
  std::vector<SelectionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    SelectionRecord r;
    r.batch_id = j.at("batch_id").get<int64_t>();
    r.group = j.value("group", -1);
    r.losses = j.at("losses").get<std::vector<double>>();
    r.selected_index = j.at("selected_index").get<int>();
    r.tie_broken = j.at("tie_broken").get<bool>();
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<int64_t> selection_histogram(const std::vector<SelectionRecord>& records, int pool_size) {
  std::vector<int64_t> hist(pool_size, 0);
  for (const auto& r : records) {
    require(r.selected_index >= 0 && r.selected_index < pool_size, "selection_histogram: index out of range");
    ++hist[r.selected_index];
  }
  return hist;
}

}  // namespace countlab
