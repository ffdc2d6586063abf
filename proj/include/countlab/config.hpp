#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "countlab/encoders.hpp"
#include "countlab/losses.hpp"
#include "countlab/rats.hpp"
#include "countlab/synthdata.hpp"

namespace countlab {

struct ScheduleConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double min_learning_rate = 1e-6;
  int warmup_epochs = 2;
  double weight_decay = 0.05;
};

/// Every tunable of a run. Defaults are the full-size setup scaled to a
/// 20-epoch, batch-32 schedule; the desk-scale configs in configs/ shrink
/// the image and the student further.
struct RunConfig {
  uint64_t seed = 0;

  // data
  int images = 2000;
  int holdout = 200;
  SynthConfig synth;

  // patch groups
  int k = 4;
  int crop_size = 224;  // M
  std::vector<double> ratios{0.625, 0.75, 0.875, 1.0};

  // anchors and head
  int n = 4;
  int anchor_dim = 64;
  std::string text_encoder = "hash";  // or table:<path>
  double temperature = 0.07;

  LossConfig loss;
  TransformerConfig student;

  // teachers
  std::vector<std::string> teachers{"synthetic:0", "synthetic:5", "synthetic:10"};
  int pretrain_epochs = 1;
  int pretrain_images = 200;
  double pretrain_learning_rate = 1e-3;

  // agglomeration
  Strategy strategy = Strategy::rats;
  bool per_group = false;
  double tdrop_keep = 0.5;
  ScheduleConfig agglomerate;

  // fine-tuning
  ScheduleConfig finetune{20, 32, 1e-3, 1e-6, 2, 0.0};
  bool unfreeze = false;

  // evaluation and prediction
  std::vector<double> tps_thresholds{0.01, 0.5};
  double peak_threshold = 0.3;
  int peak_min_distance = 1;

  RunConfig();
  void validate() const;
  StudentConfig student_config() const { return {student, anchor_dim}; }
};

/// Parses an INI-style file: [section] headers and key = value lines.
/// Unknown sections or keys are errors.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);
/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);

}  // namespace countlab
