#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "countlab/config.hpp"
#include "countlab/metrics.hpp"
#include "countlab/rats.hpp"
#include "countlab/tensor_io.hpp"

namespace countlab {

namespace fs = std::filesystem;

struct Dataset {
  std::vector<AnnotatedImage> train;
  std::vector<AnnotatedImage> test;
};

/// Reads train.json and test.json from a generated dataset directory.
Dataset load_dataset(const fs::path& dir);

struct AnchorSet {
  AnchorTensor classes;  // m x (n+1)
  AnchorTensor rats;     // 1 x (n+1), category "cell"
};

std::unique_ptr<TextEncoder> make_text_encoder(const RunConfig& config);
AnchorSet make_anchors(const RunConfig& config);
CountingHead make_head(const RunConfig& config, const AnchorSet& anchors);

/// Teacher from a spec string: synthetic:<sigma>, transformer:<width>x<depth>,
/// or file:<name> (looked up as $COUNTLAB_CACHE/<name>.ctn).
std::shared_ptr<const Encoder> make_teacher(const std::string& spec, int index, const RunConfig& config,
                                            const AnchorSet& anchors);

/// Frozen encoder weights in the tensor format.
void save_encoder(const TransformerEncoder& encoder, const fs::path& path);
std::shared_ptr<TransformerEncoder> load_encoder(const fs::path& path);

/// Teachers from the config with adapters, pretrained on the first
/// `pretrain_images` training images when pretrain_epochs > 0.
TeacherPool build_teacher_pool(const RunConfig& config, const AnchorSet& anchors,
                               const std::vector<AnnotatedImage>& train);

/// M x M training view of an image: the full-size crop of its ranked group.
Patch training_patch(const AnnotatedImage& image, const RunConfig& config, uint64_t salt);

StudentModel make_student(const RunConfig& config);

struct AgglomerateOutcome {
  StudentModel student;
  std::vector<SelectionRecord> records;
  std::vector<double> epoch_loss;
  std::string rng_state;
};

AgglomerateOutcome run_agglomerate(const RunConfig& config, const std::vector<AnnotatedImage>& train,
                                   const TeacherPool& pool, const AnchorSet& anchors,
                                   const fs::path& selection_log = {});

/// Student plus the vision decoder that maps its features into anchor space.
struct CountingModel {
  StudentModel student;
  nn::Projector decoder;

  nn::Matrix features(const Image& image) const;
};

struct EpochLoss {
  double total = 0.0;
  double count = 0.0;
  double exclusivity = 0.0;
};

struct FinetuneOutcome {
  CountingModel model;
  std::vector<EpochLoss> curve;
  std::string rng_state;
};

FinetuneOutcome run_finetune(const RunConfig& config, StudentModel student, const std::vector<AnnotatedImage>& train,
                             const AnchorSet& anchors);

TensorFile make_checkpoint(const RunConfig& config, const std::string& stage, const StudentModel& student,
                           const nn::Projector* decoder, const std::string& rng_state);

struct LoadedCheckpoint {
  RunConfig config;
  std::string stage;
  StudentModel student;
  std::optional<nn::Projector> decoder;
  std::string rng_state;
};

LoadedCheckpoint read_checkpoint(const TensorFile& file);

struct Prediction {
  DensityBundle bundle;  // grid covers ceil(H/p) x ceil(W/p) blocks
  std::vector<double> counts;
};

/// Tiles the image with M x M windows (padding with the median colour) and
/// stitches the per-tile density maps.
Prediction predict_image(const CountingModel& model, const CountingHead& head, const Image& image);

std::vector<ImageCounts> predict_counts(const CountingModel& model, const CountingHead& head,
                                        const std::vector<AnnotatedImage>& images);

/// Ground-truth count of every category.
std::vector<double> true_counts(const AnnotatedImage& image, int categories);

struct Evaluation {
  CountReport report;
  std::vector<ImageCounts> counts;
  double qwk = 0.0;
};

Evaluation evaluate_model(const CountingModel& model, const RunConfig& config, const AnchorSet& anchors,
                          const std::vector<AnnotatedImage>& images);
Evaluation evaluate_records(const std::vector<ImageCounts>& counts, const RunConfig& config);

/// {"NM", "NR", "PM", "PR", "TM", "WM"} in that order.
std::string report_json(const CountReport& report);

// Commands. Each writes its artefacts into out_dir.
void cmd_gen_data(const RunConfig& config, const fs::path& out_dir);
void cmd_agglomerate(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir);
void cmd_finetune(const RunConfig& config, const fs::path& checkpoint, const fs::path& data_dir,
                  const fs::path& out_dir);
void cmd_evaluate(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out_dir);
void cmd_predict(const fs::path& checkpoint, const fs::path& image, const fs::path& out_dir);

struct AblationRow {
  Strategy strategy;
  CountReport report;
};

std::vector<AblationRow> run_ablation(const RunConfig& config, const Dataset& data);
void cmd_ablate(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir);

}  // namespace countlab
