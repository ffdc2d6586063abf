#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "countlab/anchors.hpp"
#include "countlab/densityhead.hpp"
#include "countlab/losses.hpp"
#include "countlab/nn.hpp"
#include "countlab/patchgroup.hpp"

namespace countlab {

/// Tokens are row-major over the (M/p) x (M/p) grid.
struct EncoderOutput {
  nn::Matrix tokens;               // T x width
  nn::RowVector pooled;            // 1 x width
  std::vector<nn::Matrix> layers;  // selected intermediate outputs, T x width each
};

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual std::string name() const = 0;
  virtual int width() const = 0;
  virtual int image_size() const = 0;
  virtual int patch_size() const = 0;
  virtual EncoderOutput forward(const Patch& patch) const = 0;
  virtual nn::ConstParamList parameters() const = 0;

  int grid() const { return image_size() / patch_size(); }
  int tokens() const { return grid() * grid(); }
  std::size_t parameter_count() const { return nn::parameter_count(parameters()); }
};

struct TransformerConfig {
  int image_size = 84;
  int patch = 14;
  int width = 128;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 2;
  double init_std = 0.02;
  std::vector<int> layer_ids;  // empty: final quarter of the blocks

  void validate() const;
  std::vector<int> resolved_layers() const;
};

/// ViT-style encoder: linear patch embedding, learned positions, pre-norm
/// blocks, final LayerNorm on the output tokens.
class TransformerEncoder : public Encoder {
 public:
  struct Cache {
    nn::Matrix patches;
    std::vector<nn::TransformerBlock::Cache> blocks;
    nn::Matrix last;
    nn::LayerNorm::Cache norm;
  };

  TransformerEncoder(std::string name, const TransformerConfig& config, uint64_t seed);

  std::string name() const override { return name_; }
  int width() const override { return config_.width; }
  int image_size() const override { return config_.image_size; }
  int patch_size() const override { return config_.patch; }
  EncoderOutput forward(const Patch& patch) const override { return forward(patch.image, nullptr); }
  nn::ConstParamList parameters() const override;

  EncoderOutput forward(const Image& image, Cache* cache) const;
  /// d_layers matches the selected layers; d_tokens may be empty.
  void backward(const std::vector<nn::Matrix>& d_layers, const nn::Matrix& d_tokens, Cache& cache);
  nn::ParamList parameters();
  const TransformerConfig& config() const { return config_; }

 private:
  nn::Matrix patchify(const Image& image) const;

  std::string name_;
  TransformerConfig config_;
  std::vector<int> layers_;
  nn::Linear embed_;
  nn::Param position_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm norm_;
};

struct StudentConfig {
  TransformerConfig backbone;
  int anchor_dim = 64;
};

/// Backbone plus one projector per selected layer; the projected layers are
/// averaged into the aggregate feature map.
class StudentModel {
 public:
  struct Output {
    nn::Matrix aggregate;  // T x anchor_dim
    nn::RowVector pooled;
  };
  struct Cache {
    TransformerEncoder::Cache backbone;
    std::vector<nn::Projector::Cache> projectors;
  };

  StudentModel(const StudentConfig& config, uint64_t seed);

  Output forward(const Image& image, Cache* cache) const;
  void backward(const nn::Matrix& d_aggregate, const nn::RowVector& d_pooled, Cache& cache);

  const StudentConfig& config() const { return config_; }
  int grid() const { return backbone_.grid(); }
  int anchor_dim() const { return config_.anchor_dim; }
  const TransformerEncoder& backbone() const { return backbone_; }
  nn::ParamList parameters();
  nn::ConstParamList parameters() const;
  std::size_t parameter_count() const { return nn::parameter_count(parameters()); }

 private:
  StudentConfig config_;
  TransformerEncoder backbone_;
  std::vector<nn::Projector> projectors_;
};

/// Aggregate feature map and pooled vector of the student for one image.
std::pair<FeatureMap, std::vector<double>> student_forward(const StudentModel& student, const Image& image);

/// Frozen stand-in for a foundation model with a controllable skill level.
/// It reads the patch's point annotations, perturbs the per-block counts by
/// N(0, sigma^2) (clipped to [0, n]), and synthesises unit vectors whose
/// anchor softmax has exactly that expectation: per-category counts against
/// the class anchors for tokens, the total against the "cell" anchors for
/// the pooled vector.
class SyntheticTeacher : public Encoder {
 public:
  SyntheticTeacher(double skill_noise, uint64_t seed, const AnchorTensor& class_anchors,
                   const AnchorTensor& rats_anchors, double temperature, int image_size, int patch);

  std::string name() const override;
  int width() const override { return dim_; }
  int image_size() const override { return image_size_; }
  int patch_size() const override { return patch_; }
  EncoderOutput forward(const Patch& patch) const override;
  nn::ConstParamList parameters() const override { return {}; }

  double skill_noise() const { return sigma_; }

 private:
  struct Basis {
    int groups = 0;
    int bins = 0;
    Eigen::MatrixXd anchors;  // rows are anchors
    Eigen::MatrixXd gram_inv;
    Eigen::VectorXd orthogonal;
    double start_gap = 0.0;
  };
  static Basis make_basis(const AnchorTensor& anchors, uint64_t key);
  Eigen::VectorXd synthesise(const Basis& basis, const std::vector<double>& targets, double* gap_used = nullptr) const;

  double sigma_;
  uint64_t seed_;
  double temperature_;
  int n_;
  int categories_;
  int dim_;
  int image_size_;
  int patch_;
  Basis tokens_;
  Basis pooled_;
};

std::shared_ptr<SyntheticTeacher> make_synthetic_teacher(double skill_noise, uint64_t seed,
                                                         const AnchorTensor& class_anchors,
                                                         const AnchorTensor& rats_anchors, double temperature,
                                                         int image_size, int patch);

/// Frozen teachers and their trainable alignment adapters (teacher width to
/// anchor width), in a fixed order.
struct TeacherPool {
  std::vector<std::shared_ptr<const Encoder>> teachers;
  std::vector<nn::Projector> projectors;

  int size() const { return static_cast<int>(teachers.size()); }
  void add(std::shared_ptr<const Encoder> teacher, int anchor_dim, Rng& rng);
  /// Adapter applied to a teacher output.
  EncoderOutput project(int index, const EncoderOutput& raw) const;
};

/// Density head plus training objective over anchor-space features.
struct CountingHead {
  AnchorTensor anchors;
  CountBinning binning;
  double temperature = 0.07;
  LossConfig loss;

  CountingHead(AnchorTensor a, CountBinning b, double t, LossConfig l)
      : anchors(std::move(a)), binning(b), temperature(t), loss(std::move(l)) {}

  DensityBundle predict(const nn::Matrix& features, int grid) const;
  /// total_loss of the head on `features`; grad (T x d) is overwritten when given.
  LossBreakdown evaluate(const nn::Matrix& features, int grid, const BlockTargets& targets,
                         nn::Matrix* grad) const;
};

FeatureMap to_feature_map(const nn::Matrix& features, int grid);
nn::Matrix from_feature_map(const FeatureMap& map);

struct PretrainOptions {
  int epochs = 1;
  double learning_rate = 1e-3;
  int batch_size = 16;
  uint64_t seed = 0;
};

struct PretrainResult {
  nn::Projector projector;
  std::vector<double> epoch_loss;  // mean training loss per epoch
  double initial_loss = 0.0;       // mean loss before the first update
  double final_loss = 0.0;         // mean loss after the last update
};

/// Trains the adapter so that the teacher's projected tokens minimise the
/// counting loss. The teacher stays frozen.
PretrainResult pretrain_projector(const Encoder& teacher, nn::Projector projector,
                                  const std::vector<Patch>& patches, const std::vector<BlockTargets>& targets,
                                  const CountingHead& head, const PretrainOptions& options);

}  // namespace countlab
