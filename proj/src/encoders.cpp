#include "countlab/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <spdlog/spdlog.h>

#include "countlab/error.hpp"

namespace countlab {

// ---------------------------------------------------------------- config

void TransformerConfig::validate() const {
  require(image_size > 0 && patch > 0, "transformer: sizes must be positive");
  require(image_size % patch == 0, "transformer: image size must be a multiple of the patch size");
  require(width > 0 && depth > 0 && mlp_ratio > 0, "transformer: width, depth and mlp ratio must be positive");
  require(heads > 0 && width % heads == 0, "transformer: width must be divisible by heads");
  for (int id : layer_ids) require(id >= 0 && id < depth, "transformer: layer id out of range");
  for (std::size_t i = 1; i < layer_ids.size(); ++i) {
    require(layer_ids[i] > layer_ids[i - 1], "transformer: layer ids must be strictly increasing");
  }
}

std::vector<int> TransformerConfig::resolved_layers() const {
  if (!layer_ids.empty()) return layer_ids;
  const int count = std::max(1, depth / 4);
  std::vector<int> ids(count);
  std::iota(ids.begin(), ids.end(), depth - count);
  return ids;
}

// ----------------------------------------------------- TransformerEncoder

TransformerEncoder::TransformerEncoder(std::string name, const TransformerConfig& config, uint64_t seed)
    : name_(std::move(name)), config_(config) {
  config_.validate();
  layers_ = config_.resolved_layers();
  Rng rng(seed);
  const int p = config_.patch;
  embed_ = nn::Linear(name_ + ".embed", p * p * Image::kChannels, config_.width, config_.init_std, rng);
  position_.init(name_ + ".position", tokens(), config_.width, false);
  for (Eigen::Index k = 0; k < position_.value.size(); ++k) {
    position_.value.data()[k] = static_cast<float>(config_.init_std * rng.normal());
  }
  for (int b = 0; b < config_.depth; ++b) {
    blocks_.emplace_back(name_ + ".block" + std::to_string(b), config_.width, config_.heads,
                         config_.width * config_.mlp_ratio, config_.init_std, rng);
  }
  norm_ = nn::LayerNorm(name_ + ".norm", config_.width);
}

nn::Matrix TransformerEncoder::patchify(const Image& image) const {
  const int M = config_.image_size;
  if (image.height() != M || image.width() != M) {
    fail(name_ + ": image shape mismatch, expected " + std::to_string(M) + "x" + std::to_string(M) + ", got " +
         std::to_string(image.height()) + "x" + std::to_string(image.width()));
  }
  const int p = config_.patch;
  const int g = grid();
  nn::Matrix out(g * g, p * p * Image::kChannels);
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      float* row = out.row(gy * g + gx).data();
      for (int py = 0; py < p; ++py) {
        for (int px = 0; px < p; ++px) {
          for (int c = 0; c < Image::kChannels; ++c) {
            *row++ = image.at(gy * p + py, gx * p + px, c) - 0.5f;
          }
        }
      }
    }
  }
  return out;
}

EncoderOutput TransformerEncoder::forward(const Image& image, Cache* cache) const {
  nn::Matrix patches = patchify(image);
  nn::Matrix x = embed_.forward(patches) + position_.value;
  EncoderOutput out;
  if (cache) cache->blocks.resize(blocks_.size());
  std::size_t next = 0;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    x = blocks_[b].forward(x, cache ? &cache->blocks[b] : nullptr);
    if (next < layers_.size() && layers_[next] == static_cast<int>(b)) {
      out.layers.push_back(x);
      ++next;
    }
  }
  out.tokens = norm_.forward(x, cache ? &cache->norm : nullptr);
  out.pooled = out.tokens.colwise().mean();
  if (cache) {
    cache->patches = std::move(patches);
    cache->last = std::move(x);
  }
  return out;
}

void TransformerEncoder::backward(const std::vector<nn::Matrix>& d_layers, const nn::Matrix& d_tokens,
                                  Cache& cache) {
  require(d_layers.size() == layers_.size(), name_ + ": one gradient per selected layer expected");
  const bool from_top = d_tokens.size() > 0;
  nn::Matrix d = from_top ? norm_.backward(d_tokens, cache.norm) : nn::Matrix::Zero(tokens(), config_.width);
  bool active = from_top;
  int next = static_cast<int>(layers_.size()) - 1;
  for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
    if (next >= 0 && layers_[next] == b) {
      d += d_layers[next];
      active = true;
      --next;
    }
    if (active) d = blocks_[b].backward(d, cache.blocks[b]);
  }
  position_.grad += d;
  embed_.backward(cache.patches, d);
}

nn::ParamList TransformerEncoder::parameters() {
  nn::ParamList out;
  embed_.collect(out);
  out.push_back(&position_);
  for (auto& b : blocks_) b.collect(out);
  norm_.collect(out);
  return out;
}

nn::ConstParamList TransformerEncoder::parameters() const {
  nn::ConstParamList out;
  embed_.collect(out);
  out.push_back(&position_);
  for (const auto& b : blocks_) b.collect(out);
  norm_.collect(out);
  return out;
}

// ------------------------------------------------------------- student

StudentModel::StudentModel(const StudentConfig& config, uint64_t seed)
    : config_(config), backbone_("student", config.backbone, seed) {
  require(config_.anchor_dim > 0, "student: anchor dimension must be positive");
  Rng rng(hash_combine(seed, 0x70726f6aULL));
  const auto layers = config_.backbone.resolved_layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    projectors_.emplace_back("student.proj" + std::to_string(layers[k]), config_.backbone.width, config_.anchor_dim,
                             rng);
  }
}

StudentModel::Output StudentModel::forward(const Image& image, Cache* cache) const {
  TransformerEncoder::Cache* bc = cache ? &cache->backbone : nullptr;
  const EncoderOutput enc = backbone_.forward(image, bc);
  if (cache) cache->projectors.resize(projectors_.size());
  Output out;
  out.aggregate = nn::Matrix::Zero(backbone_.tokens(), config_.anchor_dim);
  for (std::size_t k = 0; k < projectors_.size(); ++k) {
    out.aggregate += projectors_[k].forward(enc.layers[k], cache ? &cache->projectors[k] : nullptr);
  }
  out.aggregate /= static_cast<float>(projectors_.size());
  out.pooled = out.aggregate.colwise().mean();
  return out;
}

void StudentModel::backward(const nn::Matrix& d_aggregate, const nn::RowVector& d_pooled, Cache& cache) {
  nn::Matrix d = d_aggregate;
  if (d_pooled.size() > 0) d.rowwise() += d_pooled / static_cast<float>(d.rows());
  d /= static_cast<float>(projectors_.size());
  std::vector<nn::Matrix> d_layers;
  for (std::size_t k = 0; k < projectors_.size(); ++k) {
    d_layers.push_back(projectors_[k].backward(d, cache.projectors[k]));
  }
  backbone_.backward(d_layers, nn::Matrix(), cache.backbone);
}

nn::ParamList StudentModel::parameters() {
  nn::ParamList out = backbone_.parameters();
  for (auto& p : projectors_) p.collect(out);
  return out;
}

nn::ConstParamList StudentModel::parameters() const {
  nn::ConstParamList out = backbone_.parameters();
  for (const auto& p : projectors_) p.collect(out);
  return out;
}

std::pair<FeatureMap, std::vector<double>> student_forward(const StudentModel& student, const Image& image) {
  const auto out = student.forward(image, nullptr);
  std::vector<double> pooled(out.pooled.data(), out.pooled.data() + out.pooled.size());
  return {to_feature_map(out.aggregate, student.grid()), std::move(pooled)};
}

// --------------------------------------------------- synthetic teachers

namespace {

// Tent logits: 0 at mu, falling linearly to -gap one bin away.
double tent_expectation(double mu, double gap, int bins, std::vector<double>& logits) {
  double mx = -1e300;
  for (int j = 0; j < bins; ++j) {
    logits[j] = -gap * std::min(1.0, std::abs(j - mu));
    mx = std::max(mx, logits[j]);
  }
  double z = 0.0, e = 0.0;
  for (int j = 0; j < bins; ++j) {
    const double w = std::exp(logits[j] - mx);
    z += w;
    e += w * j;
  }
  return e / z;
}

std::vector<double> tent_logits(double target, double gap, int bins) {
  std::vector<double> logits(bins);
  double lo = 0.0, hi = bins - 1.0;
  if (target <= tent_expectation(lo, gap, bins, logits)) return logits;
  if (target >= tent_expectation(hi, gap, bins, logits)) return logits;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (tent_expectation(mid, gap, bins, logits) < target) lo = mid;
    else hi = mid;
  }
  tent_expectation(0.5 * (lo + hi), gap, bins, logits);
  return logits;
}

}  // namespace

SyntheticTeacher::SyntheticTeacher(double skill_noise, uint64_t seed, const AnchorTensor& class_anchors,
                                   const AnchorTensor& rats_anchors, double temperature, int image_size, int patch)
    : sigma_(skill_noise),
      seed_(seed),
      temperature_(temperature),
      n_(class_anchors.bins - 1),
      categories_(class_anchors.categories),
      dim_(class_anchors.dim),
      image_size_(image_size),
      patch_(patch) {
  require(std::isfinite(skill_noise) && skill_noise >= 0.0, "synthetic teacher: skill noise must be >= 0");
  require(temperature > 0.0, "synthetic teacher: temperature must be positive");
  require(rats_anchors.dim == dim_ && rats_anchors.bins == class_anchors.bins,
          "synthetic teacher: class and ranking anchors disagree in shape");
  require(image_size > 0 && patch > 0 && image_size % patch == 0,
          "synthetic teacher: image size must be a multiple of the patch size");
  tokens_ = make_basis(class_anchors, hash_combine(seed, 1));
  pooled_ = make_basis(rats_anchors, hash_combine(seed, 2));
  // Most targets share one feasible logit gap. Find it once on a half-integer
  // grid so that forward() rarely has to search.
  for (Basis* b : {&tokens_, &pooled_}) {
    double smallest = 2.0 / temperature_;
    std::vector<double> t(b->groups, 0.0);
    const int steps = 2 * n_ + 1;
    int combos = 1;
    for (int i = 0; i < b->groups; ++i) combos *= steps;
    for (int c = 0; c < combos; ++c) {
      for (int i = 0, r = c; i < b->groups; ++i, r /= steps) t[i] = 0.5 * (r % steps);
      double gap = 0.0;
      synthesise(*b, t, &gap);
      smallest = std::min(smallest, gap);
    }
    b->start_gap = smallest;
  }
}

std::string SyntheticTeacher::name() const { return "synthetic(sigma=" + fmt::format("{:g}", sigma_) + ")"; }

SyntheticTeacher::Basis SyntheticTeacher::make_basis(const AnchorTensor& anchors, uint64_t key) {
  Basis b;
  b.groups = anchors.categories;
  b.bins = anchors.bins;
  const int rows = b.groups * b.bins;
  require(anchors.dim > rows, "synthetic teacher: anchor dimension must exceed the number of anchors");
  b.anchors = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      anchors.values.data(), rows, anchors.dim);
  const Eigen::MatrixXd gram = b.anchors * b.anchors.transpose();
  b.gram_inv = gram.ldlt().solve(Eigen::MatrixXd::Identity(rows, rows));
  Eigen::VectorXd z(anchors.dim);
  for (int k = 0; k < anchors.dim; ++k) z(k) = counter_normal(key, k);
  z -= b.anchors.transpose() * (b.gram_inv * (b.anchors * z));
  require(z.norm() > 1e-9, "synthetic teacher: anchors span the whole space");
  b.orthogonal = z.normalized();
  return b;
}

// Unit vector whose cosines with the anchors reproduce, after the
// temperature softmax, the requested expectation in every group.
Eigen::VectorXd SyntheticTeacher::synthesise(const Basis& basis, const std::vector<double>& targets,
                                             double* gap_used) const {
  const int rows = basis.groups * basis.bins;
  Eigen::MatrixXd groups = Eigen::MatrixXd::Zero(rows, basis.groups);
  for (int i = 0; i < basis.groups; ++i) groups.block(i * basis.bins, i, basis.bins, 1).setOnes();
  const Eigen::MatrixXd gi_groups = basis.gram_inv * groups;
  const Eigen::MatrixXd normal = groups.transpose() * gi_groups;
  double gap = basis.start_gap > 0.0 ? basis.start_gap : 2.0 / temperature_;
  for (int attempt = 0; attempt < 400; ++attempt, gap *= 0.97) {
    Eigen::VectorXd c(rows);
    for (int i = 0; i < basis.groups; ++i) {
      const auto logits = tent_logits(targets[i], gap, basis.bins);
      for (int j = 0; j < basis.bins; ++j) c(i * basis.bins + j) = temperature_ * logits[j];
    }
    // Per-group offsets do not change the softmax; pick the ones that
    // minimise the norm of the anchor-span component.
    const Eigen::VectorXd k = -normal.ldlt().solve(gi_groups.transpose() * c);
    c += groups * k;
    const Eigen::VectorXd w = basis.gram_inv * c;
    const double q = c.dot(w);
    if (q <= 1.0) {
      if (gap_used) *gap_used = gap;
      return basis.anchors.transpose() * w + std::sqrt(1.0 - q) * basis.orthogonal;
    }
  }
  fail("synthetic teacher: could not realise the requested counts");
}

EncoderOutput SyntheticTeacher::forward(const Patch& patch) const {
  if (!patch.points) fail(name() + ": patch carries no count metadata");
  if (patch.image.height() != image_size_ || patch.image.width() != image_size_) {
    fail(name() + ": image shape mismatch");
  }
  const auto pixels = patch.image.pixels();
  const uint64_t key = hash_combine(
      seed_, hash64(std::string_view(reinterpret_cast<const char*>(pixels.data()), pixels.size_bytes())));
  const CountBinning binning(n_);
  const BlockTargets targets =
      build_block_targets(*patch.points, image_size_, image_size_, patch_, binning, categories_);
  const int g = grid();
  const double n = n_;
  auto noisy = [&](double count, uint64_t counter) {
    return std::clamp(count + sigma_ * counter_normal(key, counter), 0.0, n);
  };

  EncoderOutput out;
  out.tokens.resize(g * g, dim_);
  std::vector<double> t(categories_);
  double total = 0.0;
  for (int u = 0; u < g; ++u) {
    for (int v = 0; v < g; ++v) {
      for (int i = 0; i < categories_; ++i) {
        const double c = static_cast<double>(targets.count(u, v, i));
        total += c;
        t[i] = noisy(c, static_cast<uint64_t>((u * g + v) * categories_ + i));
      }
      out.tokens.row(u * g + v) = synthesise(tokens_, t).cast<float>().transpose();
    }
  }
  const std::vector<double> pooled_target{noisy(total, uint64_t{1} << 40)};
  out.pooled = synthesise(pooled_, pooled_target).cast<float>().transpose();
  return out;
}

std::shared_ptr<SyntheticTeacher> make_synthetic_teacher(double skill_noise, uint64_t seed,
                                                         const AnchorTensor& class_anchors,
                                                         const AnchorTensor& rats_anchors, double temperature,
                                                         int image_size, int patch) {
  return std::make_shared<SyntheticTeacher>(skill_noise, seed, class_anchors, rats_anchors, temperature, image_size,
                                            patch);
}

// ----------------------------------------------------------------- pool

void TeacherPool::add(std::shared_ptr<const Encoder> teacher, int anchor_dim, Rng& rng) {
  require(teacher != nullptr, "teacher pool: missing teacher");
  if (!teachers.empty()) {
    require(teacher->image_size() == teachers.front()->image_size() &&
                teacher->patch_size() == teachers.front()->patch_size(),
            "teacher pool: teachers must share image and patch size");
  }
  projectors.emplace_back("adapter" + std::to_string(teachers.size()), teacher->width(), anchor_dim, rng);
  teachers.push_back(std::move(teacher));
}

EncoderOutput TeacherPool::project(int index, const EncoderOutput& raw) const {
  const auto& proj = projectors.at(static_cast<std::size_t>(index));
  EncoderOutput out;
  out.tokens = proj.forward(raw.tokens, nullptr);
  out.pooled = proj.forward(raw.pooled, nullptr);
  return out;
}

// ------------------------------------------------------------ head

FeatureMap to_feature_map(const nn::Matrix& features, int grid) {
  require(features.rows() == static_cast<Eigen::Index>(grid) * grid, "feature map: token count mismatch");
  FeatureMap map(grid, grid, static_cast<int>(features.cols()));
  std::copy(features.data(), features.data() + features.size(), map.values.begin());
  return map;
}

nn::Matrix from_feature_map(const FeatureMap& map) {
  nn::Matrix out(map.locations(), map.dim);
  std::copy(map.values.begin(), map.values.end(), out.data());
  return out;
}

DensityBundle CountingHead::predict(const nn::Matrix& features, int grid) const {
  return density_head(to_feature_map(features, grid), anchors, temperature, binning);
}

LossBreakdown CountingHead::evaluate(const nn::Matrix& features, int grid, const BlockTargets& targets,
                                     nn::Matrix* grad) const {
  const FeatureMap map = to_feature_map(features, grid);
  const DensityBundle bundle = density_head(map, anchors, temperature, binning);
  LossGradients g;
  const LossBreakdown out = total_loss(bundle.probs, bundle.density, targets, binning, loss, grad ? &g : nullptr);
  if (grad) {
    ProbabilityMap dp = expected_density_backward(g.density, binning, binning.num_bins());
    for (std::size_t k = 0; k < dp.values.size(); ++k) dp.values[k] += g.probs.values[k];
    *grad = from_feature_map(similarity_probs_backward(map, anchors, temperature, bundle.probs, dp));
  }
  return out;
}

// ------------------------------------------------------------ pretraining

PretrainResult pretrain_projector(const Encoder& teacher, nn::Projector projector,
                                  const std::vector<Patch>& patches, const std::vector<BlockTargets>& targets,
                                  const CountingHead& head, const PretrainOptions& options) {
  require(patches.size() == targets.size(), "pretrain_projector: one target per patch expected");
  require(projector.in_features() == teacher.width() && projector.out_features() == head.anchors.dim,
          "pretrain_projector: projector does not match teacher and anchors");
  require(options.epochs >= 0 && options.batch_size > 0, "pretrain_projector: bad options");
  CountingHead counting = head;
  counting.loss.gamma = 0.0;
  const int g = teacher.grid();

  // Teacher outputs never change, so compute them once.
  std::vector<nn::Matrix> features;
  features.reserve(patches.size());
  for (const auto& p : patches) features.push_back(teacher.forward(p).tokens);

  auto mean_loss = [&](const nn::Projector& proj) {
    double sum = 0.0;
    for (std::size_t k = 0; k < features.size(); ++k) {
      sum += counting.evaluate(proj.forward(features[k], nullptr), g, targets[k], nullptr).total;
    }
    return features.empty() ? 0.0 : sum / static_cast<double>(features.size());
  };

  PretrainResult result;
  result.initial_loss = mean_loss(projector);
  if (options.epochs == 0 || features.empty()) {
    result.final_loss = result.initial_loss;
    result.projector = std::move(projector);
    return result;
  }
  nn::ParamList params;
  projector.collect(params);
  nn::AdamW optimizer(nn::AdamWOptions{.weight_decay = 0.0});
  Rng rng(options.seed);
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t k = order.size(); k > 1; --k) {
      std::swap(order[k - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(k) - 1))]);
    }
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      nn::zero_grad(params);
      for (std::size_t s = start; s < end; ++s) {
        const std::size_t k = order[s];
        nn::Projector::Cache cache;
        const nn::Matrix f = projector.forward(features[k], &cache);
        nn::Matrix grad;
        const double loss = counting.evaluate(f, g, targets[k], &grad).total;
        if (!std::isfinite(loss)) fail("pretrain_projector: loss diverged in epoch " + std::to_string(epoch));
        sum += loss;
        projector.backward(grad / static_cast<float>(end - start), cache);
      }
      optimizer.step(params, options.learning_rate);
    }
    result.epoch_loss.push_back(sum / static_cast<double>(order.size()));
    spdlog::debug("pretrain {} epoch {} loss {:.6f}", teacher.name(), epoch, result.epoch_loss.back());
  }
  result.final_loss = mean_loss(projector);
  if (!std::isfinite(result.final_loss)) {
    fail("pretrain_projector: loss diverged in epoch " + std::to_string(options.epochs - 1));
  }
  result.projector = std::move(projector);
  return result;
}

}  // namespace countlab
