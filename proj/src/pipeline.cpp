#include "countlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fmt/format.h>
#include <fstream>
#include <numeric>
#include <spdlog/spdlog.h>

#include "countlab/error.hpp"

namespace countlab {

namespace {

uint64_t salted(const RunConfig& config, std::string_view what) { return hash_combine(config.seed, hash64(what)); }

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t k = order.size(); k > 1; --k) {
    std::swap(order[k - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(k) - 1))]);
  }
}

std::vector<std::size_t> iota_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write " + path.string());
  out << text;
}

int categories() { return CategorySet::ihc_default().size(); }

}  // namespace

// ------------------------------------------------------------------ data

Dataset load_dataset(const fs::path& dir) {
  Dataset data;
  data.train = load_annotations(dir / "train.json");
  data.test = load_annotations(dir / "test.json");
  return data;
}

void cmd_gen_data(const RunConfig& config, const fs::path& out_dir) {
  SynthConfig synth = config.synth;
  synth.seed = config.seed;
  const auto images = generate_dataset(synth, config.images, config.holdout, out_dir);
  spdlog::info("wrote {} images to {}", images.size(), out_dir.string());
}

// --------------------------------------------------------------- anchors

std::unique_ptr<TextEncoder> make_text_encoder(const RunConfig& config) {
  if (config.text_encoder == "hash") return std::make_unique<HashTextEncoder>(config.anchor_dim);
  if (config.text_encoder.rfind("table:", 0) == 0) {
    auto table = TableTextEncoder::from_json_file(config.text_encoder.substr(6));
    require(table.dim() == config.anchor_dim, "text encoder table dimension differs from anchors.dim");
    return std::make_unique<TableTextEncoder>(std::move(table));
  }
  fail("unknown text encoder '" + config.text_encoder + "'");
}

AnchorSet make_anchors(const RunConfig& config) {
  const auto encoder = make_text_encoder(config);
  const CountBinning binning(config.n);
  return {build_anchor_tensor(CategorySet::ihc_default(), binning, *encoder), build_rats_anchors(binning, *encoder)};
}

CountingHead make_head(const RunConfig& config, const AnchorSet& anchors) {
  return CountingHead(anchors.classes, CountBinning(config.n), config.temperature, config.loss);
}

// -------------------------------------------------------------- teachers

void save_encoder(const TransformerEncoder& encoder, const fs::path& path) {
  TensorFile file;
  const auto& c = encoder.config();
  file.meta["name"] = encoder.name();
  file.meta["image_size"] = c.image_size;
  file.meta["patch"] = c.patch;
  file.meta["width"] = c.width;
  file.meta["depth"] = c.depth;
  file.meta["heads"] = c.heads;
  file.meta["mlp_ratio"] = c.mlp_ratio;
  add_params(file, encoder.parameters());
  file.save(path);
}

std::shared_ptr<TransformerEncoder> load_encoder(const fs::path& path) {
  const auto file = TensorFile::load(path);
  TransformerConfig c;
  c.image_size = file.meta.at("image_size").get<int>();
  c.patch = file.meta.at("patch").get<int>();
  c.width = file.meta.at("width").get<int>();
  c.depth = file.meta.at("depth").get<int>();
  c.heads = file.meta.at("heads").get<int>();
  c.mlp_ratio = file.meta.at("mlp_ratio").get<int>();
  auto encoder = std::make_shared<TransformerEncoder>(file.meta.at("name").get<std::string>(), c, 0);
  load_params(file, encoder->parameters());
  return encoder;
}

std::shared_ptr<const Encoder> make_teacher(const std::string& spec, int index, const RunConfig& config,
                                            const AnchorSet& anchors) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  const uint64_t seed = hash_combine(salted(config, "teacher"), static_cast<uint64_t>(index));
  if (kind == "synthetic") {
    double sigma = 0.0;
    try {
      std::size_t used = 0;
      sigma = std::stod(arg, &used);
      require(used == arg.size(), "");
    } catch (...) {
      fail("bad synthetic teacher spec '" + spec + "'");
    }
    return make_synthetic_teacher(sigma, seed, anchors.classes, anchors.rats, config.temperature, config.crop_size,
                                  config.student.patch);
  }
  if (kind == "transformer") {
    TransformerConfig c;
    if (std::sscanf(arg.c_str(), "%dx%d", &c.width, &c.depth) != 2) fail("bad transformer teacher spec '" + spec + "'");
    c.image_size = config.crop_size;
    c.patch = config.student.patch;
    c.heads = std::max(1, c.width / 64);
    c.mlp_ratio = 4;
    return std::make_shared<TransformerEncoder>("teacher" + std::to_string(index), c, seed);
  }
  if (kind == "file") {
    const char* cache = std::getenv("COUNTLAB_CACHE");
    if (!cache) fail("missing teacher '" + spec + "': COUNTLAB_CACHE is not set");
    const fs::path path = fs::path(cache) / (arg + ".ctn");
    if (!fs::exists(path)) fail("missing teacher '" + spec + "': no file " + path.string());
    auto encoder = load_encoder(path);
    require(encoder->image_size() == config.crop_size && encoder->patch_size() == config.student.patch,
            "teacher " + spec + " does not match crop_size and patch");
    return encoder;
  }
  fail("missing teacher: unknown spec '" + spec + "'");
}

Patch training_patch(const AnnotatedImage& image, const RunConfig& config, uint64_t salt) {
  const std::vector<double> full{1.0};
  auto group = make_ranked_group(image, config.crop_size, full, hash_combine(config.seed, salt));
  return std::move(group.patches.front());
}

TeacherPool build_teacher_pool(const RunConfig& config, const AnchorSet& anchors,
                               const std::vector<AnnotatedImage>& train) {
  TeacherPool pool;
  Rng rng(salted(config, "adapters"));
  for (std::size_t i = 0; i < config.teachers.size(); ++i) {
    pool.add(make_teacher(config.teachers[i], static_cast<int>(i), config, anchors), config.anchor_dim, rng);
  }
  const std::size_t count = std::min<std::size_t>(config.pretrain_images, train.size());
  if (config.pretrain_epochs == 0 || count == 0) return pool;

  std::vector<Patch> patches;
  std::vector<BlockTargets> targets;
  const CountBinning binning(config.n);
  for (std::size_t k = 0; k < count; ++k) {
    patches.push_back(training_patch(train[k], config, 0));
    targets.push_back(build_block_targets(*patches.back().points, config.crop_size, config.crop_size,
                                          config.student.patch, binning, categories()));
  }
  const CountingHead head = make_head(config, anchors);
  for (int i = 0; i < pool.size(); ++i) {
    PretrainOptions options;
    options.epochs = config.pretrain_epochs;
    options.learning_rate = config.pretrain_learning_rate;
    options.seed = hash_combine(salted(config, "pretrain"), static_cast<uint64_t>(i));
    auto result = pretrain_projector(*pool.teachers[i], pool.projectors[i], patches, targets, head, options);
    spdlog::info("adapter {} ({}): loss {:.4f} -> {:.4f}", i, pool.teachers[i]->name(), result.initial_loss,
                 result.final_loss);
    pool.projectors[i] = std::move(result.projector);
  }
  return pool;
}

// --------------------------------------------------------- agglomeration

StudentModel make_student(const RunConfig& config) { return StudentModel(config.student_config(), salted(config, "student")); }

AgglomerateOutcome run_agglomerate(const RunConfig& config, const std::vector<AnnotatedImage>& train,
                                   const TeacherPool& pool, const AnchorSet& anchors,
                                   const fs::path& selection_log) {
  AgglomerateOutcome out{make_student(config), {}, {}, {}};
  Rng rng(salted(config, "agglomerate"));
  const auto& sched = config.agglomerate;
  const int groups_per_batch = sched.batch_size / config.k;
  const int64_t steps_per_epoch = (static_cast<int64_t>(train.size()) + groups_per_batch - 1) / groups_per_batch;
  const int64_t total_steps = steps_per_epoch * sched.epochs;
  nn::AdamW optimizer(nn::AdamWOptions{.weight_decay = sched.weight_decay});
  AgglomerateOptions options;
  options.strategy = config.strategy;
  options.per_group = config.per_group;
  options.tdrop_keep = config.tdrop_keep;
  options.epsilon_rank = config.loss.epsilon_rank;
  options.temperature = config.temperature;

  int64_t step = 0;
  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    auto order = iota_order(train.size());
    shuffle(order, rng);
    std::vector<SelectionRecord> epoch_records;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += groups_per_batch, ++step) {
      std::vector<RankedPatchGroup> batch;
      for (std::size_t s = start; s < std::min(order.size(), start + groups_per_batch); ++s) {
        batch.push_back(make_ranked_group(train[order[s]], config.crop_size, config.ratios,
                                          hash_combine(config.seed, static_cast<uint64_t>(epoch))));
      }
      options.learning_rate =
          nn::cosine_lr(step, sched.warmup_epochs * steps_per_epoch, total_steps, sched.learning_rate,
                    sched.min_learning_rate);
      auto result = agglomerate_step(out.student, pool, batch, anchors.rats, optimizer, options, step, rng);
      loss_sum += result.loss;
      for (auto& r : result.records) epoch_records.push_back(std::move(r));
    }
    const double mean = loss_sum / static_cast<double>(steps_per_epoch);
    out.epoch_loss.push_back(mean);
    if (!selection_log.empty() && !epoch_records.empty()) append_selection_log(selection_log, epoch_records);
    if (config.strategy == Strategy::rats) {
      const auto hist = selection_histogram(epoch_records, pool.size());
      spdlog::info("agglomerate epoch {}: loss {:.5f}, selections {}", epoch, mean, fmt::join(hist, "/"));
    } else {
      spdlog::info("agglomerate epoch {}: loss {:.5f}", epoch, mean);
    }
    for (auto& r : epoch_records) out.records.push_back(std::move(r));
  }
  out.rng_state = rng.state();
  return out;
}

// ------------------------------------------------------------ fine-tuning

nn::Matrix CountingModel::features(const Image& image) const {
  return decoder.forward(student.forward(image, nullptr).aggregate, nullptr);
}

FinetuneOutcome run_finetune(const RunConfig& config, StudentModel student, const std::vector<AnnotatedImage>& train,
                             const AnchorSet& anchors) {
  require(!train.empty(), "finetune: no training images");
  const CountingHead head = make_head(config, anchors);
  Rng rng(salted(config, "finetune"));
  const int d = config.anchor_dim;
  FinetuneOutcome out{CountingModel{std::move(student), nn::Projector("decoder", d, d, rng)}, {}, {}};
  StudentModel& st = out.model.student;
  nn::Projector& decoder = out.model.decoder;
  const int grid = st.grid();

  std::vector<Patch> patches;
  std::vector<BlockTargets> targets;
  std::vector<nn::Matrix> cached;
  for (const auto& image : train) {
    patches.push_back(training_patch(image, config, 0));
    targets.push_back(build_block_targets(*patches.back().points, config.crop_size, config.crop_size,
                                          config.student.patch, head.binning, categories()));
    if (!config.unfreeze) cached.push_back(st.forward(patches.back().image, nullptr).aggregate);
  }

  nn::ParamList params;
  decoder.collect(params);
  if (config.unfreeze) {
    for (nn::Param* p : st.parameters()) params.push_back(p);
  }
  const auto& sched = config.finetune;
  nn::AdamW optimizer(nn::AdamWOptions{.weight_decay = sched.weight_decay});
  const int64_t steps_per_epoch = (static_cast<int64_t>(patches.size()) + sched.batch_size - 1) / sched.batch_size;
  const int64_t total_steps = steps_per_epoch * sched.epochs;
  int64_t step = 0;
  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    auto order = iota_order(patches.size());
    shuffle(order, rng);
    EpochLoss sum;
    for (std::size_t start = 0; start < order.size(); start += sched.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + sched.batch_size);
      const float scale = 1.0f / static_cast<float>(end - start);
      nn::zero_grad(params);
      for (std::size_t s = start; s < end; ++s) {
        const std::size_t k = order[s];
        StudentModel::Cache student_cache;
        const nn::Matrix a = config.unfreeze ? st.forward(patches[k].image, &student_cache).aggregate : cached[k];
        nn::Projector::Cache cache;
        const nn::Matrix f = decoder.forward(a, &cache);
        nn::Matrix grad;
        const LossBreakdown loss = head.evaluate(f, grid, targets[k], &grad);
        if (!std::isfinite(loss.total)) {
          fail("finetune: non-finite loss in epoch " + std::to_string(epoch) + " on image " + train[k].id);
        }
        sum.total += loss.total;
        sum.count += loss.count;
        sum.exclusivity += loss.exclusivity;
        const nn::Matrix da = decoder.backward(grad * scale, cache);
        if (config.unfreeze) st.backward(da, nn::RowVector(), student_cache);
      }
      optimizer.step(params, nn::cosine_lr(step, sched.warmup_epochs * steps_per_epoch, total_steps, sched.learning_rate,
                                       sched.min_learning_rate));
    }
    const double n = static_cast<double>(patches.size());
    out.curve.push_back({sum.total / n, sum.count / n, sum.exclusivity / n});
    spdlog::info("finetune epoch {}: loss {:.5f} (count {:.5f}, exclusivity {:.5f})", epoch, out.curve.back().total,
                 out.curve.back().count, out.curve.back().exclusivity);
  }
  out.rng_state = rng.state();
  return out;
}

// ----------------------------------------------------------- checkpoints

TensorFile make_checkpoint(const RunConfig& config, const std::string& stage, const StudentModel& student,
                           const nn::Projector* decoder, const std::string& rng_state) {
  TensorFile file;
  file.meta["stage"] = stage;
  file.meta["config"] = to_text(config);
  file.meta["rng"] = rng_state;
  add_params(file, student.parameters());
  if (decoder) {
    nn::ConstParamList params;
    decoder->collect(params);
    add_params(file, params);
  }
  return file;
}

LoadedCheckpoint read_checkpoint(const TensorFile& file) {
  RunConfig config = parse_config(file.meta.at("config").get<std::string>());
  LoadedCheckpoint out{config, file.meta.at("stage").get<std::string>(), make_student(config), std::nullopt,
                       file.meta.at("rng").get<std::string>()};
  load_params(file, out.student.parameters());
  if (file.has("decoder.fc1.weight")) {
    Rng rng(0);
    nn::Projector decoder("decoder", config.anchor_dim, config.anchor_dim, rng);
    nn::ParamList params;
    decoder.collect(params);
    load_params(file, params);
    out.decoder = std::move(decoder);
  }
  return out;
}

// ------------------------------------------------------------- inference

Prediction predict_image(const CountingModel& model, const CountingHead& head, const Image& image) {
  const int M = model.student.backbone().image_size();
  const int p = model.student.backbone().patch_size();
  const int g = M / p;
  const int H = image.height(), W = image.width();
  require(H > 0 && W > 0, "predict: empty image");
  const int ty = (H + M - 1) / M, tx = (W + M - 1) / M;
  const int rows = (H + p - 1) / p, cols = (W + p - 1) / p;

  Image canvas(ty * M, tx * M);
  if (ty * M != H || tx * M != W) {
    for (int c = 0; c < Image::kChannels; ++c) {
      std::vector<float> values;
      values.reserve(static_cast<std::size_t>(H) * W);
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) values.push_back(image.at(y, x, c));
      }
      std::nth_element(values.begin(), values.begin() + values.size() / 2, values.end());
      const float median = values[values.size() / 2];
      for (int y = 0; y < canvas.height(); ++y) {
        for (int x = 0; x < canvas.width(); ++x) canvas.at(y, x, c) = median;
      }
    }
  }
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < Image::kChannels; ++c) canvas.at(y, x, c) = image.at(y, x, c);
    }
  }

  const int m = head.anchors.categories, bins = head.anchors.bins;
  Prediction out;
  out.bundle.probs = ProbabilityMap(rows, cols, m, bins);
  out.bundle.density = DensityMap(rows, cols, m);
  for (int a = 0; a < ty; ++a) {
    for (int b = 0; b < tx; ++b) {
      const auto tile = head.predict(model.features(canvas.crop(a * M, b * M, M, M)), g);
      for (int u = 0; u < g; ++u) {
        for (int v = 0; v < g; ++v) {
          const int U = a * g + u, V = b * g + v;
          if (U >= rows || V >= cols) continue;
          for (int i = 0; i < m; ++i) {
            out.bundle.density.at(U, V, i) = tile.density.at(u, v, i);
            for (int j = 0; j < bins; ++j) out.bundle.probs.at(U, V, i, j) = tile.probs.at(u, v, i, j);
          }
        }
      }
    }
  }
  out.counts = total_counts(out.bundle.density);
  return out;
}

std::vector<double> true_counts(const AnnotatedImage& image, int categories) {
  std::vector<double> out(categories, 0.0);
  for (const auto& pt : image.points) {
    require(pt.category >= 0 && pt.category < categories, "annotation category out of range in " + image.id);
    out[pt.category] += 1.0;
  }
  return out;
}

std::vector<ImageCounts> predict_counts(const CountingModel& model, const CountingHead& head,
                                        const std::vector<AnnotatedImage>& images) {
  std::vector<ImageCounts> out;
  for (const auto& image : images) {
    out.push_back({image.id, predict_image(model, head, image.pixels).counts,
                   true_counts(image, head.anchors.categories)});
  }
  return out;
}

Evaluation evaluate_records(const std::vector<ImageCounts>& counts, const RunConfig& config) {
  Evaluation ev;
  ev.counts = counts;
  ev.report = summarize_counts(counts, 0, 1, config.loss.norm_floor);
  std::vector<int> pred, truth;
  for (const auto& c : counts) {
    pred.push_back(tps_grade(tps(c.predicted[1], c.predicted[0]).value, config.tps_thresholds));
    truth.push_back(tps_grade(tps(c.truth[1], c.truth[0]).value, config.tps_thresholds));
  }
  ev.qwk = qwk(pred, truth, static_cast<int>(config.tps_thresholds.size()) + 1);
  return ev;
}

Evaluation evaluate_model(const CountingModel& model, const RunConfig& config, const AnchorSet& anchors,
                          const std::vector<AnnotatedImage>& images) {
  return evaluate_records(predict_counts(model, make_head(config, anchors), images), config);
}

std::string report_json(const CountReport& report) {
  nlohmann::ordered_json j;
  j["NM"] = report.nm;
  j["NR"] = report.nr;
  j["PM"] = report.pm;
  j["PR"] = report.pr;
  j["TM"] = report.tm;
  j["WM"] = report.wm;
  return j.dump(2) + "\n";
}

// -------------------------------------------------------------- commands

namespace {

void write_selection_free_log(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("cannot write " + path.string());
}

CountingModel require_model(LoadedCheckpoint& ck, const fs::path& path) {
  if (!ck.decoder) fail(path.string() + " holds no fine-tuned decoder; run finetune first");
  return CountingModel{std::move(ck.student), std::move(*ck.decoder)};
}

std::string counts_csv(const std::vector<ImageCounts>& counts) {
  const auto cats = CategorySet::ihc_default();
  std::string out = "id";
  for (const auto* prefix : {"predicted", "true"}) {
    for (int i = 0; i < cats.size(); ++i) out += fmt::format(",{} {}", prefix, cats.name(i));
  }
  out += "\n";
  for (const auto& c : counts) {
    out += c.id;
    for (double v : c.predicted) out += fmt::format(",{:.17g}", v);
    for (double v : c.truth) out += fmt::format(",{:.17g}", v);
    out += "\n";
  }
  return out;
}

Rgb heat(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return {static_cast<float>(std::min(1.0, 2.0 * v)), static_cast<float>(std::max(0.0, 2.0 * v - 1.0)),
          static_cast<float>(std::max(0.0, 4.0 * v - 3.0))};
}

void mark(Image& img, int cy, int cx, const Rgb& colour) {
  for (int dy = -3; dy <= 3; ++dy) {
    for (int dx = -3; dx <= 3; ++dx) {
      const int r = std::max(std::abs(dy), std::abs(dx));
      if (r < 2) continue;
      const int y = cy + dy, x = cx + dx;
      if (y < 0 || x < 0 || y >= img.height() || x >= img.width()) continue;
      for (int c = 0; c < Image::kChannels; ++c) img.at(y, x, c) = colour[c];
    }
  }
}

}  // namespace

void cmd_agglomerate(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const Dataset data = load_dataset(data_dir);
  const AnchorSet anchors = make_anchors(config);
  const TeacherPool pool = build_teacher_pool(config, anchors, data.train);
  const fs::path log = out_dir / "selection.ndjson";
  write_selection_free_log(log);
  const auto outcome = run_agglomerate(config, data.train, pool, anchors, log);
  make_checkpoint(config, "agglomerate", outcome.student, nullptr, outcome.rng_state).save(out_dir / "student.ctn");
  std::string csv = "epoch,distill_loss\n";
  for (std::size_t e = 0; e < outcome.epoch_loss.size(); ++e) csv += fmt::format("{},{:.17g}\n", e, outcome.epoch_loss[e]);
  write_text(out_dir / "agglomerate_loss.csv", csv);
}

void cmd_finetune(const RunConfig& config, const fs::path& checkpoint, const fs::path& data_dir,
                  const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto ck = read_checkpoint(TensorFile::load(checkpoint));
  require(ck.student.config().backbone.width == config.student.width &&
              ck.student.config().backbone.depth == config.student.depth &&
              ck.student.anchor_dim() == config.anchor_dim && ck.student.config().backbone.image_size == config.crop_size,
          "finetune: checkpoint student does not match the config");
  const Dataset data = load_dataset(data_dir);
  const AnchorSet anchors = make_anchors(config);
  const auto outcome = run_finetune(config, std::move(ck.student), data.train, anchors);
  make_checkpoint(config, "finetune", outcome.model.student, &outcome.model.decoder, outcome.rng_state)
      .save(out_dir / "model.ctn");
  std::string csv = "epoch,total,count,exclusivity\n";
  for (std::size_t e = 0; e < outcome.curve.size(); ++e) {
    const auto& c = outcome.curve[e];
    csv += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", e, c.total, c.count, c.exclusivity);
  }
  write_text(out_dir / "finetune_loss.csv", csv);
}

void cmd_evaluate(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto ck = read_checkpoint(TensorFile::load(checkpoint));
  const RunConfig config = ck.config;
  const CountingModel model = require_model(ck, checkpoint);
  const Dataset data = load_dataset(data_dir);
  const auto ev = evaluate_model(model, config, make_anchors(config), data.test);
  write_text(out_dir / "metrics.json", report_json(ev.report));
  write_text(out_dir / "counts.csv", counts_csv(ev.counts));
  nlohmann::ordered_json q;
  q["thresholds"] = config.tps_thresholds;
  q["levels"] = config.tps_thresholds.size() + 1;
  q["qwk"] = ev.qwk;
  q["degenerate_tps"] = ev.report.degenerate_tps;
  write_text(out_dir / "qwk.json", q.dump(2) + "\n");
  spdlog::info("evaluate: NM {:.4f} PM {:.4f} TM {:.4f} WM {:.4f} QWK {:.4f}", ev.report.nm, ev.report.pm,
               ev.report.tm, ev.report.wm, ev.qwk);
}

void cmd_predict(const fs::path& checkpoint, const fs::path& image_path, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto ck = read_checkpoint(TensorFile::load(checkpoint));
  const RunConfig config = ck.config;
  const CountingModel model = require_model(ck, checkpoint);
  const CountingHead head = make_head(config, make_anchors(config));
  const Image image = read_png(image_path);
  const Prediction pred = predict_image(model, head, image);
  const auto& D = pred.bundle.density;
  const auto& P = pred.bundle.probs;

  TensorFile tensors;
  tensors.meta["image"] = image_path.filename().string();
  tensors.add_f64("density", {D.rows, D.cols, D.categories}, D.values.data());
  tensors.add_f64("probs", {P.rows, P.cols, P.categories, P.bins}, P.values.data());
  tensors.save(out_dir / "density.ctn");

  const auto cats = CategorySet::ihc_default();
  const int p = config.student.patch;
  const Rgb colours[] = {{0.1f, 0.35f, 1.0f}, {1.0f, 0.1f, 0.1f}};
  Image overlay = image;
  nlohmann::ordered_json counts;
  counts["image"] = image_path.filename().string();
  counts["grid"] = {D.rows, D.cols};
  for (int i = 0; i < D.categories; ++i) {
    Image heatmap(image.height(), image.width());
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) {
        const Rgb c = heat(D.at(y / p, x / p, i) / config.n);
        for (int ch = 0; ch < Image::kChannels; ++ch) heatmap.at(y, x, ch) = c[ch];
      }
    }
    write_png(out_dir / fmt::format("heatmap_{}.png", i), heatmap);
    const auto peaks = extract_centroids(D, i, config.peak_threshold, config.peak_min_distance);
    for (const auto& peak : peaks) mark(overlay, peak.u * p + p / 2, peak.v * p + p / 2, colours[i % 2]);
    counts["counts"][cats.name(i)] = pred.counts[i];
    counts["centroids"][cats.name(i)] = peaks.size();
  }
  counts["tps"] = tps(pred.counts[1], pred.counts[0]).value;
  write_png(out_dir / "overlay.png", overlay);
  write_text(out_dir / "counts.json", counts.dump(2) + "\n");
  spdlog::info("predict: {} negative, {} positive", pred.counts[0], pred.counts[1]);
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const Dataset& data) {
  const AnchorSet anchors = make_anchors(config);
  const TeacherPool pool = build_teacher_pool(config, anchors, data.train);
  std::vector<AblationRow> rows;
  for (Strategy s : {Strategy::rats, Strategy::equal, Strategy::tdrop}) {
    RunConfig c = config;
    c.strategy = s;
    spdlog::info("ablation: strategy {}", to_string(s));
    auto agg = run_agglomerate(c, data.train, pool, anchors);
    const auto ft = run_finetune(c, std::move(agg.student), data.train, anchors);
    rows.push_back({s, evaluate_model(ft.model, c, anchors, data.test).report});
  }
  return rows;
}

void cmd_ablate(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto rows = run_ablation(config, load_dataset(data_dir));
  std::string csv = "strategy,NM,NR,PM,PR,TM,WM\n";
  for (const auto& r : rows) {
    const auto& m = r.report;
    csv += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", to_string(r.strategy), m.nm, m.nr, m.pm, m.pr,
                       m.tm, m.wm);
  }
  write_text(out_dir / "ablation.csv", csv);
  std::printf("%s", csv.c_str());
}

}  // namespace countlab
