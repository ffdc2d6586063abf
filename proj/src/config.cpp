#include "countlab/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <fstream>
#include <functional>
#include <sstream>

#include "countlab/error.hpp"

namespace countlab {

RunConfig::RunConfig() {
  synth.image_size = crop_size;
  student.image_size = crop_size;
}

void RunConfig::validate() const {
  synth.validate();
  require(images > 0, "config: data.images must be positive");
  require(holdout >= 0 && holdout < images, "config: data.holdout must be in [0, images)");
  require(k >= 1 && static_cast<int>(ratios.size()) == k, "config: patchgroup.ratios must list k ratios");
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    require(ratios[i] > 0.0 && ratios[i] <= 1.0, "config: ratios must lie in (0, 1]");
    if (i > 0) require(ratios[i] > ratios[i - 1], "config: ratios must increase");
  }
  require(crop_size > 0 && synth.image_size >= crop_size, "config: images must be at least crop_size");
  require(n >= 1, "config: anchors.n must be at least 1");
  require(anchor_dim >= 8, "config: anchors.dim must be at least 8");
  require(temperature > 0.0, "config: temperature must be positive");
  loss.validate(2);
  student_config().backbone.validate();
  require(!teachers.empty(), "config: at least one teacher is required");
  require(pretrain_epochs >= 0 && pretrain_images >= 0, "config: pretraining sizes must be >= 0");
  require(tdrop_keep >= 0.0 && tdrop_keep <= 1.0, "config: rats.tdrop_keep must be in [0, 1]");
  for (const ScheduleConfig* s : {&agglomerate, &finetune}) {
    require(s->epochs >= 0 && s->batch_size > 0 && s->warmup_epochs >= 0, "config: bad schedule");
    require(s->learning_rate >= 0.0 && s->min_learning_rate >= 0.0 && s->weight_decay >= 0.0,
            "config: learning rates and weight decay must be >= 0");
  }
  require(agglomerate.batch_size % k == 0, "config: agglomerate.batch_size must be a multiple of k");
  for (std::size_t i = 0; i < tps_thresholds.size(); ++i) {
    require(tps_thresholds[i] > 0.0 && tps_thresholds[i] < 1.0, "config: tps thresholds must lie in (0, 1)");
    if (i > 0) require(tps_thresholds[i] > tps_thresholds[i - 1], "config: tps thresholds must increase");
  }
  require(peak_threshold >= 0.0 && peak_min_distance >= 1, "config: bad peak settings");
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& text) {
  T value{};
  const auto s = trim(text);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) fail("not a number: '" + text + "'");
  return value;
}

bool parse_bool(const std::string& text) {
  const auto s = trim(text);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail("not a boolean: '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split(text)) out.push_back(parse_number<T>(item));
  return out;
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

std::string fmt_doubles(const std::vector<double>& v) {
  std::vector<std::string> parts;
  for (double x : v) parts.push_back(fmt_double(x));
  return fmt::format("{}", fmt::join(parts, ", "));
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_FIELD(sec, name, expr)                                                             \
  Field { sec, name, [](RunConfig& c, const std::string& v) { expr = parse_number<int>(v); }, \
          [](const RunConfig& c) { return std::to_string(expr); } }
#define REAL_FIELD(sec, name, expr)                                                               \
  Field { sec, name, [](RunConfig& c, const std::string& v) { expr = parse_number<double>(v); }, \
          [](const RunConfig& c) { return fmt_double(expr); } }
#define BOOL_FIELD(sec, name, expr)                                                    \
  Field { sec, name, [](RunConfig& c, const std::string& v) { expr = parse_bool(v); }, \
          [](const RunConfig& c) { return std::string(expr ? "true" : "false"); } }
#define REALS_FIELD(sec, name, expr)                                                            \
  Field { sec, name, [](RunConfig& c, const std::string& v) { expr = parse_list<double>(v); }, \
          [](const RunConfig& c) { return fmt_doubles(expr); } }

Field int_range(const std::string& sec, const std::string& name, IntRange SynthConfig::*member) {
  return Field{sec, name,
               [member](RunConfig& c, const std::string& v) {
                 const auto xs = parse_list<int>(v);
                 require(xs.size() == 2, "expected two integers");
                 c.synth.*member = IntRange{xs[0], xs[1]};
               },
               [member](const RunConfig& c) {
                 return fmt::format("{}, {}", (c.synth.*member).lo, (c.synth.*member).hi);
               }};
}

std::vector<Field> schedule_fields(const std::string& sec, ScheduleConfig RunConfig::*s) {
  return {
      Field{sec, "epochs", [s](RunConfig& c, const std::string& v) { (c.*s).epochs = parse_number<int>(v); },
            [s](const RunConfig& c) { return std::to_string((c.*s).epochs); }},
      Field{sec, "batch_size", [s](RunConfig& c, const std::string& v) { (c.*s).batch_size = parse_number<int>(v); },
            [s](const RunConfig& c) { return std::to_string((c.*s).batch_size); }},
      Field{sec, "learning_rate",
            [s](RunConfig& c, const std::string& v) { (c.*s).learning_rate = parse_number<double>(v); },
            [s](const RunConfig& c) { return fmt_double((c.*s).learning_rate); }},
      Field{sec, "min_learning_rate",
            [s](RunConfig& c, const std::string& v) { (c.*s).min_learning_rate = parse_number<double>(v); },
            [s](const RunConfig& c) { return fmt_double((c.*s).min_learning_rate); }},
      Field{sec, "warmup_epochs",
            [s](RunConfig& c, const std::string& v) { (c.*s).warmup_epochs = parse_number<int>(v); },
            [s](const RunConfig& c) { return std::to_string((c.*s).warmup_epochs); }},
      Field{sec, "weight_decay",
            [s](RunConfig& c, const std::string& v) { (c.*s).weight_decay = parse_number<double>(v); },
            [s](const RunConfig& c) { return fmt_double((c.*s).weight_decay); }},
  };
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        Field{"run", "seed", [](RunConfig& c, const std::string& v) { c.seed = parse_number<uint64_t>(v); },
              [](const RunConfig& c) { return std::to_string(c.seed); }},
        INT_FIELD("data", "images", c.images),
        INT_FIELD("data", "holdout", c.holdout),
        INT_FIELD("data", "image_size", c.synth.image_size),
        int_range("data", "num_pos", &SynthConfig::num_pos),
        int_range("data", "num_neg", &SynthConfig::num_neg),
        Field{"data", "cell_radius",
              [](RunConfig& c, const std::string& v) {
                const auto xs = parse_list<double>(v);
                require(xs.size() == 2, "expected two numbers");
                c.synth.cell_radius = RealRange{xs[0], xs[1]};
              },
              [](const RunConfig& c) { return fmt_doubles({c.synth.cell_radius.lo, c.synth.cell_radius.hi}); }},
        REAL_FIELD("data", "overlap_fraction", c.synth.overlap_fraction),
        REAL_FIELD("data", "color_jitter", c.synth.color_jitter),
        REAL_FIELD("data", "texture_amplitude", c.synth.texture_amplitude),
        INT_FIELD("patchgroup", "k", c.k),
        INT_FIELD("patchgroup", "crop_size", c.crop_size),
        REALS_FIELD("patchgroup", "ratios", c.ratios),
        INT_FIELD("anchors", "n", c.n),
        INT_FIELD("anchors", "dim", c.anchor_dim),
        Field{"anchors", "text_encoder", [](RunConfig& c, const std::string& v) { c.text_encoder = trim(v); },
              [](const RunConfig& c) { return c.text_encoder; }},
        REAL_FIELD("densityhead", "temperature", c.temperature),
        REAL_FIELD("losses", "epsilon_rank", c.loss.epsilon_rank),
        REAL_FIELD("losses", "alpha", c.loss.alpha),
        REAL_FIELD("losses", "tau", c.loss.tau),
        REALS_FIELD("losses", "lambda", c.loss.lambda),
        REAL_FIELD("losses", "gamma", c.loss.gamma),
        REAL_FIELD("losses", "ot_reg", c.loss.ot_reg),
        INT_FIELD("losses", "ot_iters", c.loss.ot_iters),
        REAL_FIELD("losses", "ot_tol", c.loss.ot_tol),
        REAL_FIELD("losses", "norm_floor", c.loss.norm_floor),
        INT_FIELD("encoders", "patch", c.student.patch),
        INT_FIELD("encoders", "width", c.student.width),
        INT_FIELD("encoders", "depth", c.student.depth),
        INT_FIELD("encoders", "heads", c.student.heads),
        INT_FIELD("encoders", "mlp_ratio", c.student.mlp_ratio),
        REAL_FIELD("encoders", "init_std", c.student.init_std),
        Field{"encoders", "layer_ids",
              [](RunConfig& c, const std::string& v) { c.student.layer_ids = parse_list<int>(v); },
              [](const RunConfig& c) { return fmt::format("{}", fmt::join(c.student.layer_ids, ", ")); }},
        Field{"teachers", "list", [](RunConfig& c, const std::string& v) { c.teachers = split(v); },
              [](const RunConfig& c) { return fmt::format("{}", fmt::join(c.teachers, ", ")); }},
        INT_FIELD("teachers", "pretrain_epochs", c.pretrain_epochs),
        INT_FIELD("teachers", "pretrain_images", c.pretrain_images),
        REAL_FIELD("teachers", "pretrain_learning_rate", c.pretrain_learning_rate),
        Field{"rats", "strategy", [](RunConfig& c, const std::string& v) { c.strategy = parse_strategy(trim(v)); },
              [](const RunConfig& c) { return to_string(c.strategy); }},
        BOOL_FIELD("rats", "per_group", c.per_group),
        REAL_FIELD("rats", "tdrop_keep", c.tdrop_keep),
    };
    for (auto& x : schedule_fields("agglomerate", &RunConfig::agglomerate)) f.push_back(std::move(x));
    for (auto& x : schedule_fields("finetune", &RunConfig::finetune)) f.push_back(std::move(x));
    f.push_back(BOOL_FIELD("finetune", "unfreeze", c.unfreeze));
    f.push_back(REALS_FIELD("evaluate", "tps_thresholds", c.tps_thresholds));
    f.push_back(REAL_FIELD("predict", "peak_threshold", c.peak_threshold));
    f.push_back(INT_FIELD("predict", "peak_min_distance", c.peak_min_distance));
    return f;
  }();
  return table;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(std::string("config: ") + e.what());
  }
  if (tree.empty()) fail("config: file is empty");
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) fail("config: key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) {
      const Field* field = nullptr;
      for (const auto& f : fields()) {
        if (f.section == section && f.key == key) field = &f;
      }
      if (!field) fail("config: unknown key '" + section + "." + key + "'");
      try {
        field->set(config, value.data());
      } catch (const Error& e) {
        fail("config: " + section + "." + key + ": " + e.what());
      }
    }
  }
  config.student.image_size = config.crop_size;
  config.synth.seed = config.seed;
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string to_text(const RunConfig& config) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace countlab
