#include "countlab/datamodel.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "countlab/error.hpp"

namespace countlab {

CategorySet::CategorySet(std::vector<std::string> names) : names_(std::move(names)) {
  require(!names_.empty(), "CategorySet: need at least one category");
  std::set<std::string> seen;
  for (const auto& name : names_) {
    require(!name.empty(), "CategorySet: empty category name");
    require(seen.insert(name).second, "CategorySet: duplicate category '" + name + "'");
  }
}

CategorySet CategorySet::ihc_default() {
  return CategorySet({"negative tumor cell", "positive tumor cell"});
}

CountBinning::CountBinning(int n) : n_(n) { require(n >= 1, "CountBinning: n must be >= 1"); }

double CountBinning::representative(int bin) const {
  require(bin >= 0 && bin <= n_, "CountBinning: bin index out of range");
  return static_cast<double>(bin);
}

BlockTargets::BlockTargets(int rows, int cols, int categories)
    : rows_(rows), cols_(cols), categories_(categories) {
  require(rows >= 0 && cols >= 0 && categories >= 1, "BlockTargets: bad shape");
  const std::size_t size = static_cast<std::size_t>(rows) * cols * categories;
  counts_.assign(size, 0);
  classes_.assign(size, 0);
}

std::vector<int64_t> BlockTargets::totals() const {
  std::vector<int64_t> out(static_cast<std::size_t>(categories_), 0);
  for (std::size_t k = 0; k < counts_.size(); ++k) out[k % categories_] += counts_[k];
  return out;
}

BlockTargets build_block_targets(const std::vector<PointAnnotation>& points, int height, int width,
                                 int patch, const CountBinning& binning, int categories) {
  require(patch > 0, "build_block_targets: patch size must be positive");
  require(height >= 1 && width >= 1, "build_block_targets: empty image");
  BlockTargets targets(height / patch, width / patch, categories);
  std::size_t dropped = 0;
  for (const auto& pt : points) {
    if (pt.category < 0 || pt.category >= categories) {
      fail("build_block_targets: category " + std::to_string(pt.category) +
           " does not match m = " + std::to_string(categories));
    }
    const auto u = static_cast<int>(std::floor(pt.y / patch));
    const auto v = static_cast<int>(std::floor(pt.x / patch));
    if (u < 0 || v < 0 || u >= targets.rows_ || v >= targets.cols_) {
      ++dropped;
      continue;
    }
    ++targets.counts_[targets.index(u, v, pt.category)];
  }
  for (std::size_t k = 0; k < targets.counts_.size(); ++k) {
    targets.classes_[k] = binning.bin_of(targets.counts_[k]);
  }
  if (dropped > 0) {
    spdlog::warn("build_block_targets: dropped {} point(s) outside the {}x{} block grid", dropped,
                 targets.rows_, targets.cols_);
  }
  return targets;
}

namespace {

using nlohmann::json;

int line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Line on which each object nested directly inside a top-level array starts.
std::vector<int> record_lines(const std::string& text) {
  std::vector<int> lines;
  std::vector<char> stack;
  bool in_string = false;
  bool escaped = false;
  int line = 1;
  for (char c : text) {
    if (c == '\n') ++line;
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_string = true;
        break;
      case '{':
        if (stack.size() == 2 && stack[1] == '[') lines.push_back(line);
        stack.push_back('{');
        break;
      case '[':
        stack.push_back('[');
        break;
      case '}':
      case ']':
        if (!stack.empty()) stack.pop_back();
        break;
      default:
        break;
    }
  }
  return lines;
}

[[noreturn]] void record_error(int line, const std::string& message) {
  fail("annotation line " + std::to_string(line) + ": " + message);
}

}  // namespace

std::vector<AnnotationRecord> parse_annotation_records(const std::string& text) {
  std::vector<AnnotationRecord> out;
  if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) {
    return out;
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    record_error(line_of_offset(text, e.byte), std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("images") || !doc["images"].is_array()) {
    record_error(1, "expected an object with an \"images\" array");
  }
  const std::vector<int> lines = record_lines(text);
  const auto& images = doc["images"];
  for (std::size_t r = 0; r < images.size(); ++r) {
    const int line = r < lines.size() ? lines[r] : 1;
    const auto& rec = images[r];
    try {
      if (!rec.is_object()) record_error(line, "record is not an object");
      AnnotationRecord record;
      record.id = rec.at("id").get<std::string>();
      record.path = rec.at("path").get<std::string>();
      record.height = rec.at("height").get<int>();
      record.width = rec.at("width").get<int>();
      if (record.height < 1 || record.width < 1) record_error(line, "height and width must be >= 1");
      for (const auto& p : rec.at("points")) {
        if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number() ||
            !p[2].is_number_integer()) {
          record_error(line, "point must be [x, y, category]");
        }
        PointAnnotation pt{p[0].get<double>(), p[1].get<double>(), p[2].get<int>()};
        if (pt.x < 0 || pt.y < 0 || pt.x >= record.width || pt.y >= record.height) {
          record_error(line, "point out of bounds (" + std::to_string(pt.x) + ", " +
                                 std::to_string(pt.y) + ") in image '" + record.id + "'");
        }
        if (pt.category < 0) record_error(line, "negative category index");
        record.points.push_back(pt);
      }
      out.push_back(std::move(record));
    } catch (const json::exception& e) {
      record_error(line, std::string("malformed record: ") + e.what());
    }
  }
  return out;
}

std::vector<AnnotatedImage> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_annotations: missing file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const auto records = parse_annotation_records(buffer.str());

  std::vector<AnnotatedImage> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    AnnotatedImage image;
    image.id = rec.id;
    image.points = rec.points;
    image.pixels = read_png(path.parent_path() / rec.path);
    if (image.height() != rec.height || image.width() != rec.width) {
      fail("load_annotations: image '" + rec.id + "' is " + std::to_string(image.height()) + "x" +
           std::to_string(image.width()) + " but the record says " + std::to_string(rec.height) +
           "x" + std::to_string(rec.width));
    }
    out.push_back(std::move(image));
  }
  return out;
}

void save_annotation_records(const std::filesystem::path& path,
                             const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("save_annotation_records: cannot write '" + path.string() + "'");
  out << "{\"images\":[";
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    json points = json::array();
    for (const auto& p : rec.points) {
      // Integer coordinates stay integers in the file.
      json x = p.x == std::floor(p.x) ? json(static_cast<int64_t>(p.x)) : json(p.x);
      json y = p.y == std::floor(p.y) ? json(static_cast<int64_t>(p.y)) : json(p.y);
      points.push_back(json::array({x, y, p.category}));
    }
    json obj = {{"id", rec.id}, {"path", rec.path}, {"height", rec.height},
                {"width", rec.width}, {"points", points}};
    out << (r == 0 ? "\n" : ",\n") << obj.dump();
  }
  out << "\n]}\n";
  if (!out) fail("save_annotation_records: write failed for '" + path.string() + "'");
}

}  // namespace countlab
