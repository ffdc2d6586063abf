#include "countlab/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "countlab/error.hpp"
#include "countlab/rng.hpp"

namespace countlab {

namespace {

constexpr int kPlacementAttempts = 4000;
// Upper bound on the covered fraction for non-overlapping placement.
constexpr double kMaxPacking = 0.55;

struct Cell {
  int x, y;
  double radius;
  int category;
};

bool colors_distinct(const Rgb& a, const Rgb& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]) > 1e-3;
}

}  // namespace

void SynthConfig::validate() const {
  require(image_size >= 1, "SynthConfig: image_size must be >= 1");
  require(num_pos.lo >= 0 && num_pos.lo <= num_pos.hi, "SynthConfig: empty num_pos range");
  require(num_neg.lo >= 0 && num_neg.lo <= num_neg.hi, "SynthConfig: empty num_neg range");
  require(cell_radius.lo > 0 && cell_radius.lo <= cell_radius.hi, "SynthConfig: empty cell_radius range");
  require(overlap_fraction >= 0 && overlap_fraction <= 1, "SynthConfig: overlap_fraction outside [0,1]");
  require(colors_distinct(pos_color, neg_color), "SynthConfig: stain colors must differ");
  const double max_cells = num_pos.hi + num_neg.hi;
  const double free_cells = std::ceil(max_cells * (1.0 - overlap_fraction));
  const double area = std::numbers::pi * cell_radius.lo * cell_radius.lo * 4.0 * free_cells;
  if (area > kMaxPacking * image_size * image_size) {
    fail("SynthConfig: cell count infeasible for the image area at the minimum radius");
  }
}

AnnotatedImage generate_image(const SynthConfig& cfg, int index) {
  cfg.validate();
  Rng rng(hash_combine(cfg.seed, static_cast<uint64_t>(index)));
  const int size = cfg.image_size;

  const int n_pos = static_cast<int>(rng.uniform_int(cfg.num_pos.lo, cfg.num_pos.hi));
  const int n_neg = static_cast<int>(rng.uniform_int(cfg.num_neg.lo, cfg.num_neg.hi));
  std::vector<int> categories(static_cast<std::size_t>(n_neg), 0);
  categories.insert(categories.end(), static_cast<std::size_t>(n_pos), 1);
  for (std::size_t i = categories.size(); i > 1; --i) {
    std::swap(categories[i - 1], categories[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  }

  // Exactly round(f * (N - 1)) cells after the first are placed next to an
  // earlier cell.
  const int total = static_cast<int>(categories.size());
  std::vector<bool> overlapped(categories.size(), false);
  if (total > 1) {
    const int n_overlap = static_cast<int>(std::lround(cfg.overlap_fraction * (total - 1)));
    std::vector<int> order(static_cast<std::size_t>(total - 1));
    for (int i = 0; i < total - 1; ++i) order[static_cast<std::size_t>(i)] = i + 1;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    }
    for (int i = 0; i < n_overlap; ++i) overlapped[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
  }

  std::vector<Cell> cells;
  cells.reserve(categories.size());
  auto occupied = [&](int x, int y) {
    return std::any_of(cells.begin(), cells.end(), [&](const Cell& c) { return c.x == x && c.y == y; });
  };
  for (std::size_t k = 0; k < categories.size(); ++k) {
    const double radius = rng.uniform(cfg.cell_radius.lo, cfg.cell_radius.hi);
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      int x, y;
      if (overlapped[k]) {
        const Cell& anchor = cells[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(cells.size()) - 1))];
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double dist = rng.uniform(1.0, std::max(1.0, anchor.radius));
        x = static_cast<int>(std::lround(anchor.x + dist * std::cos(angle)));
        y = static_cast<int>(std::lround(anchor.y + dist * std::sin(angle)));
        if (x < 0 || y < 0 || x >= size || y >= size || occupied(x, y)) continue;
      } else {
        x = static_cast<int>(rng.uniform_int(0, size - 1));
        y = static_cast<int>(rng.uniform_int(0, size - 1));
        const bool clear = std::none_of(cells.begin(), cells.end(), [&](const Cell& c) {
          const double dx = c.x - x, dy = c.y - y;
          return dx * dx + dy * dy < (c.radius + radius) * (c.radius + radius);
        });
        if (!clear) continue;
      }
      cells.push_back({x, y, radius, categories[k]});
      placed = true;
    }
    if (!placed) fail("generate_image: cell count infeasible for the image area at the minimum radius");
  }

  AnnotatedImage out;
  char id[32];
  std::snprintf(id, sizeof(id), "img_%05d", index);
  out.id = id;
  out.pixels = Image(size, size);

  // Low-frequency background texture: a few seeded plane waves.
  constexpr int kWaves = 4;
  std::array<std::array<double, 4>, kWaves> waves{};
  for (auto& w : waves) {
    w = {rng.uniform(0.02, 0.12), rng.uniform(0.0, 2.0 * std::numbers::pi),
         rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(-1.0, 1.0)};
  }
  Image& img = out.pixels;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double t = 0.0;
      for (const auto& w : waves) t += w[3] * std::sin(w[0] * (x * std::cos(w[1]) + y * std::sin(w[1])) + w[2]);
      t = cfg.texture_amplitude * t / kWaves;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(cfg.background[static_cast<std::size_t>(c)] + t);
    }
  }

  for (const Cell& cell : cells) {
    Rgb color = cell.category == 1 ? cfg.pos_color : cfg.neg_color;
    for (auto& ch : color) ch = static_cast<float>(ch + rng.uniform(-cfg.color_jitter, cfg.color_jitter));
    const int reach = static_cast<int>(std::ceil(cell.radius + 1.0));
    for (int y = std::max(0, cell.y - reach); y <= std::min(size - 1, cell.y + reach); ++y) {
      for (int x = std::max(0, cell.x - reach); x <= std::min(size - 1, cell.x + reach); ++x) {
        const double d = std::hypot(x - cell.x, y - cell.y);
        const double coverage = std::clamp(cell.radius + 0.5 - d, 0.0, 1.0);
        if (coverage <= 0.0) continue;
        // Slightly darker core.
        const double shade = 1.0 - 0.15 * std::max(0.0, 1.0 - d / cell.radius);
        const double alpha = 0.9 * coverage;
        for (int c = 0; c < 3; ++c) {
          float& px = img.at(y, x, c);
          px = static_cast<float>((1.0 - alpha) * px + alpha * shade * color[static_cast<std::size_t>(c)]);
        }
      }
    }
    out.points.push_back({static_cast<double>(cell.x), static_cast<double>(cell.y), cell.category});
  }
  out.pixels = quantize8(out.pixels);
  return out;
}

std::vector<AnnotatedImage> generate_dataset(const SynthConfig& cfg, int count, int holdout,
                                             const std::filesystem::path& out_dir) {
  require(count >= 1, "generate_dataset: count must be >= 1");
  require(holdout >= 0 && holdout <= count, "generate_dataset: holdout outside [0, count]");
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");

  std::vector<AnnotatedImage> images;
  std::vector<AnnotationRecord> records;
  images.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    AnnotatedImage image = generate_image(cfg, i);
    const std::string rel = "images/" + image.id + ".png";
    write_png(out_dir / rel, image.pixels);
    records.push_back({image.id, rel, image.height(), image.width(), image.points});
    images.push_back(std::move(image));
  }
  const auto split = records.begin() + (count - holdout);
  save_annotation_records(out_dir / "annotations.json", records);
  save_annotation_records(out_dir / "train.json", {records.begin(), split});
  save_annotation_records(out_dir / "test.json", {split, records.end()});
  return images;
}

}  // namespace countlab
