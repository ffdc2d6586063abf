#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "countlab/datamodel.hpp"

namespace countlab {

using Rgb = std::array<float, 3>;

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct RealRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Generator settings for IHC-like synthetic tiles. Category 0 is the
/// hematoxylin-stained (negative) cell, category 1 the DAB-stained (positive).
struct SynthConfig {
  int image_size = 84;
  IntRange num_pos{1, 15};
  IntRange num_neg{4, 25};
  RealRange cell_radius{2.5, 4.0};
  double overlap_fraction = 0.1;
  Rgb pos_color{0.55f, 0.33f, 0.17f};
  Rgb neg_color{0.28f, 0.36f, 0.68f};
  Rgb background{0.93f, 0.91f, 0.88f};
  double color_jitter = 0.05;
  double texture_amplitude = 0.04;
  uint64_t seed = 0;

  void validate() const;
};

/// Renders image `index`. Pixels are 8-bit quantized so a PNG round trip is
/// lossless. Fully determined by (cfg, index).
AnnotatedImage generate_image(const SynthConfig& cfg, int index);

/// Generates `count` images, writing images/<id>.png plus annotations.json
/// (all records), train.json and test.json (the last `holdout` records).
std::vector<AnnotatedImage> generate_dataset(const SynthConfig& cfg, int count, int holdout,
                                             const std::filesystem::path& out_dir);

}  // namespace countlab
