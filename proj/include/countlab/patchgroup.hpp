#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "countlab/datamodel.hpp"

namespace countlab {

/// Encoder input. `points`, when present, are the annotations mapped into the
/// patch's own pixel frame; only the synthetic teachers read them.
struct Patch {
  Image image;
  std::optional<std::vector<PointAnnotation>> points;
};

/// Square crop window in source-image pixels.
struct CropWindow {
  int x0 = 0;
  int y0 = 0;
  int side = 0;
};

/// k centre-aligned crops of one image, smallest first, each resized to M x M.
struct RankedPatchGroup {
  std::vector<Patch> patches;
  std::vector<int> crop_sizes;
  std::vector<CropWindow> windows;
  std::string source_id;

  int size() const { return static_cast<int>(patches.size()); }
};

/// Places an M x M window uniformly at random (stream derived from `seed`
/// and the image id), then crops round(M * s) windows sharing its centre
/// and resizes each back to M x M bilinearly.
RankedPatchGroup make_ranked_group(const AnnotatedImage& image, int M, std::span<const double> ratios,
                                   uint64_t seed);

/// The whole image as a single patch carrying its annotations.
Patch whole_image_patch(const AnnotatedImage& image);

/// All (i, j) with i < j, zero-based.
std::vector<std::pair<int, int>> group_count_order(int k);

/// Number of annotated points inside each crop window.
std::vector<int64_t> window_point_counts(const AnnotatedImage& image, const RankedPatchGroup& group);

}  // namespace countlab
