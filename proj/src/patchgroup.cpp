#include "countlab/patchgroup.hpp"

#include <cmath>

#include "countlab/error.hpp"
#include "countlab/kernels.hpp"
#include "countlab/rng.hpp"

namespace countlab {

RankedPatchGroup make_ranked_group(const AnnotatedImage& image, int M, std::span<const double> ratios,
                                   uint64_t seed) {
  require(M >= 1, "make_ranked_group: M must be positive");
  require(!ratios.empty(), "make_ranked_group: empty ratio list");
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    require(ratios[i] > 0.0 && ratios[i] <= 1.0, "make_ranked_group: ratio outside (0, 1]");
    require(i == 0 || ratios[i] >= ratios[i - 1], "make_ranked_group: ratios must be ascending");
  }
  require(ratios.back() == 1.0, "make_ranked_group: last ratio must be 1");
  if (image.height() < M || image.width() < M) {
    fail("make_ranked_group: image smaller than crop size (" + std::to_string(image.height()) + "x" +
         std::to_string(image.width()) + " < " + std::to_string(M) + ")");
  }

  Rng rng(hash_combine(seed, hash64(image.id)));
  const int x_big = static_cast<int>(rng.uniform_int(0, image.width() - M));
  const int y_big = static_cast<int>(rng.uniform_int(0, image.height() - M));

  RankedPatchGroup group;
  group.source_id = image.id;
  for (double ratio : ratios) {
    const int side = std::max(1, static_cast<int>(std::lround(M * ratio)));
    const int offset = (M - side) / 2;
    const CropWindow win{x_big + offset, y_big + offset, side};

    Patch patch;
    Image crop = image.pixels.crop(win.y0, win.x0, side, side);
    if (side == M) {
      patch.image = std::move(crop);
    } else {
      patch.image = Image(M, M);
      kernels::resize_bilinear(crop, patch.image);
    }
    const double scale = static_cast<double>(M) / side;
    std::vector<PointAnnotation> inside;
    for (const auto& pt : image.points) {
      if (pt.x >= win.x0 && pt.x < win.x0 + side && pt.y >= win.y0 && pt.y < win.y0 + side) {
        inside.push_back({(pt.x - win.x0 + 0.5) * scale - 0.5, (pt.y - win.y0 + 0.5) * scale - 0.5, pt.category});
      }
    }
    patch.points = std::move(inside);
    group.patches.push_back(std::move(patch));
    group.crop_sizes.push_back(side);
    group.windows.push_back(win);
  }
  return group;
}

Patch whole_image_patch(const AnnotatedImage& image) { return Patch{image.pixels, image.points}; }

std::vector<std::pair<int, int>> group_count_order(int k) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) pairs.emplace_back(i, j);
  }
  return pairs;
}

std::vector<int64_t> window_point_counts(const AnnotatedImage& image, const RankedPatchGroup& group) {
  std::vector<int64_t> counts;
  for (const auto& w : group.windows) {
    int64_t c = 0;
    for (const auto& pt : image.points) {
      if (pt.x >= w.x0 && pt.x < w.x0 + w.side && pt.y >= w.y0 && pt.y < w.y0 + w.side) ++c;
    }
    counts.push_back(c);
  }
  return counts;
}

}  // namespace countlab
