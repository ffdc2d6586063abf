#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace countlab {

/// Row-major H x W x 3 raster with values in [0, 1].
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, float fill = 0.0f);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }

  float& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  std::span<float> pixels() { return pixels_; }
  std::span<const float> pixels() const { return pixels_; }

  /// Copy of the window [y0, y0+h) x [x0, x0+w).
  Image crop(int y0, int x0, int h, int w) const;

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

/// 8-bit RGB PNG I/O. Values are quantized with round-to-nearest on write.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// Quantize to 8 bits and back, matching what a PNG round trip produces.
Image quantize8(const Image& image);

}  // namespace countlab
