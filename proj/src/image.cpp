#include "countlab/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "countlab/error.hpp"

namespace countlab {

Image::Image(int height, int width, float fill) : height_(height), width_(width) {
  require(height >= 1 && width >= 1, "Image: dimensions must be positive");
  pixels_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

Image Image::crop(int y0, int x0, int h, int w) const {
  require(y0 >= 0 && x0 >= 0 && y0 + h <= height_ && x0 + w <= width_, "Image::crop: window out of bounds");
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    const float* src = &pixels_[index(y0 + y, x0, 0)];
    std::copy(src, src + static_cast<std::size_t>(w) * kChannels, &out.at(y, 0, 0));
  }
  return out;
}

namespace {

uint8_t to_byte(float v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image quantize8(const Image& image) {
  Image out = image;
  for (float& v : out.pixels()) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    fail("read_png: cannot read '" + path.string() + "': " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    std::string message = png.message;
    png_image_free(&png);
    fail("read_png: decode failed for '" + path.string() + "': " + message);
  }
  Image out(static_cast<int>(png.height), static_cast<int>(png.width));
  auto dst = out.pixels();
  for (std::size_t i = 0; i < buffer.size(); ++i) dst[i] = static_cast<float>(buffer[i]) / 255.0f;
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  require(!image.empty(), "write_png: empty image");
  std::vector<uint8_t> buffer(image.pixels().size());
  std::transform(image.pixels().begin(), image.pixels().end(), buffer.begin(), to_byte);

  // libpng's simplified writer embeds no timestamps, so output bytes are a
  // pure function of the pixels.
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = PNG_FORMAT_RGB;
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) fail("write_png: cannot open '" + path.string() + "' for writing");
  if (!png_image_write_to_stdio(&png, file.get(), 0, buffer.data(), 0, nullptr)) {
    fail("write_png: encode failed for '" + path.string() + "': " + png.message);
  }
}

}  // namespace countlab
