#pragma once

#include <filesystem>
#include <vector>

namespace unispoof {

// Row-major H x W x C, values in [0, 1]. Masks use C = 1.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c = 0) { return data[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c = 0) const { return data[(y * width + x) * channels + c]; }
  std::size_t pixels() const { return height * width; }
  bool same_size(const Image& o) const { return height == o.height && width == o.width; }

  bool operator==(const Image&) const = default;
};

void clamp01(Image& img);

// Binary PPM (P6) for 3 channels, PGM (P5) for 1 channel; maxval 255.
void write_pnm(const Image& img, const std::filesystem::path& path);
Image read_pnm(const std::filesystem::path& path);

// Rounds to the 8-bit grid the file formats store, so in-memory data can
// match what a reload would see.
void quantize8(Image& img);

}  // namespace unispoof
