#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "polyloop/geometry.hpp"

namespace polyloop {

// Interleaved 8-bit RGB image, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int x, int y, int c) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Binary PPM (P6, maxval 255).
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);

// Bilinear resample of `box` (image pixels) onto an out_size x out_size
// grid. Samples outside the image replicate the border.
Image crop_resize(const Image& image, const geometry::BBox& box, int out_size);

}  // namespace polyloop
