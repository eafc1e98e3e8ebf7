#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "onavos/mask.hpp"

namespace onavos {

/// Planar RGB image with values in [0, 1]. Channel c, row y, column x lives
/// at data[(c * height + y) * width + x].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  /// Rounds every value to the nearest multiple of 1/255 so the image
  /// survives an 8-bit PPM round trip unchanged.
  void quantize();

  friend bool operator==(const Image&, const Image&) = default;
};

// Binary netpbm I/O. Masks are P5 with maxval 255 (foreground 255,
// background 0; any non-zero byte reads as foreground). Frames are P6 with
// maxval 255.
void write_pgm(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_pgm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

}  // namespace onavos
