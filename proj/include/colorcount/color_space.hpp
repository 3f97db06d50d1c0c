#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace colorcount::color {

/// sRGB image (D65), interleaved H x W x 3, channel values in [0,1].
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  RgbImage() = default;
  RgbImage(int h, int w);

  [[nodiscard]] std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  [[nodiscard]] double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

/// CIE Lab split into lightness (H x W, [0,100]) and chroma (H x W x 2, [-110,110]).
struct LabImage {
  int height = 0;
  int width = 0;
  std::vector<double> lightness;
  std::vector<double> chroma;

  LabImage() = default;
  LabImage(int h, int w);

  [[nodiscard]] std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
};

inline constexpr double kChromaLimit = 110.0;

struct Lab {
  double l = 0.0;
  double a = 0.0;
  double b = 0.0;
};

// Single-pixel conversions; the image versions apply these pixel-wise.
[[nodiscard]] Lab rgb_to_lab(const std::array<double, 3>& rgb);
[[nodiscard]] std::array<double, 3> lab_to_rgb(const Lab& lab);

[[nodiscard]] LabImage rgb_to_lab(const RgbImage& img);
/// Inverse conversion. Lab inputs are clamped to the LabImage ranges first and
/// out-of-gamut RGB results are clipped to [0,1].
[[nodiscard]] RgbImage lab_to_rgb(const LabImage& lab);

}  // namespace colorcount::color
