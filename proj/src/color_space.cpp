#include "colorcount/color_space.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace colorcount::color {

namespace {

// Linear sRGB -> XYZ (D65).
constexpr double kToXyz[3][3] = {{0.4124564, 0.3575761, 0.1804375},
                                 {0.2126729, 0.7151522, 0.0721750},
                                 {0.0193339, 0.1191920, 0.9503041}};
// Reference white is the image of RGB (1,1,1) so grays land exactly on a = b = 0.
constexpr double kWhite[3] = {kToXyz[0][0] + kToXyz[0][1] + kToXyz[0][2],
                              kToXyz[1][0] + kToXyz[1][1] + kToXyz[1][2],
                              kToXyz[2][0] + kToXyz[2][1] + kToXyz[2][2]};

constexpr double kDelta = 6.0 / 29.0;

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_inv(double f) {
  return f > kDelta ? f * f * f : 3.0 * kDelta * kDelta * (f - 4.0 / 29.0);
}

// Exact inverse of kToXyz. The published 7-digit inverse matrix is not an
// exact inverse and would bias the round trip.
struct Inverse {
  double m[3][3];
  Inverse() {
    const auto& a = kToXyz;
    const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                       a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                       a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    m[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) / det;
    m[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / det;
    m[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / det;
    m[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) / det;
    m[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / det;
    m[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / det;
    m[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) / det;
    m[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / det;
    m[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / det;
  }
};

const Inverse& inverse() {
  static const Inverse inv;
  return inv;
}

}  // namespace

RgbImage::RgbImage(int h, int w) : height(h), width(w) {
  if (h < 1 || w < 1) throw std::invalid_argument("RgbImage: dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(h) * w * 3, 0.0);
}

LabImage::LabImage(int h, int w) : height(h), width(w) {
  if (h < 1 || w < 1) throw std::invalid_argument("LabImage: dimensions must be positive");
  lightness.assign(static_cast<std::size_t>(h) * w, 0.0);
  chroma.assign(static_cast<std::size_t>(h) * w * 2, 0.0);
}

Lab rgb_to_lab(const std::array<double, 3>& rgb) {
  double lin[3];
  for (int c = 0; c < 3; ++c) lin[c] = srgb_to_linear(std::clamp(rgb[c], 0.0, 1.0));
  double f[3];
  for (int r = 0; r < 3; ++r) {
    const double v = kToXyz[r][0] * lin[0] + kToXyz[r][1] * lin[1] + kToXyz[r][2] * lin[2];
    f[r] = lab_f(v / kWhite[r]);
  }
  Lab out;
  out.l = std::clamp(116.0 * f[1] - 16.0, 0.0, 100.0);
  out.a = std::clamp(500.0 * (f[0] - f[1]), -kChromaLimit, kChromaLimit);
  out.b = std::clamp(200.0 * (f[1] - f[2]), -kChromaLimit, kChromaLimit);
  return out;
}

std::array<double, 3> lab_to_rgb(const Lab& lab) {
  const double l = std::clamp(lab.l, 0.0, 100.0);
  const double a = std::clamp(lab.a, -kChromaLimit, kChromaLimit);
  const double b = std::clamp(lab.b, -kChromaLimit, kChromaLimit);
  const double fy = (l + 16.0) / 116.0;
  const double fx = fy + a / 500.0;
  const double fz = fy - b / 200.0;
  const double xyz[3] = {lab_f_inv(fx) * kWhite[0], lab_f_inv(fy) * kWhite[1], lab_f_inv(fz) * kWhite[2]};
  const auto& m = inverse().m;
  std::array<double, 3> rgb{};
  for (int r = 0; r < 3; ++r) {
    const double lin = m[r][0] * xyz[0] + m[r][1] * xyz[1] + m[r][2] * xyz[2];
    rgb[r] = std::clamp(linear_to_srgb(std::max(lin, 0.0)), 0.0, 1.0);
  }
  return rgb;
}

LabImage rgb_to_lab(const RgbImage& img) {
  LabImage out(img.height, img.width);
  const std::size_t n = img.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    const Lab lab = rgb_to_lab({img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]});
    out.lightness[i] = lab.l;
    out.chroma[2 * i] = lab.a;
    out.chroma[2 * i + 1] = lab.b;
  }
  return out;
}

RgbImage lab_to_rgb(const LabImage& lab) {
  RgbImage out(lab.height, lab.width);
  const std::size_t n = lab.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    const auto rgb = lab_to_rgb(Lab{lab.lightness[i], lab.chroma[2 * i], lab.chroma[2 * i + 1]});
    for (int c = 0; c < 3; ++c) out.pixels[3 * i + c] = rgb[c];
  }
  return out;
}

}  // namespace colorcount::color
