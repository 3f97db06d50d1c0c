#pragma once

#include <filesystem>
#include <variant>
#include <vector>

namespace colorcount::density {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Head positions in continuous pixel coordinates: pixel (i, j) covers
/// [j, j+1) x [i, i+1) and its center is (j + 0.5, i + 0.5).
struct HeadAnnotations {
  std::vector<Point> points;
  int height = 0;
  int width = 0;

  /// Throws std::invalid_argument on any point outside [0,W) x [0,H).
  void validate() const;
};

struct DensityMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  DensityMap() = default;
  DensityMap(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0.0) {}

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct FixedKernel {
  double sigma = 4.0;
};

struct AdaptiveKernel {
  double beta = 0.3;
  int k = 3;
  double fallback_sigma = 4.0;
};

using KernelMode = std::variant<FixedKernel, AdaptiveKernel>;

/// sigma_i = beta * mean distance from point i to its k nearest other points
/// (all other points when fewer than k exist). Needs at least two points.
[[nodiscard]] std::vector<double> adaptive_sigmas(const std::vector<Point>& points, double beta, int k);

/// Sum of one Gaussian per head. Each kernel is truncated at 4 sigma and
/// renormalized over its in-image window, so the map sums to the head count.
[[nodiscard]] DensityMap density_from_points(const HeadAnnotations& ann, const KernelMode& mode);

[[nodiscard]] double count_from_density(const DensityMap& map);

// Self-describing array persistence (NumPy .npy, little-endian float64).
void save_npy(const std::filesystem::path& path, const DensityMap& map);
[[nodiscard]] DensityMap load_npy(const std::filesystem::path& path);

}  // namespace colorcount::density
