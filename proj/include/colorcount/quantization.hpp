#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace colorcount::quant {

/// Regular grid of in-gamut ab bins.
struct ColorCodebook {
  double grid_spacing = 0.0;
  std::vector<std::array<double, 2>> centers;

  [[nodiscard]] int size() const { return static_cast<int>(centers.size()); }
};

/// Returns every grid cell of [-110,110]^2 that contains at least one ab value
/// reached by `gamut_samples` seeded random sRGB colors. gamut_samples == 0
/// disables the gamut filter and keeps the full grid.
[[nodiscard]] ColorCodebook build_codebook(double grid_spacing, int gamut_samples,
                                           std::uint64_t seed = 0);

/// Per-pixel distribution over the codebook, pixel-major (H x W x Q).
struct ColorDistribution {
  int height = 0;
  int width = 0;
  int bins = 0;
  std::vector<double> probs;

  ColorDistribution() = default;
  ColorDistribution(int h, int w, int q);

  [[nodiscard]] std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  [[nodiscard]] std::span<const double> pixel(std::size_t i) const {
    return {probs.data() + i * bins, static_cast<std::size_t>(bins)};
  }
};

/// Sparse form of a soft encoding: k (bin, weight) pairs per pixel.
struct SoftCode {
  int k = 0;
  int bins = 0;
  std::vector<int> index;
  std::vector<double> weight;

  [[nodiscard]] std::size_t pixel_count() const { return k == 0 ? 0 : index.size() / k; }
  /// Bin holding the most mass at pixel i (lowest index on ties).
  [[nodiscard]] int dominant_bin(std::size_t i) const;
  [[nodiscard]] ColorDistribution to_dense(int height, int width) const;
};

/// Gaussian soft encoding over the k nearest centers, exp(-d^2 / 2 sigma^2),
/// renormalized per pixel. `chroma` is interleaved ab, length 2 * pixels.
[[nodiscard]] SoftCode soft_encode_sparse(std::span<const double> chroma, const ColorCodebook& cb,
                                          int k, double sigma);
[[nodiscard]] ColorDistribution soft_encode(std::span<const double> chroma, int height, int width,
                                            const ColorCodebook& cb, int k, double sigma);

/// Annealed mean of one pixel's distribution: sharpen p^(1/T), renormalize,
/// take the expectation of the bin centers.
template <typename T>
std::array<double, 2> annealed_mean_pixel(std::span<const T> probs, const ColorCodebook& cb,
                                          double temperature) {
  double max_log = -INFINITY;
  for (const T p : probs) {
    if (p > 0) max_log = std::max(max_log, std::log(static_cast<double>(p)));
  }
  double total = 0.0;
  double a = 0.0;
  double b = 0.0;
  for (std::size_t q = 0; q < probs.size(); ++q) {
    if (!(probs[q] > 0)) continue;
    const double w = std::exp((std::log(static_cast<double>(probs[q])) - max_log) / temperature);
    total += w;
    a += w * cb.centers[q][0];
    b += w * cb.centers[q][1];
  }
  if (total <= 0.0) return {0.0, 0.0};
  return {a / total, b / total};
}

/// Interleaved ab chroma (H x W x 2) decoded with the annealed mean.
[[nodiscard]] std::vector<double> decode_annealed_mean(const ColorDistribution& dist,
                                                       const ColorCodebook& cb, double temperature);

struct RebalanceWeights {
  std::vector<double> per_bin;
  std::vector<double> prior;  // empirical bin prior the weights were fitted on
  double mix = 0.5;

  [[nodiscard]] int bins() const { return static_cast<int>(per_bin.size()); }
  /// Weight of a pixel is the weight of its dominant ground-truth bin.
  [[nodiscard]] double pixel_weight(std::span<const double> target) const;
  [[nodiscard]] static RebalanceWeights uniform(int bins);
};

/// Sequential fold of an encoded corpus into the empirical bin prior.
class RebalanceFitter {
 public:
  explicit RebalanceFitter(int bins);

  void add(const ColorDistribution& dist);
  void add(const SoftCode& code);

  [[nodiscard]] std::size_t pixels_seen() const { return pixels_; }
  [[nodiscard]] RebalanceWeights finish(double mix) const;

 private:
  std::vector<double> mass_;
  std::size_t pixels_ = 0;
};

/// per_bin ∝ 1 / ((1 - mix) p + mix / Q), scaled so that E_p[per_bin] = 1.
[[nodiscard]] RebalanceWeights rebalance_from_prior(std::vector<double> prior, double mix);
[[nodiscard]] RebalanceWeights fit_rebalance(std::span<const ColorDistribution> corpus, double mix);

// Text persistence of the stage-1 quantization artifacts. Values round-trip exactly.
void save_quantization(const std::filesystem::path& path, const ColorCodebook& cb,
                       const RebalanceWeights& weights);
void load_quantization(const std::filesystem::path& path, ColorCodebook& cb, RebalanceWeights& weights);

}  // namespace colorcount::quant
