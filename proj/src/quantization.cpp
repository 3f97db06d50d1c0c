#include "colorcount/quantization.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

#include "colorcount/color_space.hpp"

namespace colorcount::quant {

using nlohmann::json;

ColorCodebook build_codebook(double grid_spacing, int gamut_samples, std::uint64_t seed) {
  if (!(grid_spacing > 0.0) || grid_spacing > 2 * color::kChromaLimit) {
    throw std::invalid_argument("build_codebook: grid_spacing must be in (0, 220], got " +
                                std::to_string(grid_spacing));
  }
  if (gamut_samples < 0) throw std::invalid_argument("build_codebook: gamut_samples must be >= 0");

  const double lo = -color::kChromaLimit;
  const int cells = static_cast<int>(std::ceil(2 * color::kChromaLimit / grid_spacing - 1e-9));
  auto cell_of = [&](double v) {
    return std::clamp(static_cast<int>(std::floor((v - lo) / grid_spacing)), 0, cells - 1);
  };

  std::vector<char> keep(static_cast<std::size_t>(cells) * cells, gamut_samples == 0 ? 1 : 0);
  if (gamut_samples > 0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int s = 0; s < gamut_samples; ++s) {
      const double r = unit(rng);
      const double g = unit(rng);
      const double b = unit(rng);
      const auto lab = color::rgb_to_lab({r, g, b});
      keep[static_cast<std::size_t>(cell_of(lab.a)) * cells + cell_of(lab.b)] = 1;
    }
  }

  ColorCodebook cb;
  cb.grid_spacing = grid_spacing;
  for (int i = 0; i < cells; ++i) {
    for (int j = 0; j < cells; ++j) {
      if (!keep[static_cast<std::size_t>(i) * cells + j]) continue;
      const double a = lo + (i + 0.5) * grid_spacing;
      const double b = lo + (j + 0.5) * grid_spacing;
      if (a > color::kChromaLimit || b > color::kChromaLimit) continue;
      cb.centers.push_back({a, b});
    }
  }
  return cb;
}

ColorDistribution::ColorDistribution(int h, int w, int q) : height(h), width(w), bins(q) {
  probs.assign(static_cast<std::size_t>(h) * w * q, 0.0);
}

int SoftCode::dominant_bin(std::size_t i) const {
  int best = index[i * k];
  double best_w = weight[i * k];
  for (int j = 1; j < k; ++j) {
    const int q = index[i * k + j];
    const double w = weight[i * k + j];
    if (w > best_w || (w == best_w && q < best)) {
      best = q;
      best_w = w;
    }
  }
  return best;
}

ColorDistribution SoftCode::to_dense(int height, int width) const {
  ColorDistribution out(height, width, bins);
  if (out.pixel_count() != pixel_count()) throw std::invalid_argument("SoftCode::to_dense: size mismatch");
  for (std::size_t i = 0; i < pixel_count(); ++i) {
    for (int j = 0; j < k; ++j) out.probs[i * bins + index[i * k + j]] += weight[i * k + j];
  }
  return out;
}

SoftCode soft_encode_sparse(std::span<const double> chroma, const ColorCodebook& cb, int k,
                            double sigma) {
  const int q = cb.size();
  if (k < 1 || k > q) throw std::invalid_argument("soft_encode: k must be in [1, Q]");
  if (!(sigma > 0.0)) throw std::invalid_argument("soft_encode: sigma must be positive");
  if (chroma.size() % 2 != 0) throw std::invalid_argument("soft_encode: chroma must be interleaved ab");

  const std::size_t n = chroma.size() / 2;
  SoftCode code;
  code.k = k;
  code.bins = q;
  code.index.resize(n * k);
  code.weight.resize(n * k);

  std::vector<std::pair<double, int>> dist(q);
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = chroma[2 * i];
    const double b = chroma[2 * i + 1];
    for (int c = 0; c < q; ++c) {
      const double da = a - cb.centers[c][0];
      const double db = b - cb.centers[c][1];
      dist[c] = {da * da + db * db, c};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    // Shift by the nearest distance so the largest weight is exactly 1.
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      const double w = std::exp(-(dist[j].first - dist[0].first) * inv_two_sigma2);
      code.index[i * k + j] = dist[j].second;
      code.weight[i * k + j] = w;
      total += w;
    }
    for (int j = 0; j < k; ++j) code.weight[i * k + j] /= total;
  }
  return code;
}

ColorDistribution soft_encode(std::span<const double> chroma, int height, int width,
                              const ColorCodebook& cb, int k, double sigma) {
  if (chroma.size() != static_cast<std::size_t>(height) * width * 2) {
    throw std::invalid_argument("soft_encode: chroma size does not match H x W x 2");
  }
  return soft_encode_sparse(chroma, cb, k, sigma).to_dense(height, width);
}

std::vector<double> decode_annealed_mean(const ColorDistribution& dist, const ColorCodebook& cb,
                                         double temperature) {
  if (!(temperature > 0.0) || temperature > 1.0) {
    throw std::invalid_argument("decode_annealed_mean: temperature must be in (0, 1]");
  }
  if (dist.bins != cb.size()) throw std::invalid_argument("decode_annealed_mean: bin count mismatch");
  std::vector<double> out(dist.pixel_count() * 2);
  for (std::size_t i = 0; i < dist.pixel_count(); ++i) {
    const auto ab = annealed_mean_pixel(dist.pixel(i), cb, temperature);
    out[2 * i] = ab[0];
    out[2 * i + 1] = ab[1];
  }
  return out;
}

double RebalanceWeights::pixel_weight(std::span<const double> target) const {
  const auto it = std::max_element(target.begin(), target.end());
  return per_bin[static_cast<std::size_t>(it - target.begin())];
}

RebalanceWeights RebalanceWeights::uniform(int bins) {
  RebalanceWeights w;
  w.per_bin.assign(bins, 1.0);
  w.prior.assign(bins, 1.0 / bins);
  w.mix = 0.0;
  return w;
}

RebalanceFitter::RebalanceFitter(int bins) : mass_(bins, 0.0) {
  if (bins < 1) throw std::invalid_argument("RebalanceFitter: bins must be positive");
}

void RebalanceFitter::add(const ColorDistribution& dist) {
  if (dist.bins != static_cast<int>(mass_.size())) throw std::invalid_argument("RebalanceFitter: bin mismatch");
  for (std::size_t i = 0; i < dist.pixel_count(); ++i) {
    const auto p = dist.pixel(i);
    for (std::size_t q = 0; q < p.size(); ++q) mass_[q] += p[q];
  }
  pixels_ += dist.pixel_count();
}

void RebalanceFitter::add(const SoftCode& code) {
  if (code.bins != static_cast<int>(mass_.size())) throw std::invalid_argument("RebalanceFitter: bin mismatch");
  for (std::size_t i = 0; i < code.index.size(); ++i) mass_[code.index[i]] += code.weight[i];
  pixels_ += code.pixel_count();
}

RebalanceWeights RebalanceFitter::finish(double mix) const {
  if (pixels_ == 0) throw std::invalid_argument("fit_rebalance: empty corpus");
  std::vector<double> prior(mass_.size());
  const double total = std::accumulate(mass_.begin(), mass_.end(), 0.0);
  for (std::size_t q = 0; q < mass_.size(); ++q) prior[q] = mass_[q] / total;
  return rebalance_from_prior(std::move(prior), mix);
}

RebalanceWeights rebalance_from_prior(std::vector<double> prior, double mix) {
  if (!(mix >= 0.0 && mix <= 1.0)) throw std::invalid_argument("fit_rebalance: mix must be in [0, 1]");
  if (prior.empty()) throw std::invalid_argument("fit_rebalance: empty prior");
  const double q = static_cast<double>(prior.size());
  RebalanceWeights w;
  w.mix = mix;
  w.per_bin.resize(prior.size());
  for (std::size_t i = 0; i < prior.size(); ++i) {
    const double smoothed = (1.0 - mix) * prior[i] + mix / q;
    if (!(smoothed > 0.0)) {
      throw std::invalid_argument("fit_rebalance: bin " + std::to_string(i) +
                                  " has zero mass and mix = 0; weights would be infinite");
    }
    w.per_bin[i] = 1.0 / smoothed;
  }
  double expectation = 0.0;
  for (std::size_t i = 0; i < prior.size(); ++i) expectation += prior[i] * w.per_bin[i];
  for (double& v : w.per_bin) v /= expectation;
  w.prior = std::move(prior);
  return w;
}

RebalanceWeights fit_rebalance(std::span<const ColorDistribution> corpus, double mix) {
  if (corpus.empty()) throw std::invalid_argument("fit_rebalance: empty corpus");
  RebalanceFitter fitter(corpus.front().bins);
  for (const auto& d : corpus) fitter.add(d);
  return fitter.finish(mix);
}

void save_quantization(const std::filesystem::path& path, const ColorCodebook& cb,
                       const RebalanceWeights& weights) {
  json j;
  j["grid_spacing"] = cb.grid_spacing;
  j["centers"] = cb.centers;
  j["per_bin"] = weights.per_bin;
  j["prior"] = weights.prior;
  j["mix"] = weights.mix;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

void load_quantization(const std::filesystem::path& path, ColorCodebook& cb, RebalanceWeights& weights) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const json j = json::parse(in);
  cb.grid_spacing = j.at("grid_spacing").get<double>();
  cb.centers = j.at("centers").get<std::vector<std::array<double, 2>>>();
  weights.per_bin = j.at("per_bin").get<std::vector<double>>();
  weights.prior = j.at("prior").get<std::vector<double>>();
  weights.mix = j.at("mix").get<double>();
  if (weights.per_bin.size() != cb.centers.size()) {
    throw std::runtime_error(path.string() + ": per_bin length does not match the codebook");
  }
}

}  // namespace colorcount::quant
