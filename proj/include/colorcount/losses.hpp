#pragma once

// Training objectives. Every loss returns its value together with the
// analytic gradient used by the training loop. Sums run in a fixed order in
// double precision regardless of the element type, so results are
// bit-reproducible.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "colorcount/quantization.hpp"

namespace colorcount::loss {

inline constexpr double kProbEpsilon = 1e-12;

template <typename T>
struct Scalar {
  double value = 0.0;
  std::vector<T> grad;
};

namespace detail {
inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}
inline double safe_log(double p) { return std::log(std::max(p, kProbEpsilon)); }
}  // namespace detail

/// -sum_{h,w} v_{h,w} sum_q Z_{h,w,q} log Zhat_{h,w,q} over pixel-major
/// distributions. The gradient is taken w.r.t. the logits that produced
/// `probs` through a per-pixel softmax: v (Zhat_q * sum(Z) - Z_q).
template <typename T>
Scalar<T> colorization_loss(std::span<const T> probs, std::span<const T> target,
                            std::span<const double> pixel_weights, int bins) {
  detail::require(bins > 0, "colorization_loss: bins must be positive");
  detail::require(probs.size() == target.size(), "colorization_loss: prediction/target shape mismatch");
  detail::require(probs.size() == pixel_weights.size() * static_cast<std::size_t>(bins),
                  "colorization_loss: one weight per pixel required");
  Scalar<T> out;
  out.grad.resize(probs.size());
  for (std::size_t p = 0; p < pixel_weights.size(); ++p) {
    const T* zh = probs.data() + p * bins;
    const T* z = target.data() + p * bins;
    const double v = pixel_weights[p];
    double pixel = 0.0;
    double mass = 0.0;
    for (int q = 0; q < bins; ++q) {
      if (z[q] != 0) pixel += z[q] * detail::safe_log(zh[q]);
      mass += z[q];
    }
    out.value -= v * pixel;
    T* g = out.grad.data() + p * bins;
    for (int q = 0; q < bins; ++q) g[q] = static_cast<T>(v * (zh[q] * mass - z[q]));
  }
  return out;
}

/// Dense overload weighting each pixel by the rebalance weight of its dominant target bin.
inline Scalar<double> colorization_loss(const quant::ColorDistribution& pred,
                                        const quant::ColorDistribution& target,
                                        const quant::RebalanceWeights& weights) {
  detail::require(pred.height == target.height && pred.width == target.width && pred.bins == target.bins,
                  "colorization_loss: prediction/target shape mismatch");
  detail::require(weights.bins() == target.bins, "colorization_loss: rebalance weights do not match Q");
  std::vector<double> v(target.pixel_count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = weights.pixel_weight(target.pixel(i));
  return colorization_loss<double>(pred.probs, target.probs, v, target.bins);
}

/// Minimized forms of the adversarial objective. Gradients are w.r.t. the
/// discriminator probabilities (after clamping to [eps, 1 - eps]).
template <typename T>
struct GanLosses {
  double discriminator = 0.0;  // -E[log D(real)] - E[log(1 - D(fake))]
  double generator = 0.0;      // -E[log D(fake)], non-saturating
  std::vector<T> disc_grad_real;
  std::vector<T> disc_grad_fake;
  std::vector<T> gen_grad_fake;
};

template <typename T>
GanLosses<T> gan_losses(std::span<const T> disc_on_real, std::span<const T> disc_on_fake) {
  detail::require(!disc_on_real.empty() && !disc_on_fake.empty(), "gan_losses: empty batch");
  const double nr = static_cast<double>(disc_on_real.size());
  const double nf = static_cast<double>(disc_on_fake.size());
  auto clamp = [](double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); };
  GanLosses<T> out;
  out.disc_grad_real.resize(disc_on_real.size());
  out.disc_grad_fake.resize(disc_on_fake.size());
  out.gen_grad_fake.resize(disc_on_fake.size());
  for (std::size_t i = 0; i < disc_on_real.size(); ++i) {
    const double p = clamp(disc_on_real[i]);
    out.discriminator -= std::log(p) / nr;
    out.disc_grad_real[i] = static_cast<T>(-1.0 / (p * nr));
  }
  for (std::size_t i = 0; i < disc_on_fake.size(); ++i) {
    const double p = clamp(disc_on_fake[i]);
    out.discriminator -= std::log(1.0 - p) / nf;
    out.generator -= std::log(p) / nf;
    out.disc_grad_fake[i] = static_cast<T>(1.0 / ((1.0 - p) * nf));
    out.gen_grad_fake[i] = static_cast<T>(-1.0 / (p * nf));
  }
  return out;
}

template <typename T>
struct CycleLoss {
  double value = 0.0;
  std::vector<T> grad_x_rec;
  std::vector<T> grad_z_rec;
};

/// mean|x_rec - x| + mean|z_rec - z|; subgradient 0 at exact ties.
template <typename T>
CycleLoss<T> cycle_loss(std::span<const T> x, std::span<const T> x_rec, std::span<const T> z,
                        std::span<const T> z_rec) {
  detail::require(x.size() == x_rec.size() && z.size() == z_rec.size(), "cycle_loss: shape mismatch");
  CycleLoss<T> out;
  auto term = [](std::span<const T> a, std::span<const T> rec, std::vector<T>& grad) {
    grad.assign(a.size(), T(0));
    if (a.empty()) return 0.0;
    const double n = static_cast<double>(a.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(rec[i]) - static_cast<double>(a[i]);
      sum += std::abs(d);
      grad[i] = static_cast<T>((d > 0) - (d < 0)) / static_cast<T>(n);
    }
    return sum / n;
  };
  out.value = term(x, x_rec, out.grad_x_rec) + term(z, z_rec, out.grad_z_rec);
  return out;
}

/// N maps of M elements each, map-major.
template <typename T>
struct FeatureStack {
  int maps = 0;
  int size = 0;
  std::span<const T> values;

  void validate() const {
    detail::require(maps >= 1 && size >= 1, "FeatureStack: need N >= 1 maps of M >= 1 elements");
    detail::require(values.size() == static_cast<std::size_t>(maps) * size, "FeatureStack: value count != N * M");
  }
};

/// N x N row-major Gram matrix of inner products between vectorized maps.
template <typename T>
std::vector<double> gram(const FeatureStack<T>& f) {
  f.validate();
  const std::size_t n = f.maps;
  const std::size_t m = f.size;
  std::vector<double> g(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += static_cast<double>(f.values[i * m + k]) * f.values[j * m + k];
      g[i * n + j] = s;
      g[j * n + i] = s;
    }
  }
  return g;
}

/// 1 / (4 N^2 M^2) * sum (G - A)^2; gradient w.r.t. the predicted maps is
/// (G - A) F / (N^2 M^2).
template <typename T>
Scalar<T> texture_loss(const FeatureStack<T>& pred, const FeatureStack<T>& target) {
  detail::require(pred.maps == target.maps && pred.size == target.size, "texture_loss: feature shape mismatch");
  const auto g = gram(pred);
  const auto a = gram(target);
  const std::size_t n = pred.maps;
  const std::size_t m = pred.size;
  const double nm = static_cast<double>(n) * static_cast<double>(m);
  std::vector<double> diff(n * n);
  Scalar<T> out;
  for (std::size_t i = 0; i < n * n; ++i) {
    diff[i] = g[i] - a[i];
    out.value += diff[i] * diff[i];
  }
  out.value /= 4.0 * nm * nm;
  out.grad.assign(n * m, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += diff[i * n + j] * pred.values[j * m + k];
      out.grad[i * m + k] = static_cast<T>(s / (nm * nm));
    }
  }
  return out;
}

/// Mean over the batch of -log softmax(logits)[label]; labels are 1-based.
template <typename T>
Scalar<T> classification_loss(std::span<const T> logits, std::span<const int> labels, int groups) {
  detail::require(groups >= 2, "classification_loss: need m >= 2 groups");
  detail::require(!labels.empty() && logits.size() == labels.size() * static_cast<std::size_t>(groups),
                  "classification_loss: logits must be batch x m");
  Scalar<T> out;
  out.grad.resize(logits.size());
  const double batch = static_cast<double>(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const int label = labels[b];
    if (label < 1 || label > groups) {
      throw std::invalid_argument("classification_loss: label " + std::to_string(label) + " outside 1.." +
                                  std::to_string(groups));
    }
    const T* z = logits.data() + b * groups;
    const double mx = *std::max_element(z, z + groups);
    double denom = 0.0;
    for (int j = 0; j < groups; ++j) denom += std::exp(z[j] - mx);
    const double log_denom = std::log(denom);
    out.value -= (z[label - 1] - mx - log_denom) / batch;
    for (int j = 0; j < groups; ++j) {
      const double p = std::exp(z[j] - mx - log_denom);
      out.grad[b * groups + j] = static_cast<T>((p - (j == label - 1 ? 1.0 : 0.0)) / batch);
    }
  }
  return out;
}

/// Mean squared difference over pixels.
template <typename T>
Scalar<T> euclidean_count_loss(std::span<const T> pred, std::span<const T> target) {
  detail::require(pred.size() == target.size() && !pred.empty(), "euclidean_count_loss: shape mismatch");
  const double n = static_cast<double>(pred.size());
  Scalar<T> out;
  out.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    out.value += d * d;
    out.grad[i] = static_cast<T>(2.0 * d / n);
  }
  out.value /= n;
  return out;
}

struct LossWeights {
  double alpha = 1.0;    // colorization
  double beta = 10.0;    // cycle
  double gamma = 1e-4;   // texture
  double lambda = 0.1;   // classification

  void validate() const {
    for (const double w : {alpha, beta, gamma, lambda}) {
      detail::require(std::isfinite(w) && w >= 0.0, "LossWeights: weights must be finite and >= 0");
    }
  }
};

struct PretrainParts {
  double gan_g_to_z = 0.0;
  double gan_f_to_x = 0.0;
  double colorization = 0.0;
  double cycle = 0.0;
  double texture = 0.0;
  double classification = 0.0;
};

inline double total_pretrain_loss(const PretrainParts& p, const LossWeights& w) {
  return p.gan_g_to_z + p.gan_f_to_x + w.alpha * p.colorization + w.beta * p.cycle + w.gamma * p.texture +
         w.lambda * p.classification;
}

/// d total / d parts, in PretrainParts field order.
inline std::array<double, 6> total_pretrain_gradient(const LossWeights& w) {
  return {1.0, 1.0, w.alpha, w.beta, w.gamma, w.lambda};
}

}  // namespace colorcount::loss
