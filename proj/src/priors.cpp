#include "colorcount/priors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace colorcount::priors {

void GroupLabel::validate() const {
  if (m < 2 || group < 1 || group > m) {
    throw std::invalid_argument("GroupLabel: group " + std::to_string(group) + " outside 1.." + std::to_string(m));
  }
}

bool Rect::strictly_contains(const Rect& inner) const {
  return inner.x0 >= x0 && inner.y0 >= y0 && inner.x1 <= x1 && inner.y1 <= y1 && !(inner == *this) &&
         inner.width() > 0 && inner.height() > 0;
}

bool CropSequence::nested(int image_height, int image_width) const {
  const Rect bounds{0, 0, image_width, image_height};
  for (std::size_t i = 0; i < crops.size(); ++i) {
    const Rect& r = crops[i].rect;
    if (r.x0 < 0 || r.y0 < 0 || r.x1 > bounds.x1 || r.y1 > bounds.y1 || r.width() <= 0 || r.height() <= 0) return false;
    if (i > 0 && !crops[i - 1].rect.strictly_contains(r)) return false;
  }
  return true;
}

namespace {

color::RgbImage cut(const color::RgbImage& img, const Rect& r) {
  color::RgbImage out(r.height(), r.width());
  for (int y = 0; y < r.height(); ++y) {
    for (int x = 0; x < r.width(); ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(r.y0 + y, r.x0 + x, c);
    }
  }
  return out;
}

}  // namespace

CropSequence ranking_crops(const color::RgbImage& img, int n, double ratio, const CropOptions& options) {
  if (n < 1) throw std::invalid_argument("ranking_crops: n must be >= 1");
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("ranking_crops: ratio must be in (0, 1)");
  const Rect first = options.initial.value_or(Rect{0, 0, img.width, img.height});
  if (first.x0 < 0 || first.y0 < 0 || first.x1 > img.width || first.y1 > img.height || first.width() <= 0 ||
      first.height() <= 0) {
    throw std::invalid_argument("ranking_crops: initial region outside the image");
  }
  const double scale = std::pow(ratio, n - 1);
  const int last_w = static_cast<int>(std::lround(first.width() * scale));
  const int last_h = static_cast<int>(std::lround(first.height() * scale));
  if (last_w < options.min_side || last_h < options.min_side) {
    std::ostringstream msg;
    msg << "ranking_crops: n=" << n << " with ratio=" << ratio << " shrinks the final crop to " << last_w << "x"
        << last_h << ", below the " << options.min_side << "x" << options.min_side << " minimum";
    throw std::invalid_argument(msg.str());
  }

  std::mt19937_64 rng(options.seed);
  CropSequence seq;
  Rect prev = first;
  for (int i = 0; i < n; ++i) {
    Rect r = first;
    if (i > 0) {
      const double s = std::pow(ratio, i);
      const int w = static_cast<int>(std::lround(first.width() * s));
      const int h = static_cast<int>(std::lround(first.height() * s));
      if (w >= prev.width() && h >= prev.height()) {
        std::ostringstream msg;
        msg << "ranking_crops: ratio=" << ratio << " is too close to 1 for n=" << n << "; crop " << i
            << " would not shrink";
        throw std::invalid_argument(msg.str());
      }
      int dx = (prev.width() - w) / 2;
      int dy = (prev.height() - h) / 2;
      if (options.random_offset) {
        dx = std::uniform_int_distribution<int>(0, prev.width() - w)(rng);
        dy = std::uniform_int_distribution<int>(0, prev.height() - h)(rng);
      }
      r = Rect{prev.x0 + dx, prev.y0 + dy, prev.x0 + dx + w, prev.y0 + dy + h};
    }
    seq.crops.push_back({r, cut(img, r)});
    prev = r;
  }
  return seq;
}

int ranking_group(int depth, int n, int m) {
  if (n < 1 || m < 1 || depth < 0 || depth >= n) throw std::invalid_argument("ranking_group: depth outside the sequence");
  return m - (depth * m) / n;
}

std::array<double, 2> density_proxy_features(const color::RgbImage& img) {
  const auto lab = color::rgb_to_lab(img);
  const int h = img.height;
  const int w = img.width;
  auto l = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return lab.lightness[static_cast<std::size_t>(y) * w + x] / 100.0;
  };
  // Summed-area table for box means.
  std::vector<double> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      sat[(y + 1) * (w + 1) + x + 1] = l(y, x) + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
    }
  }
  auto box = [&](int y, int x, int r) {
    const int y0 = std::max(0, y - r);
    const int x0 = std::max(0, x - r);
    const int y1 = std::min(h, y + r + 1);
    const int x1 = std::min(w, x + r + 1);
    const double s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
    return s / ((y1 - y0) * (x1 - x0));
  };
  double edge = 0.0;
  double blob = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      edge += std::abs(4.0 * l(y, x) - l(y - 1, x) - l(y + 1, x) - l(y, x - 1) - l(y, x + 1));
      blob += std::abs(box(y, x, 1) - box(y, x, 4));
    }
  }
  const double n = static_cast<double>(h) * w;
  return {edge / n, blob / n};
}

std::vector<int> cluster_features(const std::vector<std::array<double, 2>>& features, int m) {
  const std::size_t n = features.size();
  if (m < 1) throw std::invalid_argument("cluster_groups: m must be >= 1");
  if (n < static_cast<std::size_t>(m)) {
    throw std::invalid_argument("cluster_groups: corpus of " + std::to_string(n) + " images is smaller than m=" +
                                std::to_string(m));
  }
  // Standardize each feature.
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 2> sd{0.0, 0.0};
  for (const auto& f : features) {
    for (int d = 0; d < 2; ++d) mean[d] += f[d] / n;
  }
  for (const auto& f : features) {
    for (int d = 0; d < 2; ++d) sd[d] += (f[d] - mean[d]) * (f[d] - mean[d]) / n;
  }
  std::vector<std::array<double, 2>> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < 2; ++d) z[i][d] = sd[d] > 0.0 ? (features[i][d] - mean[d]) / std::sqrt(sd[d]) : 0.0;
  }
  auto proxy = [&](std::size_t i) { return z[i][0] + z[i][1]; };

  // Canonical order: by proxy, ties broken by the raw features.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (proxy(a) != proxy(b)) return proxy(a) < proxy(b);
    return z[a] < z[b];
  });

  // Quantile initialization along the proxy.
  std::vector<std::array<double, 2>> centers(m);
  for (int k = 0; k < m; ++k) centers[k] = z[order[(2 * k + 1) * n / (2 * m)]];

  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (const std::size_t i : order) {
      int best = 0;
      double best_d = INFINITY;
      for (int k = 0; k < m; ++k) {
        const double dx = z[i][0] - centers[k][0];
        const double dy = z[i][1] - centers[k][1];
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<std::array<double, 2>> sum(m, {0.0, 0.0});
    std::vector<std::size_t> cnt(m, 0);
    for (const std::size_t i : order) {
      sum[assign[i]][0] += z[i][0];
      sum[assign[i]][1] += z[i][1];
      ++cnt[assign[i]];
    }
    for (int k = 0; k < m; ++k) {
      if (cnt[k] > 0) centers[k] = {sum[k][0] / cnt[k], sum[k][1] / cnt[k]};
    }
  }

  // Drop empty clusters and renumber by mean proxy.
  std::vector<double> proxy_sum(m, 0.0);
  std::vector<std::size_t> cnt(m, 0);
  for (const std::size_t i : order) {
    proxy_sum[assign[i]] += proxy(i);
    ++cnt[assign[i]];
  }
  std::vector<int> alive;
  for (int k = 0; k < m; ++k) {
    if (cnt[k] > 0) alive.push_back(k);
  }
  std::stable_sort(alive.begin(), alive.end(),
                   [&](int a, int b) { return proxy_sum[a] / cnt[a] < proxy_sum[b] / cnt[b]; });
  std::vector<int> relabel(m, 0);
  for (std::size_t r = 0; r < alive.size(); ++r) relabel[alive[r]] = static_cast<int>(r) + 1;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = relabel[assign[i]];
  return labels;
}

std::vector<int> cluster_groups(const std::vector<color::RgbImage>& images, int m) {
  std::vector<std::array<double, 2>> features;
  features.reserve(images.size());
  for (const auto& img : images) features.push_back(density_proxy_features(img));
  return cluster_features(features, m);
}

KeywordVocabulary::KeywordVocabulary(std::map<std::string, int> table, int m) : table_(std::move(table)), m_(m) {
  if (m_ < 2) throw std::invalid_argument("KeywordVocabulary: m must be >= 2");
  for (const auto& [tag, g] : table_) {
    if (g < 1 || g > m_) throw std::invalid_argument("KeywordVocabulary: tag '" + tag + "' maps outside 1..m");
  }
}

KeywordVocabulary KeywordVocabulary::standard() {
  return KeywordVocabulary({{"sparse", 1}, {"few", 1}, {"crowded", 2}, {"busy", 2}, {"packed", 3}, {"massive", 3}}, 3);
}

GroupLabel keyword_groups(const std::string& tag, const KeywordVocabulary& vocabulary) {
  const auto it = vocabulary.table().find(tag);
  if (it == vocabulary.table().end()) {
    std::string allowed;
    for (const auto& [t, g] : vocabulary.table()) allowed += (allowed.empty() ? "" : ", ") + t;
    throw std::invalid_argument("unknown group tag '" + tag + "'; allowed tags: " + allowed);
  }
  return GroupLabel{it->second, vocabulary.m()};
}

}  // namespace colorcount::priors
