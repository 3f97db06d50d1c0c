#include "colorcount/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

namespace colorcount::density {

namespace {

using Rgb = std::array<double, 3>;

struct Person {
  double x;
  double y;
  double radius;
  Rgb hair;
  Rgb skin;
  Rgb clothes;
  bool facing_camera;
};

Rgb jitter(const Rgb& base, double amount, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-amount, amount);
  Rgb out;
  for (int c = 0; c < 3; ++c) out[c] = std::clamp(base[c] + u(rng), 0.0, 1.0);
  return out;
}

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

void fill_ellipse(color::RgbImage& img, double cx, double cy, double rx, double ry, const Rgb& c) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + rx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + ry)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5 - cx) / rx;
      const double dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) {
        for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
      }
    }
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (height < 8 || width < 8) throw std::invalid_argument("SynthConfig: image must be at least 8x8");
  if (group_ranges.empty()) throw std::invalid_argument("SynthConfig: at least one group range required");
  if (!group_tags.empty() && group_tags.size() != group_ranges.size()) {
    throw std::invalid_argument("SynthConfig: group_tags must match group_ranges");
  }
  for (std::size_t g = 0; g < group_ranges.size(); ++g) {
    const auto [lo, hi] = group_ranges[g];
    if (lo < 0 || hi < lo) {
      throw std::invalid_argument("SynthConfig: group " + std::to_string(g + 1) + " has an invalid range");
    }
    if (g > 0 && lo <= group_ranges[g - 1].second) {
      throw std::invalid_argument("SynthConfig: group ranges must be disjoint and increasing");
    }
  }
  if (!(head_radius_far > 0.0) || head_radius_near < head_radius_far) {
    throw std::invalid_argument("SynthConfig: head radii must satisfy 0 < far <= near");
  }
}

SynthScene synth_scene(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
  std::uniform_int_distribution<int> pick(1, config.groups());
  return synth_scene(config, seed, pick(rng));
}

SynthScene synth_scene(const SynthConfig& config, std::uint64_t seed, int group) {
  config.validate();
  if (group < 1 || group > config.groups()) {
    throw std::invalid_argument("synth_scene: group " + std::to_string(group) + " out of range");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int h = config.height;
  const int w = config.width;
  const double scale = h / 128.0;

  SynthScene scene;
  scene.seed = seed;
  scene.group = group;
  scene.tag = config.group_tags.empty() ? std::string() : config.group_tags[group - 1];
  scene.image = color::RgbImage(h, w);
  scene.annotations.height = h;
  scene.annotations.width = w;

  // Background bands.
  const int horizon = static_cast<int>(h * (0.12 + 0.2 * unit(rng)));
  const int grass_end = std::min(h - 1, static_cast<int>(horizon + h * (0.15 + 0.3 * unit(rng))));
  const Rgb sky_top = jitter({0.25, 0.45, 0.85}, 0.08, rng);
  const Rgb sky_low = jitter({0.65, 0.8, 0.95}, 0.05, rng);
  const Rgb grass = jitter({0.25, 0.55, 0.2}, 0.08, rng);
  static const std::array<Rgb, 3> kGround{Rgb{0.75, 0.68, 0.5}, Rgb{0.55, 0.55, 0.55}, Rgb{0.6, 0.45, 0.35}};
  const Rgb ground = jitter(kGround[std::uniform_int_distribution<int>(0, 2)(rng)], 0.06, rng);
  for (int y = 0; y < h; ++y) {
    Rgb base;
    if (y < horizon) {
      base = lerp(sky_top, sky_low, horizon > 1 ? static_cast<double>(y) / (horizon - 1) : 0.0);
    } else if (y < grass_end) {
      base = grass;
    } else {
      base = ground;
    }
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = base[c];
    }
  }

  // People stand anywhere below the horizon; nearer rows are larger.
  const auto [lo, hi] = config.group_ranges[group - 1];
  const int count = std::uniform_int_distribution<int>(lo, hi)(rng);
  static const std::array<Rgb, 3> kHair{Rgb{0.12, 0.09, 0.07}, Rgb{0.3, 0.2, 0.12}, Rgb{0.55, 0.4, 0.2}};
  static const std::array<Rgb, 3> kSkin{Rgb{0.93, 0.75, 0.62}, Rgb{0.78, 0.57, 0.42}, Rgb{0.48, 0.32, 0.22}};
  std::vector<Person> people(count);
  for (auto& p : people) {
    p.x = unit(rng) * w;
    p.y = horizon + unit(rng) * (h - horizon);
    const double depth = (p.y - horizon) / std::max(1.0, static_cast<double>(h - horizon));
    p.radius = scale * (config.head_radius_far + (config.head_radius_near - config.head_radius_far) * depth);
    p.hair = jitter(kHair[std::uniform_int_distribution<int>(0, 2)(rng)], 0.04, rng);
    p.skin = jitter(kSkin[std::uniform_int_distribution<int>(0, 2)(rng)], 0.04, rng);
    const double hue = unit(rng);
    p.clothes = {0.5 + 0.45 * std::cos(6.2832 * hue), 0.5 + 0.45 * std::cos(6.2832 * (hue - 0.333)),
                 0.5 + 0.45 * std::cos(6.2832 * (hue - 0.667))};
    p.facing_camera = unit(rng) < 0.6;
  }
  std::stable_sort(people.begin(), people.end(), [](const Person& a, const Person& b) { return a.y < b.y; });
  for (const auto& p : people) {
    fill_ellipse(scene.image, p.x, p.y + 2.2 * p.radius, 1.7 * p.radius, 1.4 * p.radius, p.clothes);
    fill_ellipse(scene.image, p.x, p.y, p.radius, 1.15 * p.radius, p.hair);
    if (p.facing_camera) fill_ellipse(scene.image, p.x, p.y + 0.25 * p.radius, 0.75 * p.radius, 0.85 * p.radius, p.skin);
    const double x = std::min(p.x, std::nextafter(static_cast<double>(w), 0.0));
    const double y = std::min(p.y, std::nextafter(static_cast<double>(h), 0.0));
    scene.annotations.points.push_back({x, y});
  }

  std::uniform_real_distribution<double> noise(-config.pixel_noise, config.pixel_noise);
  for (double& v : scene.image.pixels) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return scene;
}

}  // namespace colorcount::density
