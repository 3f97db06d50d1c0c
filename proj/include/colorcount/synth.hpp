#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "colorcount/color_space.hpp"
#include "colorcount/density.hpp"

namespace colorcount::density {

/// Desk-scale crowd scene generator: sky / grass / ground bands plus people
/// drawn as a clothing blob topped by a head blob. Heads are annotated.
struct SynthConfig {
  int height = 128;
  int width = 128;
  /// Inclusive head-count range per crowd group, ordered low to high.
  std::vector<std::pair<int, int>> group_ranges{{1, 20}, {21, 80}, {81, 200}};
  /// Degree adverb attached to each group (keyword prior metadata).
  std::vector<std::string> group_tags{"sparse", "crowded", "packed"};
  /// Head radius at the horizon and at the bottom edge, in pixels at 128 px height.
  double head_radius_far = 1.6;
  double head_radius_near = 3.2;
  double pixel_noise = 0.03;

  /// Throws std::invalid_argument unless ranges are non-empty, disjoint and ordered.
  void validate() const;
  [[nodiscard]] int groups() const { return static_cast<int>(group_ranges.size()); }
};

struct SynthScene {
  color::RgbImage image;
  HeadAnnotations annotations;
  int group = 0;  // 1-based
  std::string tag;
  std::uint64_t seed = 0;
};

/// Group drawn uniformly from the seed, then the head count uniformly from that group's range.
[[nodiscard]] SynthScene synth_scene(const SynthConfig& config, std::uint64_t seed);
/// Same, with the group fixed (1-based).
[[nodiscard]] SynthScene synth_scene(const SynthConfig& config, std::uint64_t seed, int group);

}  // namespace colorcount::density
