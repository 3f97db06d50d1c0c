#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "colorcount/color_space.hpp"

namespace colorcount::priors {

/// Crowd-level group, 1 = lowest density.
struct GroupLabel {
  int group = 1;
  int m = 3;

  void validate() const;
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Rect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  [[nodiscard]] int width() const { return x1 - x0; }
  [[nodiscard]] int height() const { return y1 - y0; }
  [[nodiscard]] bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  /// True when `inner` lies inside this rectangle and differs from it.
  [[nodiscard]] bool strictly_contains(const Rect& inner) const;
  bool operator==(const Rect&) const = default;
};

struct Crop {
  Rect rect;
  color::RgbImage image;
};

struct CropSequence {
  std::vector<Crop> crops;

  /// Structural check: every crop lies in the image and strictly inside its predecessor.
  [[nodiscard]] bool nested(int image_height, int image_width) const;
};

struct CropOptions {
  std::optional<Rect> initial;  // whole image when unset
  bool random_offset = false;   // centered crops unless set
  std::uint64_t seed = 0;
  int min_side = 32;
};

/// n crops, each side scaled by `ratio` relative to the previous crop.
[[nodiscard]] CropSequence ranking_crops(const color::RgbImage& img, int n, double ratio,
                                         const CropOptions& options = {});

/// Ordinal group for the crop at `depth` of an n-crop sequence: the full
/// region gets group m, the deepest crop group 1.
[[nodiscard]] int ranking_group(int depth, int n, int m);

/// Hand-crafted density proxies of one image: mean absolute Laplacian of the
/// lightness (edge density) and mean absolute difference-of-box-filters
/// response (blob response).
[[nodiscard]] std::array<double, 2> density_proxy_features(const color::RgbImage& img);

/// k-means (m centers) over standardized proxy features. Initialization and
/// accumulation run over a canonical ordering of the feature vectors, so the
/// resulting partition does not depend on corpus order. Empty clusters are
/// dropped and survivors renumbered 1.. by increasing mean proxy.
[[nodiscard]] std::vector<int> cluster_features(const std::vector<std::array<double, 2>>& features, int m);
[[nodiscard]] std::vector<int> cluster_groups(const std::vector<color::RgbImage>& images, int m);

/// Degree-adverb tag -> group table.
class KeywordVocabulary {
 public:
  KeywordVocabulary(std::map<std::string, int> table, int m);
  /// sparse/few -> 1, crowded/busy -> 2, packed/massive -> 3.
  [[nodiscard]] static KeywordVocabulary standard();

  [[nodiscard]] int m() const { return m_; }
  [[nodiscard]] const std::map<std::string, int>& table() const { return table_; }

 private:
  std::map<std::string, int> table_;
  int m_;
};

/// Throws std::invalid_argument listing the vocabulary for unknown tags.
[[nodiscard]] GroupLabel keyword_groups(const std::string& tag,
                                        const KeywordVocabulary& vocabulary = KeywordVocabulary::standard());

}  // namespace colorcount::priors
