#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "colorcount/color_space.hpp"
#include "colorcount/density.hpp"
#include "colorcount/synth.hpp"

namespace colorcount::data {

/// PNG or JPEG; 8-bit values are divided by 255 and grayscale files are
/// promoted to three equal channels.
[[nodiscard]] color::RgbImage load_image(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const color::RgbImage& img);

/// Center square crop followed by an area resize to size x size.
[[nodiscard]] color::RgbImage square_resize(const color::RgbImage& img, int size);

/// One line of annotations.jsonl. image_path is relative to the dataset directory.
struct AnnotationRecord {
  std::string image_path;
  std::vector<density::Point> points;
  std::optional<int> group;
  std::optional<std::string> tag;
  bool annotated = true;  // false for group-only records without a points field
};

[[nodiscard]] std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records);

struct Sample {
  std::string id;
  color::RgbImage image;
  density::HeadAnnotations annotations;
  bool annotated = false;
  std::optional<int> group;
  std::optional<std::string> tag;
};

/// Loads `<dir>/annotations.jsonl` when present, otherwise every PNG/JPEG in
/// `dir` (sorted by name, unannotated). image_size > 0 crops and resizes
/// images, rescaling annotations to match.
[[nodiscard]] std::vector<Sample> load_dataset(const std::filesystem::path& dir, int image_size = 0);

/// Writes n synthetic scenes (seeds seed, seed+1, ...) plus annotations.jsonl.
void write_synth_dataset(const std::filesystem::path& dir, int n, std::uint64_t seed,
                         const density::SynthConfig& config);

/// In-memory counterpart of write_synth_dataset.
[[nodiscard]] std::vector<Sample> synth_samples(int n, std::uint64_t seed, const density::SynthConfig& config);

}  // namespace colorcount::data
