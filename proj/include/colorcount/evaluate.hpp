#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "colorcount/checkpoint.hpp"
#include "colorcount/color_space.hpp"
#include "colorcount/dataset.hpp"
#include "colorcount/density.hpp"

namespace colorcount::eval {

struct ImageCount {
  std::string id;
  double true_count = 0.0;
  double pred_count = 0.0;
};

/// Counting metrics. `mse` follows the benchmark convention: it is the root
/// of the mean squared error, so mse >= mae always holds.
struct MetricsReport {
  double mae = 0.0;
  double mse = 0.0;
  int n_images = 0;
  std::vector<ImageCount> per_image;
};

/// Throws std::invalid_argument on empty or mismatched inputs. Per-image ids are the list positions.
[[nodiscard]] MetricsReport mae_mse(std::span<const double> true_counts, std::span<const double> pred_counts);

/// Predicted count = sum of the predicted density; true count = number of annotated heads.
[[nodiscard]] MetricsReport evaluate_model(const pipeline::Checkpoint& ckpt, const std::vector<data::Sample>& test_set);

/// Columns id,true_count,pred_count followed by MAE and MSE footer rows.
void write_report_csv(const std::filesystem::path& path, const MetricsReport& report);

/// Monotone black-red-yellow-white colormap of a map normalized by its maximum.
[[nodiscard]] color::RgbImage colormap_hot(const density::DensityMap& map);

/// Stage 1: <id>_original, <id>_lightness, <id>_true_ab (at L = 50) and
/// <id>_predicted (input lightness with the predicted chroma).
/// Stage 2: <id>_original, <id>_gt_density (blank without annotations) and
/// <id>_pred_density. Returns the written PNG paths.
std::vector<std::filesystem::path> render_artifacts(const pipeline::Checkpoint& ckpt,
                                                    const std::vector<data::Sample>& images,
                                                    const std::filesystem::path& out_dir);

}  // namespace colorcount::eval
