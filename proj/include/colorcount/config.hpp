#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "colorcount/losses.hpp"
#include "colorcount/nn/optim.hpp"

namespace colorcount::pipeline {

/// Flat training configuration. Every key has a default; stage-dependent
/// defaults come from defaults(stage).
struct TrainConfig {
  int stage = 1;
  double learning_rate = 1e-4;
  int batch_size = 25;
  nn::OptimizerKind optimizer = nn::OptimizerKind::kAdam;
  int epochs = 20;
  std::uint64_t seed = 7;
  loss::LossWeights weights;
  double adversarial = 1.0;  // multiplies both GAN terms
  double subset_fraction = 1.0;

  int image_size = 128;
  double grid_spacing = 10.0;
  int gamut_samples = 100000;
  int soft_k = 5;
  double soft_sigma = 5.0;
  double temperature = 0.38;
  double rebalance_mix = 0.5;
  int groups = 3;

  double val_fraction = 0.2;
  bool freeze_frontend = false;
  double kernel_beta = 0.3;
  int kernel_k = 3;
  int igc_blocks = 3;

  [[nodiscard]] static TrainConfig defaults(int stage);
  void validate() const;

  [[nodiscard]] nlohmann::json to_json() const;
  /// Starts from defaults(stage) where `stage` is read from the object
  /// (falling back to `default_stage`); unknown keys throw std::invalid_argument.
  [[nodiscard]] static TrainConfig from_json(const nlohmann::json& j, int default_stage);
  /// FNV-1a over the canonical JSON dump.
  [[nodiscard]] std::uint64_t hash() const;
};

[[nodiscard]] TrainConfig load_config(const std::filesystem::path& path, int default_stage);

}  // namespace colorcount::pipeline
