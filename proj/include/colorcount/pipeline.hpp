#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "colorcount/checkpoint.hpp"
#include "colorcount/config.hpp"
#include "colorcount/dataset.hpp"
#include "colorcount/losses.hpp"
#include "colorcount/networks.hpp"
#include "colorcount/quantization.hpp"

namespace colorcount::pipeline {

using ProgressFn = std::function<void(const std::string&)>;

/// Indices of round(fraction * n) items (at least one) taken as the prefix of
/// a seeded shuffle, so subsets grow by nesting as the fraction increases.
[[nodiscard]] std::vector<std::size_t> subset_indices(std::size_t n, double fraction, std::uint64_t seed);
[[nodiscard]] std::vector<data::Sample> sample_subset(const std::vector<data::Sample>& corpus, double fraction,
                                                      std::uint64_t seed);

/// Explicit group when present, otherwise the keyword group of the tag.
[[nodiscard]] std::optional<int> sample_group(const data::Sample& sample);

struct QuantArtifacts {
  quant::ColorCodebook codebook;
  quant::RebalanceWeights rebalance;
};

[[nodiscard]] QuantArtifacts fit_quantization(const std::vector<data::Sample>& corpus, const TrainConfig& cfg);

/// Stage-1 networks: generator G with the classification head, inverse
/// mapping F and the two image-space discriminators.
struct Stage1Model {
  net::ColorizationNet g;
  nn::Sequential f;
  nn::Sequential d_x;  // judges lightness images
  nn::Sequential d_z;  // judges chroma images
  QuantArtifacts quant;

  Stage1Model(QuantArtifacts q, int groups);
  void initialize(std::uint64_t seed);
  std::vector<nn::Parameter*> generator_parameters();      // G, classifier head, F
  std::vector<nn::Parameter*> discriminator_parameters();  // D_X, D_Z
};

[[nodiscard]] Stage1Model load_stage1(const Checkpoint& ckpt);

/// Weighted stage-1 objective; `adversarial` scales both GAN terms.
[[nodiscard]] double weighted_total(const loss::PretrainParts& parts, const loss::LossWeights& w, double adversarial);

struct ProbeRow {
  int epoch = 0;
  loss::PretrainParts parts;
  double total = 0.0;
  double reconstruction = 0.0;  // mean |F(G(x)) - x| in lightness units
  double accuracy = 0.0;        // classifier accuracy on the probe batch (0 when unlabeled)
};

/// Loss terms of one batch evaluated without updating anything.
[[nodiscard]] ProbeRow evaluate_probe(Stage1Model& model, const std::vector<data::Sample>& batch,
                                      const TrainConfig& cfg);

struct PretrainOptions {
  std::filesystem::path out_dir;              // empty: nothing written to disk
  std::optional<std::filesystem::path> resume_from;
  ProgressFn progress;
};

struct PretrainResult {
  Checkpoint checkpoint;          // state after the last epoch
  std::vector<ProbeRow> probe;    // epoch 0 (before training) and after each epoch
  std::int64_t steps = 0;         // optimization steps per sub-network
};

/// Stage 1. Each batch performs one generator/classifier/F update followed
/// by one discriminator update on the fakes produced before that update.
/// Files in out_dir: pretrain_log.csv (per step), pretrain_probe.csv,
/// quantization.json, stage1_epoch_NNN.ckpt and stage1.ckpt.
[[nodiscard]] PretrainResult pretrain(const std::vector<data::Sample>& unlabeled, const TrainConfig& cfg,
                                      const PretrainOptions& options = {});

/// Fraction of samples whose argmax class logit equals their group.
[[nodiscard]] double group_accuracy(const net::ColorizationNet& g, const std::vector<data::Sample>& samples);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_mae = 0.0;
  double val_mae = 0.0;
};

struct FinetuneOptions {
  std::filesystem::path out_dir;  // empty: nothing written; else finetune_log.csv and stage2.ckpt
  ProgressFn progress;
};

struct FinetuneResult {
  Checkpoint best;  // best validation MAE over epochs 0..E
  int best_epoch = 0;
  std::vector<EpochMetrics> history;
};

/// Stage 2 starting from a stage-1 checkpoint: the frontend is transferred
/// with transfer_first_layer, the rest of the counting net is freshly
/// initialized from cfg.seed.
[[nodiscard]] FinetuneResult finetune(const Checkpoint& stage1, const std::vector<data::Sample>& labeled,
                                      const TrainConfig& cfg, const FinetuneOptions& options = {});
/// Control arm: identical to finetune with a randomly initialized frontend.
[[nodiscard]] FinetuneResult train_from_scratch(const std::vector<data::Sample>& labeled, const TrainConfig& cfg,
                                                const FinetuneOptions& options = {});

[[nodiscard]] net::CountingNet load_counting_net(const Checkpoint& ckpt);
[[nodiscard]] Checkpoint counting_checkpoint(net::CountingNet& net, const TrainConfig& cfg, nlohmann::json extra);

/// Ground-truth density target of an annotated sample under the config's adaptive kernel.
[[nodiscard]] density::DensityMap target_density(const data::Sample& sample, const TrainConfig& cfg);

}  // namespace colorcount::pipeline
