#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "colorcount/nn/tensor.hpp"

namespace colorcount::nn {

/// Layers are stateless between calls: forward is const and backward gets
/// the input and output it produced, so several traces of one network can
/// be in flight at once. backward accumulates into Parameter::grad.
class Layer {
 public:
  virtual ~Layer() = default;
  [[nodiscard]] virtual Tensor forward(const Tensor& x) const = 0;
  virtual Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  [[nodiscard]] virtual nlohmann::json describe() const = 0;
};

/// Grouped, strided, dilated 2-D convolution with "same" padding of
/// dilation * (k - 1) / 2. Weight shape (out, in / groups, k, k).
class Conv2d final : public Layer {
 public:
  struct Options {
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
    int groups = 1;
    bool bias = true;
  };

  Conv2d(const std::string& name, int in_channels, int out_channels, Options opts);

  [[nodiscard]] Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy) override;
  std::vector<Parameter*> parameters() override;
  [[nodiscard]] nlohmann::json describe() const override;

  [[nodiscard]] int in_channels() const { return in_; }
  [[nodiscard]] int out_channels() const { return out_; }
  [[nodiscard]] const Options& options() const { return opts_; }
  [[nodiscard]] int output_size(int n) const;
  Parameter& weight() { return weight_; }
  Parameter* bias() { return opts_.bias ? &bias_ : nullptr; }

 private:
  int in_;
  int out_;
  Options opts_;
  int pad_;
  Parameter weight_;
  Parameter bias_;
};

/// max(x, 0) or leaky variant. `pass_at_zero` routes the gradient through
/// exact zeros, which lets a zero-initialized layer underneath start learning.
class Relu final : public Layer {
 public:
  explicit Relu(float leak = 0.0f, bool pass_at_zero = false) : leak_(leak), pass_at_zero_(pass_at_zero) {}
  [[nodiscard]] Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy) override;
  [[nodiscard]] nlohmann::json describe() const override;

 private:
  float leak_;
  bool pass_at_zero_;
};

/// scale * sigmoid(x).
class ScaledSigmoid final : public Layer {
 public:
  explicit ScaledSigmoid(float scale = 1.0f) : scale_(scale) {}
  [[nodiscard]] Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy) override;
  [[nodiscard]] nlohmann::json describe() const override;

 private:
  float scale_;
};

/// Bilinear upsampling by an integer factor (half-pixel centers, edge clamp),
/// output multiplied by `gain`. gain = 1 / factor^2 preserves the total mass.
class BilinearUpsample final : public Layer {
 public:
  explicit BilinearUpsample(int factor, float gain = 1.0f) : factor_(factor), gain_(gain) {}
  [[nodiscard]] Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy) override;
  [[nodiscard]] nlohmann::json describe() const override;

 private:
  int factor_;
  float gain_;
};

/// Non-overlapping mean pooling.
class AvgPool final : public Layer {
 public:
  explicit AvgPool(int factor) : factor_(factor) {}
  [[nodiscard]] Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy) override;
  [[nodiscard]] nlohmann::json describe() const override;

 private:
  int factor_;
};

class GlobalAvgPool final : public Layer {
 public:
  [[nodiscard]] Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy) override;
  [[nodiscard]] nlohmann::json describe() const override;
};

/// Affine map of the flattened input to out x 1 x 1.
class Linear final : public Layer {
 public:
  Linear(const std::string& name, int in_features, int out_features);
  [[nodiscard]] Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy) override;
  std::vector<Parameter*> parameters() override;
  [[nodiscard]] nlohmann::json describe() const override;
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  int in_;
  int out_;
  Parameter weight_;
  Parameter bias_;
};

/// Channel c = per_group * i + j moves to groups * j + i: afterwards every
/// consecutive run of `groups` channels holds one channel from each group.
class ChannelShuffle final : public Layer {
 public:
  explicit ChannelShuffle(int groups) : groups_(groups) {}
  [[nodiscard]] Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy) override;
  [[nodiscard]] nlohmann::json describe() const override;
  /// Destination index of source channel `src` for `channels` channels.
  [[nodiscard]] int destination(int src, int channels) const;

 private:
  int groups_;
};

struct IgcBlockSpec {
  int channels = 64;
  int primary_partitions = 8;    // L
  int secondary_partitions = 8;  // M
  int kernel = 3;
  int dilation = 1;

  /// Throws std::invalid_argument unless channels == L * M.
  void validate() const;
  /// L * M^2 * k^2 + M * L^2 (both convolutions are bias-free).
  [[nodiscard]] std::int64_t parameter_count() const;
  /// Dense k x k conv plus dense 1 x 1 conv on the same channel count.
  [[nodiscard]] std::int64_t dense_parameter_count() const;
};

/// Interleaved group convolution block:
///   x + W_secondary * shuffle(W_primary * x)
/// where W_primary is a k x k conv with L groups of M channels and
/// W_secondary a 1 x 1 conv with M groups of L channels.
class IgcBlock final : public Layer {
 public:
  IgcBlock(const std::string& name, IgcBlockSpec spec);

  struct Stages {
    Tensor primary;
    Tensor shuffled;
    Tensor secondary;
    Tensor output;
  };
  [[nodiscard]] Stages stages(const Tensor& x) const;

  [[nodiscard]] Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy) override;
  std::vector<Parameter*> parameters() override;
  [[nodiscard]] nlohmann::json describe() const override;

  [[nodiscard]] const IgcBlockSpec& spec() const { return spec_; }
  Conv2d& primary() { return primary_; }
  Conv2d& secondary() { return secondary_; }
  ChannelShuffle& shuffle() { return shuffle_; }

 private:
  IgcBlockSpec spec_;
  Conv2d primary_;
  ChannelShuffle shuffle_;
  Conv2d secondary_;
};

/// Ordered stack of layers.
class Sequential {
 public:
  struct Trace {
    std::vector<Tensor> acts;  // acts[0] is the input, acts[i + 1] the output of layer i
    [[nodiscard]] const Tensor& output() const { return acts.back(); }
  };

  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  [[nodiscard]] Trace forward(const Tensor& x) const;
  /// Returns the gradient w.r.t. the input of the trace.
  Tensor backward(const Trace& trace, const Tensor& dy);
  std::vector<Parameter*> parameters();
  [[nodiscard]] nlohmann::json describe() const;

  [[nodiscard]] std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  [[nodiscard]] const Layer& layer(std::size_t i) const { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Fan-in scaled Gaussian (He) for weights, zeros for biases.
void init_fan_in(const std::vector<Parameter*>& params, std::mt19937_64& rng);
void zero_grads(const std::vector<Parameter*>& params);

}  // namespace colorcount::nn
