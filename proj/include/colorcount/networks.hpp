#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "colorcount/color_space.hpp"
#include "colorcount/density.hpp"
#include "colorcount/nn/layers.hpp"
#include "colorcount/quantization.hpp"

namespace colorcount::net {

using nn::Parameter;
using nn::Sequential;
using nn::Tensor;

/// Total stride of the shared frontend (three stride-2 blocks).
inline constexpr int kFrontendStride = 8;
inline constexpr int kFrontendChannels = 64;
/// Down-sampling factor of the pooled branch in the context fusion module.
inline constexpr int kFusionPool = 4;

// Network input normalizations.
[[nodiscard]] Tensor lightness_tensor(std::span<const double> lightness, int height, int width);  // L / 50 - 1
[[nodiscard]] Tensor chroma_tensor(std::span<const double> chroma, int height, int width);        // ab / 110
/// (2 rgb - 1) / 3 per channel, so that the three duplicated first-layer
/// kernels see the same total drive as one kernel on a [-1, 1] plane.
[[nodiscard]] Tensor rgb_tensor(const color::RgbImage& img);

/// Four 3x3 conv + ReLU blocks, 16/32/64/64 channels, stride 2 in blocks 2-4.
/// Parameters are named frontend.conv{1..4}.{weight,bias}.
[[nodiscard]] Sequential make_frontend(int in_channels);

/// Colorization generator G (lightness -> Q logits per pixel) with the
/// group classification head on the same encoder trunk.
class ColorizationNet {
 public:
  ColorizationNet(int bins, int groups);

  struct Trace {
    Sequential::Trace trunk;
    Sequential::Trace color;
    Sequential::Trace cls;
    [[nodiscard]] const Tensor& color_logits() const { return color.output(); }  // Q x H x W
    [[nodiscard]] const Tensor& class_logits() const { return cls.output(); }    // m x 1 x 1
  };

  /// Throws std::invalid_argument unless H and W are multiples of the frontend stride.
  [[nodiscard]] Trace forward(const Tensor& lightness) const;
  /// Either gradient may be null. Returns the gradient w.r.t. the input.
  Tensor backward(const Trace& trace, const Tensor* d_color_logits, const Tensor* d_class_logits);

  std::vector<Parameter*> parameters();
  [[nodiscard]] nlohmann::json describe() const;
  [[nodiscard]] int bins() const { return bins_; }
  [[nodiscard]] int groups() const { return groups_; }
  Sequential& trunk() { return trunk_; }
  Sequential& color_head() { return color_; }
  Sequential& class_head() { return cls_; }

 private:
  int bins_;
  int groups_;
  Sequential trunk_;
  Sequential color_;
  Sequential cls_;
};

/// Inverse mapping F: chroma (2 x H x W, ab / 110) -> lightness in [0, 100].
[[nodiscard]] Sequential make_inverse_net();
/// Image discriminator producing one probability; `prefix` names its parameters.
[[nodiscard]] Sequential make_discriminator(const std::string& prefix, int in_channels);
/// Fixed randomly initialized feature extractor on normalized Lab
/// (3 x H x W) used by the texture loss; never trained.
[[nodiscard]] Sequential make_texture_extractor(std::uint64_t seed);
inline constexpr std::uint64_t kTextureSeed = 0x7e47u;

/// Counting network: transferred frontend, a stack of interleaved group
/// convolution blocks and a two-scale context fusion head producing a
/// density map at input resolution.
class CountingNet {
 public:
  explicit CountingNet(int igc_blocks = 3, nn::IgcBlockSpec igc = {64, 8, 8, 3, 2});

  struct Trace {
    Sequential::Trace frontend;
    Sequential::Trace igc;
    Sequential::Trace pool;   // avg pool + restore of the IGC output
    Tensor fused_input;       // concat(igc output, restored)
    Sequential::Trace head;
    [[nodiscard]] const Tensor& density() const { return head.output(); }  // 1 x H x W
  };

  /// Throws std::invalid_argument unless H and W are multiples of required_multiple().
  [[nodiscard]] Trace forward(const Tensor& rgb) const;
  void backward(const Trace& trace, const Tensor& d_density);

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> frontend_parameters() { return frontend_.parameters(); }
  [[nodiscard]] nlohmann::json describe() const;
  [[nodiscard]] static int required_multiple() { return kFrontendStride * kFusionPool; }
  Sequential& igc() { return igc_; }
  Sequential& head() { return head_; }

 private:
  Sequential frontend_;
  Sequential igc_;
  Sequential pool_;
  Sequential head_;
};

/// Seeded fan-in initialization; the counting head's last conv starts at zero.
void initialize(ColorizationNet& g, std::uint64_t seed);
void initialize(Sequential& net, std::uint64_t seed);
void initialize(CountingNet& net, std::uint64_t seed);

/// Stage-1 frontend parameters -> stage-2 frontend parameters: the
/// single-channel first-layer kernels are copied verbatim into all three
/// input channels, everything else is copied unchanged.
[[nodiscard]] std::vector<Parameter> transfer_first_layer(std::span<const Parameter> stage1_frontend);

/// Copies values by name; every destination must be found with a matching shape.
void assign_parameters(const std::vector<Parameter*>& dst, std::span<const Parameter> src);
[[nodiscard]] std::vector<Parameter> snapshot(const std::vector<Parameter*>& params);

// Domain-level forwards.
[[nodiscard]] quant::ColorDistribution colorize_forward(const ColorizationNet& g, std::span<const double> lightness,
                                                        int height, int width);
[[nodiscard]] std::vector<double> classifier_forward(const ColorizationNet& g, std::span<const double> lightness,
                                                     int height, int width);
[[nodiscard]] std::vector<double> inverse_forward(const Sequential& f, std::span<const double> chroma, int height,
                                                  int width);
[[nodiscard]] density::DensityMap count_forward(const CountingNet& net, const color::RgbImage& image);

/// Per-pixel softmax over the channels of a Q x H x W tensor, channel-major.
[[nodiscard]] Tensor softmax_channels(const Tensor& logits);
/// C x H x W tensor -> H x W x C values.
[[nodiscard]] std::vector<float> pixel_major(const Tensor& t);
/// Per-pixel softmax over channels of a Q x H x W tensor, returned pixel-major (H x W x Q).
[[nodiscard]] std::vector<float> softmax_pixel_major(const Tensor& logits);
/// Pixel-major H x W x Q gradient back to a channel-major tensor.
[[nodiscard]] Tensor channel_major(std::span<const float> pixel_major, int bins, int height, int width);

}  // namespace colorcount::net
