#include "colorcount/networks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

namespace colorcount::net {

using nlohmann::json;

namespace {

void require_multiple(int h, int w, int m, const char* who) {
  if (h < m || w < m || h % m != 0 || w % m != 0) {
    throw std::invalid_argument(std::string(who) + ": spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                                " must be a positive multiple of " + std::to_string(m));
  }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Tensor out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

std::mt19937_64 role_rng(std::uint64_t seed, std::uint64_t role) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(role)};
  return std::mt19937_64(seq);
}

}  // namespace

Tensor lightness_tensor(std::span<const double> lightness, int height, int width) {
  if (lightness.size() != static_cast<std::size_t>(height) * width) throw std::invalid_argument("lightness_tensor: size mismatch");
  Tensor t(1, height, width);
  for (std::size_t i = 0; i < lightness.size(); ++i) t.v[i] = static_cast<float>(lightness[i] / 50.0 - 1.0);
  return t;
}

Tensor chroma_tensor(std::span<const double> chroma, int height, int width) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (chroma.size() != 2 * n) throw std::invalid_argument("chroma_tensor: size mismatch");
  Tensor t(2, height, width);
  for (std::size_t i = 0; i < n; ++i) {
    t.v[i] = static_cast<float>(chroma[2 * i] / color::kChromaLimit);
    t.v[n + i] = static_cast<float>(chroma[2 * i + 1] / color::kChromaLimit);
  }
  return t;
}

Tensor rgb_tensor(const color::RgbImage& img) {
  Tensor t(3, img.height, img.width);
  const std::size_t n = img.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) t.v[c * n + i] = static_cast<float>((2.0 * img.pixels[3 * i + c] - 1.0) / 3.0);
  }
  return t;
}

Sequential make_frontend(int in_channels) {
  Sequential s;
  const int channels[4] = {16, 32, 64, kFrontendChannels};
  int in = in_channels;
  for (int i = 0; i < 4; ++i) {
    s.add<nn::Conv2d>("frontend.conv" + std::to_string(i + 1), in, channels[i],
                      nn::Conv2d::Options{.kernel = 3, .stride = i == 0 ? 1 : 2});
    s.add<nn::Relu>();
    in = channels[i];
  }
  return s;
}

// ---------------------------------------------------------------- ColorizationNet

ColorizationNet::ColorizationNet(int bins, int groups) : bins_(bins), groups_(groups), trunk_(make_frontend(1)) {
  if (bins < 2) throw std::invalid_argument("ColorizationNet: need at least two color bins");
  if (groups < 2) throw std::invalid_argument("ColorizationNet: need m >= 2 groups");
  color_.add<nn::Conv2d>("color_head.conv", kFrontendChannels, bins, nn::Conv2d::Options{.kernel = 1});
  color_.add<nn::BilinearUpsample>(kFrontendStride);
  cls_.add<nn::GlobalAvgPool>();
  cls_.add<nn::Linear>("class_head.fc", kFrontendChannels, groups);
}

ColorizationNet::Trace ColorizationNet::forward(const Tensor& lightness) const {
  if (lightness.c != 1) throw std::invalid_argument("ColorizationNet: expected a 1-channel lightness input");
  require_multiple(lightness.h, lightness.w, kFrontendStride, "ColorizationNet");
  Trace t;
  t.trunk = trunk_.forward(lightness);
  t.color = color_.forward(t.trunk.output());
  t.cls = cls_.forward(t.trunk.output());
  return t;
}

Tensor ColorizationNet::backward(const Trace& trace, const Tensor* d_color_logits, const Tensor* d_class_logits) {
  const Tensor& feat = trace.trunk.output();
  Tensor d_feat(feat.c, feat.h, feat.w);
  if (d_color_logits != nullptr) d_feat += color_.backward(trace.color, *d_color_logits);
  if (d_class_logits != nullptr) d_feat += cls_.backward(trace.cls, *d_class_logits);
  return trunk_.backward(trace.trunk, d_feat);
}

std::vector<Parameter*> ColorizationNet::parameters() {
  auto out = trunk_.parameters();
  for (auto* p : color_.parameters()) out.push_back(p);
  for (auto* p : cls_.parameters()) out.push_back(p);
  return out;
}

json ColorizationNet::describe() const {
  return {{"role", "generator_G"},
          {"frontend", trunk_.describe()},
          {"color_head", color_.describe()},
          {"classifier_head", cls_.describe()},
          {"bins", bins_},
          {"groups", groups_}};
}

// ---------------------------------------------------------------- small nets

Sequential make_inverse_net() {
  Sequential s;
  s.add<nn::Conv2d>("F.conv1", 2, 16, nn::Conv2d::Options{.kernel = 3});
  s.add<nn::Relu>();
  s.add<nn::Conv2d>("F.conv2", 16, 16, nn::Conv2d::Options{.kernel = 3});
  s.add<nn::Relu>();
  s.add<nn::Conv2d>("F.conv3", 16, 1, nn::Conv2d::Options{.kernel = 3});
  s.add<nn::ScaledSigmoid>(100.0f);
  return s;
}

Sequential make_discriminator(const std::string& prefix, int in_channels) {
  Sequential s;
  s.add<nn::Conv2d>(prefix + ".conv1", in_channels, 8, nn::Conv2d::Options{.kernel = 3, .stride = 2});
  s.add<nn::Relu>(0.2f);
  s.add<nn::Conv2d>(prefix + ".conv2", 8, 16, nn::Conv2d::Options{.kernel = 3, .stride = 2});
  s.add<nn::Relu>(0.2f);
  s.add<nn::Conv2d>(prefix + ".conv3", 16, 16, nn::Conv2d::Options{.kernel = 3, .stride = 2});
  s.add<nn::Relu>(0.2f);
  s.add<nn::GlobalAvgPool>();
  s.add<nn::Linear>(prefix + ".fc", 16, 1);
  s.add<nn::ScaledSigmoid>(1.0f);
  return s;
}

Sequential make_texture_extractor(std::uint64_t seed) {
  Sequential s;
  s.add<nn::Conv2d>("texture.conv1", 3, 16, nn::Conv2d::Options{.kernel = 3});
  s.add<nn::Relu>();
  s.add<nn::Conv2d>("texture.conv2", 16, 32, nn::Conv2d::Options{.kernel = 3, .stride = 2});
  s.add<nn::Relu>();
  initialize(s, seed);
  return s;
}

// ---------------------------------------------------------------- CountingNet

CountingNet::CountingNet(int igc_blocks, nn::IgcBlockSpec igc) : frontend_(make_frontend(3)) {
  igc.validate();
  if (igc.channels != kFrontendChannels) {
    throw std::invalid_argument("CountingNet: IGC channels must equal the frontend width (64)");
  }
  for (int i = 0; i < igc_blocks; ++i) {
    igc_.add<nn::IgcBlock>("igc.block" + std::to_string(i + 1), igc);
    igc_.add<nn::Relu>();
  }
  pool_.add<nn::AvgPool>(kFusionPool);
  pool_.add<nn::BilinearUpsample>(kFusionPool);
  head_.add<nn::Conv2d>("fusion.conv1", 2 * kFrontendChannels, 32, nn::Conv2d::Options{.kernel = 1});
  head_.add<nn::Relu>();
  head_.add<nn::Conv2d>("fusion.conv2", 32, 1, nn::Conv2d::Options{.kernel = 1});
  head_.add<nn::Relu>(0.0f, true);
  head_.add<nn::BilinearUpsample>(kFrontendStride, 1.0f / (kFrontendStride * kFrontendStride));
}

CountingNet::Trace CountingNet::forward(const Tensor& rgb) const {
  if (rgb.c != 3) throw std::invalid_argument("CountingNet: expected a 3-channel image");
  require_multiple(rgb.h, rgb.w, required_multiple(), "CountingNet");
  Trace t;
  t.frontend = frontend_.forward(rgb);
  t.igc = igc_.forward(t.frontend.output());
  t.pool = pool_.forward(t.igc.output());
  t.fused_input = concat_channels(t.igc.output(), t.pool.output());
  t.head = head_.forward(t.fused_input);
  return t;
}

void CountingNet::backward(const Trace& trace, const Tensor& d_density) {
  const Tensor d_fused = head_.backward(trace.head, d_density);
  const Tensor& y = trace.igc.output();
  Tensor d_y(y.c, y.h, y.w);
  Tensor d_restored(y.c, y.h, y.w);
  const auto split = static_cast<std::ptrdiff_t>(y.size());
  std::copy(d_fused.v.begin(), d_fused.v.begin() + split, d_y.v.begin());
  std::copy(d_fused.v.begin() + split, d_fused.v.end(), d_restored.v.begin());
  d_y += pool_.backward(trace.pool, d_restored);
  const Tensor d_front = igc_.backward(trace.igc, d_y);
  frontend_.backward(trace.frontend, d_front);
}

std::vector<Parameter*> CountingNet::parameters() {
  auto out = frontend_.parameters();
  for (auto* p : igc_.parameters()) out.push_back(p);
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

json CountingNet::describe() const {
  return {{"role", "counting_net"},
          {"frontend", frontend_.describe()},
          {"igc", igc_.describe()},
          {"context_pool", pool_.describe()},
          {"fusion", head_.describe()}};
}

// ---------------------------------------------------------------- init / transfer

void initialize(Sequential& net, std::uint64_t seed) {
  auto rng = role_rng(seed, 0);
  nn::init_fan_in(net.parameters(), rng);
}

void initialize(ColorizationNet& g, std::uint64_t seed) {
  auto rng = role_rng(seed, 1);
  nn::init_fan_in(g.parameters(), rng);
}

void initialize(CountingNet& net, std::uint64_t seed) {
  auto rng = role_rng(seed, 2);
  auto params = net.parameters();
  nn::init_fan_in(params, rng);
  for (auto* p : params) {
    if (p->name.rfind("fusion.conv2.", 0) == 0) std::fill(p->value.begin(), p->value.end(), 0.0f);
  }
}

std::vector<Parameter> transfer_first_layer(std::span<const Parameter> stage1_frontend) {
  std::vector<Parameter> out;
  bool found = false;
  for (const auto& p : stage1_frontend) {
    if (p.name != "frontend.conv1.weight") {
      out.push_back(p);
      continue;
    }
    found = true;
    if (p.shape.size() != 4 || p.shape[1] != 1) {
      throw std::invalid_argument("transfer_first_layer: stage-1 first layer must consume 1 input channel");
    }
    const int co = p.shape[0];
    const int kk = p.shape[2] * p.shape[3];
    Parameter q(p.name, {co, 3, p.shape[2], p.shape[3]});
    for (int o = 0; o < co; ++o) {
      for (int c = 0; c < 3; ++c) {
        std::copy_n(p.value.begin() + static_cast<std::ptrdiff_t>(o) * kk, kk,
                    q.value.begin() + (static_cast<std::ptrdiff_t>(o) * 3 + c) * kk);
      }
    }
    out.push_back(std::move(q));
  }
  if (!found) throw std::invalid_argument("transfer_first_layer: frontend.conv1.weight missing");
  for (auto& p : out) p.zero_grad();
  return out;
}

void assign_parameters(const std::vector<Parameter*>& dst, std::span<const Parameter> src) {
  std::map<std::string, const Parameter*> by_name;
  for (const auto& p : src) by_name[p.name] = &p;
  for (auto* d : dst) {
    const auto it = by_name.find(d->name);
    if (it == by_name.end()) throw std::invalid_argument("assign_parameters: missing " + d->name);
    if (it->second->shape != d->shape) throw std::invalid_argument("assign_parameters: shape mismatch for " + d->name);
    d->value = it->second->value;
  }
}

std::vector<Parameter> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Parameter> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back(*p);
  return out;
}

// ---------------------------------------------------------------- domain forwards

Tensor softmax_channels(const Tensor& logits) {
  const std::size_t n = logits.plane();
  Tensor out(logits.c, logits.h, logits.w);
  std::vector<float> mx(n, -INFINITY);
  std::vector<float> sum(n, 0.0f);
  for (int c = 0; c < logits.c; ++c) {
    const float* z = logits.v.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) mx[i] = std::max(mx[i], z[i]);
  }
  for (int c = 0; c < logits.c; ++c) {
    const float* z = logits.v.data() + c * n;
    float* o = out.v.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      o[i] = std::exp(z[i] - mx[i]);
      sum[i] += o[i];
    }
  }
  for (auto& s : sum) s = 1.0f / s;
  for (int c = 0; c < logits.c; ++c) {
    float* o = out.v.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) o[i] *= sum[i];
  }
  return out;
}

std::vector<float> pixel_major(const Tensor& t) {
  const std::size_t n = t.plane();
  std::vector<float> out(n * t.c);
  for (int c = 0; c < t.c; ++c) {
    const float* src = t.v.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) out[i * t.c + c] = src[i];
  }
  return out;
}

std::vector<float> softmax_pixel_major(const Tensor& logits) { return pixel_major(softmax_channels(logits)); }

Tensor channel_major(std::span<const float> pixel_major, int bins, int height, int width) {
  Tensor t(bins, height, width);
  const std::size_t n = t.plane();
  for (int c = 0; c < bins; ++c) {
    float* dst = t.v.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = pixel_major[i * bins + c];
  }
  return t;
}

quant::ColorDistribution colorize_forward(const ColorizationNet& g, std::span<const double> lightness, int height,
                                          int width) {
  const auto trace = g.forward(lightness_tensor(lightness, height, width));
  const auto probs = softmax_pixel_major(trace.color_logits());
  quant::ColorDistribution out(height, width, g.bins());
  // Renormalize in double so each pixel sums to 1 at double precision.
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    double s = 0.0;
    for (int q = 0; q < g.bins(); ++q) s += probs[i * g.bins() + q];
    for (int q = 0; q < g.bins(); ++q) out.probs[i * g.bins() + q] = probs[i * g.bins() + q] / s;
  }
  return out;
}

std::vector<double> classifier_forward(const ColorizationNet& g, std::span<const double> lightness, int height,
                                       int width) {
  const auto trace = g.forward(lightness_tensor(lightness, height, width));
  return {trace.class_logits().v.begin(), trace.class_logits().v.end()};
}

std::vector<double> inverse_forward(const Sequential& f, std::span<const double> chroma, int height, int width) {
  const auto trace = f.forward(chroma_tensor(chroma, height, width));
  return {trace.output().v.begin(), trace.output().v.end()};
}

density::DensityMap count_forward(const CountingNet& net, const color::RgbImage& image) {
  const auto trace = net.forward(rgb_tensor(image));
  density::DensityMap map(image.height, image.width);
  std::transform(trace.density().v.begin(), trace.density().v.end(), map.values.begin(),
                 [](float v) { return static_cast<double>(v); });
  return map;
}

}  // namespace colorcount::net
