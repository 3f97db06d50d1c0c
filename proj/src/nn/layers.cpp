#include "colorcount/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace colorcount::nn {

using nlohmann::json;
using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, Options opts)
    : in_(in_channels), out_(out_channels), opts_(opts), pad_(opts.dilation * (opts.kernel - 1) / 2) {
  if (in_ < 1 || out_ < 1 || opts_.kernel < 1 || opts_.stride < 1 || opts_.dilation < 1 || opts_.groups < 1) {
    throw std::invalid_argument("Conv2d " + name + ": sizes must be positive");
  }
  if (in_ % opts_.groups != 0 || out_ % opts_.groups != 0) {
    throw std::invalid_argument("Conv2d " + name + ": channels must be divisible by groups");
  }
  weight_ = Parameter(name + ".weight", {out_, in_ / opts_.groups, opts_.kernel, opts_.kernel});
  if (opts_.bias) bias_ = Parameter(name + ".bias", {out_});
}

int Conv2d::output_size(int n) const {
  return (n + 2 * pad_ - opts_.dilation * (opts_.kernel - 1) - 1) / opts_.stride + 1;
}

namespace {

struct ConvGeometry {
  int icg, ocg, k, stride, dil, pad, h, w, ho, wo;
  [[nodiscard]] bool direct() const { return k == 1 && stride == 1; }
};

// Column matrix (icg*k*k) x (ho*wo) for one group.
void im2col(const float* src, const ConvGeometry& g, float* col) {
  const int hw = g.ho * g.wo;
  for (int c = 0; c < g.icg; ++c) {
    const float* plane = src + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = col + (static_cast<std::size_t>(c) * g.k * g.k + ky * g.k + kx) * hw;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          float* out = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, 0.0f);
            continue;
          }
          const float* in = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dil;
            out[ox] = (ix >= 0 && ix < g.w) ? in[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, const ConvGeometry& g, float* dst) {
  const int hw = g.ho * g.wo;
  for (int c = 0; c < g.icg; ++c) {
    float* plane = dst + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = col + (static_cast<std::size_t>(c) * g.k * g.k + ky * g.k + kx) * hw;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          float* out = plane + static_cast<std::size_t>(iy) * g.w;
          const float* in = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dil;
            if (ix >= 0 && ix < g.w) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.c != in_) {
    throw std::invalid_argument("Conv2d " + weight_.name + ": expected " + std::to_string(in_) + " channels, got " +
                                shape_string(x));
  }
  const ConvGeometry g{in_ / opts_.groups, out_ / opts_.groups, opts_.kernel, opts_.stride, opts_.dilation, pad_,
                       x.h, x.w, output_size(x.h), output_size(x.w)};
  Tensor y(out_, g.ho, g.wo);
  const int kk = g.icg * g.k * g.k;
  const int hw = g.ho * g.wo;
  std::vector<float> col(g.direct() ? 0 : static_cast<std::size_t>(kk) * hw);
  for (int grp = 0; grp < opts_.groups; ++grp) {
    const float* src = x.v.data() + static_cast<std::size_t>(grp) * g.icg * x.plane();
    const float* cols = src;
    if (!g.direct()) {
      im2col(src, g, col.data());
      cols = col.data();
    }
    CMapR wmat(weight_.value.data() + static_cast<std::size_t>(grp) * g.ocg * kk, g.ocg, kk);
    CMapR cmat(cols, kk, hw);
    MapR ymat(y.v.data() + static_cast<std::size_t>(grp) * g.ocg * hw, g.ocg, hw);
    ymat.noalias() = wmat * cmat;
  }
  if (opts_.bias) {
    for (int o = 0; o < out_; ++o) {
      auto ch = y.channel(o);
      const float b = bias_.value[o];
      for (float& v : ch) v += b;
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy) {
  const ConvGeometry g{in_ / opts_.groups, out_ / opts_.groups, opts_.kernel, opts_.stride, opts_.dilation, pad_,
                       x.h, x.w, output_size(x.h), output_size(x.w)};
  if (dy.c != out_ || dy.h != g.ho || dy.w != g.wo) throw std::invalid_argument("Conv2d backward: gradient shape mismatch");
  Tensor dx(x.c, x.h, x.w);
  const int kk = g.icg * g.k * g.k;
  const int hw = g.ho * g.wo;
  std::vector<float> col(g.direct() ? 0 : static_cast<std::size_t>(kk) * hw);
  std::vector<float> dcol(g.direct() ? 0 : static_cast<std::size_t>(kk) * hw);
  for (int grp = 0; grp < opts_.groups; ++grp) {
    const float* src = x.v.data() + static_cast<std::size_t>(grp) * g.icg * x.plane();
    const float* cols = src;
    if (!g.direct()) {
      im2col(src, g, col.data());
      cols = col.data();
    }
    CMapR dymat(dy.v.data() + static_cast<std::size_t>(grp) * g.ocg * hw, g.ocg, hw);
    CMapR cmat(cols, kk, hw);
    MapR dw(weight_.grad.data() + static_cast<std::size_t>(grp) * g.ocg * kk, g.ocg, kk);
    dw.noalias() += dymat * cmat.transpose();
    CMapR wmat(weight_.value.data() + static_cast<std::size_t>(grp) * g.ocg * kk, g.ocg, kk);
    float* dst = dx.v.data() + static_cast<std::size_t>(grp) * g.icg * x.plane();
    if (g.direct()) {
      MapR dxmat(dst, g.icg, hw);
      dxmat.noalias() = wmat.transpose() * dymat;
    } else {
      MapR dcmat(dcol.data(), kk, hw);
      dcmat.noalias() = wmat.transpose() * dymat;
      col2im(dcol.data(), g, dst);
    }
  }
  if (opts_.bias) {
    for (int o = 0; o < out_; ++o) {
      double s = 0.0;
      for (const float v : dy.channel(o)) s += v;
      bias_.grad[o] += static_cast<float>(s);
    }
  }
  return dx;
}

std::vector<Parameter*> Conv2d::parameters() {
  if (opts_.bias) return {&weight_, &bias_};
  return {&weight_};
}

json Conv2d::describe() const {
  return {{"kind", "conv2d"}, {"name", weight_.name.substr(0, weight_.name.size() - 7)},
          {"in", in_},        {"out", out_},
          {"kernel", opts_.kernel}, {"stride", opts_.stride},
          {"dilation", opts_.dilation}, {"groups", opts_.groups},
          {"bias", opts_.bias}};
}

// ---------------------------------------------------------------- activations

Tensor Relu::forward(const Tensor& x) const {
  Tensor y = x;
  for (float& v : y.v) v = v > 0.0f ? v : leak_ * v;
  return y;
}

Tensor Relu::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.v.size(); ++i) {
    const bool open = x.v[i] > 0.0f || (pass_at_zero_ && x.v[i] == 0.0f);
    if (!open) dx.v[i] *= leak_;
  }
  return dx;
}

json Relu::describe() const { return {{"kind", "relu"}, {"leak", leak_}}; }

Tensor ScaledSigmoid::forward(const Tensor& x) const {
  Tensor y = x;
  for (float& v : y.v) v = scale_ / (1.0f + std::exp(-v));
  return y;
}

Tensor ScaledSigmoid::backward(const Tensor& /*x*/, const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.v.size(); ++i) {
    const float s = y.v[i] / scale_;
    dx.v[i] *= scale_ * s * (1.0f - s);
  }
  return dx;
}

json ScaledSigmoid::describe() const { return {{"kind", "sigmoid"}, {"scale", scale_}}; }

// ---------------------------------------------------------------- resampling

namespace {

struct Tap {
  int i0;
  int i1;
  float w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> bilinear_taps(int n_in, int factor) {
  std::vector<Tap> taps(static_cast<std::size_t>(n_in) * factor);
  for (int o = 0; o < n_in * factor; ++o) {
    const double src = std::max(0.0, (o + 0.5) / factor - 0.5);
    const int i0 = std::min(static_cast<int>(src), n_in - 1);
    const int i1 = std::min(i0 + 1, n_in - 1);
    taps[o] = {i0, i1, static_cast<float>(src - i0)};
  }
  return taps;
}

}  // namespace

Tensor BilinearUpsample::forward(const Tensor& x) const {
  const auto ty = bilinear_taps(x.h, factor_);
  const auto tx = bilinear_taps(x.w, factor_);
  Tensor y(x.c, x.h * factor_, x.w * factor_);
  std::vector<float> rows(static_cast<std::size_t>(x.h) * y.w);
  for (int c = 0; c < x.c; ++c) {
    const float* in = x.v.data() + c * x.plane();
    for (int r = 0; r < x.h; ++r) {
      for (int o = 0; o < y.w; ++o) {
        const Tap& t = tx[o];
        rows[static_cast<std::size_t>(r) * y.w + o] = in[r * x.w + t.i0] * (1.0f - t.w1) + in[r * x.w + t.i1] * t.w1;
      }
    }
    float* out = y.v.data() + c * y.plane();
    for (int o = 0; o < y.h; ++o) {
      const Tap& t = ty[o];
      const float* a = rows.data() + static_cast<std::size_t>(t.i0) * y.w;
      const float* b = rows.data() + static_cast<std::size_t>(t.i1) * y.w;
      for (int j = 0; j < y.w; ++j) out[o * y.w + j] = gain_ * (a[j] * (1.0f - t.w1) + b[j] * t.w1);
    }
  }
  return y;
}

Tensor BilinearUpsample::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy) {
  const auto ty = bilinear_taps(x.h, factor_);
  const auto tx = bilinear_taps(x.w, factor_);
  Tensor dx(x.c, x.h, x.w);
  std::vector<float> rows(static_cast<std::size_t>(x.h) * dy.w);
  for (int c = 0; c < x.c; ++c) {
    std::fill(rows.begin(), rows.end(), 0.0f);
    const float* g = dy.v.data() + c * dy.plane();
    for (int o = 0; o < dy.h; ++o) {
      const Tap& t = ty[o];
      float* a = rows.data() + static_cast<std::size_t>(t.i0) * dy.w;
      float* b = rows.data() + static_cast<std::size_t>(t.i1) * dy.w;
      for (int j = 0; j < dy.w; ++j) {
        const float v = gain_ * g[o * dy.w + j];
        a[j] += v * (1.0f - t.w1);
        b[j] += v * t.w1;
      }
    }
    float* out = dx.v.data() + c * dx.plane();
    for (int r = 0; r < x.h; ++r) {
      for (int o = 0; o < dy.w; ++o) {
        const Tap& t = tx[o];
        const float v = rows[static_cast<std::size_t>(r) * dy.w + o];
        out[r * x.w + t.i0] += v * (1.0f - t.w1);
        out[r * x.w + t.i1] += v * t.w1;
      }
    }
  }
  return dx;
}

json BilinearUpsample::describe() const { return {{"kind", "bilinear_upsample"}, {"factor", factor_}, {"gain", gain_}}; }

Tensor AvgPool::forward(const Tensor& x) const {
  if (x.h % factor_ != 0 || x.w % factor_ != 0) {
    throw std::invalid_argument("AvgPool: " + shape_string(x) + " not divisible by " + std::to_string(factor_));
  }
  Tensor y(x.c, x.h / factor_, x.w / factor_);
  const float inv = 1.0f / static_cast<float>(factor_ * factor_);
  for (int c = 0; c < x.c; ++c) {
    for (int i = 0; i < x.h; ++i) {
      for (int j = 0; j < x.w; ++j) y.at(c, i / factor_, j / factor_) += x.at(c, i, j) * inv;
    }
  }
  return y;
}

Tensor AvgPool::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy) {
  Tensor dx(x.c, x.h, x.w);
  const float inv = 1.0f / static_cast<float>(factor_ * factor_);
  for (int c = 0; c < x.c; ++c) {
    for (int i = 0; i < x.h; ++i) {
      for (int j = 0; j < x.w; ++j) dx.at(c, i, j) = dy.at(c, i / factor_, j / factor_) * inv;
    }
  }
  return dx;
}

json AvgPool::describe() const { return {{"kind", "avg_pool"}, {"factor", factor_}}; }

Tensor GlobalAvgPool::forward(const Tensor& x) const {
  Tensor y(x.c, 1, 1);
  for (int c = 0; c < x.c; ++c) {
    double s = 0.0;
    for (const float v : x.channel(c)) s += v;
    y.v[c] = static_cast<float>(s / static_cast<double>(x.plane()));
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy) {
  Tensor dx(x.c, x.h, x.w);
  const float inv = 1.0f / static_cast<float>(x.plane());
  for (int c = 0; c < x.c; ++c) {
    for (float& v : dx.channel(c)) v = dy.v[c] * inv;
  }
  return dx;
}

json GlobalAvgPool::describe() const { return {{"kind", "global_avg_pool"}}; }

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, int in_features, int out_features)
    : in_(in_features), out_(out_features), weight_(name + ".weight", {out_features, in_features}),
      bias_(name + ".bias", {out_features}) {}

Tensor Linear::forward(const Tensor& x) const {
  if (static_cast<int>(x.size()) != in_) throw std::invalid_argument("Linear " + weight_.name + ": input size mismatch");
  Tensor y(out_, 1, 1);
  for (int o = 0; o < out_; ++o) {
    double s = bias_.value[o];
    for (int i = 0; i < in_; ++i) s += static_cast<double>(weight_.value[o * in_ + i]) * x.v[i];
    y.v[o] = static_cast<float>(s);
  }
  return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy) {
  Tensor dx(x.c, x.h, x.w);
  for (int o = 0; o < out_; ++o) {
    const float g = dy.v[o];
    bias_.grad[o] += g;
    for (int i = 0; i < in_; ++i) {
      weight_.grad[o * in_ + i] += g * x.v[i];
      dx.v[i] += g * weight_.value[o * in_ + i];
    }
  }
  return dx;
}

std::vector<Parameter*> Linear::parameters() { return {&weight_, &bias_}; }

json Linear::describe() const {
  return {{"kind", "linear"}, {"name", weight_.name.substr(0, weight_.name.size() - 7)}, {"in", in_}, {"out", out_}};
}

// ---------------------------------------------------------------- shuffle / IGC

int ChannelShuffle::destination(int src, int channels) const {
  const int per_group = channels / groups_;
  return groups_ * (src % per_group) + src / per_group;
}

Tensor ChannelShuffle::forward(const Tensor& x) const {
  if (x.c % groups_ != 0) throw std::invalid_argument("ChannelShuffle: channels not divisible by groups");
  Tensor y(x.c, x.h, x.w);
  for (int c = 0; c < x.c; ++c) {
    const auto src = x.channel(c);
    std::copy(src.begin(), src.end(), y.channel(destination(c, x.c)).begin());
  }
  return y;
}

Tensor ChannelShuffle::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy) {
  Tensor dx(x.c, x.h, x.w);
  for (int c = 0; c < x.c; ++c) {
    const auto src = dy.channel(destination(c, x.c));
    std::copy(src.begin(), src.end(), dx.channel(c).begin());
  }
  return dx;
}

json ChannelShuffle::describe() const { return {{"kind", "channel_shuffle"}, {"groups", groups_}}; }

void IgcBlockSpec::validate() const {
  if (primary_partitions < 1 || secondary_partitions < 1 || channels != primary_partitions * secondary_partitions) {
    throw std::invalid_argument("IgcBlockSpec: channels (" + std::to_string(channels) + ") must equal L (" +
                                std::to_string(primary_partitions) + ") * M (" +
                                std::to_string(secondary_partitions) + ")");
  }
  if (kernel < 1 || dilation < 1) throw std::invalid_argument("IgcBlockSpec: kernel and dilation must be positive");
}

std::int64_t IgcBlockSpec::parameter_count() const {
  const std::int64_t l = primary_partitions;
  const std::int64_t m = secondary_partitions;
  const std::int64_t k = kernel;
  return l * m * m * k * k + m * l * l;
}

std::int64_t IgcBlockSpec::dense_parameter_count() const {
  const std::int64_t c = channels;
  const std::int64_t k = kernel;
  return c * c * k * k + c * c;
}

namespace {
IgcBlockSpec validated(IgcBlockSpec s) {
  s.validate();
  return s;
}
}  // namespace

IgcBlock::IgcBlock(const std::string& name, IgcBlockSpec spec)
    : spec_(validated(spec)),
      primary_(name + ".primary", spec.channels, spec.channels,
               {.kernel = spec.kernel, .stride = 1, .dilation = spec.dilation, .groups = spec.primary_partitions, .bias = false}),
      shuffle_(spec.primary_partitions),
      secondary_(name + ".secondary", spec.channels, spec.channels,
                 {.kernel = 1, .stride = 1, .dilation = 1, .groups = spec.secondary_partitions, .bias = false}) {}

IgcBlock::Stages IgcBlock::stages(const Tensor& x) const {
  Stages s;
  s.primary = primary_.forward(x);
  s.shuffled = shuffle_.forward(s.primary);
  s.secondary = secondary_.forward(s.shuffled);
  s.output = s.secondary;
  s.output += x;
  return s;
}

Tensor IgcBlock::forward(const Tensor& x) const { return stages(x).output; }

Tensor IgcBlock::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy) {
  const Tensor p = primary_.forward(x);
  const Tensor s = shuffle_.forward(p);
  const Tensor ds = secondary_.backward(s, Tensor(), dy);
  const Tensor dp = shuffle_.backward(p, s, ds);
  Tensor dx = primary_.backward(x, p, dp);
  dx += dy;
  return dx;
}

std::vector<Parameter*> IgcBlock::parameters() { return {&primary_.weight(), &secondary_.weight()}; }

json IgcBlock::describe() const {
  return {{"kind", "igc_block"},
          {"channels", spec_.channels},
          {"primary_partitions", spec_.primary_partitions},
          {"secondary_partitions", spec_.secondary_partitions},
          {"kernel", spec_.kernel},
          {"dilation", spec_.dilation}};
}

// ---------------------------------------------------------------- Sequential

Sequential::Trace Sequential::forward(const Tensor& x) const {
  Trace t;
  t.acts.reserve(layers_.size() + 1);
  t.acts.push_back(x);
  for (const auto& l : layers_) t.acts.push_back(l->forward(t.acts.back()));
  return t;
}

Tensor Sequential::backward(const Trace& trace, const Tensor& dy) {
  Tensor g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(trace.acts[i], trace.acts[i + 1], g);
  return g;
}

std::vector<Parameter*> Sequential::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    for (auto* p : l->parameters()) out.push_back(p);
  }
  return out;
}

json Sequential::describe() const {
  json j = json::array();
  for (const auto& l : layers_) j.push_back(l->describe());
  return j;
}

void init_fan_in(const std::vector<Parameter*>& params, std::mt19937_64& rng) {
  for (auto* p : params) {
    if (p->shape.size() < 2) {
      std::fill(p->value.begin(), p->value.end(), 0.0f);
      continue;
    }
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < p->shape.size(); ++i) fan_in *= static_cast<std::size_t>(p->shape[i]);
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    for (float& v : p->value) v = dist(rng);
  }
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace colorcount::nn
