#include "colorcount/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "colorcount/priors.hpp"

namespace colorcount::pipeline {

using nlohmann::json;
using nn::Tensor;

namespace fs = std::filesystem;

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Permutation of 0..n-1 from (seed, stream).
std::vector<std::size_t> seeded_order(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

constexpr std::uint64_t kSubsetStream = 0x5b5e7;
constexpr std::uint64_t kSplitStream = 0x5911;
constexpr std::uint64_t kEpochStream = 0xe90c;

void emit(const ProgressFn& progress, const std::string& line) {
  if (progress) progress(line);
}

void require_finite(double v, const char* term, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string("non-finite ") + term + " loss at step " + std::to_string(step));
  }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Tensor out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

Tensor scalar_tensor(float v) {
  Tensor t(1, 1, 1);
  t.v[0] = v;
  return t;
}

// ---------------------------------------------------------------- stage-1 data

struct Prepared {
  int height = 0;
  int width = 0;
  Tensor l_in;   // L / 50 - 1
  Tensor ab_in;  // ab / 110, channel-major
  std::vector<float> l_unit;  // L / 100
  quant::SoftCode code;
  std::vector<double> pixel_weight;
  int group = 0;  // 0 when unknown
};

Prepared prepare(const data::Sample& s, const QuantArtifacts& q, const TrainConfig& cfg) {
  const auto lab = color::rgb_to_lab(s.image);
  Prepared p;
  p.height = lab.height;
  p.width = lab.width;
  p.l_in = net::lightness_tensor(lab.lightness, lab.height, lab.width);
  p.ab_in = net::chroma_tensor(lab.chroma, lab.height, lab.width);
  p.l_unit.resize(lab.lightness.size());
  for (std::size_t i = 0; i < lab.lightness.size(); ++i) p.l_unit[i] = static_cast<float>(lab.lightness[i] / 100.0);
  p.code = quant::soft_encode_sparse(lab.chroma, q.codebook, cfg.soft_k, cfg.soft_sigma);
  p.pixel_weight.resize(lab.pixel_count());
  for (std::size_t i = 0; i < lab.pixel_count(); ++i) p.pixel_weight[i] = q.rebalance.per_bin[p.code.dominant_bin(i)];
  p.group = sample_group(s).value_or(0);
  return p;
}

std::vector<float> dense_target(const quant::SoftCode& code, int bins) {
  std::vector<float> t(code.pixel_count() * bins, 0.0f);
  for (std::size_t i = 0; i < code.pixel_count(); ++i) {
    for (int j = 0; j < code.k; ++j) {
      t[i * bins + code.index[i * code.k + j]] += static_cast<float>(code.weight[i * code.k + j]);
    }
  }
  return t;
}

/// Annealed-mean chroma as a normalized (ab / 110) channel-major tensor,
/// computed from the logits: p^(1/T) renormalized is softmax(logits / T).
Tensor decode_tensor(const Tensor& logits, const quant::ColorCodebook& cb, double temperature) {
  const std::size_t n = logits.plane();
  const float inv_t = static_cast<float>(1.0 / temperature);
  std::vector<float> mx(n, -INFINITY);
  std::vector<float> sum(n, 0.0f);
  Tensor t(2, logits.h, logits.w);
  float* a = t.v.data();
  float* b = t.v.data() + n;
  for (int c = 0; c < logits.c; ++c) {
    const float* z = logits.v.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) mx[i] = std::max(mx[i], z[i]);
  }
  for (int c = 0; c < logits.c; ++c) {
    const float* z = logits.v.data() + c * n;
    const auto ca = static_cast<float>(cb.centers[c][0] / color::kChromaLimit);
    const auto cbv = static_cast<float>(cb.centers[c][1] / color::kChromaLimit);
    for (std::size_t i = 0; i < n; ++i) {
      const float w = std::exp((z[i] - mx[i]) * inv_t);
      sum[i] += w;
      a[i] += w * ca;
      b[i] += w * cbv;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    a[i] /= sum[i];
    b[i] /= sum[i];
  }
  return t;
}

/// Straight-through gradient of the decoded chroma: the backward pass uses
/// the Jacobian of the plain (T = 1) expectation, d E[c]/d logit_q = p_q (c_q - E[c]).
/// `probs` is channel-major; the result is added to `d_logits`.
void straight_through(const Tensor& probs, const quant::ColorCodebook& cb, const Tensor& d_ab, Tensor& d_logits) {
  const std::size_t n = d_ab.plane();
  std::vector<float> ma(n, 0.0f);
  std::vector<float> mb(n, 0.0f);
  for (int c = 0; c < probs.c; ++c) {
    const float* p = probs.v.data() + c * n;
    const auto ca = static_cast<float>(cb.centers[c][0] / color::kChromaLimit);
    const auto cbv = static_cast<float>(cb.centers[c][1] / color::kChromaLimit);
    for (std::size_t i = 0; i < n; ++i) {
      ma[i] += p[i] * ca;
      mb[i] += p[i] * cbv;
    }
  }
  const float* ga = d_ab.v.data();
  const float* gb = d_ab.v.data() + n;
  for (int c = 0; c < probs.c; ++c) {
    const float* p = probs.v.data() + c * n;
    float* d = d_logits.v.data() + c * n;
    const auto ca = static_cast<float>(cb.centers[c][0] / color::kChromaLimit);
    const auto cbv = static_cast<float>(cb.centers[c][1] / color::kChromaLimit);
    for (std::size_t i = 0; i < n; ++i) d[i] += p[i] * ((ca - ma[i]) * ga[i] + (cbv - mb[i]) * gb[i]);
  }
}

/// Discriminator traces kept from the generator pass for the discriminator update.
struct DiscStash {
  nn::Sequential::Trace z_real;
  nn::Sequential::Trace z_fake;
  nn::Sequential::Trace x_real;
  nn::Sequential::Trace x_fake;
};

struct PassResult {
  loss::PretrainParts parts;
  double reconstruction = 0.0;
  bool correct = false;
  std::optional<DiscStash> stash;
};

/// Forward (and, when `scale` > 0, backward) of all generator-side terms for
/// one sample. Gradients are scaled by `scale` (1 / batch size) and
/// accumulated into the generator, classifier and F parameters.
PassResult generator_pass(Stage1Model& m, nn::Sequential& texture, const Prepared& s, const TrainConfig& cfg,
                          float scale) {
  const auto& w = cfg.weights;
  const bool backprop = scale > 0.0f;
  const bool adversarial = cfg.adversarial > 0.0;
  const bool cycle = w.beta > 0.0;
  const bool use_texture = w.gamma > 0.0;
  const bool classify = w.lambda > 0.0 && s.group > 0;
  const int h = s.height;
  const int wd = s.width;
  const std::size_t n = static_cast<std::size_t>(h) * wd;
  const int q = m.quant.codebook.size();
  const auto& cb = m.quant.codebook;

  PassResult r;
  const auto tr = m.g.forward(s.l_in);
  const Tensor probs_cm = net::softmax_channels(tr.color_logits());
  const auto probs = net::pixel_major(probs_cm);
  const auto target = dense_target(s.code, q);
  const auto cc = loss::colorization_loss<float>(probs, target, s.pixel_weight, q);
  r.parts.colorization = cc.value / static_cast<double>(n);
  Tensor d_logits(q, h, wd);
  if (backprop && w.alpha > 0.0) {
    const float k = static_cast<float>(w.alpha / static_cast<double>(n)) * scale;
    for (int c = 0; c < q; ++c) {
      float* d = d_logits.v.data() + c * n;
      for (std::size_t i = 0; i < n; ++i) d[i] = cc.grad[i * q + c] * k;
    }
  }

  Tensor d_class;
  if (classify) {
    const auto& logits = tr.class_logits().v;
    const int label = s.group;
    const auto cl = loss::classification_loss<float>(logits, std::span<const int>(&label, 1), m.g.groups());
    r.parts.classification = cl.value;
    r.correct = std::max_element(logits.begin(), logits.end()) - logits.begin() == label - 1;
    if (backprop) {
      d_class = Tensor(m.g.groups(), 1, 1);
      for (int j = 0; j < m.g.groups(); ++j) d_class.v[j] = cl.grad[j] * static_cast<float>(w.lambda) * scale;
    }
  } else if (s.group > 0) {
    const auto& logits = tr.class_logits().v;
    r.correct = std::max_element(logits.begin(), logits.end()) - logits.begin() == s.group - 1;
  }

  if (adversarial || cycle || use_texture) {
    const Tensor ab_hat = decode_tensor(tr.color_logits(), cb, cfg.temperature);
    Tensor d_ab_hat(2, h, wd);
    DiscStash stash;

    if (adversarial) {
      stash.z_fake = m.d_z.forward(ab_hat);
      stash.z_real = m.d_z.forward(s.ab_in);
      const float real = stash.z_real.output().v[0];
      const float fake = stash.z_fake.output().v[0];
      const auto gl = loss::gan_losses<float>(std::span<const float>(&real, 1), std::span<const float>(&fake, 1));
      r.parts.gan_g_to_z = gl.generator;
      if (backprop) {
        const float k = gl.gen_grad_fake[0] * static_cast<float>(cfg.adversarial) * scale;
        d_ab_hat += m.d_z.backward(stash.z_fake, scalar_tensor(k));
      }
    }

    if (use_texture) {
      const auto pred = texture.forward(concat_channels(s.l_in, ab_hat));
      const auto real = texture.forward(concat_channels(s.l_in, s.ab_in));
      const auto& fp = pred.output();
      const auto& fr = real.output();
      const loss::FeatureStack<float> sp{fp.c, static_cast<int>(fp.plane()), fp.v};
      const loss::FeatureStack<float> sr{fr.c, static_cast<int>(fr.plane()), fr.v};
      const auto tl = loss::texture_loss<float>(sp, sr);
      r.parts.texture = tl.value;
      if (backprop) {
        Tensor d_feat(fp.c, fp.h, fp.w);
        const float k = static_cast<float>(w.gamma) * scale;
        for (std::size_t i = 0; i < d_feat.size(); ++i) d_feat.v[i] = tl.grad[i] * k;
        const Tensor d_in = texture.backward(pred, d_feat);
        for (std::size_t i = 0; i < 2 * n; ++i) d_ab_hat.v[i] += d_in.v[n + i];
      }
    }

    if (adversarial || cycle) {
      // F on the true chroma: fake lightness for D_X and the z -> x -> z cycle.
      const auto f_real = m.f.forward(s.ab_in);
      Tensor x_fake(1, h, wd);
      for (std::size_t i = 0; i < n; ++i) x_fake.v[i] = f_real.output().v[i] / 50.0f - 1.0f;
      Tensor d_x_fake(1, h, wd);

      if (adversarial) {
        stash.x_fake = m.d_x.forward(x_fake);
        stash.x_real = m.d_x.forward(s.l_in);
        const float real = stash.x_real.output().v[0];
        const float fake = stash.x_fake.output().v[0];
        const auto gl = loss::gan_losses<float>(std::span<const float>(&real, 1), std::span<const float>(&fake, 1));
        r.parts.gan_f_to_x = gl.generator;
        if (backprop) {
          const float k = gl.gen_grad_fake[0] * static_cast<float>(cfg.adversarial) * scale;
          d_x_fake += m.d_x.backward(stash.x_fake, scalar_tensor(k));
        }
      }

      if (cycle) {
        const auto f_hat = m.f.forward(ab_hat);  // F(G(x))
        std::vector<float> x_rec(n);
        for (std::size_t i = 0; i < n; ++i) x_rec[i] = f_hat.output().v[i] / 100.0f;
        const auto tr2 = m.g.forward(x_fake);  // G(F(z))
        const Tensor z_rec = decode_tensor(tr2.color_logits(), cb, cfg.temperature);
        const auto cyc = loss::cycle_loss<float>(s.l_unit, x_rec, s.ab_in.v, z_rec.v);
        r.parts.cycle = cyc.value;
        double rec = 0.0;
        for (std::size_t i = 0; i < n; ++i) rec += std::abs(x_rec[i] - s.l_unit[i]);
        r.reconstruction = 100.0 * rec / static_cast<double>(n);
        if (backprop) {
          const float k = static_cast<float>(w.beta) * scale;
          Tensor d_f_hat(1, h, wd);
          for (std::size_t i = 0; i < n; ++i) d_f_hat.v[i] = cyc.grad_x_rec[i] * k / 100.0f;
          d_ab_hat += m.f.backward(f_hat, d_f_hat);

          Tensor d_z_rec(2, h, wd);
          for (std::size_t i = 0; i < 2 * n; ++i) d_z_rec.v[i] = cyc.grad_z_rec[i] * k;
          Tensor d_logits2(q, h, wd);
          straight_through(net::softmax_channels(tr2.color_logits()), cb, d_z_rec, d_logits2);
          d_x_fake += m.g.backward(tr2, &d_logits2, nullptr);
        }
      }

      if (backprop) {
        Tensor d_f_real(1, h, wd);
        for (std::size_t i = 0; i < n; ++i) d_f_real.v[i] = d_x_fake.v[i] / 50.0f;
        m.f.backward(f_real, d_f_real);
      }
    }

    if (backprop) straight_through(probs_cm, cb, d_ab_hat, d_logits);
    if (adversarial) r.stash = std::move(stash);
  }

  if (backprop) {
    m.g.backward(tr, &d_logits, classify ? &d_class : nullptr);
  }
  return r;
}

struct DiscLosses {
  double x = 0.0;
  double z = 0.0;
};

/// Discriminator gradients for one stashed sample, scaled by `scale`.
DiscLosses discriminator_pass(Stage1Model& m, const DiscStash& st, float scale) {
  DiscLosses out;
  auto one = [&](nn::Sequential& d, const nn::Sequential::Trace& real_tr, const nn::Sequential::Trace& fake_tr) {
    const float real = real_tr.output().v[0];
    const float fake = fake_tr.output().v[0];
    const auto gl = loss::gan_losses<float>(std::span<const float>(&real, 1), std::span<const float>(&fake, 1));
    d.backward(real_tr, scalar_tensor(gl.disc_grad_real[0] * scale));
    d.backward(fake_tr, scalar_tensor(gl.disc_grad_fake[0] * scale));
    return gl.discriminator;
  };
  out.z = one(m.d_z, st.z_real, st.z_fake);
  out.x = one(m.d_x, st.x_real, st.x_fake);
  return out;
}

// ---------------------------------------------------------------- stage-1 checkpoints

json quant_json(const QuantArtifacts& q) {
  return {{"grid_spacing", q.codebook.grid_spacing},
          {"centers", q.codebook.centers},
          {"per_bin", q.rebalance.per_bin},
          {"prior", q.rebalance.prior},
          {"mix", q.rebalance.mix}};
}

QuantArtifacts quant_from_json(const json& j) {
  QuantArtifacts q;
  q.codebook.grid_spacing = j.at("grid_spacing").get<double>();
  q.codebook.centers = j.at("centers").get<std::vector<std::array<double, 2>>>();
  q.rebalance.per_bin = j.at("per_bin").get<std::vector<double>>();
  q.rebalance.prior = j.at("prior").get<std::vector<double>>();
  q.rebalance.mix = j.at("mix").get<double>();
  return q;
}

void append_prefixed(std::vector<nn::Parameter>& out, std::vector<nn::Parameter>& src, const std::string& prefix) {
  for (const auto& p : src) {
    nn::Parameter c = p;
    c.name = prefix + p.name;
    c.grad.clear();
    out.push_back(std::move(c));
  }
}

void restore_moments(std::vector<nn::Parameter>& dst, const Checkpoint& ckpt, const std::string& prefix) {
  for (auto& p : dst) {
    const auto& src = ckpt.at(prefix + p.name);
    if (src.shape != p.shape) throw std::invalid_argument("checkpoint: optimizer state shape mismatch for " + p.name);
    p.value = src.value;
  }
}

Checkpoint stage1_checkpoint(Stage1Model& m, nn::Optimizer& gen, nn::Optimizer& disc, const TrainConfig& cfg,
                             int epoch) {
  Checkpoint c;
  c.manifest = {{"stage", 1},
                {"epoch", epoch},
                {"step", gen.steps()},
                {"disc_step", disc.steps()},
                {"config", cfg.to_json()},
                {"config_hash", hex(cfg.hash())},
                {"seed", cfg.seed},
                {"bins", m.quant.codebook.size()},
                {"groups", m.g.groups()},
                {"quantization", quant_json(m.quant)},
                {"texture_extractor", {{"kind", "random-frozen"}, {"seed", net::kTextureSeed}}},
                {"architecture",
                 {{"generator_G", m.g.describe()},
                  {"inverse_F", m.f.describe()},
                  {"discriminator_X", m.d_x.describe()},
                  {"discriminator_Z", m.d_z.describe()}}}};
  for (auto* p : m.generator_parameters()) c.tensors.push_back(*p);
  for (auto* p : m.discriminator_parameters()) c.tensors.push_back(*p);
  for (auto& t : c.tensors) t.grad.clear();
  append_prefixed(c.tensors, gen.first_moments(), "optim.gen.");
  append_prefixed(c.tensors, gen.second_moments(), "optim.gen.");
  append_prefixed(c.tensors, disc.first_moments(), "optim.disc.");
  append_prefixed(c.tensors, disc.second_moments(), "optim.disc.");
  return c;
}

std::string epoch_name(int epoch) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "stage1_epoch_%03d.ckpt", epoch);
  return buf;
}

const char* kLogHeader =
    "step,epoch,gan_g_to_z,gan_f_to_x,colorization,cycle,texture,classification,total,disc_x,disc_z";
const char* kProbeHeader =
    "epoch,gan_g_to_z,gan_f_to_x,colorization,cycle,texture,classification,total,reconstruction,accuracy";

std::string parts_csv(const loss::PretrainParts& p) {
  return g17(p.gan_g_to_z) + "," + g17(p.gan_f_to_x) + "," + g17(p.colorization) + "," + g17(p.cycle) + "," +
         g17(p.texture) + "," + g17(p.classification);
}

/// Keeps the header and the rows whose epoch column is <= `epoch`.
std::vector<std::string> kept_rows(const fs::path& path, int epoch_column, int epoch) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    for (int i = 0; i <= epoch_column; ++i) std::getline(ss, cell, ',');
    if (std::stoi(cell) <= epoch) rows.push_back(line);
  }
  return rows;
}

std::ofstream open_log(const fs::path& path, const char* header, const std::vector<std::string>& keep) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << header << "\n";
  for (const auto& r : keep) out << r << "\n";
  return out;
}

}  // namespace

// ---------------------------------------------------------------- subsets

std::vector<std::size_t> subset_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("sample_subset: fraction must be in (0, 1], got " + g17(fraction));
  }
  if (n == 0) throw std::invalid_argument("sample_subset: empty corpus");
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  auto order = seeded_order(n, seed, kSubsetStream);
  order.resize(std::min(k, n));
  return order;
}

std::vector<data::Sample> sample_subset(const std::vector<data::Sample>& corpus, double fraction, std::uint64_t seed) {
  std::vector<data::Sample> out;
  for (const auto i : subset_indices(corpus.size(), fraction, seed)) out.push_back(corpus[i]);
  return out;
}

std::optional<int> sample_group(const data::Sample& sample) {
  if (sample.group) return sample.group;
  if (sample.tag) return priors::keyword_groups(*sample.tag).group;
  return std::nullopt;
}

QuantArtifacts fit_quantization(const std::vector<data::Sample>& corpus, const TrainConfig& cfg) {
  QuantArtifacts q;
  q.codebook = quant::build_codebook(cfg.grid_spacing, cfg.gamut_samples);
  quant::RebalanceFitter fitter(q.codebook.size());
  for (const auto& s : corpus) {
    const auto lab = color::rgb_to_lab(s.image);
    fitter.add(quant::soft_encode_sparse(lab.chroma, q.codebook, cfg.soft_k, cfg.soft_sigma));
  }
  q.rebalance = fitter.finish(cfg.rebalance_mix);
  return q;
}

// ---------------------------------------------------------------- stage-1 model

Stage1Model::Stage1Model(QuantArtifacts q, int groups)
    : g(q.codebook.size(), groups),
      f(net::make_inverse_net()),
      d_x(net::make_discriminator("D_X", 1)),
      d_z(net::make_discriminator("D_Z", 2)),
      quant(std::move(q)) {}

void Stage1Model::initialize(std::uint64_t seed) {
  net::initialize(g, seed);
  net::initialize(f, seed + 1);
  net::initialize(d_x, seed + 2);
  net::initialize(d_z, seed + 3);
}

std::vector<nn::Parameter*> Stage1Model::generator_parameters() {
  auto out = g.parameters();
  for (auto* p : f.parameters()) out.push_back(p);
  return out;
}

std::vector<nn::Parameter*> Stage1Model::discriminator_parameters() {
  auto out = d_x.parameters();
  for (auto* p : d_z.parameters()) out.push_back(p);
  return out;
}

Stage1Model load_stage1(const Checkpoint& ckpt) {
  if (ckpt.stage() != 1) {
    throw std::invalid_argument("expected a stage-1 checkpoint, got stage " + std::to_string(ckpt.stage()));
  }
  Stage1Model m(quant_from_json(ckpt.manifest.at("quantization")), ckpt.manifest.at("groups").get<int>());
  net::assign_parameters(m.generator_parameters(), ckpt.tensors);
  net::assign_parameters(m.discriminator_parameters(), ckpt.tensors);
  return m;
}

double weighted_total(const loss::PretrainParts& p, const loss::LossWeights& w, double adversarial) {
  return adversarial * (p.gan_g_to_z + p.gan_f_to_x) + w.alpha * p.colorization + w.beta * p.cycle +
         w.gamma * p.texture + w.lambda * p.classification;
}

ProbeRow evaluate_probe(Stage1Model& model, const std::vector<data::Sample>& batch, const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("evaluate_probe: empty batch");
  auto texture = net::make_texture_extractor(net::kTextureSeed);
  ProbeRow row;
  int labeled = 0;
  int correct = 0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    const auto p = prepare(s, model.quant, cfg);
    const auto r = generator_pass(model, texture, p, cfg, 0.0f);
    row.parts.gan_g_to_z += r.parts.gan_g_to_z * inv;
    row.parts.gan_f_to_x += r.parts.gan_f_to_x * inv;
    row.parts.colorization += r.parts.colorization * inv;
    row.parts.cycle += r.parts.cycle * inv;
    row.parts.texture += r.parts.texture * inv;
    row.parts.classification += r.parts.classification * inv;
    row.reconstruction += r.reconstruction * inv;
    if (p.group > 0) {
      ++labeled;
      correct += r.correct ? 1 : 0;
    }
  }
  row.total = weighted_total(row.parts, cfg.weights, cfg.adversarial);
  row.accuracy = labeled > 0 ? static_cast<double>(correct) / labeled : 0.0;
  return row;
}

// ---------------------------------------------------------------- stage 1

PretrainResult pretrain(const std::vector<data::Sample>& unlabeled, const TrainConfig& cfg,
                        const PretrainOptions& options) {
  cfg.validate();
  if (cfg.stage != 1) throw std::invalid_argument("pretrain: config stage must be 1");
  if (unlabeled.empty()) throw std::invalid_argument("pretrain: empty corpus");
  for (const auto& s : unlabeled) {
    if (s.image.height % net::kFrontendStride != 0 || s.image.width % net::kFrontendStride != 0) {
      throw std::invalid_argument("pretrain: image " + s.id + " size is not a multiple of " +
                                  std::to_string(net::kFrontendStride));
    }
    if (!std::all_of(s.image.pixels.begin(), s.image.pixels.end(), [](double v) { return v >= 0.0 && v <= 1.0; })) {
      throw std::invalid_argument("pretrain: image " + s.id + " has channel values outside [0, 1]");
    }
    const auto g = sample_group(s);
    if (cfg.weights.lambda > 0.0 && !g) {
      throw std::invalid_argument("pretrain: sample " + s.id + " has no group label and lambda > 0");
    }
    if (g && (*g < 1 || *g > cfg.groups)) {
      throw std::invalid_argument("pretrain: sample " + s.id + " group " + std::to_string(*g) + " outside 1.." +
                                  std::to_string(cfg.groups));
    }
  }

  int start_epoch = 0;
  std::optional<Checkpoint> resume;
  if (options.resume_from) {
    resume = load_checkpoint(*options.resume_from);
    if (resume->stage() != 1) throw std::invalid_argument("pretrain: resume checkpoint is not stage 1");
    start_epoch = resume->manifest.at("epoch").get<int>();
  }
  QuantArtifacts q = resume ? quant_from_json(resume->manifest.at("quantization")) : fit_quantization(unlabeled, cfg);
  Stage1Model model(std::move(q), cfg.groups);
  model.initialize(cfg.seed);
  nn::Optimizer gen(cfg.optimizer, cfg.learning_rate, model.generator_parameters());
  nn::Optimizer disc(cfg.optimizer, cfg.learning_rate, model.discriminator_parameters());
  if (resume) {
    net::assign_parameters(model.generator_parameters(), resume->tensors);
    net::assign_parameters(model.discriminator_parameters(), resume->tensors);
    restore_moments(gen.first_moments(), *resume, "optim.gen.");
    restore_moments(gen.second_moments(), *resume, "optim.gen.");
    restore_moments(disc.first_moments(), *resume, "optim.disc.");
    restore_moments(disc.second_moments(), *resume, "optim.disc.");
    gen.set_steps(resume->manifest.at("step").get<std::int64_t>());
    disc.set_steps(resume->manifest.at("disc_step").get<std::int64_t>());
  }

  emit(options.progress, "pretrain: " + std::to_string(unlabeled.size()) + " images, Q=" +
                             std::to_string(model.quant.codebook.size()) + ", epochs " +
                             std::to_string(start_epoch + 1) + ".." + std::to_string(cfg.epochs));

  std::vector<Prepared> prepared;
  prepared.reserve(unlabeled.size());
  for (const auto& s : unlabeled) prepared.push_back(prepare(s, model.quant, cfg));
  const std::vector<data::Sample> probe_batch(
      unlabeled.begin(), unlabeled.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(cfg.batch_size, unlabeled.size())));
  auto texture = net::make_texture_extractor(net::kTextureSeed);

  const bool to_disk = !options.out_dir.empty();
  std::ofstream log;
  std::ofstream probe_log;
  if (to_disk) {
    fs::create_directories(options.out_dir);
    const auto log_path = options.out_dir / "pretrain_log.csv";
    const auto probe_path = options.out_dir / "pretrain_probe.csv";
    log = open_log(log_path, kLogHeader, resume ? kept_rows(log_path, 1, start_epoch) : std::vector<std::string>{});
    probe_log = open_log(probe_path, kProbeHeader,
                         resume ? kept_rows(probe_path, 0, start_epoch) : std::vector<std::string>{});
    quant::save_quantization(options.out_dir / "quantization.json", model.quant.codebook, model.quant.rebalance);
  }

  PretrainResult result;
  auto record_probe = [&](int epoch) {
    ProbeRow row = evaluate_probe(model, probe_batch, cfg);
    row.epoch = epoch;
    if (to_disk) {
      probe_log << epoch << "," << parts_csv(row.parts) << "," << g17(row.total) << "," << g17(row.reconstruction)
                << "," << g17(row.accuracy) << "\n";
      probe_log.flush();
    }
    result.probe.push_back(row);
    return row;
  };
  if (!resume) record_probe(0);

  const std::size_t n = prepared.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = seeded_order(n, cfg.seed, kEpochStream + static_cast<std::uint64_t>(epoch));
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const std::size_t b1 = std::min(n, b0 + bs);
      const float scale = 1.0f / static_cast<float>(b1 - b0);
      const std::int64_t step = gen.steps() + 1;

      gen.zero_grad();
      disc.zero_grad();
      loss::PretrainParts parts;
      std::vector<DiscStash> stashes;
      for (std::size_t i = b0; i < b1; ++i) {
        auto r = generator_pass(model, texture, prepared[order[i]], cfg, scale);
        parts.gan_g_to_z += r.parts.gan_g_to_z * scale;
        parts.gan_f_to_x += r.parts.gan_f_to_x * scale;
        parts.colorization += r.parts.colorization * scale;
        parts.cycle += r.parts.cycle * scale;
        parts.texture += r.parts.texture * scale;
        parts.classification += r.parts.classification * scale;
        if (r.stash) stashes.push_back(std::move(*r.stash));
      }
      require_finite(parts.gan_g_to_z, "gan_g_to_z", step);
      require_finite(parts.gan_f_to_x, "gan_f_to_x", step);
      require_finite(parts.colorization, "colorization", step);
      require_finite(parts.cycle, "cycle", step);
      require_finite(parts.texture, "texture", step);
      require_finite(parts.classification, "classification", step);
      const double total = weighted_total(parts, cfg.weights, cfg.adversarial);
      require_finite(total, "total", step);
      gen.step();

      // Discriminator update on the fakes produced before the generator step.
      disc.zero_grad();
      DiscLosses dl;
      for (const auto& st : stashes) {
        const auto d = discriminator_pass(model, st, scale);
        dl.x += d.x * scale;
        dl.z += d.z * scale;
      }
      if (!stashes.empty()) {
        require_finite(dl.x, "discriminator_x", step);
        require_finite(dl.z, "discriminator_z", step);
        disc.step();
      }

      if (to_disk) {
        log << step << "," << epoch << "," << parts_csv(parts) << "," << g17(total) << "," << g17(dl.x) << ","
            << g17(dl.z) << "\n";
      }
    }
    if (to_disk) log.flush();
    const auto row = record_probe(epoch);
    emit(options.progress, "epoch " + std::to_string(epoch) + ": probe total " + g17(row.total) +
                               ", colorization " + g17(row.parts.colorization) + ", accuracy " + g17(row.accuracy));
    if (to_disk) save_checkpoint(options.out_dir / epoch_name(epoch), stage1_checkpoint(model, gen, disc, cfg, epoch));
  }

  result.checkpoint = stage1_checkpoint(model, gen, disc, cfg, std::max(start_epoch, cfg.epochs));
  result.steps = gen.steps();
  if (to_disk) save_checkpoint(options.out_dir / "stage1.ckpt", result.checkpoint);
  return result;
}

double group_accuracy(const net::ColorizationNet& g, const std::vector<data::Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("group_accuracy: no samples");
  int correct = 0;
  for (const auto& s : samples) {
    const auto group = sample_group(s);
    if (!group) throw std::invalid_argument("group_accuracy: sample " + s.id + " has no group");
    const auto lab = color::rgb_to_lab(s.image);
    const auto logits = net::classifier_forward(g, lab.lightness, lab.height, lab.width);
    correct += (std::max_element(logits.begin(), logits.end()) - logits.begin() == *group - 1) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------- stage 2

density::DensityMap target_density(const data::Sample& sample, const TrainConfig& cfg) {
  if (!sample.annotated) throw std::invalid_argument("sample " + sample.id + " has no head annotations");
  return density::density_from_points(sample.annotations,
                                      density::AdaptiveKernel{cfg.kernel_beta, cfg.kernel_k, 4.0});
}

Checkpoint counting_checkpoint(net::CountingNet& net, const TrainConfig& cfg, json extra) {
  Checkpoint c;
  c.manifest = {{"stage", 2},
                {"config", cfg.to_json()},
                {"config_hash", hex(cfg.hash())},
                {"seed", cfg.seed},
                {"igc_blocks", cfg.igc_blocks},
                {"architecture", net.describe()}};
  for (auto& [k, v] : extra.items()) c.manifest[k] = v;
  for (auto* p : net.parameters()) {
    c.tensors.push_back(*p);
    c.tensors.back().grad.clear();
  }
  return c;
}

net::CountingNet load_counting_net(const Checkpoint& ckpt) {
  if (ckpt.stage() != 2) {
    throw std::invalid_argument("expected a stage-2 checkpoint, got stage " + std::to_string(ckpt.stage()));
  }
  net::CountingNet net(ckpt.manifest.at("igc_blocks").get<int>());
  net::assign_parameters(net.parameters(), ckpt.tensors);
  return net;
}

namespace {

struct CountSample {
  Tensor rgb;
  std::vector<float> target;
  double count = 0.0;
};

double sample_mae(const net::CountingNet& net, const std::vector<CountSample>& data,
                  const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  double err = 0.0;
  for (const auto i : idx) {
    const auto tr = net.forward(data[i].rgb);
    double pred = 0.0;
    for (const float v : tr.density().v) pred += v;
    err += std::abs(pred - data[i].count);
  }
  return err / static_cast<double>(idx.size());
}

FinetuneResult train_counting(net::CountingNet& net, const std::vector<data::Sample>& labeled, const TrainConfig& cfg,
                              const FinetuneOptions& options, const json& origin) {
  if (labeled.empty()) throw std::invalid_argument("stage 2: empty labeled set");
  std::vector<CountSample> data;
  data.reserve(labeled.size());
  for (const auto& s : labeled) {
    CountSample c;
    c.rgb = net::rgb_tensor(s.image);
    const auto d = target_density(s, cfg);
    c.target.assign(d.values.begin(), d.values.end());
    c.count = static_cast<double>(s.annotations.points.size());
    data.push_back(std::move(c));
  }
  // Validation split: the first round(val_fraction * n) of a seeded shuffle
  // (at least one when the fraction is positive and two or more items exist).
  const auto order = seeded_order(data.size(), cfg.seed, kSplitStream);
  std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(data.size())));
  if (cfg.val_fraction > 0.0 && data.size() >= 2) n_val = std::max<std::size_t>(n_val, 1);
  n_val = std::min(n_val, data.size() - 1);
  const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  const std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  // Model selection falls back to the training MAE without a validation set.
  auto selection = [&](const EpochMetrics& m) { return val.empty() ? m.train_mae : m.val_mae; };

  std::vector<nn::Parameter*> trainable = net.parameters();
  if (cfg.freeze_frontend) {
    const auto frozen = net.frontend_parameters();
    std::erase_if(trainable, [&](nn::Parameter* p) { return std::find(frozen.begin(), frozen.end(), p) != frozen.end(); });
  }
  nn::Optimizer opt(cfg.optimizer, cfg.learning_rate, trainable);

  const bool to_disk = !options.out_dir.empty();
  std::ofstream log;
  if (to_disk) {
    fs::create_directories(options.out_dir);
    log = open_log(options.out_dir / "finetune_log.csv", "epoch,train_loss,train_mae,val_mae", {});
  }

  FinetuneResult result;
  auto train_loss_now = [&] {
    double l = 0.0;
    for (const auto i : train) {
      const auto tr = net.forward(data[i].rgb);
      l += loss::euclidean_count_loss<float>(tr.density().v, data[i].target).value;
    }
    return l / static_cast<double>(train.size());
  };
  auto record = [&](EpochMetrics m) {
    require_finite(m.train_loss, "euclidean", opt.steps());
    require_finite(m.val_mae, "validation MAE", opt.steps());
    result.history.push_back(m);
    if (to_disk) {
      log << m.epoch << "," << g17(m.train_loss) << "," << g17(m.train_mae) << "," << g17(m.val_mae) << "\n";
      log.flush();
    }
    const bool better = result.history.size() == 1 || selection(m) < selection(result.history[result.best_epoch]);
    if (better) {
      result.best_epoch = m.epoch;
      json extra = origin;
      extra["epoch"] = m.epoch;
      extra["step"] = opt.steps();
      extra["val_mae"] = m.val_mae;
      extra["train_mae"] = m.train_mae;
      result.best = counting_checkpoint(net, cfg, extra);
    }
    emit(options.progress, "epoch " + std::to_string(m.epoch) + ": train loss " + g17(m.train_loss) +
                               ", train MAE " + g17(m.train_mae) + ", val MAE " + g17(m.val_mae));
  };

  record({0, train_loss_now(), sample_mae(net, data, train), sample_mae(net, data, val)});
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto perm = seeded_order(train.size(), cfg.seed, kEpochStream + static_cast<std::uint64_t>(epoch));
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < train.size(); b0 += bs) {
      const std::size_t b1 = std::min(train.size(), b0 + bs);
      const float scale = 1.0f / static_cast<float>(b1 - b0);
      opt.zero_grad();
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& s = data[train[perm[k]]];
        const auto tr = net.forward(s.rgb);
        const auto l = loss::euclidean_count_loss<float>(tr.density().v, s.target);
        require_finite(l.value, "euclidean", opt.steps() + 1);
        epoch_loss += l.value;
        Tensor d(1, s.rgb.h, s.rgb.w);
        for (std::size_t i = 0; i < d.size(); ++i) d.v[i] = l.grad[i] * scale;
        net.backward(tr, d);
      }
      opt.step();
    }
    record({epoch, epoch_loss / static_cast<double>(train.size()), sample_mae(net, data, train),
            sample_mae(net, data, val)});
  }
  if (to_disk) save_checkpoint(options.out_dir / "stage2.ckpt", result.best);
  return result;
}

void check_stage2(const TrainConfig& cfg, const char* who) {
  cfg.validate();
  if (cfg.stage != 2) throw std::invalid_argument(std::string(who) + ": config stage must be 2");
}

}  // namespace

FinetuneResult finetune(const Checkpoint& stage1, const std::vector<data::Sample>& labeled, const TrainConfig& cfg,
                        const FinetuneOptions& options) {
  check_stage2(cfg, "finetune");
  if (stage1.stage() != 1) {
    throw std::invalid_argument("finetune: expected a stage-1 checkpoint, got stage " + std::to_string(stage1.stage()));
  }
  net::CountingNet net(cfg.igc_blocks);
  net::initialize(net, cfg.seed);
  const auto transferred = net::transfer_first_layer(stage1.with_prefix("frontend."));
  net::assign_parameters(net.frontend_parameters(), transferred);
  const json origin = {{"init", "pretrained"}, {"source_config_hash", stage1.manifest.value("config_hash", "")}};
  return train_counting(net, labeled, cfg, options, origin);
}

FinetuneResult train_from_scratch(const std::vector<data::Sample>& labeled, const TrainConfig& cfg,
                                  const FinetuneOptions& options) {
  check_stage2(cfg, "train_from_scratch");
  net::CountingNet net(cfg.igc_blocks);
  net::initialize(net, cfg.seed);
  return train_counting(net, labeled, cfg, options, json{{"init", "scratch"}});
}

}  // namespace colorcount::pipeline
