#include "criteria.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "colorcount/color_space.hpp"
#include "colorcount/density.hpp"
#include "colorcount/evaluate.hpp"
#include "colorcount/losses.hpp"
#include "colorcount/networks.hpp"
#include "colorcount/nn/layers.hpp"
#include "colorcount/pipeline.hpp"
#include "colorcount/quantization.hpp"
#include "support.hpp"

namespace acceptance {

using namespace colorcount;
using testing::numeric_gradient;
using testing::random_vector;
using testing::relative_error;

namespace {

constexpr double kFdStep = 1e-4;

std::string format(const char* fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, a, b, c);
  return buf;
}

std::vector<double> softmax_rows(const std::vector<double>& logits, int q) {
  std::vector<double> p(logits.size());
  for (std::size_t r = 0; r < logits.size() / q; ++r) {
    double mx = -INFINITY;
    for (int j = 0; j < q; ++j) mx = std::max(mx, logits[r * q + j]);
    double s = 0.0;
    for (int j = 0; j < q; ++j) s += p[r * q + j] = std::exp(logits[r * q + j] - mx);
    for (int j = 0; j < q; ++j) p[r * q + j] /= s;
  }
  return p;
}

std::vector<double> random_distributions(int rows, int q, std::mt19937_64& rng, bool sparse) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> d(static_cast<std::size_t>(rows) * q);
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < q; ++j) {
      double v = u(rng);
      if (sparse && u(rng) < 0.5) v = 0.0;
      s += d[r * q + j] = v;
    }
    if (s == 0.0) s += d[r * q] = 1.0;
    for (int j = 0; j < q; ++j) d[r * q + j] /= s;
  }
  return d;
}

template <typename F>
double worst_of(int n, F&& instance) {
  double worst = 0.0;
  for (int i = 0; i < n; ++i) worst = std::max(worst, instance(i));
  return worst;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome gradient_suite(int instances) {
  std::mt19937_64 rng(0x9a7d);
  std::uniform_int_distribution<int> small(1, 4);
  std::vector<std::pair<std::string, double>> worst;

  worst.emplace_back("colorization", worst_of(instances, [&](int) {
    const int pixels = small(rng) * small(rng);
    const int q = std::uniform_int_distribution<int>(2, 16)(rng);
    const auto target = random_distributions(pixels, q, rng, true);
    const auto v = random_vector(pixels, rng, 0.5, 2.0);
    auto f = [&](const std::vector<double>& logits) {
      const auto p = softmax_rows(logits, q);
      return loss::colorization_loss<double>(p, target, v, q).value;
    };
    const auto logits = random_vector(static_cast<std::size_t>(pixels) * q, rng, -2.0, 2.0);
    const auto analytic = loss::colorization_loss<double>(softmax_rows(logits, q), target, v, q).grad;
    return relative_error(analytic, numeric_gradient(f, logits, kFdStep));
  }));

  worst.emplace_back("gan", worst_of(instances, [&](int) {
    const std::size_t nr = small(rng);
    const std::size_t nf = small(rng);
    auto x = random_vector(nr + nf, rng, 0.05, 0.95);
    auto split = [&](const std::vector<double>& all) {
      return std::pair<std::span<const double>, std::span<const double>>{{all.data(), nr}, {all.data() + nr, nf}};
    };
    auto fd = [&](const std::vector<double>& all) {
      auto [r, fk] = split(all);
      return loss::gan_losses<double>(r, fk).discriminator;
    };
    auto fg = [&](const std::vector<double>& all) {
      auto [r, fk] = split(all);
      return loss::gan_losses<double>(r, fk).generator;
    };
    auto [r, fk] = split(x);
    const auto res = loss::gan_losses<double>(r, fk);
    std::vector<double> d_disc(res.disc_grad_real.begin(), res.disc_grad_real.end());
    d_disc.insert(d_disc.end(), res.disc_grad_fake.begin(), res.disc_grad_fake.end());
    std::vector<double> d_gen(nr, 0.0);
    d_gen.insert(d_gen.end(), res.gen_grad_fake.begin(), res.gen_grad_fake.end());
    return std::max(relative_error(d_disc, numeric_gradient(fd, x, kFdStep)),
                    relative_error(d_gen, numeric_gradient(fg, x, kFdStep)));
  }));

  worst.emplace_back("cycle", worst_of(instances, [&](int) {
    const std::size_t nx = small(rng) * small(rng);
    const std::size_t nz = 2 * small(rng);
    const auto x = random_vector(nx, rng);
    const auto z = random_vector(nz, rng);
    std::uniform_real_distribution<double> gap(0.01, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> rec(nx + nz);
    for (std::size_t i = 0; i < nx + nz; ++i) rec[i] = (i < nx ? x[i] : z[i - nx]) + (sign(rng) ? 1 : -1) * gap(rng);
    auto f = [&](const std::vector<double>& r) {
      return loss::cycle_loss<double>(x, {r.data(), nx}, z, {r.data() + nx, nz}).value;
    };
    const auto res = loss::cycle_loss<double>(x, {rec.data(), nx}, z, {rec.data() + nx, nz});
    std::vector<double> analytic = res.grad_x_rec;
    analytic.insert(analytic.end(), res.grad_z_rec.begin(), res.grad_z_rec.end());
    return relative_error(analytic, numeric_gradient(f, rec, kFdStep));
  }));

  worst.emplace_back("texture", worst_of(instances, [&](int) {
    const int n = small(rng);
    const int m = small(rng) * small(rng);
    const auto target = random_vector(static_cast<std::size_t>(n) * m, rng);
    auto f = [&](const std::vector<double>& pred) {
      return loss::texture_loss<double>({n, m, pred}, {n, m, target}).value;
    };
    const auto pred = random_vector(static_cast<std::size_t>(n) * m, rng);
    const auto analytic = loss::texture_loss<double>({n, m, pred}, {n, m, target}).grad;
    return relative_error(analytic, numeric_gradient(f, pred, kFdStep));
  }));

  worst.emplace_back("classification", worst_of(instances, [&](int) {
    const int batch = small(rng);
    const int m = std::uniform_int_distribution<int>(2, 5)(rng);
    std::vector<int> labels(batch);
    for (auto& l : labels) l = std::uniform_int_distribution<int>(1, m)(rng);
    auto f = [&](const std::vector<double>& z) { return loss::classification_loss<double>(z, labels, m).value; };
    const auto logits = random_vector(static_cast<std::size_t>(batch) * m, rng, -3.0, 3.0);
    const auto analytic = loss::classification_loss<double>(logits, labels, m).grad;
    return relative_error(analytic, numeric_gradient(f, logits, kFdStep));
  }));

  worst.emplace_back("total", worst_of(instances, [&](int) {
    const auto w = random_vector(4, rng, 0.0, 2.0);
    const loss::LossWeights lw{w[0], w[1], w[2], w[3]};
    auto f = [&](const std::vector<double>& p) {
      return loss::total_pretrain_loss({p[0], p[1], p[2], p[3], p[4], p[5]}, lw);
    };
    const auto g = loss::total_pretrain_gradient(lw);
    return relative_error({g.begin(), g.end()}, numeric_gradient(f, random_vector(6, rng, 0.0, 5.0), kFdStep));
  }));

  worst.emplace_back("euclidean", worst_of(instances, [&](int) {
    const std::size_t n = small(rng) * small(rng);
    const auto target = random_vector(n, rng, 0.0, 1.0);
    auto f = [&](const std::vector<double>& p) { return loss::euclidean_count_loss<double>(p, target).value; };
    const auto pred = random_vector(n, rng, 0.0, 1.0);
    const auto analytic = loss::euclidean_count_loss<double>(pred, target).grad;
    return relative_error(analytic, numeric_gradient(f, pred, kFdStep));
  }));

  Outcome out{true, {}};
  for (const auto& [name, err] : worst) {
    out.pass = out.pass && err < 1e-4;
    out.detail += (out.detail.empty() ? "" : " ") + name + "=" + format("%.1e", err);
  }
  out.detail = std::to_string(instances) + " instances each, worst relative error: " + out.detail;
  return out;
}

Outcome oracle_equivalence(int instances) {
  std::mt19937_64 rng(0x0c1e);
  std::uniform_int_distribution<int> side(1, 8);
  double worst_cc = 0.0;
  double worst_tex = 0.0;
  double worst_eval = 0.0;
  for (int it = 0; it < instances; ++it) {
    const int h = side(rng);
    const int w = side(rng);
    const int q = std::uniform_int_distribution<int>(2, 16)(rng);
    const auto pred = random_distributions(h * w, q, rng, false);
    const auto target = random_distributions(h * w, q, rng, true);
    const auto v = random_vector(static_cast<std::size_t>(h) * w, rng, 0.1, 3.0);
    double naive = 0.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int k = 0; k < q; ++k) {
          const double z = target[(y * w + x) * q + k];
          if (z > 0) naive -= v[y * w + x] * z * std::log(pred[(y * w + x) * q + k]);
        }
      }
    }
    worst_cc = std::max(worst_cc, std::abs(naive - loss::colorization_loss<double>(pred, target, v, q).value));

    const int n = side(rng);
    const int m = h * w;
    const auto f = random_vector(static_cast<std::size_t>(n) * m, rng);
    const auto a = random_vector(static_cast<std::size_t>(n) * m, rng);
    const auto g = loss::gram<double>({n, m, f});
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double gf = 0.0;
        double ga = 0.0;
        for (int k = 0; k < m; ++k) {
          gf += f[i * m + k] * f[j * m + k];
          ga += a[i * m + k] * a[j * m + k];
        }
        worst_tex = std::max(worst_tex, std::abs(gf - g[i * n + j]));
        sq += (gf - ga) * (gf - ga);
      }
    }
    const double tex = sq / (4.0 * n * n * static_cast<double>(m) * m);
    worst_tex = std::max(worst_tex, std::abs(tex - loss::texture_loss<double>({n, m, f}, {n, m, a}).value));

    const auto truth = random_vector(h * w, rng, 0.0, 200.0);
    const auto est = random_vector(h * w, rng, 0.0, 200.0);
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      abs_sum += std::abs(truth[i] - est[i]);
      sq_sum += (truth[i] - est[i]) * (truth[i] - est[i]);
    }
    const auto report = eval::mae_mse(truth, est);
    worst_eval = std::max({worst_eval, std::abs(report.mae - abs_sum / truth.size()),
                           std::abs(report.mse - std::sqrt(sq_sum / truth.size()))});
  }
  const bool pass = worst_cc <= 1e-8 && worst_tex <= 1e-8 && worst_eval <= 1e-8;
  return {pass, std::to_string(instances) +
                    format(" instances, max |diff| colorization=%.1e gram/texture=%.1e mae_mse=%.1e", worst_cc,
                           worst_tex, worst_eval)};
}

Outcome color_round_trip() {
  std::mt19937_64 rng(0xc0102);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_rgb = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::array<double, 3> rgb{u(rng), u(rng), u(rng)};
    const auto back = color::lab_to_rgb(color::rgb_to_lab(rgb));
    for (int c = 0; c < 3; ++c) worst_rgb = std::max(worst_rgb, std::abs(back[c] - rgb[c]));
  }

  const auto cb = quant::build_codebook(10.0, 100000, 0);
  std::vector<double> chroma;
  for (int i = 0; i < 1000; ++i) {
    const auto lab = color::rgb_to_lab({u(rng), u(rng), u(rng)});
    chroma.push_back(lab.a);
    chroma.push_back(lab.b);
  }
  const auto dist = quant::soft_encode(chroma, 1, 1000, cb, 5, 5.0);
  const auto decoded = quant::decode_annealed_mean(dist, cb, 0.38);
  double worst_ab = 0.0;
  for (int i = 0; i < 1000; ++i) {
    worst_ab = std::max(worst_ab, std::hypot(decoded[2 * i] - chroma[2 * i], decoded[2 * i + 1] - chroma[2 * i + 1]));
  }
  return {worst_rgb < 1e-3 && worst_ab <= cb.grid_spacing,
          format("rgb->lab->rgb max error %.2e; quantized chroma max error %.3f (grid spacing %.0f)", worst_rgb,
                 worst_ab, cb.grid_spacing)};
}

Outcome density_integrity() {
  std::mt19937_64 rng(0xde75);
  std::uniform_int_distribution<int> size(8, 96);
  std::uniform_int_distribution<int> count(0, 50);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int it = 0; it < 100; ++it) {
    density::HeadAnnotations ann;
    ann.height = size(rng);
    ann.width = size(rng);
    const int n = count(rng);
    for (int i = 0; i < n; ++i) ann.points.push_back({u(rng) * ann.width, u(rng) * ann.height});
    const density::KernelMode mode = it % 2 == 0 ? density::KernelMode{density::AdaptiveKernel{}}
                                                 : density::KernelMode{density::FixedKernel{4.0}};
    worst = std::max(worst, std::abs(density::count_from_density(density::density_from_points(ann, mode)) - n));
  }
  const auto sig = density::adaptive_sigmas({{10.0, 10.0}, {20.0, 10.0}, {30.0, 10.0}}, 0.3, 2);
  const bool exact = sig[1] == 3.0;
  return {worst <= 1e-5 && exact, format("100 sets, max |sum - count| %.1e; collinear sigma_mid = %.17g", worst, sig[1])};
}

Outcome igc_block() {
  std::mt19937_64 rng(0x16c);
  using nn::IgcBlock;
  using nn::IgcBlockSpec;

  // Degenerate partitions against direct convolutions.
  double worst_dense = 0.0;
  for (int dilation : {1, 2}) {
    IgcBlock block("igc", IgcBlockSpec{1, 1, 1, 3, dilation});
    nn::init_fan_in(block.parameters(), rng);
    const auto x = testing::random_tensor(1, 9, 11, rng);
    const auto& wp = block.primary().weight().value;
    const auto& ws = block.secondary().weight().value;
    auto ref = testing::naive_conv(testing::naive_conv(x, wp, nullptr, 1, 3, 1, dilation, 1), ws, nullptr, 1, 1, 1, 1, 1);
    ref += x;
    worst_dense = std::max(worst_dense, testing::max_abs_diff(block.forward(x).v, ref.v));
  }

  // Zero one primary partition's input with identity secondary weights; the
  // zeroed shuffled channels must be exactly those sourced from it, one per
  // secondary partition.
  bool sourcing = true;
  const int L = 4;
  const int M = 3;
  IgcBlock block("igc", IgcBlockSpec{L * M, L, M, 3, 1});
  nn::init_fan_in(block.parameters(), rng);
  auto& ws = block.secondary().weight().value;
  std::fill(ws.begin(), ws.end(), 0.0f);
  for (int o = 0; o < L * M; ++o) ws[static_cast<std::size_t>(o) * L + (o % L)] = 1.0f;
  for (int p = 0; p < L; ++p) {
    auto x = testing::random_tensor(L * M, 6, 6, rng);
    for (int j = 0; j < M; ++j) std::fill(x.channel(p * M + j).begin(), x.channel(p * M + j).end(), 0.0f);
    const auto s = block.stages(x);
    std::vector<int> zero;
    for (int c = 0; c < L * M; ++c) {
      const auto ch = s.shuffled.channel(c);
      if (std::all_of(ch.begin(), ch.end(), [](float v) { return v == 0.0f; })) zero.push_back(c);
    }
    std::vector<int> expected;
    for (int j = 0; j < M; ++j) expected.push_back(block.shuffle().destination(p * M + j, L * M));
    std::sort(expected.begin(), expected.end());
    sourcing = sourcing && zero == expected && s.secondary.v == s.shuffled.v;
    std::vector<int> per_secondary(M, 0);
    for (int c : zero) ++per_secondary[c / L];
    sourcing = sourcing && std::all_of(per_secondary.begin(), per_secondary.end(), [](int k) { return k == 1; });
  }

  const IgcBlockSpec spec{64, 8, 8, 3, 2};
  const auto igc_params = spec.parameter_count();
  const auto dense_params = spec.dense_parameter_count();
  const bool pass = worst_dense <= 1e-6 && sourcing && igc_params == 8 * 64 * 9 + 8 * 64 &&
                    dense_params == 64 * 64 * 9 + 64 * 64 && igc_params < dense_params;
  return {pass, format("L=M=1 max diff %.1e; sourcing ", worst_dense) + (sourcing ? "ok" : "violated") +
                    "; params " + std::to_string(igc_params) + " vs dense " + std::to_string(dense_params)};
}

Outcome determinism_and_persistence() {
  density::SynthConfig sc;
  sc.height = 32;
  sc.width = 32;
  const auto corpus = data::synth_samples(8, 300, sc);
  auto cfg1 = pipeline::TrainConfig::defaults(1);
  cfg1.image_size = 32;
  cfg1.batch_size = 4;
  cfg1.epochs = 2;
  cfg1.gamut_samples = 20000;

  const auto dir_a = testing::scratch_dir("determinism_a");
  const auto dir_b = testing::scratch_dir("determinism_b");
  const auto ra = pipeline::pretrain(corpus, cfg1, {.out_dir = dir_a, .resume_from = {}, .progress = {}});
  const auto rb = pipeline::pretrain(corpus, cfg1, {.out_dir = dir_b, .resume_from = {}, .progress = {}});
  const bool log1 = slurp(dir_a / "pretrain_log.csv") == slurp(dir_b / "pretrain_log.csv") &&
                    slurp(dir_a / "pretrain_probe.csv") == slurp(dir_b / "pretrain_probe.csv");

  auto cfg2 = pipeline::TrainConfig::defaults(2);
  cfg2.image_size = 32;
  cfg2.epochs = 2;
  const auto fa = pipeline::finetune(ra.checkpoint, corpus, cfg2, {.out_dir = dir_a, .progress = {}});
  const auto fb = pipeline::finetune(rb.checkpoint, corpus, cfg2, {.out_dir = dir_b, .progress = {}});
  const bool log2 = slurp(dir_a / "finetune_log.csv") == slurp(dir_b / "finetune_log.csv");

  const auto g1 = pipeline::load_stage1(ra.checkpoint);
  const auto g2 = pipeline::load_stage1(pipeline::load_checkpoint(dir_a / "stage1.ckpt"));
  const auto c1 = pipeline::load_counting_net(fa.best);
  const auto c2 = pipeline::load_counting_net(pipeline::load_checkpoint(dir_a / "stage2.ckpt"));
  bool same = true;
  for (const auto& s : corpus) {
    const auto lab = color::rgb_to_lab(s.image);
    same = same && net::colorize_forward(g1.g, lab.lightness, 32, 32).probs ==
                       net::colorize_forward(g2.g, lab.lightness, 32, 32).probs;
    same = same && net::classifier_forward(g1.g, lab.lightness, 32, 32) ==
                       net::classifier_forward(g2.g, lab.lightness, 32, 32);
    same = same && net::count_forward(c1, s.image).values == net::count_forward(c2, s.image).values;
  }
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  return {log1 && log2 && same, std::string("stage-1 logs ") + (log1 ? "identical" : "differ") + ", stage-2 logs " +
                                    (log2 ? "identical" : "differ") + ", reloaded outputs " +
                                    (same ? "identical" : "differ")};
}

ExperimentResult run_experiment(const ExperimentSetup& setup, bool verbose) {
  const auto t0 = std::chrono::steady_clock::now();
  density::SynthConfig sc;
  sc.height = setup.image_size;
  sc.width = setup.image_size;
  auto unlabeled = data::synth_samples(setup.unlabeled, 1000, sc);
  for (auto& s : unlabeled) s.group.reset();  // group priors come from the keyword tags
  const auto labeled = data::synth_samples(setup.labeled, 5000, sc);
  const auto test = data::synth_samples(setup.test, 9000, sc);

  pipeline::ProgressFn progress;
  if (verbose) progress = [](const std::string& line) { std::fprintf(stderr, "  %s\n", line.c_str()); };

  auto cfg1 = pipeline::TrainConfig::defaults(1);
  cfg1.image_size = setup.image_size;
  cfg1.epochs = setup.pretrain_epochs;
  cfg1.learning_rate = setup.pretrain_learning_rate;
  cfg1.batch_size = setup.pretrain_batch;
  cfg1.weights.lambda = setup.lambda;
  const auto stage1 = pipeline::pretrain(unlabeled, cfg1, {.out_dir = {}, .resume_from = {}, .progress = progress});

  ExperimentResult r;
  r.group_accuracy = pipeline::group_accuracy(pipeline::load_stage1(stage1.checkpoint).g, test);
  if (verbose) std::fprintf(stderr, "  held-out group accuracy %.3f\n", r.group_accuracy);

  for (const auto seed : setup.seeds) {
    auto cfg2 = pipeline::TrainConfig::defaults(2);
    cfg2.image_size = setup.image_size;
    cfg2.epochs = setup.finetune_epochs;
    cfg2.learning_rate = setup.finetune_learning_rate;
    cfg2.seed = seed;
    const auto ten = pipeline::sample_subset(labeled, 0.1, seed);
    const auto half = pipeline::sample_subset(labeled, 0.5, seed);
    r.pretrained_10.push_back(eval::evaluate_model(pipeline::finetune(stage1.checkpoint, ten, cfg2).best, test).mae);
    r.scratch_10.push_back(eval::evaluate_model(pipeline::train_from_scratch(ten, cfg2).best, test).mae);
    r.pretrained_50.push_back(eval::evaluate_model(pipeline::finetune(stage1.checkpoint, half, cfg2).best, test).mae);
    if (verbose) {
      std::fprintf(stderr, "  seed %llu: test MAE pretrained %.2f, scratch %.2f, pretrained 50%% %.2f\n",
                   static_cast<unsigned long long>(seed), r.pretrained_10.back(), r.scratch_10.back(),
                   r.pretrained_50.back());
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Outcome central_claim(const ExperimentResult& r) {
  const double pre = median(r.pretrained_10);
  const double scratch = median(r.scratch_10);
  const double half = median(r.pretrained_50);
  const double gain = (scratch - pre) / scratch;
  const bool pass = pre < scratch && gain >= 0.10 && half < pre;
  return {pass, format("median test MAE pretrained %.2f vs scratch %.2f (%+.1f%%); ", pre, scratch, 100.0 * gain) +
                    format("pretrained 50%% labels %.2f; runtime %.0f s", half, r.seconds)};
}

Outcome classification_sanity(const ExperimentResult& r) {
  return {r.group_accuracy >= 0.80, format("held-out 3-way group accuracy %.3f (threshold 0.80)", r.group_accuracy)};
}

}  // namespace acceptance
