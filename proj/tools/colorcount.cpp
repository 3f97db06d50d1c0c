#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "colorcount/checkpoint.hpp"
#include "colorcount/config.hpp"
#include "colorcount/dataset.hpp"
#include "colorcount/density.hpp"
#include "colorcount/evaluate.hpp"
#include "colorcount/pipeline.hpp"
#include "colorcount/priors.hpp"
#include "colorcount/synth.hpp"

namespace fs = std::filesystem;
using namespace colorcount;

namespace {

void progress(const std::string& line) { std::cerr << line << std::endl; }

pipeline::TrainConfig config_for(const std::string& path, int stage) {
  return path.empty() ? pipeline::TrainConfig::defaults(stage) : pipeline::load_config(path, stage);
}

int run_synth(const std::string& out, int n, std::uint64_t seed, int size) {
  density::SynthConfig cfg;
  cfg.height = size;
  cfg.width = size;
  data::write_synth_dataset(out, n, seed, cfg);
  std::cout << "wrote " << n << " scenes to " << out << "\n";
  return 0;
}

int run_density(const std::string& annotations, const std::string& mode, double beta, int k, double sigma,
                std::string out) {
  const fs::path ann(annotations);
  const fs::path root = ann.parent_path();
  if (out.empty()) out = (root / "density").string();
  fs::create_directories(out);
  density::KernelMode kernel = density::FixedKernel{sigma};
  if (mode == "adaptive") {
    kernel = density::AdaptiveKernel{beta, k, sigma};
  } else if (mode != "fixed") {
    throw std::invalid_argument("unknown kernel mode '" + mode + "' (expected adaptive or fixed)");
  }
  for (const auto& r : data::read_annotations(ann)) {
    const auto img = data::load_image(root / r.image_path);
    const density::HeadAnnotations heads{r.points, img.height, img.width};
    const auto map = density::density_from_points(heads, kernel);
    const auto path = fs::path(out) / (fs::path(r.image_path).stem().string() + ".npy");
    density::save_npy(path, map);
    std::printf("%s %zu %.6f\n", r.image_path.c_str(), r.points.size(), density::count_from_density(map));
  }
  return 0;
}

int run_priors(const std::string& dir, const std::string& method, int m, int n, double ratio, std::string out) {
  const fs::path root(dir);
  const auto samples = data::load_dataset(root);
  if (samples.empty()) throw std::invalid_argument("no images found in " + dir);
  std::vector<data::AnnotationRecord> records;

  if (method == "ranking") {
    if (out.empty()) throw std::invalid_argument("--out <dir> is required for ranking priors");
    fs::create_directories(out);
    for (const auto& s : samples) {
      const auto seq = priors::ranking_crops(s.image, n, ratio);
      for (std::size_t i = 0; i < seq.crops.size(); ++i) {
        const auto& crop = seq.crops[i];
        const std::string name = fs::path(s.id).stem().string() + "_crop" + std::to_string(i) + ".png";
        data::save_png(fs::path(out) / name, crop.image);
        data::AnnotationRecord r;
        r.image_path = name;
        r.annotated = s.annotated;
        for (const auto& p : s.annotations.points) {
          if (crop.rect.contains(p.x, p.y)) r.points.push_back({p.x - crop.rect.x0, p.y - crop.rect.y0});
        }
        r.group = priors::ranking_group(static_cast<int>(i), n, m);
        records.push_back(std::move(r));
      }
    }
    data::write_annotations(fs::path(out) / "annotations.jsonl", records);
    std::cout << "wrote " << records.size() << " ranked crops to " << out << "\n";
    return 0;
  }

  std::vector<int> groups;
  if (method == "cluster") {
    std::vector<color::RgbImage> images;
    for (const auto& s : samples) images.push_back(s.image);
    groups = priors::cluster_groups(images, m);
  } else if (method == "keyword") {
    for (const auto& s : samples) {
      if (!s.tag) throw std::invalid_argument("sample " + s.id + " has no tag for keyword priors");
      groups.push_back(priors::keyword_groups(*s.tag).group);
    }
  } else {
    throw std::invalid_argument("unknown prior method '" + method + "' (expected ranking, cluster or keyword)");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    data::AnnotationRecord r;
    r.image_path = s.id;
    r.points = s.annotations.points;
    r.annotated = s.annotated;
    r.group = groups[i];
    r.tag = s.tag;
    records.push_back(std::move(r));
  }
  const fs::path target = out.empty() ? root / "annotations.jsonl" : fs::path(out);
  data::write_annotations(target, records);
  std::cout << "wrote " << records.size() << " group labels to " << target.string() << "\n";
  return 0;
}

int run_pretrain(const std::string& data_dir, const std::string& config, const std::string& out,
                 const std::string& resume) {
  const auto cfg = config_for(config, 1);
  const auto corpus = data::load_dataset(data_dir, cfg.image_size);
  pipeline::PretrainOptions opts;
  opts.out_dir = out;
  opts.progress = progress;
  if (!resume.empty()) opts.resume_from = resume;
  const auto result = pipeline::pretrain(corpus, cfg, opts);
  std::cout << "stage-1 checkpoint: " << (fs::path(out) / "stage1.ckpt").string() << " (" << result.steps
            << " steps)\n";
  return 0;
}

struct Stage2Args {
  std::string ckpt;
  std::string data;
  std::string config;
  std::string out;
  std::optional<double> fraction;
  std::optional<std::uint64_t> seed;
  bool freeze_frontend = false;
};

int run_stage2(const Stage2Args& a, bool pretrained) {
  auto cfg = config_for(a.config, 2);
  if (a.fraction) cfg.subset_fraction = *a.fraction;
  if (a.seed) cfg.seed = *a.seed;
  if (a.freeze_frontend) cfg.freeze_frontend = true;
  cfg.validate();
  const auto corpus = data::load_dataset(a.data, cfg.image_size);
  const auto subset = pipeline::sample_subset(corpus, cfg.subset_fraction, cfg.seed);
  pipeline::FinetuneOptions opts;
  opts.out_dir = a.out;
  opts.progress = progress;
  const auto result = pretrained ? pipeline::finetune(pipeline::load_checkpoint(a.ckpt), subset, cfg, opts)
                                 : pipeline::train_from_scratch(subset, cfg, opts);
  std::cout << "trained on " << subset.size() << " labeled images; best epoch " << result.best_epoch
            << ", checkpoint " << (fs::path(a.out) / "stage2.ckpt").string() << "\n";
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& out) {
  const auto ckpt = pipeline::load_checkpoint(ckpt_path);
  const int size = ckpt.manifest.at("config").value("image_size", 128);
  const auto test = data::load_dataset(data_dir, size);
  const auto report = eval::evaluate_model(ckpt, test);
  if (!out.empty()) eval::write_report_csv(out, report);
  std::printf("images %d  MAE %.4f  MSE %.4f\n", report.n_images, report.mae, report.mse);
  return 0;
}

int run_render(const std::string& ckpt_path, const std::string& images, const std::string& out) {
  const auto ckpt = pipeline::load_checkpoint(ckpt_path);
  const int size = ckpt.manifest.at("config").value("image_size", 128);
  const auto files = eval::render_artifacts(ckpt, data::load_dataset(images, size), out);
  std::cout << "wrote " << files.size() << " panels to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"colorcount: colorization pretraining and density-map crowd counting"};
  app.require_subcommand(1);

  std::string out;
  std::uint64_t seed = 7;
  int n = 300;
  int size = 128;
  auto* synth = app.add_subcommand("synth", "Write a synthetic crowd dataset");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--n", n, "Number of scenes")->capture_default_str();
  synth->add_option("--seed", seed, "First scene seed")->capture_default_str();
  synth->add_option("--size", size, "Scene side in pixels")->capture_default_str();

  std::string annotations;
  std::string mode = "adaptive";
  double beta = 0.3;
  int k = 3;
  double sigma = 4.0;
  auto* dens = app.add_subcommand("density", "Ground-truth density maps (.npy) from an annotations file");
  dens->add_option("--annotations", annotations, "annotations.jsonl")->required()->check(CLI::ExistingFile);
  dens->add_option("--mode", mode, "adaptive or fixed")->capture_default_str();
  dens->add_option("--beta", beta, "Adaptive kernel scale")->capture_default_str();
  dens->add_option("--k", k, "Adaptive kernel neighbours")->capture_default_str();
  dens->add_option("--sigma", sigma, "Fixed sigma, or fallback sigma in adaptive mode")->capture_default_str();
  dens->add_option("--out", out, "Output directory (default: <annotations dir>/density)");

  std::string data_dir;
  std::string method;
  int m = 3;
  int crops = 3;
  double ratio = 0.75;
  auto* pri = app.add_subcommand("priors", "Attach group priors to a dataset");
  pri->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  pri->add_option("--method", method, "ranking, cluster or keyword")->required();
  pri->add_option("--m", m, "Number of groups")->capture_default_str();
  pri->add_option("--n", crops, "Ranking crops per image")->capture_default_str();
  pri->add_option("--ratio", ratio, "Ranking crop side ratio")->capture_default_str();
  pri->add_option("--out", out, "Crop directory (ranking) or annotations file (default: in place)");

  std::string config;
  std::string resume;
  auto* pre = app.add_subcommand("pretrain", "Stage 1: colorization pretraining with group priors");
  pre->add_option("--data", data_dir, "Unlabeled dataset directory")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--config", config, "Flat JSON config");
  pre->add_option("--out", out, "Run directory")->required();
  pre->add_option("--resume", resume, "Resume from a stage-1 epoch checkpoint");

  Stage2Args s2;
  auto add_stage2 = [&](CLI::App* cmd) {
    cmd->add_option("--data", s2.data, "Labeled dataset directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--config", s2.config, "Flat JSON config");
    cmd->add_option("--out", s2.out, "Run directory")->required();
    cmd->add_option("--fraction", s2.fraction, "Labeled subset fraction");
    cmd->add_option("--seed", s2.seed, "Seed for subset, split and initialization");
    cmd->add_flag("--freeze-frontend", s2.freeze_frontend, "Keep the frontend fixed");
  };
  auto* fin = app.add_subcommand("finetune", "Stage 2 from a stage-1 checkpoint");
  fin->add_option("--ckpt", s2.ckpt, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);
  add_stage2(fin);
  auto* scr = app.add_subcommand("scratch", "Stage 2 from a random initialization");
  add_stage2(scr);

  std::string ckpt;
  auto* ev = app.add_subcommand("eval", "MAE / MSE of a stage-2 checkpoint");
  ev->add_option("--ckpt", ckpt, "Stage-2 checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir, "Annotated test set")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", out, "Report CSV");

  auto* ren = app.add_subcommand("render", "Colorization or density panels as PNG");
  ren->add_option("--ckpt", ckpt, "Stage-1 or stage-2 checkpoint")->required()->check(CLI::ExistingFile);
  ren->add_option("--images", data_dir, "Image directory")->required()->check(CLI::ExistingDirectory);
  ren->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return run_synth(out, n, seed, size);
    if (*dens) return run_density(annotations, mode, beta, k, sigma, out);
    if (*pri) return run_priors(data_dir, method, m, crops, ratio, out);
    if (*pre) return run_pretrain(data_dir, config, out, resume);
    if (*fin) return run_stage2(s2, true);
    if (*scr) return run_stage2(s2, false);
    if (*ev) return run_eval(ckpt, data_dir, out);
    if (*ren) return run_render(ckpt, data_dir, out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
