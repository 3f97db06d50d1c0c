#include "colorcount/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "colorcount/networks.hpp"
#include "colorcount/pipeline.hpp"

namespace colorcount::eval {

namespace fs = std::filesystem;

MetricsReport mae_mse(std::span<const double> true_counts, std::span<const double> pred_counts) {
  if (true_counts.empty()) throw std::invalid_argument("mae_mse: no images");
  if (true_counts.size() != pred_counts.size()) {
    throw std::invalid_argument("mae_mse: " + std::to_string(true_counts.size()) + " true counts vs " +
                                std::to_string(pred_counts.size()) + " predictions");
  }
  MetricsReport r;
  r.n_images = static_cast<int>(true_counts.size());
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < true_counts.size(); ++i) {
    const double e = true_counts[i] - pred_counts[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    r.per_image.push_back({std::to_string(i), true_counts[i], pred_counts[i]});
  }
  const double n = static_cast<double>(true_counts.size());
  r.mae = abs_sum / n;
  r.mse = std::sqrt(sq_sum / n);
  return r;
}

MetricsReport evaluate_model(const pipeline::Checkpoint& ckpt, const std::vector<data::Sample>& test_set) {
  if (ckpt.stage() != 2) {
    throw std::invalid_argument("evaluate_model: expected a stage-2 checkpoint, got stage " +
                                std::to_string(ckpt.stage()));
  }
  const auto net = pipeline::load_counting_net(ckpt);
  std::vector<double> truth;
  std::vector<double> pred;
  for (const auto& s : test_set) {
    if (!s.annotated) throw std::invalid_argument("evaluate_model: sample " + s.id + " has no head annotations");
    truth.push_back(static_cast<double>(s.annotations.points.size()));
    pred.push_back(density::count_from_density(net::count_forward(net, s.image)));
  }
  auto report = mae_mse(truth, pred);
  for (std::size_t i = 0; i < test_set.size(); ++i) report.per_image[i].id = test_set[i].id;
  return report;
}

void write_report_csv(const fs::path& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  auto g17 = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "# MSE is the root of the mean squared error (benchmark convention)\n";
  out << "id,true_count,pred_count\n";
  for (const auto& r : report.per_image) out << r.id << "," << g17(r.true_count) << "," << g17(r.pred_count) << "\n";
  out << "MAE,," << g17(report.mae) << "\n";
  out << "MSE,," << g17(report.mse) << "\n";
}

color::RgbImage colormap_hot(const density::DensityMap& map) {
  color::RgbImage img(map.height, map.width);
  const double mx = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const double t = mx > 0.0 ? std::clamp(map.values[i] / mx, 0.0, 1.0) : 0.0;
    img.pixels[3 * i] = std::clamp(3.0 * t, 0.0, 1.0);
    img.pixels[3 * i + 1] = std::clamp(3.0 * t - 1.0, 0.0, 1.0);
    img.pixels[3 * i + 2] = std::clamp(3.0 * t - 2.0, 0.0, 1.0);
  }
  return img;
}

std::vector<fs::path> render_artifacts(const pipeline::Checkpoint& ckpt, const std::vector<data::Sample>& images,
                                       const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  auto save = [&](const std::string& id, const char* panel, const color::RgbImage& img) {
    const auto path = out_dir / (fs::path(id).stem().string() + "_" + panel + ".png");
    data::save_png(path, img);
    written.push_back(path);
  };

  if (ckpt.stage() == 1) {
    const auto model = pipeline::load_stage1(ckpt);
    const double temperature = ckpt.manifest.at("config").value("temperature", 0.38);
    for (const auto& s : images) {
      const auto lab = color::rgb_to_lab(s.image);
      color::LabImage gray = lab;
      std::fill(gray.chroma.begin(), gray.chroma.end(), 0.0);
      color::LabImage true_ab = lab;
      std::fill(true_ab.lightness.begin(), true_ab.lightness.end(), 50.0);
      color::LabImage predicted = lab;
      const auto dist = net::colorize_forward(model.g, lab.lightness, lab.height, lab.width);
      predicted.chroma = quant::decode_annealed_mean(dist, model.quant.codebook, temperature);
      save(s.id, "original", s.image);
      save(s.id, "lightness", color::lab_to_rgb(gray));
      save(s.id, "true_ab", color::lab_to_rgb(true_ab));
      save(s.id, "predicted", color::lab_to_rgb(predicted));
    }
  } else if (ckpt.stage() == 2) {
    const auto net = pipeline::load_counting_net(ckpt);
    const auto cfg = pipeline::TrainConfig::from_json(ckpt.manifest.at("config"), 2);
    for (const auto& s : images) {
      density::DensityMap truth(s.image.height, s.image.width);
      if (s.annotated) truth = pipeline::target_density(s, cfg);
      save(s.id, "original", s.image);
      save(s.id, "gt_density", colormap_hot(truth));
      save(s.id, "pred_density", colormap_hot(net::count_forward(net, s.image)));
    }
  } else {
    throw std::invalid_argument("render_artifacts: checkpoint has unknown stage " + std::to_string(ckpt.stage()));
  }
  return written;
}

}  // namespace colorcount::eval
