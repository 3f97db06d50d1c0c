#include "colorcount/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace colorcount::data {

namespace fs = std::filesystem;
using nlohmann::json;

color::RgbImage load_image(const fs::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (raw.empty()) throw std::runtime_error("cannot decode image " + path.string());
  color::RgbImage img(raw.rows, raw.cols);
  for (int y = 0; y < raw.rows; ++y) {
    const auto* row = raw.ptr<cv::Vec3b>(y);
    for (int x = 0; x < raw.cols; ++x) {
      // OpenCV stores BGR.
      img.at(y, x, 0) = row[x][2] / 255.0;
      img.at(y, x, 1) = row[x][1] / 255.0;
      img.at(y, x, 2) = row[x][0] / 255.0;
    }
  }
  return img;
}

void save_png(const fs::path& path, const color::RgbImage& img) {
  cv::Mat out(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        row[x][2 - c] = static_cast<unsigned char>(std::lround(std::clamp(img.at(y, x, c), 0.0, 1.0) * 255.0));
      }
    }
  }
  if (!cv::imwrite(path.string(), out)) throw std::runtime_error("cannot write " + path.string());
}

color::RgbImage square_resize(const color::RgbImage& img, int size) {
  const int side = std::min(img.height, img.width);
  const int y0 = (img.height - side) / 2;
  const int x0 = (img.width - side) / 2;
  if (side == size && img.height == img.width) return img;
  cv::Mat src(img.height, img.width, CV_64FC3, const_cast<double*>(img.pixels.data()));
  cv::Mat dst;
  cv::resize(src(cv::Rect(x0, y0, side, side)), dst, cv::Size(size, size), 0, 0,
             side > size ? cv::INTER_AREA : cv::INTER_LINEAR);
  color::RgbImage out(size, size);
  std::copy(dst.ptr<double>(0), dst.ptr<double>(0) + out.pixels.size(), out.pixels.begin());
  for (double& v : out.pixels) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::vector<AnnotationRecord> read_annotations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<AnnotationRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      AnnotationRecord r;
      r.image_path = j.at("image_path").get<std::string>();
      r.annotated = j.contains("points");
      for (const auto& p : j.value("points", json::array())) r.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      if (j.contains("group") && !j["group"].is_null()) r.group = j["group"].get<int>();
      if (j.contains("tag") && !j["tag"].is_null()) r.tag = j["tag"].get<std::string>();
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void write_annotations(const fs::path& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) {
    json j;
    j["image_path"] = r.image_path;
    if (r.annotated) {
      json pts = json::array();
      for (const auto& p : r.points) pts.push_back({p.x, p.y});
      j["points"] = std::move(pts);
    }
    if (r.group) j["group"] = *r.group;
    if (r.tag) j["tag"] = *r.tag;
    out << j.dump() << '\n';
  }
}

namespace {

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

void fit_to_size(Sample& s, int image_size) {
  if (image_size <= 0) return;
  const int h = s.image.height;
  const int w = s.image.width;
  const int side = std::min(h, w);
  const double y0 = (h - side) / 2;
  const double x0 = (w - side) / 2;
  const double k = static_cast<double>(image_size) / side;
  s.image = square_resize(s.image, image_size);
  std::vector<density::Point> kept;
  for (const auto& p : s.annotations.points) {
    const double x = (p.x - x0) * k;
    const double y = (p.y - y0) * k;
    if (x >= 0 && x < image_size && y >= 0 && y < image_size) kept.push_back({x, y});
  }
  s.annotations.points = std::move(kept);
  s.annotations.height = image_size;
  s.annotations.width = image_size;
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& dir, int image_size) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
  std::vector<Sample> out;
  const fs::path ann = dir / "annotations.jsonl";
  if (fs::exists(ann)) {
    for (auto& r : read_annotations(ann)) {
      Sample s;
      s.id = r.image_path;
      s.image = load_image(dir / r.image_path);
      s.annotations = {std::move(r.points), s.image.height, s.image.width};
      s.annotations.validate();
      s.annotated = r.annotated;
      s.group = r.group;
      s.tag = r.tag;
      fit_to_size(s, image_size);
      out.push_back(std::move(s));
    }
    return out;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    Sample s;
    s.id = f.filename().string();
    s.image = load_image(f);
    s.annotations = {{}, s.image.height, s.image.width};
    fit_to_size(s, image_size);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> synth_samples(int n, std::uint64_t seed, const density::SynthConfig& config) {
  std::vector<Sample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    auto scene = density::synth_scene(config, seed + static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05d.png", i);
    Sample s;
    s.id = name;
    s.image = std::move(scene.image);
    s.annotations = std::move(scene.annotations);
    s.annotated = true;
    s.group = scene.group;
    s.tag = scene.tag;
    out.push_back(std::move(s));
  }
  return out;
}

void write_synth_dataset(const fs::path& dir, int n, std::uint64_t seed, const density::SynthConfig& config) {
  fs::create_directories(dir / "images");
  std::vector<AnnotationRecord> records;
  for (auto& s : synth_samples(n, seed, config)) {
    const std::string rel = "images/" + s.id;
    save_png(dir / rel, s.image);
    records.push_back({rel, s.annotations.points, s.group, s.tag});
  }
  write_annotations(dir / "annotations.jsonl", records);
}

}  // namespace colorcount::data
