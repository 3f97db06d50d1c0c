#include "colorcount/density.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>
#include <stdexcept>
#include <string>

namespace colorcount::density {

static_assert(std::endian::native == std::endian::little, "npy writer assumes a little-endian host");

void HeadAnnotations::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height)) {
      throw std::invalid_argument("annotation point " + std::to_string(i) + " (" + std::to_string(p.x) +
                                  ", " + std::to_string(p.y) + ") lies outside the " +
                                  std::to_string(width) + "x" + std::to_string(height) + " image");
    }
  }
}

std::vector<double> adaptive_sigmas(const std::vector<Point>& points, double beta, int k) {
  if (!(beta > 0.0) || k < 1) throw std::invalid_argument("adaptive kernel needs beta > 0 and k >= 1");
  const std::size_t n = points.size();
  if (n < 2) throw std::invalid_argument("adaptive kernel needs at least two points");
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
  std::vector<double> sigmas(n);
  std::vector<double> d;
  d.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    d.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) d.push_back(std::hypot(points[i].x - points[j].x, points[i].y - points[j].y));
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < kk; ++j) sum += d[j];
    sigmas[i] = beta * sum / static_cast<double>(kk);
  }
  return sigmas;
}

namespace {

void add_kernel(DensityMap& map, const Point& p, double sigma) {
  const double cx = p.x;
  const double cy = p.y;
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  const int px = static_cast<int>(std::floor(cx));
  const int py = static_cast<int>(std::floor(cy));
  const int x0 = std::max(0, px - radius);
  const int x1 = std::min(map.width - 1, px + radius);
  const int y0 = std::max(0, py - radius);
  const int y1 = std::min(map.height - 1, py + radius);

  const int ww = x1 - x0 + 1;
  std::vector<double> wx(ww);
  std::vector<double> wy(y1 - y0 + 1);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const double cutoff = 4.0 * sigma;
  for (int x = x0; x <= x1; ++x) {
    const double dx = x + 0.5 - cx;
    wx[x - x0] = std::abs(dx) <= cutoff ? std::exp(-dx * dx * inv) : 0.0;
  }
  for (int y = y0; y <= y1; ++y) {
    const double dy = y + 0.5 - cy;
    wy[y - y0] = std::abs(dy) <= cutoff ? std::exp(-dy * dy * inv) : 0.0;
  }
  const double sx = std::accumulate(wx.begin(), wx.end(), 0.0);
  const double sy = std::accumulate(wy.begin(), wy.end(), 0.0);
  if (!(sx > 0.0) || !(sy > 0.0)) {
    // Degenerate width: the whole unit of mass goes to the containing pixel.
    map.at(py, px) += 1.0;
    return;
  }
  for (int y = y0; y <= y1; ++y) {
    const double fy = wy[y - y0] / sy;
    if (fy == 0.0) continue;
    for (int x = x0; x <= x1; ++x) map.at(y, x) += fy * (wx[x - x0] / sx);
  }
}

}  // namespace

DensityMap density_from_points(const HeadAnnotations& ann, const KernelMode& mode) {
  if (ann.height < 1 || ann.width < 1) throw std::invalid_argument("density_from_points: empty image size");
  ann.validate();
  DensityMap map(ann.height, ann.width);
  const std::size_t n = ann.points.size();
  std::vector<double> sigmas(n);
  if (const auto* fixed = std::get_if<FixedKernel>(&mode)) {
    if (!(fixed->sigma > 0.0)) throw std::invalid_argument("fixed kernel needs sigma > 0");
    std::fill(sigmas.begin(), sigmas.end(), fixed->sigma);
  } else {
    const auto& adaptive = std::get<AdaptiveKernel>(mode);
    if (!(adaptive.beta > 0.0) || adaptive.k < 1 || !(adaptive.fallback_sigma > 0.0)) {
      throw std::invalid_argument("adaptive kernel needs beta > 0, k >= 1 and a positive fallback sigma");
    }
    if (n < 2) {
      std::fill(sigmas.begin(), sigmas.end(), adaptive.fallback_sigma);
    } else {
      sigmas = adaptive_sigmas(ann.points, adaptive.beta, adaptive.k);
    }
  }
  for (std::size_t i = 0; i < n; ++i) add_kernel(map, ann.points[i], sigmas[i]);
  return map;
}

double count_from_density(const DensityMap& map) {
  return std::accumulate(map.values.begin(), map.values.end(), 0.0);
}

void save_npy(const std::filesystem::path& path, const DensityMap& map) {
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" + std::to_string(map.height) +
                       ", " + std::to_string(map.width) + "), }";
  // Magic (6) + version (2) + header length (2) + header must be a multiple of 64.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(map.values.data()),
            static_cast<std::streamsize>(map.values.size() * sizeof(double)));
}

DensityMap load_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY\x01", 7) != 0) throw std::runtime_error(path.string() + ": not a v1 .npy file");
  std::uint16_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 2);
  std::string header(len, '\0');
  in.read(header.data(), len);
  std::smatch m;
  if (header.find("'<f8'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos ||
      !std::regex_search(header, m, std::regex(R"(\(\s*(\d+)\s*,\s*(\d+)\s*,?\s*\))"))) {
    throw std::runtime_error(path.string() + ": expected a C-ordered 2-D float64 array");
  }
  DensityMap map(std::stoi(m[1].str()), std::stoi(m[2].str()));
  in.read(reinterpret_cast<char*>(map.values.data()), static_cast<std::streamsize>(map.values.size() * sizeof(double)));
  if (!in) throw std::runtime_error(path.string() + ": truncated array data");
  return map;
}

}  // namespace colorcount::density
