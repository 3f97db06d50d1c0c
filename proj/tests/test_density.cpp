#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "colorcount/density.hpp"
#include "criteria.hpp"
#include "support.hpp"

using namespace colorcount::density;

TEST_CASE("acceptance checks for density integrity") {
  const auto out = acceptance::density_integrity();
  INFO(out.detail);
  CHECK(out.pass);
}

TEST_CASE("empty annotations give a zero map") {
  const auto map = density_from_points({{}, 12, 9}, AdaptiveKernel{});
  CHECK(map.height == 12);
  CHECK(map.width == 9);
  for (const double v : map.values) CHECK(v == 0.0);
}

TEST_CASE("single interior head integrates to one and peaks at its pixel") {
  const HeadAnnotations ann{{{20.5, 30.5}}, 64, 64};
  const auto map = density_from_points(ann, FixedKernel{4.0});
  CHECK(count_from_density(map) == doctest::Approx(1.0).epsilon(1e-12));
  double best = -1.0;
  int by = -1, bx = -1;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (map.at(y, x) > best) {
        best = map.at(y, x);
        by = y;
        bx = x;
      }
    }
  }
  CHECK(by == 30);
  CHECK(bx == 20);
  // A lone head falls back to the fixed width.
  CHECK(density_from_points(ann, AdaptiveKernel{0.3, 3, 4.0}).values == map.values);
}

TEST_CASE("seven heads sum to seven") {
  HeadAnnotations ann{{}, 80, 80};
  for (int i = 0; i < 7; ++i) ann.points.push_back({10.0 + 9.0 * i, 15.0 + 7.0 * i});
  CHECK(count_from_density(density_from_points(ann, AdaptiveKernel{})) == doctest::Approx(7.0).epsilon(1e-9));
  CHECK(count_from_density(density_from_points(ann, FixedKernel{2.0})) == doctest::Approx(7.0).epsilon(1e-9));
}

TEST_CASE("adaptive widths") {
  const std::vector<Point> line{{10.0, 10.0}, {20.0, 10.0}, {30.0, 10.0}};
  const auto s2 = adaptive_sigmas(line, 0.3, 2);
  CHECK(s2[1] == 3.0);
  CHECK(s2[0] == doctest::Approx(0.3 * 15.0));
  // k larger than the number of neighbours uses all of them.
  CHECK(adaptive_sigmas(line, 0.3, 10) == s2);
  CHECK_THROWS_AS((void)adaptive_sigmas({{1.0, 1.0}}, 0.3, 3), std::invalid_argument);
  CHECK_THROWS_AS((void)adaptive_sigmas(line, 0.0, 3), std::invalid_argument);

  // Scaling the configuration scales every width.
  std::vector<Point> scaled;
  for (const auto& p : line) scaled.push_back({2.0 * p.x, 2.0 * p.y});
  const auto ss = adaptive_sigmas(scaled, 0.3, 2);
  for (int i = 0; i < 3; ++i) CHECK(ss[i] == doctest::Approx(2.0 * s2[i]));
}

TEST_CASE("points outside the image are rejected") {
  CHECK_THROWS_AS((void)density_from_points({{{10.0, 64.0}}, 64, 64}, FixedKernel{}), std::invalid_argument);
  CHECK_THROWS_AS((void)density_from_points({{{-0.1, 3.0}}, 64, 64}, FixedKernel{}), std::invalid_argument);
  CHECK_THROWS_AS((void)density_from_points({{}, 8, 8}, FixedKernel{0.0}), std::invalid_argument);
}

TEST_CASE("interior maps are translation equivariant") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(30.0, 60.0);
  HeadAnnotations ann{{}, 96, 96};
  for (int i = 0; i < 6; ++i) ann.points.push_back({u(rng), u(rng)});
  const int dx = 7, dy = -5;
  HeadAnnotations moved = ann;
  for (auto& p : moved.points) {
    p.x += dx;
    p.y += dy;
  }
  const auto a = density_from_points(ann, AdaptiveKernel{});
  const auto b = density_from_points(moved, AdaptiveKernel{});
  double worst = 0.0;
  for (int y = 0; y < 96; ++y) {
    for (int x = 0; x < 96; ++x) {
      const int sy = y - dy, sx = x - dx;
      const double ref = (sy >= 0 && sy < 96 && sx >= 0 && sx < 96) ? a.at(sy, sx) : 0.0;
      worst = std::max(worst, std::abs(b.at(y, x) - ref));
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("interior kernel matches a direct Gaussian") {
  const double sigma = 2.5;
  const Point p{31.3, 28.7};
  const auto map = density_from_points({{p}, 64, 64}, FixedKernel{sigma});
  double norm = 0.0;
  std::vector<double> ref(64 * 64, 0.0);
  const double cutoff = 4.0 * sigma;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const double ddx = x + 0.5 - p.x, ddy = y + 0.5 - p.y;
      if (std::abs(ddx) > cutoff || std::abs(ddy) > cutoff) continue;
      norm += ref[y * 64 + x] = std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * sigma * sigma));
    }
  }
  for (int i = 0; i < 64 * 64; ++i) CHECK(map.values[i] == doctest::Approx(ref[i] / norm).epsilon(1e-9));
}

TEST_CASE("npy round trip") {
  std::mt19937_64 rng(2);
  DensityMap map(5, 7);
  for (auto& v : map.values) v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const auto dir = testing::scratch_dir("npy");
  save_npy(dir / "m.npy", map);
  const auto back = load_npy(dir / "m.npy");
  CHECK(back.height == 5);
  CHECK(back.width == 7);
  CHECK(back.values == map.values);
  std::ifstream in(dir / "m.npy", std::ios::binary);
  std::string head(128, '\0');
  in.read(head.data(), 128);
  CHECK(head.substr(1, 5) == "NUMPY");
  CHECK(head.find("'descr': '<f8'") != std::string::npos);
  CHECK(head.find("(5, 7)") != std::string::npos);
  std::filesystem::remove_all(dir);
}
