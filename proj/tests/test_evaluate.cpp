#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "colorcount/evaluate.hpp"
#include "colorcount/pipeline.hpp"
#include "support.hpp"

using namespace colorcount;
using namespace colorcount::eval;

namespace {

std::vector<data::Sample> scenes(int n, std::uint64_t seed) {
  density::SynthConfig sc;
  sc.height = 32;
  sc.width = 32;
  return data::synth_samples(n, seed, sc);
}

pipeline::TrainConfig stage(int s) {
  auto cfg = pipeline::TrainConfig::defaults(s);
  cfg.image_size = 32;
  cfg.epochs = 0;
  cfg.batch_size = s == 1 ? 4 : 1;
  cfg.gamut_samples = 20000;
  return cfg;
}

}  // namespace

TEST_CASE("metric examples") {
  const std::vector<double> same{3.0, 9.0, 27.0};
  const auto zero = mae_mse(same, same);
  CHECK(zero.mae == 0.0);
  CHECK(zero.mse == 0.0);
  const std::vector<double> t{10.0, 20.0}, p{12.0, 19.0};
  const auto r = mae_mse(t, p);
  CHECK(r.mae == doctest::Approx(1.5));
  CHECK(r.mse == doctest::Approx(std::sqrt(2.5)));
  CHECK(r.n_images == 2);
  REQUIRE(r.per_image.size() == 2);
  CHECK(r.per_image[1].id == "1");
  CHECK(r.per_image[1].pred_count == 19.0);
  const std::vector<double> one{5.0}, off{1.5};
  const auto single = mae_mse(one, off);
  CHECK(single.mae == doctest::Approx(3.5));
  CHECK(single.mse == doctest::Approx(3.5));
  const std::vector<double> empty;
  CHECK_THROWS_AS((void)mae_mse(empty, empty), std::invalid_argument);
  CHECK_THROWS_AS((void)mae_mse(t, one), std::invalid_argument);
}

TEST_CASE("metrics agree with a naive implementation") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> len(1, 60);
  for (int it = 0; it < 100; ++it) {
    const auto n = static_cast<std::size_t>(len(rng));
    const auto t = testing::random_vector(n, rng, 0.0, 300.0);
    const auto p = testing::random_vector(n, rng, 0.0, 300.0);
    double a = 0.0, s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      a += std::abs(t[i] - p[i]);
      s += (t[i] - p[i]) * (t[i] - p[i]);
    }
    const auto r = mae_mse(t, p);
    CHECK(std::abs(r.mae - a / n) <= 1e-10);
    CHECK(std::abs(r.mse - std::sqrt(s / n)) <= 1e-10);
    CHECK(r.mse >= r.mae - 1e-12);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> tp(n), pp(n);
    for (std::size_t i = 0; i < n; ++i) {
      tp[i] = t[perm[i]];
      pp[i] = p[perm[i]];
    }
    const auto rp = mae_mse(tp, pp);
    CHECK(rp.mae == doctest::Approx(r.mae).epsilon(1e-12));
    CHECK(rp.mse == doctest::Approx(r.mse).epsilon(1e-12));
  }
}

TEST_CASE("evaluating an untrained counting model") {
  const auto train = scenes(4, 1);
  const auto test = scenes(6, 2);
  const auto ckpt = pipeline::train_from_scratch(train, stage(2)).best;
  const auto r = evaluate_model(ckpt, test);
  double mean = 0.0;
  for (const auto& s : test) mean += static_cast<double>(s.annotations.points.size()) / test.size();
  CHECK(r.mae == doctest::Approx(mean));
  CHECK(r.per_image.size() == test.size());
  CHECK(r.per_image[0].id == test[0].id);
  const auto again = evaluate_model(ckpt, test);
  CHECK(again.mae == r.mae);
  CHECK(again.mse == r.mse);

  const auto dir = testing::scratch_dir("report");
  write_report_csv(dir / "r.csv", r);
  std::ifstream in(dir / "r.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == test.size() + 4);
  CHECK(lines[0][0] == '#');
  CHECK(lines[1] == "id,true_count,pred_count");
  CHECK(lines[lines.size() - 2].rfind("MAE,,", 0) == 0);
  CHECK(lines.back().rfind("MSE,,", 0) == 0);
  std::filesystem::remove_all(dir);

  auto stage1 = pipeline::pretrain(train, stage(1)).checkpoint;
  CHECK_THROWS_AS((void)evaluate_model(stage1, test), std::invalid_argument);
  auto unannotated = test;
  unannotated[0].annotated = false;
  CHECK_THROWS_AS((void)evaluate_model(ckpt, unannotated), std::invalid_argument);
}

TEST_CASE("hot colormap is monotone") {
  density::DensityMap map(1, 64);
  for (int x = 0; x < 64; ++x) map.at(0, x) = x * 0.01;
  const auto img = colormap_hot(map);
  double prev = -1.0;
  for (int x = 0; x < 64; ++x) {
    const double lum = img.at(0, x, 0) + img.at(0, x, 1) + img.at(0, x, 2);
    CHECK(lum >= prev);
    prev = lum;
  }
  CHECK(img.at(0, 63, 0) == 1.0);
  CHECK(img.at(0, 63, 1) == 1.0);
  CHECK(img.at(0, 63, 2) == 1.0);
  CHECK(img.at(0, 0, 0) == 0.0);
}

TEST_CASE("rendered panel counts") {
  const auto images = scenes(3, 5);
  const auto dir = testing::scratch_dir("render");
  const auto s1 = pipeline::pretrain(images, stage(1)).checkpoint;
  const auto p1 = render_artifacts(s1, images, dir / "s1");
  CHECK(p1.size() == 3 * 4);
  const auto s2 = pipeline::train_from_scratch(images, stage(2)).best;
  const auto p2 = render_artifacts(s2, images, dir / "s2");
  CHECK(p2.size() == 3 * 3);
  for (const auto& p : p1) CHECK(std::filesystem::exists(p));
  for (const auto& p : p2) CHECK(std::filesystem::exists(p));
  CHECK(std::distance(std::filesystem::directory_iterator(dir / "s2"), std::filesystem::directory_iterator{}) == 9);
  std::filesystem::remove_all(dir);
}
