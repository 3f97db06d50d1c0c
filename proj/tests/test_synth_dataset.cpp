#include <doctest.h>

#include <fstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>

#include "colorcount/dataset.hpp"
#include "colorcount/synth.hpp"
#include "support.hpp"

using namespace colorcount;

TEST_CASE("scene head counts stay inside their group range") {
  const density::SynthConfig cfg;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = density::synth_scene(cfg, seed);
    REQUIRE(s.group >= 1);
    REQUIRE(s.group <= 3);
    const auto [lo, hi] = cfg.group_ranges[s.group - 1];
    const int n = static_cast<int>(s.annotations.points.size());
    CHECK(n >= lo);
    CHECK(n <= hi);
    CHECK(s.tag == cfg.group_tags[s.group - 1]);
    CHECK_NOTHROW(s.annotations.validate());
    for (const double v : s.image.pixels) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("scenes are deterministic in the seed") {
  const density::SynthConfig cfg;
  const auto a = density::synth_scene(cfg, 42);
  const auto b = density::synth_scene(cfg, 42);
  CHECK(a.image.pixels == b.image.pixels);
  CHECK(a.annotations.points.size() == b.annotations.points.size());
  CHECK(density::synth_scene(cfg, 43).image.pixels != a.image.pixels);
  CHECK(density::synth_scene(cfg, 42, 3).group == 3);
}

TEST_CASE("mean counts increase across groups") {
  density::SynthConfig cfg;
  cfg.height = 64;
  cfg.width = 64;
  double sum[3] = {0, 0, 0};
  int n[3] = {0, 0, 0};
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto s = density::synth_scene(cfg, seed);
    sum[s.group - 1] += static_cast<double>(s.annotations.points.size());
    ++n[s.group - 1];
  }
  for (int g = 0; g < 3; ++g) REQUIRE(n[g] > 0);
  CHECK(sum[0] / n[0] < sum[1] / n[1]);
  CHECK(sum[1] / n[1] < sum[2] / n[2]);
}

TEST_CASE("invalid generator configurations are rejected") {
  density::SynthConfig overlap;
  overlap.group_ranges = {{1, 20}, {15, 30}};
  overlap.group_tags = {"sparse", "crowded"};
  CHECK_THROWS_AS(overlap.validate(), std::invalid_argument);
  density::SynthConfig empty;
  empty.group_ranges.clear();
  empty.group_tags.clear();
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
}

TEST_CASE("dataset directory round trip") {
  density::SynthConfig cfg;
  cfg.height = 64;
  cfg.width = 64;
  const auto dir = testing::scratch_dir("dataset");
  data::write_synth_dataset(dir, 3, 10, cfg);
  const auto loaded = data::load_dataset(dir);
  const auto memory = data::synth_samples(3, 10, cfg);
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].annotated);
    CHECK(loaded[i].group == memory[i].group);
    CHECK(loaded[i].tag == memory[i].tag);
    CHECK(loaded[i].annotations.points.size() == memory[i].annotations.points.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < memory[i].image.pixels.size(); ++k) {
      worst = std::max(worst, std::abs(loaded[i].image.pixels[k] - memory[i].image.pixels[k]));
    }
    CHECK(worst <= 0.5 / 255.0 + 1e-12);
  }

  const auto resized = data::load_dataset(dir, 32);
  CHECK(resized[0].image.height == 32);
  CHECK(resized[0].annotations.width == 32);
  for (const auto& p : resized[0].annotations.points) {
    CHECK(p.x < 32.0);
    CHECK(p.y < 32.0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("group-only records stay unannotated") {
  const auto dir = testing::scratch_dir("records");
  std::vector<data::AnnotationRecord> recs(2);
  recs[0].image_path = "a.png";
  recs[0].points = {{1.5, 2.5}};
  recs[0].group = 2;
  recs[1].image_path = "b.png";
  recs[1].annotated = false;
  recs[1].tag = "packed";
  data::write_annotations(dir / "annotations.jsonl", recs);
  const auto back = data::read_annotations(dir / "annotations.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].annotated);
  CHECK(back[0].points.size() == 1);
  CHECK(back[0].group == 2);
  CHECK_FALSE(back[1].annotated);
  CHECK(back[1].tag == std::optional<std::string>("packed"));
  CHECK_FALSE(back[1].group.has_value());
  std::filesystem::remove_all(dir);
}

TEST_CASE("grayscale files load as three equal channels") {
  const auto dir = testing::scratch_dir("gray");
  cv::Mat gray(4, 5, CV_8UC1);
  for (int i = 0; i < 20; ++i) gray.at<unsigned char>(i / 5, i % 5) = static_cast<unsigned char>(12 * i);
  REQUIRE(cv::imwrite((dir / "g.png").string(), gray));
  const auto back = data::load_image(dir / "g.png");
  CHECK(back.height == 4);
  CHECK(back.width == 5);
  for (std::size_t i = 0; i < back.pixel_count(); ++i) {
    CHECK(back.pixels[3 * i] == back.pixels[3 * i + 1]);
    CHECK(back.pixels[3 * i] == back.pixels[3 * i + 2]);
    CHECK(back.pixels[3 * i] == doctest::Approx(12.0 * static_cast<double>(i) / 255.0));
  }
  CHECK_THROWS((void)data::load_image(dir / "missing.png"));
  std::filesystem::remove_all(dir);
}
