#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "colorcount/losses.hpp"
#include "criteria.hpp"

using namespace colorcount::loss;

TEST_CASE("analytic gradients match central differences") {
  const auto out = acceptance::gradient_suite(20);
  INFO(out.detail);
  CHECK(out.pass);
}

TEST_CASE("losses match naive loop oracles") {
  const auto out = acceptance::oracle_equivalence(20);
  INFO(out.detail);
  CHECK(out.pass);
}

TEST_CASE("colorization loss examples") {
  const std::vector<double> one_hot{0.0, 1.0, 0.0};
  const std::vector<double> unit{1.0};
  CHECK(colorization_loss<double>(one_hot, one_hot, unit, 3).value == 0.0);
  const std::vector<double> uniform(8, 0.125);
  std::vector<double> target(8, 0.0);
  target[5] = 1.0;
  CHECK(colorization_loss<double>(uniform, target, unit, 8).value == doctest::Approx(std::log(8.0)));

  const std::vector<double> pred{0.9, 0.1, 0.4, 0.6};
  const std::vector<double> z{1.0, 0.0, 0.0, 1.0};
  const std::vector<double> v{1.0, 2.0};
  const double expected = -(std::log(0.9) + 2.0 * std::log(0.6));
  CHECK(colorization_loss<double>(pred, z, v, 2).value == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(1.1271).epsilon(1e-4));

  CHECK_THROWS_AS((void)colorization_loss<double>(pred, one_hot, v, 2), std::invalid_argument);
  CHECK_THROWS_AS((void)colorization_loss<double>(pred, z, unit, 2), std::invalid_argument);
}

TEST_CASE("adversarial loss examples") {
  const std::vector<double> half{0.5};
  CHECK(gan_losses<double>(half, half).discriminator == doctest::Approx(2.0 * std::log(2.0)));
  const std::vector<double> real{1.0 - 1e-9};
  const std::vector<double> fake{1e-9};
  CHECK(gan_losses<double>(real, fake).discriminator < 1e-6);
  const std::vector<double> quarter{0.25};
  CHECK(gan_losses<double>(half, quarter).generator == doctest::Approx(-std::log(0.25)));
  const std::vector<double> none;
  CHECK_THROWS_AS((void)gan_losses<double>(none, half), std::invalid_argument);
  // Exact 0 and 1 are clamped instead of producing infinities.
  const std::vector<double> zero{0.0};
  const std::vector<double> one{1.0};
  CHECK(std::isfinite(gan_losses<double>(zero, one).discriminator));
}

TEST_CASE("cycle loss examples") {
  const std::vector<double> x{0.2, 0.7, 0.1};
  const std::vector<double> z{1.0, -1.0};
  CHECK(cycle_loss<double>(x, x, z, z).value == 0.0);
  std::vector<double> shifted = x;
  for (auto& v : shifted) v += 0.3;
  CHECK(cycle_loss<double>(x, shifted, z, z).value == doctest::Approx(0.3));
  const std::vector<double> x2{0.0, 1.0}, x2r{1.0, 0.0}, z2{2.0}, z2r{0.0};
  CHECK(cycle_loss<double>(x2, x2r, z2, z2r).value == doctest::Approx(3.0));
  CHECK_THROWS_AS((void)cycle_loss<double>(x, x2, z, z), std::invalid_argument);
}

TEST_CASE("gram and texture loss examples") {
  const std::vector<double> single{1.0, 2.0};
  CHECK(gram<double>({1, 2, single}) == std::vector<double>{5.0});
  const std::vector<double> orth{1.0, 0.0, 0.0, 3.0};
  const auto go = gram<double>({2, 2, orth});
  CHECK(go[1] == 0.0);
  CHECK(go[2] == 0.0);
  const std::vector<double> maps{1.0, 2.0, 3.0, 4.0};
  CHECK(gram<double>({2, 2, maps}) == std::vector<double>{5.0, 11.0, 11.0, 25.0});

  CHECK(texture_loss<double>({2, 2, maps}, {2, 2, maps}).value == 0.0);
  const std::vector<double> two{2.0}, one{1.0};
  CHECK(texture_loss<double>({1, 1, two}, {1, 1, one}).value == doctest::Approx(2.25));
  CHECK(texture_loss<double>({2, 2, maps}, {2, 2, orth}).value ==
        texture_loss<double>({2, 2, orth}, {2, 2, maps}).value);
  CHECK_THROWS_AS((void)gram<double>({2, 3, maps}), std::invalid_argument);
  CHECK_THROWS_AS((void)texture_loss<double>({2, 2, maps}, {1, 2, single}), std::invalid_argument);
}

TEST_CASE("classification loss examples") {
  const std::vector<int> label1{1};
  const std::vector<double> confident{30.0, 0.0, 0.0};
  CHECK(classification_loss<double>(confident, label1, 3).value < 1e-3);
  const std::vector<double> flat{0.4, 0.4, 0.4};
  CHECK(classification_loss<double>(flat, label1, 3).value == doctest::Approx(std::log(3.0)));
  const std::vector<double> z{1.0, 0.0, 0.0};
  const double e = std::exp(1.0);
  CHECK(classification_loss<double>(z, label1, 3).value == doctest::Approx(-std::log(e / (e + 2.0))));
  CHECK(-std::log(e / (e + 2.0)) == doctest::Approx(0.5514).epsilon(1e-4));
  const std::vector<int> bad{4};
  CHECK_THROWS_AS((void)classification_loss<double>(z, bad, 3), std::invalid_argument);
  CHECK_THROWS_AS((void)classification_loss<double>(z, label1, 1), std::invalid_argument);
}

TEST_CASE("total objective examples") {
  const LossWeights w;
  CHECK(total_pretrain_loss({}, w) == 0.0);
  LossWeights half{0.5, 10.0, 1e-4, 0.1};
  PretrainParts only;
  only.colorization = 2.0;
  CHECK(total_pretrain_loss(only, half) == doctest::Approx(1.0));
  const PretrainParts parts{0.1, 0.2, 1.0, 2.0, 3.0, 4.0};
  CHECK(total_pretrain_loss(parts, {1.0, 0.5, 0.1, 0.01}) == doctest::Approx(2.64));
  LossWeights negative;
  negative.beta = -1.0;
  CHECK_THROWS_AS(negative.validate(), std::invalid_argument);
}

TEST_CASE("euclidean count loss examples") {
  const std::vector<double> t{0.3, 0.1, 0.0};
  CHECK(euclidean_count_loss<double>(t, t).value == 0.0);
  const std::vector<double> shifted{0.8, 0.6, 0.5};
  CHECK(euclidean_count_loss<double>(shifted, t).value == doctest::Approx(0.25));
  const std::vector<double> p{1.0, 2.0}, zero{0.0, 0.0};
  CHECK(euclidean_count_loss<double>(p, zero).value == doctest::Approx(2.5));
  CHECK_THROWS_AS((void)euclidean_count_loss<double>(p, t), std::invalid_argument);
}

TEST_CASE("float instantiations agree with double") {
  const std::vector<float> pf{0.9f, 0.1f, 0.4f, 0.6f};
  const std::vector<float> zf{1.0f, 0.0f, 0.0f, 1.0f};
  const std::vector<double> v{1.0, 2.0};
  CHECK(colorization_loss<float>(pf, zf, v, 2).value == doctest::Approx(1.1271).epsilon(1e-4));
}
