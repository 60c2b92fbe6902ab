#include <cmath>

#include "doctest.h"
#include "hcut/objectives.hpp"
#include "test_helpers.hpp"

using namespace hcut;

TEST_CASE("cross entropy of uniform logits is ln C") {
  CHECK(cross_entropy({0.5, 0.5, 0.5, 0.5}, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy matches the closed-form log-sum-exp") {
  CHECK(std::abs(cross_entropy({10.0, -10.0}, 0) - std::log(1.0 + std::exp(-20.0))) < 1e-12);
}

TEST_CASE("cross entropy is invariant under a constant logit shift") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z{rng.next_double(), rng.next_double(), rng.next_double()};
    const double base = cross_entropy(z, 1);
    const double shift = rng.next_double() * 10.0 - 5.0;
    for (double& v : z) v += shift;
    CHECK(cross_entropy(z, 1) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy rejects an out-of-range label") {
  CHECK_THROWS_AS(cross_entropy({0.0, 1.0}, 2), DataError);
}

TEST_CASE("kl divergence of identical distributions is zero") {
  CHECK(kl_divergence({0.3, 0.7}, {0.3, 0.7}) == 0.0);
}

TEST_CASE("kl divergence single-term evaluation") {
  CHECK(kl_divergence({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("kl divergence is nonnegative on random distribution pairs") {
  Rng rng(3);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto p = test::random_distribution(4, rng);
    const auto q = test::random_distribution(4, rng);
    CHECK(kl_divergence(p, q) >= 0.0);
  }
}

TEST_CASE("kl divergence rejects mismatched supports") {
  CHECK_THROWS_AS(kl_divergence({1.0}, {0.5, 0.5}), ShapeError);
}

TEST_CASE("js consistency is zero for identical predictions") {
  const std::vector<double> p{0.25, 0.75};
  CHECK(js_consistency(p, {p, p, p}) == 0.0);
}

TEST_CASE("js consistency closed form for opposed one-hot predictions") {
  // p_avg = [0.5, 0.5]; KL([0,1] || p_avg) = ln 2.
  CHECK(js_consistency({1.0, 0.0}, {{0.0, 1.0}}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("js consistency is invariant to augmentation order") {
  Rng rng(4);
  const auto p0 = test::random_distribution(3, rng);
  const auto a = test::random_distribution(3, rng);
  const auto b = test::random_distribution(3, rng);
  const auto c = test::random_distribution(3, rng);
  CHECK(js_consistency(p0, {a, b, c}) == doctest::Approx(js_consistency(p0, {c, a, b})).epsilon(1e-15));
}

TEST_CASE("js consistency needs at least one augmented view") {
  CHECK_THROWS_AS(js_consistency({1.0, 0.0}, {}), ContractError);
}

TEST_CASE("js consistency is zero only when all views coincide") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const auto p0 = test::random_distribution(3, rng);
    auto a = p0;
    a[0] += 1e-3;
    a[1] -= 1e-3;
    CHECK(js_consistency(p0, {a}) > 1e-9);
  }
}

TEST_CASE("total loss combination") {
  SUBCASE("gamma = eta = 0 leaves only the original term") {
    const LossBreakdown b = total_loss(0.8, {0.5, 0.4}, 0.3, 0.0, 0.0);
    CHECK(b.total == 0.8);
    CHECK(b.l_aug == doctest::Approx(0.9));
  }
  SUBCASE("gamma = eta = 1 adds every term") {
    const LossBreakdown b = total_loss(0.8, {0.5, 0.4}, 0.3, 1.0, 1.0);
    CHECK(b.total == 0.8 + (0.5 + 0.4) + 0.3);
  }
  SUBCASE("identical augmented views collapse the consistency term") {
    const std::vector<double> p{0.6, 0.4};
    const double ce = cross_entropy({1.0, 0.4}, 0);
    const double js = js_consistency(p, {p, p, p});
    const LossBreakdown b = total_loss(0.7, {ce, ce, ce}, js, 2.0, 1.0);
    CHECK(b.l_js == 0.0);
    CHECK(b.total == doctest::Approx(0.7 + 2.0 * 3.0 * ce).epsilon(1e-15));
  }
  SUBCASE("total is monotone nondecreasing in gamma and eta") {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
      const double ori = rng.next_double(), aug = rng.next_double(), js = rng.next_double();
      const double g = rng.next_double() * 3.0, e = rng.next_double() * 3.0;
      CHECK(total_loss(ori, {aug}, js, g + 0.5, e).total >= total_loss(ori, {aug}, js, g, e).total);
      CHECK(total_loss(ori, {aug}, js, g, e + 0.5).total >= total_loss(ori, {aug}, js, g, e).total);
    }
  }
}
