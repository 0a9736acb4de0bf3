#include <cmath>
#include <random>

#include "doctest.h"
#include "pwcf/folding.hpp"

using namespace pwcf;
using namespace pwcf::folding;

namespace {

Vector Vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Values drawn to hit exact zeros, subnormals and ordinary magnitudes.
double AwkwardValue(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  switch (kind(rng)) {
    case 0:
      return 0.0;
    case 1:
      return u(rng) * 1e-310;
    case 2:
      return u(rng) * 1e-160;
    case 3:
      return -std::abs(u(rng));
    default:
      return u(rng);
  }
}

}  // namespace

TEST_CASE("fold examples") {
  const auto a = FoldConstraints(Vec({0.3, -0.1}), Vec({0.2}));
  CHECK(a.value == doctest::Approx(std::sqrt(0.13)));
  CHECK(a.weights[0] == doctest::Approx(0.3 / std::sqrt(0.13)));
  CHECK(a.weights[1] == 0.0);
  CHECK(a.weights[2] == doctest::Approx(0.2 / std::sqrt(0.13)));

  const auto b = FoldConstraints(Vec({-1.0, 0.0}), Vec({0.0}));
  CHECK(b.value == 0.0);
  CHECK(b.weights.isZero(0.0));

  CHECK(FoldConstraints(Vector(), Vec({-0.2})).value == doctest::Approx(0.2));
  CHECK(FoldConstraints(Vector(), Vec({-0.2})).weights[0] == -1.0);

  CHECK(FoldConstraints(Vec({0.3, -0.1}), Vec({0.2}), Aggregator::kL1).value ==
        doctest::Approx(0.5));
  const auto m = FoldConstraints(Vec({0.3, 0.3}), Vec({-0.1}), Aggregator::kMax);
  CHECK(m.value == 0.3);
  CHECK(m.weights[0] == 1.0);
  CHECK(m.weights[1] == 0.0);

  CHECK_THROWS_AS(FoldConstraints(Vector(), Vector()), Error);
  CHECK_THROWS_AS(FoldConstraints(Vec({std::nan("")}), Vector()), Error);
}

TEST_CASE("folded value is zero exactly when every member is satisfied") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> count(0, 6);
  for (int trial = 0; trial < 100000; ++trial) {
    const int p = count(rng);
    const int q = trial % 7 == 0 && p == 0 ? 1 : count(rng) % 3;
    if (p + q == 0) continue;
    Vector c(p), h(q);
    for (int i = 0; i < p; ++i) c[i] = AwkwardValue(rng);
    for (int j = 0; j < q; ++j) h[j] = trial % 3 == 0 ? 0.0 : AwkwardValue(rng);
    const bool satisfied = (p == 0 || c.maxCoeff() <= 0.0) && (q == 0 || h.isZero(0.0));
    for (Aggregator agg : {Aggregator::kL2, Aggregator::kL1, Aggregator::kMax}) {
      const auto f = FoldConstraints(c, h, agg);
      CHECK((f.value == 0.0) == satisfied);
      CHECK(f.value >= 0.0);
    }
  }
}

TEST_CASE("linf-to-box examples") {
  const Vector x = Vec({0.5, 0.5});
  const auto fold = LinfToBox(x, 0.08);
  // x - x' = (0.05, -0.1)
  const auto e = fold(Vec({0.45, 0.6}));
  CHECK(e.value == doctest::Approx(0.02));
  CHECK(e.gradient[0] == 0.0);
  CHECK(e.gradient[1] == doctest::Approx(1.0));
  CHECK(fold(Vec({0.55, 0.43})).value == 0.0);
  CHECK(fold(x).value == 0.0);
  CHECK_THROWS_AS(LinfToBox(x, 0.0), Error);
  CHECK_THROWS_AS(fold(Vec({0.1})), Error);

  // Extended layout: trailing variables carry no gradient.
  const auto wide = LinfToBox(x, 0.08, 3);
  const auto w = wide(Vec({0.45, 0.6, 7.0}));
  CHECK(w.value == doctest::Approx(0.02));
  CHECK(w.gradient[2] == 0.0);
}

TEST_CASE("linf-to-box zero set matches the linf ball exactly") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> e(0.001, 0.3);
  for (int trial = 0; trial < 100000; ++trial) {
    const Eigen::Index n = 1 + trial % 4;
    Vector x(n), xp(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      x[i] = u(rng);
      xp[i] = u(rng);
    }
    const double eps = e(rng);
    if (trial % 5 == 0) xp[0] = x[0] + eps;  // on the boundary
    const bool inside = (x - xp).lpNorm<Eigen::Infinity>() <= eps;
    CHECK((LinfToBox(x, eps)(xp).value == 0.0) == inside);
  }
}

TEST_CASE("box fold") {
  const auto box = BoxFold(2, 2);
  CHECK(box(Vec({0.0, 1.0})).value == 0.0);
  const auto e = box(Vec({-0.3, 1.4}));
  CHECK(e.value == doctest::Approx(0.5));
  CHECK(e.gradient[0] == doctest::Approx(-0.6));
  CHECK(e.gradient[1] == doctest::Approx(0.8));
  CHECK_THROWS_AS(BoxFold(3, 2), Error);
}

TEST_CASE("folded gradients match finite differences") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-0.4, 1.4);
  const Vector x = Vec({0.3, 0.6, 0.9});
  for (Aggregator agg : {Aggregator::kL2, Aggregator::kL1, Aggregator::kMax}) {
    const auto linf = LinfToBox(x, 0.1, agg);
    const auto box = BoxFold(3, 3, agg);
    int checked = 0;
    for (int trial = 0; trial < 400; ++trial) {
      Vector v(3);
      for (int i = 0; i < 3; ++i) v[i] = u(rng);
      for (const auto* oracle : {&linf, &box}) {
        const auto f = [&](const Vector& z) { return (*oracle)(z).value; };
        if (f(v) < 1e-3) continue;  // stay off the feasible-set kink
        const Vector fd = FiniteDiffGrad(f, v);
        const Vector g = (*oracle)(v).gradient;
        // Skip points within h of a member kink, where l1/max are nonsmooth.
        const Vector fd2 = FiniteDiffGrad(f, v, 1e-7);
        if ((fd - fd2).norm() > 1e-5) continue;
        CHECK((g - fd).norm() <= 1e-4 * std::max(1.0, fd.norm()));
        ++checked;
      }
    }
    CHECK(checked > 100);
  }
}

TEST_CASE("clip loss examples") {
  const Vector g = Vec({1.0, -2.0});
  const auto a = ClipLoss(ClippedLoss::Margin(), 3.0, g);
  CHECK(a.value == 0.01);
  CHECK(a.gradient.isZero(0.0));

  const auto ce = ClippedLoss::CrossEntropy(10);
  CHECK(ce.clip_at == doctest::Approx(2.302585092994046));
  const auto b = ClipLoss(ce, 5.0, g);
  CHECK(b.value == doctest::Approx(2.3026).epsilon(1e-4));
  CHECK(b.gradient.isZero(0.0));

  const auto c = ClipLoss(ClippedLoss::Margin(), -5.0, g);
  CHECK(c.value == -5.0);
  CHECK(c.gradient == g);

  CHECK_THROWS_AS(ClippedLoss::CrossEntropy(1), Error);
  CHECK(LinfRescaleFactor(4) == 2.0);
}

TEST_CASE("names round-trip") {
  for (Aggregator a : {Aggregator::kL2, Aggregator::kL1, Aggregator::kMax}) {
    CHECK(AggregatorFromString(ToString(a)) == a);
  }
  for (LossKind k : {LossKind::kMargin, LossKind::kCrossEntropy}) {
    CHECK(LossKindFromString(ToString(k)) == k);
  }
  CHECK_THROWS_AS(AggregatorFromString("l3"), Error);
}
