#include <cmath>
#include <random>

#include "doctest.h"
#include "pwcf/numerics.hpp"

using pwcf::InverseHessian;
using pwcf::Matrix;
using pwcf::Vector;

namespace {

Vector Vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double RelErr(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

// Random curvature pair with y's > 0 by construction: y = A s for SPD A.
std::pair<Vector, Vector> RandomPair(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal;
  Vector s(n);
  Matrix b(n, n);
  for (Eigen::Index i = 0; i < n; ++i) s[i] = normal(rng);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) b(i, j) = normal(rng);
  const Matrix a = b * b.transpose() + 0.1 * Matrix::Identity(n, n);
  return {s, a * s};
}

}  // namespace

TEST_CASE("bfgs update examples") {
  SUBCASE("fixed point") {
    auto h = pwcf::BfgsUpdate(InverseHessian::Full(2), Vec({1, 0}), Vec({1, 0}));
    CHECK((h.Dense() - Matrix::Identity(2, 2)).norm() < 1e-15);
  }
  SUBCASE("secant scaling") {
    auto h = pwcf::BfgsUpdate(InverseHessian::Full(2), Vec({1, 0}), Vec({2, 0}));
    Matrix expected = Matrix::Zero(2, 2);
    expected(0, 0) = 0.5;
    expected(1, 1) = 1.0;
    CHECK((h.Dense() - expected).norm() < 1e-15);
    CHECK(RelErr(h.Apply(Vec({2, 0})), Vec({1, 0})) < 1e-12);
  }
  SUBCASE("zero curvature is skipped") {
    auto h = InverseHessian::Full(2);
    CHECK_FALSE(h.Update(Vec({1, 0}), Vec({0, 1})));
    CHECK((h.Dense() - Matrix::Identity(2, 2)).norm() == 0.0);
  }
  SUBCASE("dimension mismatch") {
    auto h = InverseHessian::Full(2);
    CHECK_THROWS_AS(h.Update(Vec({1, 0, 0}), Vec({1, 0, 0})), pwcf::Error);
  }
}

TEST_CASE("apply inverse hessian examples") {
  CHECK(RelErr(pwcf::ApplyInverseHessian(InverseHessian::Full(2), Vec({3, -4})), Vec({3, -4})) ==
        0.0);
  auto full = pwcf::BfgsUpdate(InverseHessian::Full(2), Vec({1, 0}), Vec({2, 0}));
  CHECK(RelErr(full.Apply(Vec({2, 0})), Vec({1, 0})) < 1e-15);
  auto lm = pwcf::BfgsUpdate(InverseHessian::LimitedMemory(2, 5), Vec({1, 0}), Vec({2, 0}));
  CHECK(RelErr(lm.Apply(Vec({2, 0})), Vec({1, 0})) < 1e-15);
  CHECK(RelErr(lm.Apply(Vec({2, 0})), full.Apply(Vec({2, 0}))) < 1e-10);
  CHECK_THROWS_AS(full.Apply(Vec({1, 2, 3})), pwcf::Error);
}

TEST_CASE("secant equation and positive definiteness over random updates") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dim_dist(1, 20);
  int failures = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Eigen::Index n = dim_dist(rng);
    auto h = InverseHessian::Full(n);
    // Start from a random SPD matrix reached by a few earlier updates.
    for (int k = 0; k < 2; ++k) {
      auto [s, y] = RandomPair(rng, n);
      h.Update(s, y);
    }
    auto [s, y] = RandomPair(rng, n);
    REQUIRE(h.Update(s, y));
    if (RelErr(h.Apply(y), s) > 1e-10) ++failures;
    Eigen::LLT<Matrix> llt(h.Dense());
    if (llt.info() != Eigen::Success) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("limited-memory products agree with full mode within memory") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  for (bool scale : {false, true}) {
    for (int trial = 0; trial < 200; ++trial) {
      const Eigen::Index n = 2 + trial % 12;
      const int m = 1 + trial % 20;
      auto full = InverseHessian::Full(n, scale);
      auto lm = InverseHessian::LimitedMemory(n, m, scale);
      for (int k = 0; k < m; ++k) {
        auto [s, y] = RandomPair(rng, n);
        full.Update(s, y);
        lm.Update(s, y);
      }
      Vector g(n);
      for (Eigen::Index i = 0; i < n; ++i) g[i] = normal(rng);
      const Vector a = full.Apply(g);
      CHECK((lm.Apply(g) - a).norm() <= 1e-10 * a.norm());
    }
  }
}

TEST_CASE("limited-memory history drops oldest pair") {
  auto lm = InverseHessian::LimitedMemory(2, 2);
  lm.Update(Vec({1, 0}), Vec({2, 0}));
  lm.Update(Vec({0, 1}), Vec({0, 4}));
  lm.Update(Vec({1, 1}), Vec({1, 1}));
  REQUIRE(lm.pairs().size() == 2);
  CHECK(lm.pairs().front().s[1] == 1.0);
}

TEST_CASE("finite difference gradient") {
  auto square = [](const Vector& x) { return x[0] * x[0]; };
  CHECK(std::abs(pwcf::FiniteDiffGrad(square, Vec({3}), 1e-5)[0] - 6.0) < 1e-6);

  auto l1 = [](const Vector& x) { return x.lpNorm<1>(); };
  CHECK((pwcf::FiniteDiffGrad(l1, Vec({1, -2}), 1e-6) - Vec({1, -1})).norm() < 1e-5);

  auto dot = [](const Vector& x) { return x.squaredNorm(); };
  CHECK((pwcf::FiniteDiffGrad(dot, Vec({1, 1}), 1e-5) - Vec({2, 2})).norm() < 1e-6);

  CHECK_THROWS_AS(pwcf::FiniteDiffGrad(dot, Vec({1}), 0.0), pwcf::Error);
  auto bad = [](const Vector&) { return std::nan(""); };
  CHECK_THROWS_AS(pwcf::FiniteDiffGrad(bad, Vec({1}), 1e-6), pwcf::Error);
}
