#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "pwcf/attacks.hpp"

using namespace pwcf;
using namespace pwcf::attacks;
using model::Activation;
using model::Classifier;

namespace {

constexpr double kInfinity = std::numeric_limits<double>::infinity();

Vector Vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

bool GradientMatches(const Vector& g, const Vector& fd) {
  return (g - fd).norm() <= 1e-4 * std::max(1.0, fd.norm());
}

// Trained once and shared by the desk-scale cases below.
const Classifier& DeskModel() {
  static const Classifier m = [] {
    Classifier c = Classifier::Random({2, 16, 16, 3}, Activation::kTanh, 1);
    model::TrainConfig cfg;
    cfg.seed = 7;
    model::Train(c, model::MakeBlobs({}), cfg);
    return c;
  }();
  return m;
}

std::shared_ptr<const Classifier> DeskModelPtr() {
  static const auto p = std::make_shared<const Classifier>(DeskModel());
  return p;
}

std::vector<model::Sample> CorrectSamples(int count) {
  const model::Dataset data = model::MakeBlobs({});
  std::vector<model::Sample> out;
  for (const auto& s : data.val) {
    if (static_cast<int>(out.size()) == count) break;
    if (DeskModel().Predict(s.x) == s.y) out.push_back(s);
  }
  return out;
}

AttackSpec MaxLoss(const std::string& metric, double eps,
                   folding::LossKind loss = folding::LossKind::kMargin) {
  AttackSpec s;
  s.formulation = Formulation::kMaxLoss;
  s.metric = Metric::Parse(metric);
  s.eps = eps;
  s.loss = loss;
  return s;
}

AttackSpec MinRadius(const std::string& metric) {
  AttackSpec s;
  s.formulation = Formulation::kMinRadius;
  s.metric = Metric::Parse(metric);
  return s;
}

// logits = (0, x): the margin for y = 0 is x itself.
std::shared_ptr<const Classifier> LineModel() {
  Matrix w(2, 1);
  w << 0.0, 1.0;
  return std::make_shared<const Classifier>(
      std::vector<model::DenseLayer>{{w, Vector::Zero(2)}}, Activation::kIdentity);
}

}  // namespace

TEST_CASE("margin loss examples") {
  CHECK(MarginLoss(Vec({2, 5, 1}), 0).value == 3.0);
  CHECK(MarginLoss(Vec({5, 2, 1}), 0).value == -3.0);
  const auto tie = MarginLoss(Vec({1, 1}), 0);
  CHECK(tie.value == 0.0);
  CHECK(MarginLoss(Vec({0, 4, 4}), 0).gradient == Vec({-1, 1, 0}));
  CHECK_THROWS_AS(MarginLoss(Vec({1, 2}), 2), Error);
  CHECK_THROWS_AS(MarginLoss(Vec({1}), 0), Error);
}

TEST_CASE("metric names") {
  for (const char* name : {"l1", "l1.5", "l2", "l8", "linf", "pd-l1", "pd-l2"}) {
    CHECK(Metric::Parse(name).Name() == name);
  }
  CHECK(Metric::Parse("linf").is_linf());
  CHECK(Metric::Parse("l1").is_l1());
  CHECK_THROWS_AS(Metric::Parse("l0.5"), Error);
  CHECK_THROWS_AS(Metric::Parse("lx"), Error);
  CHECK_THROWS_AS(Metric::Parse("l2x"), Error);
}

TEST_CASE("distances") {
  const Vector x = Vec({0.2, 0.4});
  const Vector xp = Vec({0.5, 0.0});
  CHECK(LpDistance(x, xp, 2).value == doctest::Approx(0.5));
  CHECK(LpDistance(x, xp, 1).value == doctest::Approx(0.7));
  CHECK(LpDistance(x, xp, kInfinity).value == doctest::Approx(0.4));
  CHECK(LpDistance(x, x, 1.5).gradient.isZero(0.0));
  CHECK(LpDistance(x, x, kInfinity).gradient.isZero(0.0));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double p : {1.0, 1.5, 2.0, 3.0, 8.0, kInfinity}) {
    for (int trial = 0; trial < 200; ++trial) {
      const Vector a = Vec({u(rng), u(rng), u(rng)});
      const Vector b = Vec({u(rng), u(rng), u(rng)});
      const Vector d = (b - a).cwiseAbs();
      if (d.minCoeff() < 1e-3) continue;
      if (std::isinf(p)) {
        Vector s = d;
        std::sort(s.data(), s.data() + 3);
        if (s[2] - s[1] < 1e-3) continue;
      }
      const Vector fd = FiniteDiffGrad([&](const Vector& v) { return LpDistance(a, v, p).value; }, b);
      CHECK(GradientMatches(LpDistance(a, b, p).gradient, fd));
    }
  }
}

TEST_CASE("perceptual distance") {
  const Classifier& m = DeskModel();
  const Vector x = Vec({0.3, 0.6});
  const Vector xp = Vec({0.35, 0.5});
  for (InnerNorm inner : {InnerNorm::kL1, InnerNorm::kL2}) {
    CHECK(PerceptualDistance(m, x, x, inner).value == 0.0);
    CHECK(PerceptualDistance(m, x, xp, inner).value ==
          doctest::Approx(PerceptualDistance(m, xp, x, inner).value).epsilon(1e-14));
    const Vector fd = FiniteDiffGrad(
        [&](const Vector& v) { return PerceptualDistance(m, x, v, inner).value; }, xp);
    CHECK(GradientMatches(PerceptualDistance(m, x, xp, inner).gradient, fd));
  }

  // Hidden identity layer W: the embedding difference is W (x' - x).
  Matrix w(3, 2);
  w << 1, 2, -1, 0.5, 0, 3;
  const Classifier lin({{w, Vec({0.1, 0.2, 0.3})}, {Matrix::Ones(2, 3), Vector::Zero(2)}},
                       Activation::kIdentity);
  CHECK(PerceptualDistance(lin, x, xp, InnerNorm::kL2).value ==
        doctest::Approx((w * (x - xp)).norm()).epsilon(1e-14));
  CHECK(PerceptualDistance(lin, x, xp, InnerNorm::kL1).value ==
        doctest::Approx((w * (x - xp)).lpNorm<1>()).epsilon(1e-14));
}

TEST_CASE("max-loss builder") {
  const auto model = DeskModelPtr();
  const Vector x = Vec({0.5, 0.7});
  const int y = model->Predict(x);

  for (const char* metric : {"l1", "l2", "linf", "l1.5", "pd-l2"}) {
    const AttackProblem p = BuildMaxLoss(model, x, y, MaxLoss(metric, 0.1));
    const auto pt = sqp::Evaluate(p.problem, x);
    CHECK(pt.Violation() == 0.0);
    for (const auto& c : pt.inequality) CHECK(c.value <= 0.0);
    CHECK(pt.objective.value ==
          -ClippedLossAt(*model, x, y, folding::LossKind::kMargin).value);
  }

  const AttackProblem linf = BuildMaxLoss(model, x, y, MaxLoss("linf", 0.1));
  CHECK(linf.problem.inequality_constraints.size() == 2);
  AttackSpec raw = MaxLoss("linf", 0.1);
  raw.fold = false;
  CHECK(BuildMaxLoss(model, x, y, raw).problem.inequality_constraints.size() == 8);

  const double eps = 0.1;
  const AttackProblem l2 = BuildMaxLoss(model, x, y, MaxLoss("l2", eps));
  const Vector far = x + Vec({0.6, 0.8}) * 1.5 * eps;
  CHECK(l2.problem.inequality_constraints[0](far).value == doctest::Approx(0.5 * eps));

  CHECK_THROWS_AS(BuildMaxLoss(model, x, y, MaxLoss("l2", 0.0)), Error);
  CHECK_THROWS_AS(BuildMaxLoss(model, x, y, MinRadius("l2")), Error);
  CHECK_THROWS_AS(BuildMaxLoss(model, Vec({1.5, 0.5}), y, MaxLoss("l2", 0.1)), Error);
}

TEST_CASE("min-radius builder") {
  const auto model = DeskModelPtr();
  const Vector x = Vec({0.5, 0.7});
  const int y = model->Predict(x);

  const AttackProblem l1 = BuildMinRadius(model, x, y, MinRadius("l1"));
  CHECK(l1.problem.dim == 4);
  const AttackProblem linf = BuildMinRadius(model, x, y, MinRadius("linf"));
  CHECK(linf.problem.dim == 3);
  CHECK(linf.problem.objective(Vec({0.5, 0.7, 0.03})).value ==
        doctest::Approx(0.03 * std::sqrt(2.0)));
  AttackSpec plain = MinRadius("linf");
  plain.rescale = false;
  CHECK(BuildMinRadius(model, x, y, plain).problem.objective(Vec({0.5, 0.7, 0.03})).value == 0.03);
  CHECK(BuildMinRadius(model, x, y, MinRadius("l2")).problem.dim == 2);
  CHECK(BuildMinRadius(model, x, y, MinRadius("pd-l2")).problem.dim == 2);

  AttackSpec bad = MinRadius("l2");
  bad.radius_form = RadiusForm::kDecoupled;
  CHECK_THROWS_WITH_AS(BuildMinRadius(model, x, y, bad), doctest::Contains("l2"), Error);
  try {
    BuildMinRadius(model, x, y, bad);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUnsupportedFormulation);
  }
  bad.metric = Metric::Perceptual(InnerNorm::kL2);
  CHECK_THROWS_AS(BuildMinRadius(model, x, y, bad), Error);

  // Boundary constraint on the line model: margin x' for y = 0.
  const auto line = LineModel();
  const AttackProblem p = BuildMinRadius(line, Vec({0.0}), 0, MinRadius("l2"));
  CHECK(p.problem.inequality_constraints[0](Vec({0.0})).value == 0.0);
  CHECK(p.problem.inequality_constraints[0](Vec({0.3})).value == doctest::Approx(-0.3));
}

TEST_CASE("problem oracles match finite differences") {
  const auto model = DeskModelPtr();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::uniform_real_distribution<double> t(0.01, 0.3);
  const std::vector<AttackSpec> specs = {MaxLoss("l2", 0.1, folding::LossKind::kCrossEntropy),
                                         MaxLoss("l1.5", 0.1),
                                         MaxLoss("pd-l1", 0.1),
                                         MinRadius("linf"),
                                         MinRadius("l1"),
                                         MinRadius("l8")};
  int checked = 0;
  for (const auto& spec : specs) {
    for (int trial = 0; trial < 40; ++trial) {
      const Vector x = Vec({u(rng), u(rng)});
      const AttackProblem p = Build(model, x, model->Predict(x), spec);
      Vector v = Vector::Zero(p.layout.dim);
      v.head(2) = Vec({u(rng), u(rng)});
      for (Eigen::Index i = 2; i < v.size(); ++i) v[i] = t(rng);
      std::vector<sqp::Oracle> oracles = p.problem.inequality_constraints;
      oracles.push_back(p.problem.objective);
      for (const auto& f : oracles) {
        const auto value = [&](const Vector& z) { return f(z).value; };
        const Vector fd = FiniteDiffGrad(value, v);
        // Skip points within reach of a kink (clip level, max switch, fold origin).
        if ((fd - FiniteDiffGrad(value, v, 1e-8)).norm() > 1e-5 * std::max(1.0, fd.norm())) continue;
        if (std::abs(f(v).value) < 1e-5) continue;
        CHECK(GradientMatches(f(v).gradient, fd));
        ++checked;
      }
    }
  }
  CHECK(checked > 500);
}

TEST_CASE("initial point") {
  const auto model = DeskModelPtr();
  const Vector x = Vec({0.0, 0.999});
  const AttackProblem p = BuildMinRadius(model, x, model->Predict(x), MinRadius("linf"));
  const Vector v = InitialPoint(p, 3, 1e-2);
  CHECK(v.head(2).minCoeff() >= 0.0);
  CHECK(v.head(2).maxCoeff() <= 1.0);
  CHECK((v.head(2) - x).lpNorm<Eigen::Infinity>() <= 1e-2);
  CHECK(v[2] == doctest::Approx((v.head(2) - x).lpNorm<Eigen::Infinity>() + 1e-3));
  CHECK(InitialPoint(p, 3, 1e-2) == v);
  CHECK(InitialPoint(p, 4, 1e-2) != v);
}

TEST_CASE("screening") {
  sqp::SolverReport feasible;
  feasible.f_star = 0.5;
  feasible.violation = 0.0;
  sqp::SolverReport infeasible;
  infeasible.f_star = -10.0;
  infeasible.violation = 0.2;
  CHECK(Screen({feasible, infeasible}, 1e-2) == 0);
  CHECK(Screen({infeasible, feasible}, 1e-2) == 1);
  sqp::SolverReport closer = infeasible;
  closer.violation = 0.05;
  CHECK(Screen({infeasible, closer}, 1e-2) == 1);
  sqp::SolverReport better = feasible;
  better.f_star = 0.1;
  CHECK(Screen({feasible, better, infeasible}, 1e-2) == 1);
  CHECK_THROWS_AS(Screen({}, 1e-2), Error);
}

TEST_CASE("two-stage solve") {
  const auto model = DeskModelPtr();
  const auto sample = CorrectSamples(1).front();
  const AttackProblem p = BuildMinRadius(model, sample.x, sample.y, MinRadius("l2"));
  const InitFactory init = [&](std::uint64_t s) { return InitialPoint(p, s, 1e-2); };
  sqp::SolverConfig solver;
  solver.record_trajectory = true;
  solver.record_iterates = true;

  SUBCASE("R = 1 is a single solve capped at K") {
    const TwoStageConfig cfg{1, 5, 60, 1e-2};
    const auto r = TwoStageSolve(p.problem, init, 9, cfg, solver);
    sqp::SolverConfig single = solver;
    single.h0_scaling = false;
    single.max_iter = 60;
    const auto ref = sqp::Solve(p.problem, init(DeriveSeed(9, 0)), single);
    CHECK(r.best.x_star == ref.x_star);
    CHECK(r.best.iterations == ref.iterations);
  }
  SUBCASE("stage 2 replays the stage-1 winner") {
    const TwoStageConfig cfg{6, 4, 400, 5e-2};
    const auto r = TwoStageSolve(p.problem, init, 11, cfg, solver);
    REQUIRE(r.stage1.size() == 6);
    const auto& winner = r.stage1[r.winner].report;
    REQUIRE(r.best.trajectory.size() >= winner.trajectory.size());
    for (std::size_t i = 0; i < winner.trajectory.size(); ++i) {
      CHECK(r.best.trajectory[i].x == winner.trajectory[i].x);
      CHECK(r.best.trajectory[i].phi == winner.trajectory[i].phi);
    }
    std::vector<sqp::SolverReport> reports;
    for (const auto& s : r.stage1) reports.push_back(s.report);
    CHECK(Screen(reports, solver.tau_v) == r.winner);
  }
  SUBCASE("invalid configuration") {
    CHECK_THROWS_AS(TwoStageSolve(p.problem, init, 1, TwoStageConfig{0, 1, 1, 0.0}, solver), Error);
    CHECK_THROWS_AS(TwoStageSolve(p.problem, init, 1, TwoStageConfig{1, 5, 4, 0.0}, solver), Error);
  }
}

TEST_CASE("PGD examples") {
  const auto line = LineModel();
  // gradient +1, eps 0.2, step 1 = 5 * eps
  const auto r = Pgd(*line, Vec({0.5}), 0, MaxLoss("linf", 0.2), PgdConfig{1, 5.0});
  CHECK(r.x_prime[0] == doctest::Approx(0.7).epsilon(1e-15));

  const Classifier& m = DeskModel();
  const model::Dataset data = model::MakeBlobs({});
  for (int i = 0; i < 40; ++i) {
    const auto& s = data.val[static_cast<std::size_t>(i)];
    const auto rec = RunPgd(m, s.x, s.y, i, MaxLoss("l2", 0.1), PgdConfig{10, 0.0}, 1e-2);
    CHECK(rec.x_prime == s.x);
    CHECK(rec.attack_success == (m.Predict(s.x) != s.y));
  }
  CHECK_THROWS_AS(Pgd(m, data.val[0].x, data.val[0].y, MaxLoss("l1.5", 0.1), PgdConfig{}), Error);
}

TEST_CASE("PGD iterates stay feasible") {
  const Classifier& m = DeskModel();
  const model::Dataset data = model::MakeBlobs({});
  for (const char* metric : {"linf", "l2", "l1"}) {
    const AttackSpec spec = MaxLoss(metric, 0.15);
    for (int i = 0; i < 30; ++i) {
      const auto& s = data.val[static_cast<std::size_t>(i)];
      Pgd(m, s.x, s.y, spec, PgdConfig{20, 1.0}, [&](const Vector& xp) {
        CHECK(xp.minCoeff() >= -1e-9);
        CHECK(xp.maxCoeff() <= 1.0 + 1e-9);
        CHECK(LpDistance(s.x, xp, spec.metric.p).value <= spec.eps + 1e-9);
      });
    }
  }
}

TEST_CASE("more PGD steps never lower the inner loss") {
  const Classifier& m = DeskModel();
  const auto samples = CorrectSamples(20);
  const AttackSpec spec = MaxLoss("linf", 0.1);
  double previous = -kInfinity;
  for (int steps = 1; steps <= 20; ++steps) {
    double total = 0.0;
    for (const auto& s : samples) total += Pgd(m, s.x, s.y, spec, PgdConfig{steps, 0.25}).loss;
    CHECK(total >= previous);
    previous = total;
  }
}

TEST_CASE("record bookkeeping") {
  const auto model = DeskModelPtr();
  PwcfOptions options;
  options.two_stage = TwoStageConfig{2, 10, 200, 1e-2};
  for (const auto& s : CorrectSamples(8)) {
    for (const AttackSpec& spec : {MaxLoss("l2", 0.25), MaxLoss("linf", 0.05), MinRadius("l2")}) {
      const auto r = RunPwcf(model, s.x, s.y, 3, spec, options, 1);
      const double margin = MarginLoss(model->Forward(r.x_prime), s.y).value;
      const double v = OriginalViolation(*model, s.x, s.y, spec, r.x_prime);
      CHECK(r.violation == v);
      CHECK(r.attack_success == (margin > 0.0 && v <= options.solver.tau_v));
      if (r.attack_success) CHECK(r.violation <= options.solver.tau_v);
      CHECK(r.delta == r.x_prime - s.x);
      if (spec.formulation == Formulation::kMinRadius) {
        CHECK(r.objective_or_radius >= 0.0);
        CHECK(r.objective_or_radius == LpDistance(s.x, r.x_prime, 2).value);
      }
      const auto again = RunPwcf(model, s.x, s.y, 3, spec, options, 1);
      CHECK(again.x_prime == r.x_prime);
    }
  }
}

TEST_CASE("decoupled radius variables agree with the recomputed distance") {
  const auto model = DeskModelPtr();
  sqp::SolverConfig solver;
  solver.tau_v = 1e-8;
  solver.tau_diamond = 1e-8;
  solver.eval_distance = 1e-8;
  solver.sample_radius = 1e-9;
  solver.max_iter = 4000;
  int checked = 0;
  for (const auto& s : CorrectSamples(10)) {
    for (const char* metric : {"linf", "l1"}) {
      const AttackProblem p = BuildMinRadius(model, s.x, s.y, MinRadius(metric));
      const auto r = sqp::Solve(p.problem, InitialPoint(p, 5, 1e-2), solver);
      if (r.termination != sqp::Termination::kToleranceMet) continue;
      const Vector gap = (p.XPrime(r.x_star) - s.x).cwiseAbs();
      if (p.layout.radius == ProblemLayout::RadiusBlock::kScalar) {
        CHECK(std::abs(r.x_star[2] - gap.maxCoeff()) <= 1e-6);
      } else {
        CHECK(r.x_star.tail(2).sum() >= gap.sum() - 1e-6);
        CHECK(std::abs(r.x_star.tail(2).sum() - gap.sum()) <= 1e-6);
      }
      ++checked;
    }
  }
  CHECK(checked >= 15);
}

TEST_CASE("folding does not slow down reaching feasibility") {
  const auto model = DeskModelPtr();
  sqp::SolverConfig solver;
  solver.record_trajectory = true;
  auto first_feasible = [&](const AttackProblem& p, const Vector& x0) {
    const auto r = sqp::Solve(p.problem, x0, solver);
    if (sqp::Evaluate(p.problem, x0).Violation() <= solver.tau_v) return 0;
    for (const auto& rec : r.trajectory) {
      if (rec.violation <= solver.tau_v) return rec.iteration;
    }
    return std::numeric_limits<int>::max();
  };
  int wins = 0;
  int total = 0;
  for (const auto& s : CorrectSamples(10)) {
    for (const char* metric : {"linf", "l1"}) {
      AttackSpec folded = MinRadius(metric);
      AttackSpec raw = folded;
      raw.fold = false;
      const AttackProblem pf = BuildMinRadius(model, s.x, s.y, folded);
      const AttackProblem pr = BuildMinRadius(model, s.x, s.y, raw);
      const Vector x0 = InitialPoint(pf, 21, 1e-2);
      const int a = first_feasible(pf, x0);
      const int b = first_feasible(pr, x0);
      wins += a <= b ? 1 : 0;
      ++total;
    }
  }
  CHECK(total == 20);
  CHECK(wins >= 16);
}

TEST_CASE("inner maximizers for adversarial training") {
  const Classifier& m = DeskModel();
  const auto s = CorrectSamples(1).front();
  const AttackSpec spec = MaxLoss("linf", 0.1);
  for (InnerSolver solver : {InnerSolver::kPgd, InnerSolver::kPwcf}) {
    const auto inner = MakeInnerMaximizer(solver, spec, 10);
    const Vector xp = inner(m, s.x, s.y, 4);
    CHECK((xp - s.x).lpNorm<Eigen::Infinity>() <= spec.eps + 1e-2);
    CHECK(xp.minCoeff() >= 0.0);
    CHECK(xp.maxCoeff() <= 1.0);
    CHECK(RawLoss(m, xp, s.y, folding::LossKind::kMargin).value >=
          RawLoss(m, s.x, s.y, folding::LossKind::kMargin).value);
  }
  CHECK_THROWS_AS(MakeInnerMaximizer(InnerSolver::kPgd, MinRadius("l2"), 10), Error);
}

TEST_CASE("adversarial training improves PGD robustness") {
  const model::Dataset data = model::MakeBlobs({});
  AttackSpec spec = MaxLoss("linf", 0.18);
  model::TrainConfig cfg;
  cfg.seed = 7;
  Classifier standard = Classifier::Random({2, 16, 16, 3}, Activation::kTanh, 1);
  Classifier robust = standard;
  model::Train(standard, data, cfg);
  model::AdversarialTrain(robust, data, MakeInnerMaximizer(InnerSolver::kPgd, spec, 20), cfg);

  auto robust_accuracy = [&](const Classifier& m) {
    int ok = 0;
    for (const auto& s : data.val) {
      if (m.Predict(s.x) != s.y) continue;
      ok += RunPgd(m, s.x, s.y, 0, spec, PgdConfig{}, 1e-6).attack_success ? 0 : 1;
    }
    return static_cast<double>(ok) / static_cast<double>(data.val.size());
  };
  const double a = robust_accuracy(standard);
  const double b = robust_accuracy(robust);
  MESSAGE("PGD robust accuracy: standard " << a << ", adversarially trained " << b);
  CHECK(b >= a + 0.10);

  Classifier again = Classifier::Random({2, 16, 16, 3}, Activation::kTanh, 1);
  model::AdversarialTrain(again, data, MakeInnerMaximizer(InnerSolver::kPgd, spec, 20), cfg);
  CHECK(again.Parameters() == robust.Parameters());
}
