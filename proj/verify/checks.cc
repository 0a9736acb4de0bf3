#include "checks.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <random>

#include <fmt/format.h>

#include "oracles.hpp"
#include "pwcf/attacks.hpp"
#include "pwcf/folding.hpp"
#include "pwcf/penalty_sqp.hpp"
#include "pwcf/qp.hpp"

namespace pwcf::verify {

CheckResult Timed(std::string name, double budget, const std::function<Outcome()>& body) {
  CheckResult r;
  r.name = std::move(name);
  r.budget_seconds = budget;
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, fmt::format("threw: {}", e.what())};
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.passed = o.ok && r.seconds < budget;
  r.detail = o.detail;
  if (o.ok && !r.passed) r.detail += fmt::format(" (over the {:g} s budget)", budget);
  return r;
}

namespace {

Vector Uniform(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

Matrix RandomSpd(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal;
  Matrix b(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) b(i, j) = normal(rng);
  return b * b.transpose() + 0.05 * Matrix::Identity(n, n);
}

Vector Vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

sqp::Evaluation Eval(double value, Vector grad) { return {value, std::move(grad)}; }

bool GradientMatches(const Vector& g, const Vector& fd) {
  return (g - fd).norm() <= 1e-4 * std::max(1.0, fd.norm());
}

// A finite difference that changes between step sizes means a kink is in
// reach; such points are not smooth and get redrawn.
bool SmoothAt(const ScalarField& f, const Vector& x, const Vector& fd) {
  return (fd - FiniteDiffGrad(f, x, 1e-7)).norm() <= 1e-5 * std::max(1.0, fd.norm());
}

}  // namespace

CheckResult ProjectionLinfBox(int trials, std::uint64_t seed) {
  return Timed("linf-box projector equals both sequential projections", 1.0, [&] {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> e(1e-3, 0.6);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Eigen::Index n = 1 + t % 4;
      const Vector x = Uniform(rng, n, 0.0, 1.0);
      const Vector w = Uniform(rng, n, -1.5, 1.5);
      const double eps = e(rng);
      const Vector lo = -x;
      const Vector hi = (1.0 - x.array()).matrix();
      const Vector ball_then_box = qp::ProjectBox(qp::ProjectLinfBall(w, eps), lo, hi);
      const Vector box_then_ball = qp::ProjectLinfBall(qp::ProjectBox(w, lo, hi), eps);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double c = qp::ProjectLinfBox(x[i], eps, w[i]);
        worst = std::max({worst, std::abs(c - ball_then_box[i]), std::abs(c - box_then_ball[i])});
      }
    }
    return Outcome{worst <= 1e-12, fmt::format("{} trials, max deviation {:.3g}", trials, worst)};
  });
}

CheckResult ProjectionL2Box(int trials, std::uint64_t seed) {
  return Timed("l2-box sequential projections are feasible but not exact", 5.0, [&] {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> e(1e-3, 0.8);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Eigen::Index n = 1 + t % 6;
      const Vector x = Uniform(rng, n, 0.0, 1.0);
      const Vector w = Uniform(rng, n, -1.5, 1.5);
      const double eps = e(rng);
      const Vector lo = -x;
      const Vector hi = (1.0 - x.array()).matrix();
      for (const Vector& d : {qp::ProjectBox(qp::ProjectL2Ball(w, eps), lo, hi),
                              qp::ProjectL2Ball(qp::ProjectBox(w, lo, hi), eps)}) {
        worst = std::max(worst, d.norm() - eps);
        worst = std::max(worst, (lo - d).maxCoeff());
        worst = std::max(worst, (d - hi).maxCoeff());
      }
    }
    const Vector x = Vec2(0.95, 0.5);
    const double eps = 0.2;
    const Vector w = Vec2(0.3, -0.4);
    const Vector lo = -x;
    const Vector hi = (1.0 - x.array()).matrix();
    const Vector truth = oracle::GridProject2d(
        w,
        [&](const Vector& z) {
          return z.norm() <= eps && (z - lo).minCoeff() >= 0.0 && (hi - z).minCoeff() >= 0.0;
        },
        eps);
    const double gap =
        std::min((qp::ProjectBox(qp::ProjectL2Ball(w, eps), lo, hi) - truth).norm(),
                 (qp::ProjectL2Ball(qp::ProjectBox(w, lo, hi), eps) - truth).norm());
    return Outcome{worst <= 1e-9 && gap > 1e-3,
                   fmt::format("{} trials, max infeasibility {:.3g}; stored point misses the true "
                               "projection by {:.4g}",
                               trials, std::max(worst, 0.0), gap)};
  });
}

CheckResult QpOracle(int trials, std::uint64_t seed) {
  return Timed("box QP matches active-set enumeration", 10.0, [&] {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Eigen::Index n = 1 + t % 4;
      qp::BoxQP problem;
      problem.Q = RandomSpd(rng, n);
      problem.b.resize(n);
      problem.lower.resize(n);
      problem.upper.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        problem.b[i] = 2.0 * normal(rng);
        const double a = normal(rng);
        const double half = std::abs(normal(rng)) + 0.1;
        problem.lower[i] = a - half;
        problem.upper[i] = a + half;
      }
      const auto got = qp::SolveBoxQp(problem);
      const auto ref = oracle::EnumerateBoxQp(problem.Q, problem.b, problem.lower, problem.upper);
      worst = std::max(worst, std::abs(got.objective - ref.objective));
    }
    const InverseHessian h = InverseHessian::Full(2);
    qp::TerminationQP tqp;
    const Vector g = Vec2(3.0, -4.0);
    tqp.G.resize(2, 2);
    tqp.G << g, -g;
    tqp.H = &h;
    tqp.mu = 1.0;
    tqp.c_values = Vector::Zero(0);
    const double stat = qp::SolveTerminationQp(tqp).stationarity;
    return Outcome{worst <= 1e-8 && stat <= 1e-8,
                   fmt::format("{} instances, max objective gap {:.3g}; stationarity on +-g {:.3g}",
                               trials, worst, stat)};
  });
}

CheckResult SolverRegression() {
  return Timed("solver regression problems", 5.0, [] {
    sqp::SolverConfig cfg;
    sqp::NonsmoothProblem square;
    square.dim = 1;
    square.objective = [](const Vector& x) {
      Vector g(1);
      g[0] = 2 * x[0];
      return Eval(x[0] * x[0], g);
    };
    square.inequality_constraints.push_back(
        [](const Vector& x) { return Eval(1 - x[0], Vector::Constant(1, -1.0)); });
    const Vector x0 = Vector::Constant(1, 3.0);
    const auto a = sqp::Solve(square, x0, cfg);

    sqp::NonsmoothProblem line;
    line.dim = 2;
    line.objective = [](const Vector& x) {
      Eigen::Index k = 0;
      x.cwiseAbs().maxCoeff(&k);
      Vector g = Vector::Zero(2);
      g[k] = x[k] > 0 ? 1.0 : (x[k] < 0 ? -1.0 : 0.0);
      return Eval(x.cwiseAbs().maxCoeff(), g);
    };
    line.equality_constraints.push_back(
        [](const Vector& x) { return Eval(x[0] + x[1] - 1.0, Vector::Ones(2)); });
    const auto b = sqp::Solve(line, Vec2(2.0, -0.5), cfg);

    const bool ok = std::abs(a.x_star[0] - 1.0) <= 1e-3 && a.violation <= 1e-2 &&
                    std::abs(b.f_star - 0.5) <= 1e-3 && b.violation <= cfg.tau_v;
    return Outcome{ok, fmt::format("x^2 s.t. x>=1: x*={:.6f} v={:.2g}; |x|_inf on x1+x2=1: "
                                   "f*={:.6f} v={:.2g}",
                                   a.x_star[0], a.violation, b.f_star, b.violation)};
  });
}

CheckResult FoldingZeroSet(int trials, std::uint64_t seed) {
  return Timed("folded value is zero exactly when all members hold", 2.0, [&] {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> count(0, 6);
    std::uniform_int_distribution<int> kind(0, 5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto awkward = [&] {
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
    };
    int wrong = 0;
    int satisfied_cases = 0;
    for (int t = 0; t < trials; ++t) {
      const int p = count(rng);
      const int q = p == 0 ? 1 + count(rng) % 3 : count(rng) % 3;
      Vector c(p), h(q);
      for (int i = 0; i < p; ++i) c[i] = awkward();
      for (int j = 0; j < q; ++j) h[j] = t % 3 == 0 ? 0.0 : awkward();
      const bool satisfied = (p == 0 || c.maxCoeff() <= 0.0) && (q == 0 || h.isZero(0.0));
      satisfied_cases += satisfied ? 1 : 0;
      for (auto agg : {folding::Aggregator::kL2, folding::Aggregator::kL1,
                       folding::Aggregator::kMax}) {
        const double v = folding::FoldConstraints(c, h, agg).value;
        if ((v == 0.0) != satisfied || v < 0.0) ++wrong;
      }
    }
    return Outcome{wrong == 0 && satisfied_cases > 0,
                   fmt::format("{} trials x 3 aggregators ({} satisfied), {} mismatches", trials,
                               satisfied_cases, wrong)};
  });
}

CheckResult LossClipping(int trials, std::uint64_t seed) {
  return Timed("clipped losses are bounded and flat past the clip", 2.0, [&] {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 4.0);
    int bad = 0;
    int clipped = 0;
    for (int nc : {3, 10}) {
      const auto margin = folding::ClippedLoss::Margin();
      const auto ce = folding::ClippedLoss::CrossEntropy(nc);
      for (int t = 0; t < trials; ++t) {
        Vector z(nc);
        for (int i = 0; i < nc; ++i) z[i] = normal(rng);
        const int y = t % nc;
        const auto raw_m = attacks::MarginLoss(z, y);
        Vector g_ce;
        const double raw_ce = model::SoftmaxCrossEntropy(z, y, &g_ce);
        for (const auto& [clip, raw, grad] :
             {std::tuple{margin, raw_m.value, raw_m.gradient}, std::tuple{ce, raw_ce, g_ce}}) {
          const auto c = folding::ClipLoss(clip, raw, grad);
          if (c.value > clip.clip_at) ++bad;
          if (raw > clip.clip_at) {
            ++clipped;
            if (!c.gradient.isZero(0.0)) ++bad;
          } else if (c.gradient != grad || c.value != raw) {
            ++bad;
          }
        }
      }
      if (std::abs(ce.clip_at - std::log(nc)) > 1e-15) ++bad;
    }
    return Outcome{bad == 0 && clipped > 0,
                   fmt::format("{} logits for N_c in {{3, 10}}, {} clipped, {} violations",
                               2 * trials, clipped, bad)};
  });
}

CheckResult Danskin() {
  return Timed("Danskin example", 1.0, [] {
    const double at_zero = model::DanskinSubgradient(1.0, model::DanskinInner::kStationaryZero);
    const double at_one = model::DanskinSubgradient(1.0, model::DanskinInner::kUpperEndpoint);
    const double before = model::DanskinObjective(1.0);
    const double after = model::DanskinObjective(1.0 - 0.1 * at_one);
    const bool ok = at_zero == 0.0 && at_one == 2.0 && before == 1.0 &&
                    std::abs(after - 0.64) <= 1e-15;
    return Outcome{ok, fmt::format("subgradient {} at x'=0, {} at x'=1; g: {} -> {:.17g}", at_zero,
                                   at_one, before, after)};
  });
}

CheckResult TwoStageDeterminism(std::uint64_t seed) {
  return Timed("two-stage replay and screening", 60.0, [&] {
    const auto m = std::make_shared<const model::Classifier>(
        model::Classifier::Random({2, 16, 16, 3}, model::Activation::kTanh, seed));
    std::vector<std::string> failures;
    int replayed = 0;
    for (const char* metric : {"l2", "linf"}) {
      attacks::AttackSpec spec;
      spec.formulation = attacks::Formulation::kMinRadius;
      spec.metric = attacks::Metric::Parse(metric);
      const Vector x = Vec2(0.4, 0.6);
      const auto p = attacks::BuildMinRadius(m, x, m->Predict(x), spec);
      const attacks::InitFactory init = [&](std::uint64_t s) {
        return attacks::InitialPoint(p, s, 5e-2);
      };
      sqp::SolverConfig solver;
      solver.record_trajectory = true;
      const attacks::TwoStageConfig cfg{6, 15, 200, 5e-2};
      const auto r = attacks::TwoStageSolve(p.problem, init, seed, cfg, solver);
      const auto& winner = r.stage1[r.winner].report;
      if (r.best.trajectory.size() < winner.trajectory.size()) {
        failures.push_back(fmt::format("{}: stage 2 shorter than the winner", metric));
        continue;
      }
      for (std::size_t i = 0; i < winner.trajectory.size(); ++i) {
        if (r.best.trajectory[i].x != winner.trajectory[i].x ||
            r.best.trajectory[i].phi != winner.trajectory[i].phi) {
          failures.push_back(fmt::format("{}: iterate {} differs", metric, i));
          break;
        }
      }
      replayed += static_cast<int>(winner.trajectory.size());
      std::vector<sqp::SolverReport> reports;
      for (const auto& s : r.stage1) reports.push_back(s.report);
      if (attacks::Screen(reports, solver.tau_v) != r.winner) {
        failures.push_back(fmt::format("{}: winner is not the screened run", metric));
      }
    }

    auto report = [](double f, double v) {
      sqp::SolverReport r;
      r.f_star = f;
      r.violation = v;
      return r;
    };
    const double tau = 1e-2;
    const std::vector<std::pair<std::vector<sqp::SolverReport>, std::size_t>> cases = {
        {{report(0.5, 0.0), report(-10.0, 0.2)}, 0},
        {{report(-10.0, 0.2), report(0.5, 0.0)}, 1},
        {{report(-10.0, 0.2), report(-10.0, 0.05)}, 1},
        {{report(0.5, 0.0), report(0.1, 0.0), report(-10.0, 0.2)}, 1},
        {{report(0.3, 0.0), report(0.3, 0.005)}, 0},
        {{report(1.0, 0.01), report(2.0, 0.0)}, 0},
    };
    for (std::size_t i = 0; i < cases.size(); ++i) {
      if (attacks::Screen(cases[i].first, tau) != cases[i].second) {
        failures.push_back(fmt::format("screening case {}", i));
      }
    }
    std::string detail = fmt::format("{} stage-1 iterates replayed bit for bit, {} screening cases",
                                     replayed, cases.size());
    for (const auto& f : failures) detail += "; " + f;
    return Outcome{failures.empty() && replayed > 0, detail};
  });
}

CheckResult GradientChecks(int points, std::uint64_t seed) {
  return Timed("analytic gradients match central differences", 60.0, [&] {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal;
    const auto m = std::make_shared<const model::Classifier>(
        model::Classifier::Random({2, 8, 8, 3}, model::Activation::kTanh, seed));

    struct Family {
      std::string name;
      // Returns the function, its analytic gradient and the point.
      std::function<std::tuple<ScalarField, Vector, Vector>()> draw;
    };
    const Vector x0 = Vec2(0.3, 0.7);
    std::vector<Family> families;
    families.push_back({"model logits", [&] {
                          const Vector x = Uniform(rng, 2, 0.0, 1.0);
                          const int k = static_cast<int>(rng() % 3);
                          ScalarField f = [&, k](const Vector& v) { return m->Forward(v)[k]; };
                          return std::tuple{f, m->LogitGradient(x, k), x};
                        }});
    families.push_back({"cross-entropy", [&] {
                          const Vector x = Uniform(rng, 2, 0.0, 1.0);
                          const int y = static_cast<int>(rng() % 3);
                          ScalarField f = [&, y](const Vector& v) {
                            return attacks::RawLoss(*m, v, y, folding::LossKind::kCrossEntropy)
                                .value;
                          };
                          return std::tuple{
                              f, attacks::RawLoss(*m, x, y, folding::LossKind::kCrossEntropy).gradient,
                              x};
                        }});
    families.push_back({"margin", [&] {
                          const Vector x = Uniform(rng, 2, 0.0, 1.0);
                          const int y = static_cast<int>(rng() % 3);
                          ScalarField f = [&, y](const Vector& v) {
                            return attacks::RawLoss(*m, v, y, folding::LossKind::kMargin).value;
                          };
                          return std::tuple{
                              f, attacks::RawLoss(*m, x, y, folding::LossKind::kMargin).gradient, x};
                        }});
    for (double p : {1.0, 1.5, 2.0, 8.0}) {
      families.push_back({fmt::format("l{:g} distance", p), [&, p] {
                            const Vector xp = Uniform(rng, 2, 0.0, 1.0);
                            ScalarField f = [&, p](const Vector& v) {
                              return attacks::LpDistance(x0, v, p).value;
                            };
                            return std::tuple{f, attacks::LpDistance(x0, xp, p).gradient, xp};
                          }});
    }
    for (auto inner : {attacks::InnerNorm::kL1, attacks::InnerNorm::kL2}) {
      families.push_back({inner == attacks::InnerNorm::kL1 ? "pd-l1 distance" : "pd-l2 distance",
                          [&, inner] {
                            const Vector xp = Uniform(rng, 2, 0.0, 1.0);
                            ScalarField f = [&, inner](const Vector& v) {
                              return attacks::PerceptualDistance(*m, x0, v, inner).value;
                            };
                            return std::tuple{
                                f, attacks::PerceptualDistance(*m, x0, xp, inner).gradient, xp};
                          }});
    }
    for (auto agg :
         {folding::Aggregator::kL2, folding::Aggregator::kL1, folding::Aggregator::kMax}) {
      const std::string name = folding::ToString(agg);
      families.push_back({"folded linf " + name, [&, agg] {
                            const Vector xp = Uniform(rng, 3, -0.2, 1.2);
                            const Vector x = Vector::Constant(3, 0.5);
                            const auto fold = folding::LinfToBox(x, 0.1, agg);
                            ScalarField f = [fold](const Vector& v) { return fold(v).value; };
                            return std::tuple{f, fold(xp).gradient, xp};
                          }});
      families.push_back({"folded box " + name, [&, agg] {
                            const Vector xp = Uniform(rng, 3, -0.5, 1.5);
                            const auto fold = folding::BoxFold(3, 3, agg);
                            ScalarField f = [fold](const Vector& v) { return fold(v).value; };
                            return std::tuple{f, fold(xp).gradient, xp};
                          }});
    }

    const int per_family = (points + static_cast<int>(families.size()) - 1) /
                           static_cast<int>(families.size());
    int checked = 0;
    std::vector<std::string> failures;
    for (auto& family : families) {
      int done = 0;
      int draws = 0;
      int bad = 0;
      while (done < per_family && draws < 50 * per_family) {
        ++draws;
        auto [f, g, x] = family.draw();
        const double value = f(x);
        if (value == 0.0) continue;  // folded constraints are flat and kinked at zero
        const Vector fd = FiniteDiffGrad(f, x);
        if (!SmoothAt(f, x, fd)) continue;
        if (!GradientMatches(g, fd)) ++bad;
        ++done;
      }
      checked += done;
      if (bad > 0 || done < per_family) {
        failures.push_back(fmt::format("{}: {} of {} mismatched", family.name, bad, done));
      }
    }
    std::string detail = fmt::format("{} smooth points over {} families", checked, families.size());
    for (const auto& f : failures) detail += "; " + f;
    return Outcome{failures.empty() && checked >= points, detail};
  });
}

std::vector<CheckResult> RunAll() {
  return {ProjectionLinfBox(), ProjectionL2Box(), QpOracle(),         SolverRegression(),
          FoldingZeroSet(),    LossClipping(),    Danskin(),          TwoStageDeterminism(),
          GradientChecks()};
}

}  // namespace pwcf::verify
