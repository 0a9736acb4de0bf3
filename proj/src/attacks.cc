#include "pwcf/attacks.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "pwcf/qp.hpp"

namespace pwcf::attacks {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double Sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

const char* ToString(Formulation f) {
  return f == Formulation::kMaxLoss ? "max_loss" : "min_radius";
}

Metric Metric::Lp(double p) {
  if (!(p >= 1.0)) throw Error(ErrorCode::kInvalidArgument, fmt::format("invalid p = {}", p));
  Metric m;
  m.kind = Kind::kLp;
  m.p = p;
  return m;
}

Metric Metric::Linf() { return Lp(kInf); }

Metric Metric::Perceptual(InnerNorm inner) {
  Metric m;
  m.kind = Kind::kPerceptual;
  m.inner = inner;
  return m;
}

bool Metric::is_linf() const { return kind == Kind::kLp && std::isinf(p); }
bool Metric::is_l1() const { return kind == Kind::kLp && p == 1.0; }

std::string Metric::Name() const {
  if (kind == Kind::kPerceptual) return inner == InnerNorm::kL1 ? "pd-l1" : "pd-l2";
  if (is_linf()) return "linf";
  return fmt::format("l{:g}", p);
}

Metric Metric::Parse(const std::string& name) {
  if (name == "pd-l1") return Perceptual(InnerNorm::kL1);
  if (name == "pd-l2") return Perceptual(InnerNorm::kL2);
  if (name == "linf") return Linf();
  if (name.size() > 1 && name[0] == 'l') {
    std::size_t used = 0;
    double p = 0.0;
    try {
      p = std::stod(name.substr(1), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == name.size() - 1) return Lp(p);
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown metric '{}'", name));
}

void AttackSpec::Validate() const {
  if (metric.kind == Metric::Kind::kLp && !(metric.p >= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "metric p must be >= 1");
  }
  if (formulation == Formulation::kMaxLoss) {
    if (!(eps > 0.0) || !std::isfinite(eps)) {
      throw Error(ErrorCode::kInvalidArgument, "max-loss budget eps must be positive");
    }
    if (radius_form == RadiusForm::kDecoupled) {
      throw Error(ErrorCode::kUnsupportedFormulation, "radius variables apply to min-radius only");
    }
    return;
  }
  if (radius_form == RadiusForm::kDecoupled && !metric.is_linf() && !metric.is_l1()) {
    throw Error(ErrorCode::kUnsupportedFormulation,
                fmt::format("no radius-variable reformulation for metric {}", metric.Name()));
  }
}

bool AttackSpec::decoupled() const {
  if (formulation != Formulation::kMinRadius) return false;
  if (radius_form == RadiusForm::kDecoupled) return true;
  return radius_form == RadiusForm::kAuto && (metric.is_linf() || metric.is_l1());
}

// ---------------------------------------------------------------------------

LossValue MarginLoss(const Vector& logits, int y) {
  if (logits.size() < 2 || y < 0 || y >= logits.size()) {
    throw Error(ErrorCode::kInvalidArgument, "invalid label for margin loss");
  }
  Eigen::Index best = y == 0 ? 1 : 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (i != y && logits[i] > logits[best]) best = i;
  }
  LossValue out{logits[best] - logits[y], Vector::Zero(logits.size())};
  out.gradient[best] = 1.0;
  out.gradient[y] = -1.0;
  return out;
}

LossValue RawLoss(const Classifier& model, const Vector& x, int y, folding::LossKind kind) {
  const model::Trace t = model.ForwardTrace(x);
  LossValue head;
  if (kind == folding::LossKind::kMargin) {
    head = MarginLoss(t.logits(), y);
  } else {
    head.value = model::SoftmaxCrossEntropy(t.logits(), y, &head.gradient);
  }
  return LossValue{head.value, model.InputGradient(t, head.gradient)};
}

LossValue ClippedLossAt(const Classifier& model, const Vector& x, int y, folding::LossKind kind) {
  const LossValue raw = RawLoss(model, x, y, kind);
  const auto clipped = folding::ClipLoss(folding::ClippedLoss::For(kind, model.num_classes()),
                                         raw.value, raw.gradient);
  return LossValue{clipped.value, clipped.gradient};
}

LossValue LpDistance(const Vector& x, const Vector& x_prime, double p) {
  RequireSameSize(x_prime.size(), x.size(), "distance arguments");
  if (!(p >= 1.0)) throw Error(ErrorCode::kInvalidArgument, "p must be >= 1");
  const Vector d = x_prime - x;
  LossValue out{0.0, Vector::Zero(d.size())};
  if (d.size() == 0) return out;
  if (std::isinf(p)) {
    Eigen::Index k = 0;
    for (Eigen::Index i = 1; i < d.size(); ++i) {
      if (std::abs(d[i]) > std::abs(d[k])) k = i;
    }
    out.value = std::abs(d[k]);
    out.gradient[k] = Sign(d[k]);
    return out;
  }
  if (p == 1.0) {
    out.value = d.lpNorm<1>();
    for (Eigen::Index i = 0; i < d.size(); ++i) out.gradient[i] = Sign(d[i]);
    return out;
  }
  const double m = d.lpNorm<Eigen::Infinity>();
  if (m == 0.0) return out;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) sum += std::pow(std::abs(d[i]) / m, p);
  out.value = m * std::pow(sum, 1.0 / p);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    out.gradient[i] = Sign(d[i]) * std::pow(std::abs(d[i]) / out.value, p - 1.0);
  }
  return out;
}

LossValue PerceptualDistance(const Classifier& model, const Vector& x, const Vector& x_prime,
                             InnerNorm inner) {
  RequireSameSize(x_prime.size(), x.size(), "distance arguments");
  const model::Trace tp = model.ForwardTrace(x_prime);
  const Vector e = model.Embedding(tp) - model.Embedding(x);
  Vector u = Vector::Zero(e.size());
  double value = 0.0;
  if (inner == InnerNorm::kL1) {
    value = e.lpNorm<1>();
    for (Eigen::Index i = 0; i < e.size(); ++i) u[i] = Sign(e[i]);
  } else {
    value = e.norm();
    if (value > 0.0) u = e / value;
  }
  return LossValue{value, model.InputGradient(tp, Vector::Zero(model.num_classes()), &u)};
}

LossValue Distance(const Metric& metric, const Classifier& model, const Vector& x,
                   const Vector& x_prime) {
  if (metric.kind == Metric::Kind::kPerceptual) {
    return PerceptualDistance(model, x, x_prime, metric.inner);
  }
  return LpDistance(x, x_prime, metric.p);
}

// ---------------------------------------------------------------------------

namespace {

// Inequality family g(v) <= 0 with a dense Jacobian.
struct FamilyValue {
  Vector values;
  Matrix jacobian;
};
using Family = std::function<FamilyValue(const Vector&)>;

void AddFamily(sqp::NonsmoothProblem& problem, Family family, Eigen::Index count, bool fold,
               folding::Aggregator aggregator) {
  if (fold) {
    problem.inequality_constraints.push_back([family, aggregator](const Vector& v) {
      const FamilyValue f = family(v);
      const auto folded = folding::FoldConstraints(f.values, Vector(), aggregator);
      return sqp::Evaluation{folded.value, f.jacobian.transpose() * folded.weights};
    });
    return;
  }
  for (Eigen::Index i = 0; i < count; ++i) {
    problem.inequality_constraints.push_back([family, i](const Vector& v) {
      const FamilyValue f = family(v);
      return sqp::Evaluation{f.values[i], f.jacobian.row(i).transpose()};
    });
  }
}

// -x' <= 0 and x' - 1 <= 0.
Family BoxFamily(Eigen::Index n, Eigen::Index dim) {
  return [n, dim](const Vector& v) {
    FamilyValue f{Vector(2 * n), Matrix::Zero(2 * n, dim)};
    f.values << -v.head(n), v.head(n).array() - 1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      f.jacobian(i, i) = -1.0;
      f.jacobian(n + i, i) = 1.0;
    }
    return f;
  };
}

// x' - x - r <= 0 and x - x' - r <= 0, where r is eps, the scalar t at index
// n, or the vector t at indices n..2n-1.
Family TwoSidedFamily(const Vector& x, Eigen::Index dim, ProblemLayout::RadiusBlock radius,
                      double eps) {
  const Eigen::Index n = x.size();
  return [x, n, dim, radius, eps](const Vector& v) {
    Vector r = Vector::Constant(n, eps);
    if (radius == ProblemLayout::RadiusBlock::kScalar) r.setConstant(v[n]);
    if (radius == ProblemLayout::RadiusBlock::kVector) r = v.segment(n, n);
    const Vector d = v.head(n) - x;
    FamilyValue f{Vector(2 * n), Matrix::Zero(2 * n, dim)};
    f.values << d - r, -d - r;
    for (Eigen::Index i = 0; i < n; ++i) {
      f.jacobian(i, i) = 1.0;
      f.jacobian(n + i, i) = -1.0;
      if (radius == ProblemLayout::RadiusBlock::kScalar) {
        f.jacobian(i, n) = -1.0;
        f.jacobian(n + i, n) = -1.0;
      } else if (radius == ProblemLayout::RadiusBlock::kVector) {
        f.jacobian(i, n + i) = -1.0;
        f.jacobian(n + i, n + i) = -1.0;
      }
    }
    return f;
  };
}

Vector Pad(const Vector& head, Eigen::Index dim) {
  Vector out = Vector::Zero(dim);
  out.head(head.size()) = head;
  return out;
}

void AddBox(sqp::NonsmoothProblem& problem, const AttackSpec& spec, Eigen::Index n,
            Eigen::Index dim) {
  if (spec.fold) {
    problem.inequality_constraints.push_back(folding::BoxFold(n, dim, spec.aggregator));
  } else {
    AddFamily(problem, BoxFamily(n, dim), 2 * n, false, spec.aggregator);
  }
}

void CheckInputs(const Classifier& model, const Vector& x, int y) {
  RequireSameSize(x.size(), model.input_dim(), "attack input");
  RequireFinite(x, "attack input");
  if (x.minCoeff() < 0.0 || x.maxCoeff() > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "attack input must lie in [0,1]^n");
  }
  if (y < 0 || y >= model.num_classes()) throw Error(ErrorCode::kInvalidArgument, "label out of range");
}

}  // namespace

AttackProblem BuildMaxLoss(std::shared_ptr<const Classifier> model, const Vector& x, int y,
                           const AttackSpec& spec) {
  if (!model) throw Error(ErrorCode::kInvalidArgument, "missing model");
  if (spec.formulation != Formulation::kMaxLoss) {
    throw Error(ErrorCode::kInvalidArgument, "spec is not a max-loss formulation");
  }
  spec.Validate();
  CheckInputs(*model, x, y);
  const Eigen::Index n = x.size();

  AttackProblem out;
  out.model = model;
  out.x = x;
  out.y = y;
  out.spec = spec;
  out.layout = ProblemLayout{n, n, ProblemLayout::RadiusBlock::kNone, 1.0};
  out.problem.dim = n;
  const folding::LossKind loss = spec.loss;
  out.problem.objective = [model, y, loss](const Vector& v) {
    const LossValue l = ClippedLossAt(*model, v, y, loss);
    return sqp::Evaluation{-l.value, -l.gradient};
  };

  if (spec.metric.is_linf()) {
    if (spec.fold) {
      out.problem.inequality_constraints.push_back(folding::LinfToBox(x, spec.eps, spec.aggregator));
    } else {
      AddFamily(out.problem, TwoSidedFamily(x, n, ProblemLayout::RadiusBlock::kNone, spec.eps),
                2 * n, false, spec.aggregator);
    }
  } else {
    const Metric metric = spec.metric;
    const double eps = spec.eps;
    out.problem.inequality_constraints.push_back([model, x, metric, eps](const Vector& v) {
      const LossValue d = Distance(metric, *model, x, v);
      return sqp::Evaluation{d.value - eps, d.gradient};
    });
  }
  AddBox(out.problem, spec, n, n);
  return out;
}

AttackProblem BuildMinRadius(std::shared_ptr<const Classifier> model, const Vector& x, int y,
                             const AttackSpec& spec) {
  if (!model) throw Error(ErrorCode::kInvalidArgument, "missing model");
  if (spec.formulation != Formulation::kMinRadius) {
    throw Error(ErrorCode::kInvalidArgument, "spec is not a min-radius formulation");
  }
  spec.Validate();
  CheckInputs(*model, x, y);
  const Eigen::Index n = x.size();

  AttackProblem out;
  out.model = model;
  out.x = x;
  out.y = y;
  out.spec = spec;

  if (spec.decoupled() && spec.metric.is_linf()) {
    const Eigen::Index dim = n + 1;
    const double scale = spec.rescale ? folding::LinfRescaleFactor(n) : 1.0;
    out.layout = ProblemLayout{n, dim, ProblemLayout::RadiusBlock::kScalar, scale};
    out.problem.dim = dim;
    out.problem.objective = [n, dim, scale](const Vector& v) {
      Vector g = Vector::Zero(dim);
      g[n] = scale;
      return sqp::Evaluation{scale * v[n], g};
    };
    AddFamily(out.problem, TwoSidedFamily(x, dim, ProblemLayout::RadiusBlock::kScalar, 0.0),
              2 * n, spec.fold, spec.aggregator);
  } else if (spec.decoupled()) {
    const Eigen::Index dim = 2 * n;
    out.layout = ProblemLayout{n, dim, ProblemLayout::RadiusBlock::kVector, 1.0};
    out.problem.dim = dim;
    out.problem.objective = [n, dim](const Vector& v) {
      Vector g = Vector::Zero(dim);
      g.tail(n).setOnes();
      return sqp::Evaluation{v.tail(n).sum(), g};
    };
    AddFamily(out.problem, TwoSidedFamily(x, dim, ProblemLayout::RadiusBlock::kVector, 0.0),
              2 * n, spec.fold, spec.aggregator);
  } else {
    out.layout = ProblemLayout{n, n, ProblemLayout::RadiusBlock::kNone, 1.0};
    out.problem.dim = n;
    const Metric metric = spec.metric;
    out.problem.objective = [model, x, metric](const Vector& v) {
      const LossValue d = Distance(metric, *model, x, v);
      return sqp::Evaluation{d.value, d.gradient};
    };
  }

  const Eigen::Index dim = out.layout.dim;
  out.problem.inequality_constraints.push_back([model, y, n, dim](const Vector& v) {
    const LossValue m = RawLoss(*model, v.head(n), y, folding::LossKind::kMargin);
    return sqp::Evaluation{-m.value, -Pad(m.gradient, dim)};
  });
  AddBox(out.problem, spec, n, dim);
  return out;
}

AttackProblem Build(std::shared_ptr<const Classifier> model, const Vector& x, int y,
                    const AttackSpec& spec) {
  return spec.formulation == Formulation::kMaxLoss ? BuildMaxLoss(std::move(model), x, y, spec)
                                                   : BuildMinRadius(std::move(model), x, y, spec);
}

Vector InitialPoint(const AttackProblem& problem, std::uint64_t seed, double noise_scale) {
  if (!(noise_scale >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "negative noise scale");
  const Eigen::Index n = problem.layout.n;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-noise_scale, noise_scale);
  Vector xp(n);
  for (Eigen::Index i = 0; i < n; ++i) xp[i] = std::clamp(problem.x[i] + u(rng), 0.0, 1.0);
  Vector v = Vector::Zero(problem.layout.dim);
  v.head(n) = xp;
  constexpr double kRadiusMargin = 1e-3;
  const Vector gap = (xp - problem.x).cwiseAbs();
  if (problem.layout.radius == ProblemLayout::RadiusBlock::kScalar) {
    v[n] = gap.maxCoeff() + kRadiusMargin;
  } else if (problem.layout.radius == ProblemLayout::RadiusBlock::kVector) {
    v.tail(n) = gap.array() + kRadiusMargin;
  }
  return v;
}

// ---------------------------------------------------------------------------

TwoStageConfig TwoStageConfig::MaxLossDefaults() { return TwoStageConfig{10, 20, 400, 1e-2}; }
TwoStageConfig TwoStageConfig::MinRadiusDefaults() { return TwoStageConfig{10, 50, 4000, 1e-2}; }
TwoStageConfig TwoStageConfig::For(Formulation f) {
  return f == Formulation::kMaxLoss ? MaxLossDefaults() : MinRadiusDefaults();
}

void TwoStageConfig::Validate() const {
  if (restarts < 1 || stage1_iterations < 1 || stage1_iterations > max_iterations ||
      !(init_noise_scale >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "two-stage config needs R >= 1 and 1 <= k <= K");
  }
}

std::size_t Screen(const std::vector<sqp::SolverReport>& runs, double tau_v) {
  if (runs.empty()) throw Error(ErrorCode::kInvalidArgument, "nothing to screen");
  std::size_t best = runs.size();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!(runs[i].violation <= tau_v)) continue;
    if (best == runs.size() || runs[i].f_star < runs[best].f_star) best = i;
  }
  if (best != runs.size()) return best;
  best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].violation < runs[best].violation) best = i;
  }
  return best;
}

TwoStageResult TwoStageSolve(const sqp::NonsmoothProblem& problem, const InitFactory& init,
                             std::uint64_t seed, const TwoStageConfig& cfg,
                             sqp::SolverConfig solver) {
  cfg.Validate();
  solver.h0_scaling = false;
  TwoStageResult out;
  std::vector<sqp::SolverReport> reports;
  sqp::SolverConfig short_cfg = solver;
  short_cfg.max_iter = cfg.stage1_iterations;
  for (int r = 0; r < cfg.restarts; ++r) {
    StageRun run;
    run.seed = DeriveSeed(seed, static_cast<std::uint64_t>(r));
    run.x0 = init(run.seed);
    try {
      run.report = sqp::Solve(problem, run.x0, short_cfg);
    } catch (const Error&) {
      // A failed restart only loses the screening.
      run.report.x_star = run.x0;
      run.report.f_star = kInf;
      run.report.violation = kInf;
      run.report.stationarity = kInf;
      run.report.termination = sqp::Termination::kLineSearchFailure;
    }
    reports.push_back(run.report);
    out.stage1.push_back(std::move(run));
  }
  out.winner = Screen(reports, solver.tau_v);
  out.x0 = out.stage1[out.winner].x0;
  sqp::SolverConfig long_cfg = solver;
  long_cfg.max_iter = cfg.max_iterations;
  out.best = sqp::Solve(problem, out.x0, long_cfg);
  return out;
}

// ---------------------------------------------------------------------------

PgdResult Pgd(const Classifier& model, const Vector& x, int y, const AttackSpec& spec,
              const PgdConfig& cfg, const std::function<void(const Vector&)>& on_iterate) {
  if (spec.formulation != Formulation::kMaxLoss) {
    throw Error(ErrorCode::kInvalidArgument, "PGD attacks the max-loss form");
  }
  spec.Validate();
  CheckInputs(model, x, y);
  const bool supported =
      spec.metric.kind == Metric::Kind::kLp && (spec.metric.is_linf() || spec.metric.p == 1.0 ||
                                                spec.metric.p == 2.0);
  if (!supported) {
    throw Error(ErrorCode::kUnsupportedFormulation,
                fmt::format("no PGD projector for metric {}", spec.metric.Name()));
  }
  if (cfg.steps < 0 || !(cfg.step_fraction >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid PGD configuration");
  }
  const double step = cfg.step_fraction * spec.eps;
  auto project = [&](const Vector& w) {
    if (spec.metric.is_linf()) {
      Vector delta(x.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) delta[i] = qp::ProjectLinfBox(x[i], spec.eps, w[i]);
      return Vector(x + delta);
    }
    const Vector delta =
        spec.metric.p == 2.0 ? qp::ProjectL2Ball(w, spec.eps) : qp::ProjectL1Ball(w, spec.eps);
    return Vector((x + delta).cwiseMax(0.0).cwiseMin(1.0));
  };

  PgdResult out{x, RawLoss(model, x, y, spec.loss).value, 0};
  Vector xp = x;
  for (int k = 0; k < cfg.steps; ++k) {
    const LossValue l = RawLoss(model, xp, y, spec.loss);
    xp = project(xp + step * l.gradient - x);
    if (on_iterate) on_iterate(xp);
    const double value = RawLoss(model, xp, y, spec.loss).value;
    if (value > out.loss) {
      out.loss = value;
      out.x_prime = xp;
    }
    out.iterations = k + 1;
  }
  return out;
}

const char* ToString(SolverTag t) { return t == SolverTag::kPwcf ? "pwcf" : "pgd"; }

SolverTag SolverTagFromString(const std::string& name) {
  if (name == "pwcf") return SolverTag::kPwcf;
  if (name == "pgd") return SolverTag::kPgd;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown solver '{}'", name));
}

double OriginalViolation(const Classifier& model, const Vector& x, int y, const AttackSpec& spec,
                         const Vector& x_prime) {
  double v = (-x_prime).cwiseMax(0.0).sum() + (x_prime.array() - 1.0).max(0.0).sum();
  if (spec.formulation == Formulation::kMaxLoss) {
    v += std::max(Distance(spec.metric, model, x, x_prime).value - spec.eps, 0.0);
  } else {
    v += std::max(-MarginLoss(model.Forward(x_prime), y).value, 0.0);
  }
  return v;
}

PerturbationRecord MakeRecord(const Classifier& model, const Vector& x, int y, int sample_id,
                              const AttackSpec& spec, SolverTag solver, const Vector& x_prime,
                              double tau_v) {
  PerturbationRecord r;
  r.sample_id = sample_id;
  r.solver = solver;
  r.formulation = spec.formulation;
  r.loss = spec.loss;
  r.metric = spec.metric.Name();
  r.eps = spec.formulation == Formulation::kMaxLoss ? spec.eps : 0.0;
  r.x_prime = x_prime;
  r.delta = x_prime - x;
  r.violation = OriginalViolation(model, x, y, spec, x_prime);
  r.objective_or_radius = spec.formulation == Formulation::kMaxLoss
                              ? ClippedLossAt(model, x_prime, y, spec.loss).value
                              : Distance(spec.metric, model, x, x_prime).value;
  r.attack_success = MarginLoss(model.Forward(x_prime), y).value > 0.0 && r.violation <= tau_v;
  r.sparsity = SparsityMeasure(r.delta).value_or(std::nan(""));
  return r;
}

PerturbationRecord RunPwcf(std::shared_ptr<const Classifier> model, const Vector& x, int y,
                           int sample_id, const AttackSpec& spec, const PwcfOptions& options,
                           std::uint64_t global_seed) {
  const auto start = std::chrono::steady_clock::now();
  const AttackProblem problem = Build(model, x, y, spec);
  const double noise = options.two_stage.init_noise_scale;
  const TwoStageResult result = TwoStageSolve(
      problem.problem, [&](std::uint64_t s) { return InitialPoint(problem, s, noise); },
      DeriveSeed(global_seed, static_cast<std::uint64_t>(sample_id)), options.two_stage,
      options.solver);
  PerturbationRecord r = MakeRecord(*model, x, y, sample_id, spec, SolverTag::kPwcf,
                                    problem.XPrime(result.best.x_star), options.solver.tau_v);
  r.stationarity = result.best.stationarity;
  r.iterations = result.best.iterations;
  r.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

PerturbationRecord RunPgd(const Classifier& model, const Vector& x, int y, int sample_id,
                          const AttackSpec& spec, const PgdConfig& cfg, double tau_v) {
  const auto start = std::chrono::steady_clock::now();
  const PgdResult result = Pgd(model, x, y, spec, cfg);
  PerturbationRecord r =
      MakeRecord(model, x, y, sample_id, spec, SolverTag::kPgd, result.x_prime, tau_v);
  r.stationarity = std::nan("");
  r.iterations = result.iterations;
  r.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

model::InnerMaximizer MakeInnerMaximizer(InnerSolver solver, const AttackSpec& spec, int steps) {
  if (spec.formulation != Formulation::kMaxLoss) {
    throw Error(ErrorCode::kInvalidArgument, "adversarial training needs a max-loss spec");
  }
  spec.Validate();
  if (steps < 1) throw Error(ErrorCode::kInvalidArgument, "inner steps must be positive");
  if (solver == InnerSolver::kPgd) {
    return [spec, steps](const Classifier& m, const Vector& x, int y, std::uint64_t) {
      return Pgd(m, x, y, spec, PgdConfig{steps, 0.25}).x_prime;
    };
  }
  return [spec, steps](const Classifier& m, const Vector& x, int y, std::uint64_t seed) {
    const AttackProblem problem = BuildMaxLoss(std::make_shared<const Classifier>(m), x, y, spec);
    sqp::SolverConfig cfg;
    cfg.max_iter = steps;
    const auto report = sqp::Solve(problem.problem, InitialPoint(problem, seed, 1e-2), cfg);
    return Vector(problem.XPrime(report.x_star).cwiseMax(0.0).cwiseMin(1.0));
  };
}

}  // namespace pwcf::attacks
