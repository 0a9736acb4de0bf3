#include "pwcf/penalty_sqp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

namespace pwcf::sqp {
namespace {

Evaluation CallOracle(const Oracle& oracle, const Vector& x, Eigen::Index dim, const char* what) {
  Evaluation e = oracle(x);
  if (!std::isfinite(e.value)) {
    throw Error(ErrorCode::kNonFinite, fmt::format("{} oracle returned a non-finite value", what));
  }
  RequireSameSize(e.gradient.size(), dim, what);
  RequireFinite(e.gradient, what);
  return e;
}

constexpr double kNegligibleDecrease = 1e-12;

double Sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

double PointEvaluation::Violation() const {
  double v = 0.0;
  for (const auto& c : inequality) v += std::max(c.value, 0.0);
  for (const auto& h : equality) v += std::abs(h.value);
  return v;
}

Vector PointEvaluation::ConstraintValues() const {
  Vector out(static_cast<Eigen::Index>(inequality.size() + equality.size()));
  Eigen::Index i = 0;
  for (const auto& c : inequality) out[i++] = c.value;
  for (const auto& h : equality) out[i++] = h.value;
  return out;
}

std::vector<bool> PointEvaluation::EqualityMask() const {
  std::vector<bool> mask(inequality.size(), false);
  mask.resize(inequality.size() + equality.size(), true);
  return mask;
}

PointEvaluation Evaluate(const NonsmoothProblem& problem, const Vector& x) {
  RequireSameSize(x.size(), problem.dim, "evaluation point");
  PointEvaluation p;
  p.x = x;
  p.objective = CallOracle(problem.objective, x, problem.dim, "objective");
  p.inequality.reserve(problem.inequality_constraints.size());
  for (const auto& c : problem.inequality_constraints) {
    p.inequality.push_back(CallOracle(c, x, problem.dim, "inequality constraint"));
  }
  p.equality.reserve(problem.equality_constraints.size());
  for (const auto& h : problem.equality_constraints) {
    p.equality.push_back(CallOracle(h, x, problem.dim, "equality constraint"));
  }
  return p;
}

PenaltyValue PenaltyFrom(const PointEvaluation& point, double mu) {
  if (!(mu >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "penalty parameter must be non-negative");
  }
  PenaltyValue out;
  out.violation = point.Violation();
  out.phi = mu * point.objective.value + out.violation;
  out.grad_phi = mu * point.objective.gradient;
  for (const auto& c : point.inequality) {
    if (c.value > 0.0) out.grad_phi += c.gradient;
  }
  for (const auto& h : point.equality) {
    if (h.value != 0.0) out.grad_phi += Sign(h.value) * h.gradient;
  }
  return out;
}

PenaltyValue PenaltyEval(const NonsmoothProblem& problem, const Vector& x, double mu) {
  return PenaltyFrom(Evaluate(problem, x), mu);
}

double LinearViolationModel(const PointEvaluation& point, const Vector& d) {
  RequireSameSize(d.size(), point.x.size(), "violation model direction");
  double l = 0.0;
  for (const auto& c : point.inequality) l += std::max(c.value + c.gradient.dot(d), 0.0);
  for (const auto& h : point.equality) l += std::abs(h.value + h.gradient.dot(d));
  return l;
}

double LinearViolationModel(const NonsmoothProblem& problem, const Vector& x, const Vector& d) {
  return LinearViolationModel(Evaluate(problem, x), d);
}

// ---------------------------------------------------------------------------

void SolverConfig::Validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::kInvalidArgument, what);
  };
  require(mu0 > 0.0, "mu0 must be positive");
  require(c_v > 0.0 && c_v < 1.0, "c_v must lie in (0, 1)");
  require(c_mu > 0.0 && c_mu < 1.0, "c_mu must lie in (0, 1)");
  require(wolfe_c1 > 0.0 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0,
          "Wolfe constants must satisfy 0 < c1 < c2 < 1");
  require(tau_diamond > 0.0 && tau_v > 0.0, "tolerances must be positive");
  require(max_iter >= 0, "max_iter must be non-negative");
  require(grad_history >= 0 && memory >= 0, "history sizes must be non-negative");
  require(eval_distance > 0.0, "eval_distance must be positive");
  require(sample_radius > 0.0 && sample_radius <= eval_distance,
          "sample_radius must be in (0, eval_distance]");
  require(fallback_samples >= 0, "fallback_samples must be non-negative");
  require(max_bisections > 0 && max_expansions >= 0, "line-search caps must be positive");
  require(qp_tolerance > 0.0 && qp_max_iterations > 0, "QP settings must be positive");
}

int SolverConfig::HistoryLength(Eigen::Index dim) const {
  if (grad_history > 0) return grad_history;
  const auto n = static_cast<int>(dim);
  return std::max(1, std::min({100, 2 * n, n + 10}));
}

// ---------------------------------------------------------------------------

namespace {

// Dual direction QP shared across the steering iterations at one point.
class DirectionQp {
 public:
  DirectionQp(const PointEvaluation& point, const InverseHessian& h, const SolverConfig& cfg)
      : cfg_(cfg) {
    const Eigen::Index n = point.x.size();
    const auto m = static_cast<Eigen::Index>(point.inequality.size() + point.equality.size());
    h_grad_f_ = h.Apply(point.objective.gradient);
    a_ = Matrix(n, m);
    Eigen::Index j = 0;
    for (const auto& c : point.inequality) a_.col(j++) = c.gradient;
    for (const auto& e : point.equality) a_.col(j++) = e.gradient;
    h_a_ = Matrix(n, m);
    for (Eigen::Index k = 0; k < m; ++k) h_a_.col(k) = h.Apply(a_.col(k));
    box_.Q = a_.transpose() * h_a_;
    box_.Q = 0.5 * (box_.Q + box_.Q.transpose()).eval();
    box_.lower = Vector::Zero(m);
    box_.lower.tail(static_cast<Eigen::Index>(point.equality.size())).setConstant(-1.0);
    box_.upper = Vector::Ones(m);
    c_ = point.ConstraintValues();
    at_h_grad_f_ = a_.transpose() * h_grad_f_;
  }

  // d = -H (mu grad f + A lambda), lambda maximizing the dual.
  Vector Direction(double mu, bool* converged) const {
    if (a_.cols() == 0) {
      return -mu * h_grad_f_;
    }
    qp::BoxQP problem = box_;
    problem.b = mu * at_h_grad_f_ - c_;
    const auto r = qp::SolveBoxQp(problem, cfg_.qp_tolerance, cfg_.qp_max_iterations);
    if (!r.converged) *converged = false;
    return -(mu * h_grad_f_ + h_a_ * r.solution);
  }

 private:
  const SolverConfig& cfg_;
  Vector h_grad_f_;
  Matrix a_;
  Matrix h_a_;
  qp::BoxQP box_;
  Vector c_;
  Vector at_h_grad_f_;
};

}  // namespace

SteeringResult Steering(const PointEvaluation& point, const InverseHessian& h, double mu,
                        const SolverConfig& cfg) {
  if (!(mu > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "steering needs mu > 0");
  }
  RequireSameSize(h.dim(), point.x.size(), "steering inverse Hessian");
  const DirectionQp qp(point, h, cfg);
  SteeringResult out;
  out.mu = mu;
  out.d = qp.Direction(mu, &out.qp_converged);
  const double v = point.Violation();
  out.predicted_reduction = v - LinearViolationModel(point, out.d);
  if (v <= 0.0 || out.predicted_reduction >= cfg.c_v * v) {
    return out;
  }

  const Vector reference = qp.Direction(0.0, &out.qp_converged);
  const double reference_reduction = v - LinearViolationModel(point, reference);
  while (out.predicted_reduction < cfg.c_v * reference_reduction) {
    if (out.shrinks == cfg.max_steering_shrinks) {
      // Shrinking cannot reach the required reduction (QP noise at a nearly
      // feasible point); take the feasibility direction and keep mu.
      out.mu = mu;
      out.d = reference;
      out.predicted_reduction = reference_reduction;
      break;
    }
    out.mu *= cfg.c_mu;
    ++out.shrinks;
    out.d = qp.Direction(out.mu, &out.qp_converged);
    out.predicted_reduction = v - LinearViolationModel(point, out.d);
  }
  return out;
}

SteeringResult Steering(const NonsmoothProblem& problem, const Vector& x, const InverseHessian& h,
                        double mu, const SolverConfig& cfg) {
  return Steering(Evaluate(problem, x), h, mu, cfg);
}

// ---------------------------------------------------------------------------

LineSearchResult ArmijoWolfe(const NonsmoothProblem& problem, const Vector& x, const Vector& d,
                             double phi0, double dphi0, double mu, const SolverConfig& cfg) {
  RequireSameSize(x.size(), problem.dim, "line search point");
  RequireSameSize(d.size(), problem.dim, "line search direction");
  LineSearchResult out;
  if (!(dphi0 < 0.0)) {
    out.status = LineSearchStatus::kNotDescent;
    return out;
  }
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double t = 1.0;
  int bisections = 0;
  int expansions = 0;
  LineSearchResult armijo_best;
  bool have_armijo = false;
  while (true) {
    const Vector xt = x + t * d;
    ++out.evaluations;
    bool armijo = false;
    bool wolfe = false;
    PointEvaluation point;
    PenaltyValue penalty;
    try {
      point = Evaluate(problem, xt);
      penalty = PenaltyFrom(point, mu);
      armijo = penalty.phi <= phi0 + cfg.wolfe_c1 * t * dphi0;
      wolfe = penalty.grad_phi.dot(d) >= cfg.wolfe_c2 * dphi0;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
      // Treat a blow-up like a failed sufficient-decrease test.
    }
    if (armijo && wolfe) {
      out.status = LineSearchStatus::kAccepted;
      out.t = t;
      out.x = xt;
      out.point = std::move(point);
      out.penalty = std::move(penalty);
      return out;
    }
    if (!armijo) {
      hi = t;
    } else {
      lo = t;
      // Decreases at rounding level do not count as progress.
      const bool significant = phi0 - penalty.phi > kNegligibleDecrease * std::max(1.0, std::abs(phi0));
      if (significant && (!have_armijo || penalty.phi < armijo_best.penalty.phi)) {
        have_armijo = true;
        armijo_best.t = t;
        armijo_best.x = xt;
        armijo_best.point = std::move(point);
        armijo_best.penalty = std::move(penalty);
      }
    }
    if (std::isfinite(hi)) {
      if (++bisections > cfg.max_bisections) break;
      t = 0.5 * (lo + hi);
    } else {
      if (++expansions > cfg.max_expansions) break;
      t = 2.0 * lo;
    }
  }
  if (have_armijo) {
    armijo_best.status = LineSearchStatus::kArmijoOnly;
    armijo_best.evaluations = out.evaluations;
    return armijo_best;
  }
  out.status = LineSearchStatus::kFailure;
  return out;
}

// ---------------------------------------------------------------------------

GradientSample SampleGradients(const PointEvaluation& point) {
  GradientSample s;
  s.x = point.x;
  s.objective = point.objective.gradient;
  s.constraints.reserve(point.inequality.size() + point.equality.size());
  for (const auto& c : point.inequality) s.constraints.push_back(c.gradient);
  for (const auto& h : point.equality) s.constraints.push_back(h.gradient);
  return s;
}

qp::TerminationResult StationarityEstimate(const std::deque<GradientSample>& history,
                                           const Vector& c_values,
                                           const std::vector<bool>& is_equality,
                                           const InverseHessian& h, double mu,
                                           double qp_tolerance, int qp_max_iterations) {
  if (history.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "stationarity estimate needs gradient samples");
  }
  const Eigen::Index n = history.front().objective.size();
  const auto l = static_cast<Eigen::Index>(history.size());
  const std::size_t p = history.front().constraints.size();
  qp::TerminationQP tqp;
  tqp.G.resize(n, l);
  tqp.J.assign(p, Matrix(n, l));
  for (Eigen::Index k = 0; k < l; ++k) {
    const GradientSample& s = history[static_cast<std::size_t>(k)];
    if (s.constraints.size() != p) {
      throw Error(ErrorCode::kDimensionMismatch, "gradient samples disagree on constraint count");
    }
    tqp.G.col(k) = s.objective;
    for (std::size_t i = 0; i < p; ++i) tqp.J[i].col(k) = s.constraints[i];
  }
  tqp.c_values = c_values;
  tqp.is_equality = is_equality;
  tqp.H = &h;
  tqp.mu = mu;
  return qp::SolveTerminationQp(tqp, qp_tolerance, qp_max_iterations);
}

const char* ToString(Termination t) {
  switch (t) {
    case Termination::kToleranceMet:
      return "tolerance_met";
    case Termination::kMaxIter:
      return "max_iter";
    case Termination::kLineSearchFailure:
      return "line_search_failure";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------

namespace {

struct BestIterate {
  bool set = false;
  PointEvaluation point;
  double stationarity = std::numeric_limits<double>::infinity();

  // Feasible points (v <= tau_v) beat infeasible ones; among feasible points
  // the lower objective wins, otherwise the lower violation.
  void Offer(const PointEvaluation& candidate, double stat, double tau_v) {
    const double v = candidate.Violation();
    if (set) {
      const double bv = point.Violation();
      const bool cand_ok = v <= tau_v;
      const bool best_ok = bv <= tau_v;
      bool better;
      if (cand_ok != best_ok) {
        better = cand_ok;
      } else if (cand_ok) {
        better = candidate.objective.value < point.objective.value;
      } else {
        better = v < bv;
      }
      if (!better) return;
    }
    set = true;
    point = candidate;
    stationarity = stat;
  }
};

void Finish(SolverReport& report, const PointEvaluation& point, double stationarity) {
  report.x_star = point.x;
  report.f_star = point.objective.value;
  report.violation = point.Violation();
  report.stationarity = stationarity;
}

}  // namespace

SolverReport Solve(const NonsmoothProblem& problem, const Vector& x0, const SolverConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.Validate();
  RequireSameSize(x0.size(), problem.dim, "initial point");
  RequireFinite(x0, "initial point");

  auto fresh_hessian = [&] {
    return cfg.memory > 0 ? InverseHessian::LimitedMemory(problem.dim, cfg.memory, cfg.h0_scaling)
                          : InverseHessian::Full(problem.dim, cfg.h0_scaling);
  };
  InverseHessian h = fresh_hessian();
  const auto history_length = static_cast<std::size_t>(cfg.HistoryLength(problem.dim));
  double mu = cfg.mu0;

  PointEvaluation point = Evaluate(problem, x0);
  PenaltyValue penalty = PenaltyFrom(point, mu);
  const std::vector<bool> equality_mask = point.EqualityMask();
  std::deque<GradientSample> history;
  history.push_back(SampleGradients(point));

  auto stationarity_at = [&](const PointEvaluation& p) {
    return StationarityEstimate(history, p.ConstraintValues(), equality_mask, h, mu,
                                cfg.qp_tolerance, cfg.qp_max_iterations)
        .stationarity;
  };
  // A nearly singular H can shrink d_diamond without the point being
  // stationary, so a passing estimate is confirmed in the identity metric;
  // when that fails H is reset.
  const InverseHessian identity_metric = InverseHessian::LimitedMemory(problem.dim, 1, false);
  auto certify = [&](const PointEvaluation& p, double stat) {
    if (!(stat < cfg.tau_diamond && p.Violation() < cfg.tau_v)) return false;
    const double plain = StationarityEstimate(history, p.ConstraintValues(), equality_mask,
                                              identity_metric, mu, cfg.qp_tolerance,
                                              cfg.qp_max_iterations)
                             .stationarity;
    if (plain < cfg.tau_diamond) return true;
    h = fresh_hessian();
    return false;
  };

  SolverReport report;
  BestIterate best;
  double stationarity = std::numeric_limits<double>::infinity();
  report.termination = Termination::kMaxIter;

  auto accepted = [](const LineSearchResult& r) {
    return r.status == LineSearchStatus::kAccepted || r.status == LineSearchStatus::kArmijoOnly;
  };
  auto steer_with = [&](const InverseHessian& metric) {
    const SteeringResult steer = Steering(point, metric, mu, cfg);
    if (steer.mu < mu) {
      mu = steer.mu;
      penalty = PenaltyFrom(point, mu);
    }
    return steer.d;
  };
  const int num_samples =
      cfg.fallback_samples > 0 ? cfg.fallback_samples : static_cast<int>(problem.dim) + 1;

  for (int k = 0; k < cfg.max_iter; ++k) {
    Vector d = steer_with(h);
    double dphi0 = penalty.grad_phi.dot(d);
    LineSearchResult ls = ArmijoWolfe(problem, point.x, d, penalty.phi, dphi0, mu, cfg);
    int fallback = 0;

    if (!accepted(ls)) {
      InverseHessian identity = fresh_hessian();
      d = steer_with(identity);
      dphi0 = penalty.grad_phi.dot(d);
      ls = ArmijoWolfe(problem, point.x, d, penalty.phi, dphi0, mu, cfg);
      fallback = 1;
      if (accepted(ls)) h = std::move(identity);
    }

    bool certified = false;
    if (!accepted(ls)) {
      stationarity = stationarity_at(point);
      certified = certify(point, stationarity);
      if (!certified) {
        // Gradients at random points of a small ball around x, so constraints
        // whose subgradient vanishes exactly at x still enter the direction.
        std::mt19937_64 rng(DeriveSeed(static_cast<std::uint64_t>(k), 0x5eed));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        const double n = static_cast<double>(problem.dim);
        for (int j = 0; j < num_samples; ++j) {
          Vector u(problem.dim);
          for (Eigen::Index i = 0; i < problem.dim; ++i) u[i] = normal(rng);
          const double radius = cfg.sample_radius * std::pow(uniform(rng), 1.0 / n);
          try {
            history.push_back(SampleGradients(Evaluate(problem, point.x + radius / u.norm() * u)));
          } catch (const Error& e) {
            if (e.code() != ErrorCode::kNonFinite) throw;
          }
        }
        while (history.size() > history_length) history.pop_front();
        const qp::TerminationResult tr =
            StationarityEstimate(history, point.ConstraintValues(), equality_mask, h, mu,
                                 cfg.qp_tolerance, cfg.qp_max_iterations);
        stationarity = std::min(stationarity, tr.stationarity);
        certified = certify(point, tr.stationarity);
        if (!certified) {
          d = -tr.d_diamond;
          dphi0 = penalty.grad_phi.dot(d);
          ls = ArmijoWolfe(problem, point.x, d, penalty.phi, dphi0, mu, cfg);
          fallback = 2;
        }
      }
    }

    if (!accepted(ls)) {
      if (certified) {
        report.termination = Termination::kToleranceMet;
        Finish(report, point, stationarity);
      } else {
        report.termination = Termination::kLineSearchFailure;
        best.Offer(point, stationarity, cfg.tau_v);
        Finish(report, best.point, best.stationarity);
      }
      report.iterations = k;
      break;
    }

    const Vector s = ls.x - point.x;
    const Vector y = ls.penalty.grad_phi - penalty.grad_phi;
    const double phi_prev = penalty.phi;
    point = std::move(ls.point);
    penalty = std::move(ls.penalty);
    history.push_back(SampleGradients(point));
    while (history.size() > history_length) history.pop_front();
    std::erase_if(history, [&](const GradientSample& g) {
      return (g.x - point.x).norm() > cfg.eval_distance;
    });
    stationarity = stationarity_at(point);

    if (cfg.record_trajectory) {
      IterationRecord rec;
      rec.iteration = k + 1;
      rec.f = point.objective.value;
      rec.violation = penalty.violation;
      rec.mu = mu;
      rec.phi = penalty.phi;
      rec.step = ls.t;
      rec.stationarity = stationarity;
      rec.phi_prev = phi_prev;
      rec.dphi_prev = dphi0;
      rec.dphi_new = penalty.grad_phi.dot(d);
      rec.wolfe = ls.status == LineSearchStatus::kAccepted;
      rec.fallback = fallback;
      if (cfg.record_iterates) rec.x = point.x;
      report.trajectory.push_back(std::move(rec));
    }
    best.Offer(point, stationarity, cfg.tau_v);
    report.iterations = k + 1;

    if (certify(point, stationarity)) {
      report.termination = Termination::kToleranceMet;
      break;
    }
    h.Update(s, y);
  }

  if (report.termination != Termination::kLineSearchFailure) {
    if (!std::isfinite(stationarity)) stationarity = stationarity_at(point);
    Finish(report, point, stationarity);
  }
  report.mu_final = mu;
  report.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace pwcf::sqp
