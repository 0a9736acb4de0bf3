#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "pwcf/numerics.hpp"
#include "pwcf/qp.hpp"

namespace pwcf::sqp {

// Value and one (sub)gradient of a scalar function at a point.
struct Evaluation {
  double value = 0.0;
  Vector gradient;
};

using Oracle = std::function<Evaluation(const Vector&)>;

// min f(x)  s.t.  c_i(x) <= 0,  h_j(x) = 0.
// Oracles must be pure; at kinks they may return any Clarke subgradient, but
// the choice must be deterministic.
struct NonsmoothProblem {
  Eigen::Index dim = 0;
  Oracle objective;
  std::vector<Oracle> inequality_constraints;
  std::vector<Oracle> equality_constraints;

  std::size_t num_constraints() const {
    return inequality_constraints.size() + equality_constraints.size();
  }
};

// Every oracle evaluated once at x. Inequalities come first wherever the
// constraints are stacked.
struct PointEvaluation {
  Vector x;
  Evaluation objective;
  std::vector<Evaluation> inequality;
  std::vector<Evaluation> equality;

  // v(x) = sum max(c_i, 0) + sum |h_j|
  double Violation() const;
  Vector ConstraintValues() const;
  std::vector<bool> EqualityMask() const;
};

PointEvaluation Evaluate(const NonsmoothProblem& problem, const Vector& x);

struct PenaltyValue {
  double phi = 0.0;
  Vector grad_phi;
  double violation = 0.0;
};

// phi = mu f + v. Subgradient choice: c_i = 0 is inactive, h_j = 0
// contributes nothing.
PenaltyValue PenaltyEval(const NonsmoothProblem& problem, const Vector& x, double mu);
PenaltyValue PenaltyFrom(const PointEvaluation& point, double mu);

// l(d; x) = sum max(c_i + grad c_i' d, 0) + sum |h_j + grad h_j' d|
double LinearViolationModel(const NonsmoothProblem& problem, const Vector& x, const Vector& d);
double LinearViolationModel(const PointEvaluation& point, const Vector& d);

struct SolverConfig {
  double mu0 = 1.0;
  double c_v = 0.9;
  double c_mu = 0.5;
  double tau_diamond = 1e-2;
  double tau_v = 1e-2;
  int max_iter = 1000;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.5;
  int max_bisections = 50;
  int max_expansions = 50;
  // Number of recent iterates whose gradients enter the stationarity QP.
  // 0 selects min(100, 2n, n + 10).
  int grad_history = 0;
  // Samples taken farther than this (2-norm) from the current iterate are
  // dropped from the stationarity QP.
  double eval_distance = 1e-4;
  // Radius of the ball sampled for the gradient-sampling fallback direction,
  // and the number of samples (0 selects n + 1).
  double sample_radius = 1e-6;
  int fallback_samples = 0;
  // 0 keeps a dense inverse Hessian; > 0 switches to limited memory.
  int memory = 0;
  bool h0_scaling = true;
  int max_steering_shrinks = 30;
  double qp_tolerance = qp::kDefaultQpTolerance;
  int qp_max_iterations = qp::kDefaultQpMaxIterations;
  bool record_trajectory = false;
  // Also store x in each trajectory entry (needs record_trajectory).
  bool record_iterates = false;

  void Validate() const;
  int HistoryLength(Eigen::Index dim) const;
};

struct SteeringResult {
  Vector d;
  double mu = 0.0;
  int shrinks = 0;
  // Predicted violation reduction v(x) - l(d; x) of the returned direction.
  double predicted_reduction = 0.0;
  bool qp_converged = true;
};

// Penalty-parameter steering: solve the dual direction QP at mu; if the
// predicted violation reduction is below c_v v(x), compute the mu = 0
// reference direction and shrink mu by c_mu until the reduction reaches c_v
// times the reference reduction. If max_steering_shrinks halvings do not
// get there, the reference direction is returned with mu unchanged.
SteeringResult Steering(const NonsmoothProblem& problem, const Vector& x, const InverseHessian& h,
                        double mu, const SolverConfig& cfg);
SteeringResult Steering(const PointEvaluation& point, const InverseHessian& h, double mu,
                        const SolverConfig& cfg);

// kArmijoOnly: the bracket was exhausted; the returned point is the trial
// with the lowest phi among those with sufficient decrease, provided phi
// dropped by more than 1e-12 max(1, |phi0|).
enum class LineSearchStatus { kAccepted, kArmijoOnly, kNotDescent, kFailure };

struct LineSearchResult {
  LineSearchStatus status = LineSearchStatus::kFailure;
  double t = 0.0;
  Vector x;
  PointEvaluation point;
  PenaltyValue penalty;
  int evaluations = 0;
};

// Weak Wolfe bracketing (doubling, then bisection) on phi(x + t d) at fixed mu.
LineSearchResult ArmijoWolfe(const NonsmoothProblem& problem, const Vector& x, const Vector& d,
                             double phi0, double dphi0, double mu, const SolverConfig& cfg);

// Gradients of f and of every constraint (inequalities first) at one iterate.
struct GradientSample {
  Vector x;
  Vector objective;
  std::vector<Vector> constraints;
};

GradientSample SampleGradients(const PointEvaluation& point);

// Builds G and J_i from the given samples (oldest first), solves the
// termination QP and returns its solution; `.stationarity` is |d_diamond|.
qp::TerminationResult StationarityEstimate(const std::deque<GradientSample>& history,
                                           const Vector& c_values,
                                           const std::vector<bool>& is_equality,
                                           const InverseHessian& h, double mu,
                                           double qp_tolerance = qp::kDefaultQpTolerance,
                                           int qp_max_iterations = qp::kDefaultQpMaxIterations);

enum class Termination { kToleranceMet, kMaxIter, kLineSearchFailure };

const char* ToString(Termination t);

struct IterationRecord {
  int iteration = 0;
  double f = 0.0;
  double violation = 0.0;
  double mu = 0.0;
  double phi = 0.0;
  double step = 0.0;
  double stationarity = 0.0;
  // Wolfe data of the accepted step, for post-hoc verification.
  double phi_prev = 0.0;
  double dphi_prev = 0.0;
  double dphi_new = 0.0;
  bool wolfe = true;  // false for an Armijo-only step
  // 0: BFGS steering, 1: steering with H reset to I, 2: sampled gradients.
  int fallback = 0;
  Vector x;  // filled only with record_iterates
};

struct SolverReport {
  Vector x_star;
  double f_star = 0.0;
  double violation = 0.0;
  double stationarity = 0.0;
  double mu_final = 0.0;
  Termination termination = Termination::kMaxIter;
  int iterations = 0;
  std::vector<IterationRecord> trajectory;
  double wall_time_ms = 0.0;
};

SolverReport Solve(const NonsmoothProblem& problem, const Vector& x0, const SolverConfig& cfg);

}  // namespace pwcf::sqp
