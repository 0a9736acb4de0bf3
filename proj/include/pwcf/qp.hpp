#pragma once

#include <variant>
#include <vector>

#include "pwcf/numerics.hpp"

namespace pwcf::qp {

// ---------------------------------------------------------------------------
// Euclidean projections onto simple convex sets.

struct Box {
  Vector lower;
  Vector upper;
};
struct L1Ball {
  double radius;
};
struct L2Ball {
  double radius;
};
struct LinfBall {
  double radius;
};
// {z : z >= 0, sum(z) = total}
struct ScaledSimplex {
  double total;
};

using ConvexSet = std::variant<Box, L1Ball, L2Ball, LinfBall, ScaledSimplex>;

Vector Project(const ConvexSet& set, const Vector& v);

Vector ProjectBox(const Vector& v, const Vector& lower, const Vector& upper);
Vector ProjectL1Ball(const Vector& v, double radius);
Vector ProjectL2Ball(const Vector& v, double radius);
Vector ProjectLinfBall(const Vector& v, double radius);
Vector ProjectScaledSimplex(const Vector& v, double total);

// One-dimensional projection of a step w onto {|w| <= eps, x + w in [0, 1]},
// i.e. clamp(w, max(-x, -eps), min(1 - x, eps)). Requires x in [0, 1].
double ProjectLinfBox(double x, double eps, double w);

// ---------------------------------------------------------------------------
// Quadratic programs.

inline constexpr double kDefaultQpTolerance = 1e-10;
inline constexpr int kDefaultQpMaxIterations = 10000;

struct QpResult {
  Vector solution;
  double objective = 0.0;
  // Infinity norm of P(z - grad) - z at the returned point.
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// min 1/2 z'Qz + b'z  s.t.  lower <= z <= upper
struct BoxQP {
  Matrix Q;
  Vector b;
  Vector lower;
  Vector upper;
};

QpResult SolveBoxQp(const BoxQP& qp, double tol = kDefaultQpTolerance,
                    int max_iterations = kDefaultQpMaxIterations);

// min 1/2 z'Qz + b'z where z = (sigma, lambda):
//   sigma >= 0, sum(sigma) = simplex_total   (first `simplex_size` entries)
//   lower <= lambda <= upper                  (remaining entries)
// The box QP above is the special case simplex_size = 0.
struct SimplexBoxQP {
  Matrix Q;
  Vector b;
  Eigen::Index simplex_size = 0;
  double simplex_total = 0.0;
  Vector lower;  // size Q.rows() - simplex_size
  Vector upper;
};

QpResult SolveSimplexBoxQp(const SimplexBoxQP& qp, double tol = kDefaultQpTolerance,
                           int max_iterations = kDefaultQpMaxIterations);

// Stationarity subproblem built from recent gradient samples.
//
//   max  sum_i c_i e'lambda_i - 1/2 |M (sigma; lambda)|^2_{H}
//   s.t. sigma >= 0, e'sigma = mu, lambda_i in [lo_i, 1]
//
// where M = [G, J_1, ..., J_p], G holds objective gradients as columns and
// J_i holds constraint i's gradients at the same iterates. Inequality
// multipliers live in [0, 1]; equality multipliers in [-1, 1].
struct TerminationQP {
  Matrix G;
  std::vector<Matrix> J;
  Vector c_values;
  std::vector<bool> is_equality;  // empty means all inequality
  const InverseHessian* H = nullptr;
  double mu = 1.0;
};

struct TerminationResult {
  Vector sigma;
  Vector lambda;  // stacked per constraint, each block of size G.cols()
  Vector d_diamond;
  double stationarity = 0.0;  // |d_diamond|_2
  QpResult qp;
};

TerminationResult SolveTerminationQp(const TerminationQP& tqp,
                                     double tol = kDefaultQpTolerance,
                                     int max_iterations = kDefaultQpMaxIterations);

}  // namespace pwcf::qp
