#include "pwcf/qp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace pwcf::qp {
namespace {

void RequireRadius(double r, const char* what) {
  if (!(r > 0.0) || !std::isfinite(r)) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("{} radius must be positive", what));
  }
}

}  // namespace

Vector ProjectBox(const Vector& v, const Vector& lower, const Vector& upper) {
  RequireSameSize(lower.size(), v.size(), "box lower bound");
  RequireSameSize(upper.size(), v.size(), "box upper bound");
  RequireFinite(v, "projection input");
  if ((lower.array() > upper.array()).any()) {
    throw Error(ErrorCode::kInvalidArgument, "box lower bound exceeds upper bound");
  }
  return v.cwiseMax(lower).cwiseMin(upper);
}

Vector ProjectScaledSimplex(const Vector& v, double total) {
  RequireFinite(v, "projection input");
  if (!(total >= 0.0) || !std::isfinite(total)) {
    throw Error(ErrorCode::kInvalidArgument, "simplex total must be non-negative");
  }
  const Eigen::Index n = v.size();
  if (n == 0) {
    if (total != 0.0) {
      throw Error(ErrorCode::kInvalidArgument, "empty simplex with non-zero total");
    }
    return v;
  }
  if (total == 0.0) {
    return Vector::Zero(n);
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return v[a] > v[b]; });
  double running = 0.0;
  double theta = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    running += v[order[static_cast<std::size_t>(j)]];
    const double candidate = (running - total) / static_cast<double>(j + 1);
    if (v[order[static_cast<std::size_t>(j)]] - candidate > 0.0) {
      theta = candidate;
    }
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

Vector ProjectL1Ball(const Vector& v, double radius) {
  RequireRadius(radius, "l1 ball");
  RequireFinite(v, "projection input");
  if (v.lpNorm<1>() <= radius) {
    return v;
  }
  const Vector magnitude = ProjectScaledSimplex(v.cwiseAbs(), radius);
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out[i] = v[i] < 0.0 ? -magnitude[i] : magnitude[i];
  }
  return out;
}

Vector ProjectL2Ball(const Vector& v, double radius) {
  RequireRadius(radius, "l2 ball");
  RequireFinite(v, "projection input");
  const double norm = v.norm();
  if (norm <= radius) {
    return v;
  }
  return (radius / norm) * v;
}

Vector ProjectLinfBall(const Vector& v, double radius) {
  RequireRadius(radius, "linf ball");
  RequireFinite(v, "projection input");
  return v.cwiseMax(-radius).cwiseMin(radius);
}

Vector Project(const ConvexSet& set, const Vector& v) {
  struct Visitor {
    const Vector& v;
    Vector operator()(const Box& s) const { return ProjectBox(v, s.lower, s.upper); }
    Vector operator()(const L1Ball& s) const { return ProjectL1Ball(v, s.radius); }
    Vector operator()(const L2Ball& s) const { return ProjectL2Ball(v, s.radius); }
    Vector operator()(const LinfBall& s) const { return ProjectLinfBall(v, s.radius); }
    Vector operator()(const ScaledSimplex& s) const { return ProjectScaledSimplex(v, s.total); }
  };
  return std::visit(Visitor{v}, set);
}

double ProjectLinfBox(double x, double eps, double w) {
  if (!(x >= 0.0 && x <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "ProjectLinfBox requires x in [0, 1]");
  }
  RequireRadius(eps, "linf box");
  if (!std::isfinite(w)) {
    throw Error(ErrorCode::kNonFinite, "ProjectLinfBox step is non-finite");
  }
  const double lo = std::max(-x, -eps);
  const double hi = std::min(1.0 - x, eps);
  return std::clamp(w, lo, hi);
}

// ---------------------------------------------------------------------------

namespace {

class FeasibleSet {
 public:
  explicit FeasibleSet(const SimplexBoxQP& qp)
      : k_(qp.simplex_size), total_(qp.simplex_total), lower_(qp.lower), upper_(qp.upper) {}

  Vector Project(const Vector& z) const {
    Vector out(z.size());
    if (k_ > 0) {
      out.head(k_) = ProjectScaledSimplex(z.head(k_), total_);
    }
    const Eigen::Index m = z.size() - k_;
    out.tail(m) = z.tail(m).cwiseMax(lower_).cwiseMin(upper_);
    return out;
  }

  Eigen::Index simplex_size() const { return k_; }
  double total() const { return total_; }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }

 private:
  Eigen::Index k_;
  double total_;
  Vector lower_;
  Vector upper_;
};

double Objective(const SimplexBoxQP& qp, const Vector& z) {
  return 0.5 * z.dot(qp.Q * z) + qp.b.dot(z);
}

// Solves the equality-constrained QP on the face of the feasible set that
// contains z, then walks from z toward that minimizer until a bound is hit.
// Returns true if z moved and the objective did not increase.
bool PolishOnFace(const SimplexBoxQP& qp, const FeasibleSet& set, Vector& z) {
  const Eigen::Index n = z.size();
  const Eigen::Index k = set.simplex_size();
  std::vector<Eigen::Index> free;
  bool free_simplex = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i < k) {
      if (z[i] > 0.0) {
        free.push_back(i);
        free_simplex = true;
      }
    } else {
      const Eigen::Index j = i - k;
      if (z[i] > set.lower()[j] && z[i] < set.upper()[j]) {
        free.push_back(i);
      }
    }
  }
  if (free.empty()) {
    return false;
  }
  const auto nf = static_cast<Eigen::Index>(free.size());
  const Eigen::Index size = nf + (free_simplex ? 1 : 0);
  Matrix kkt = Matrix::Zero(size, size);
  Vector rhs(size);

  // Gradient contribution of the fixed coordinates.
  Vector fixed = z;
  for (Eigen::Index i : free) {
    fixed[i] = 0.0;
  }
  const Vector q_fixed = qp.Q * fixed;
  for (Eigen::Index a = 0; a < nf; ++a) {
    for (Eigen::Index c = 0; c < nf; ++c) {
      kkt(a, c) = qp.Q(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(c)]);
    }
    const Eigen::Index i = free[static_cast<std::size_t>(a)];
    rhs[a] = -(qp.b[i] + q_fixed[i]);
    if (free_simplex && i < k) {
      kkt(a, nf) = 1.0;
      kkt(nf, a) = 1.0;
    }
  }
  if (free_simplex) {
    rhs[nf] = set.total();
  }

  const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(kkt);
  const Vector sol = cod.solve(rhs);
  const double scale = 1.0 + rhs.lpNorm<Eigen::Infinity>() + kkt.lpNorm<Eigen::Infinity>();
  if (!sol.allFinite() || (kkt * sol - rhs).lpNorm<Eigen::Infinity>() > 1e-9 * scale) {
    return false;
  }

  Vector step = Vector::Zero(n);
  for (Eigen::Index a = 0; a < nf; ++a) {
    const Eigen::Index i = free[static_cast<std::size_t>(a)];
    step[i] = sol[a] - z[i];
  }
  if (step.lpNorm<Eigen::Infinity>() == 0.0) {
    return false;
  }

  // Ratio test against the bounds of the free coordinates.
  double tau = 1.0;
  for (Eigen::Index i : free) {
    if (step[i] == 0.0) continue;
    if (i < k) {
      if (step[i] < 0.0) tau = std::min(tau, -z[i] / step[i]);
    } else {
      const Eigen::Index j = i - k;
      if (step[i] < 0.0) tau = std::min(tau, (set.lower()[j] - z[i]) / step[i]);
      if (step[i] > 0.0) tau = std::min(tau, (set.upper()[j] - z[i]) / step[i]);
    }
  }
  tau = std::max(tau, 0.0);
  if (tau == 0.0) {
    return false;
  }
  Vector candidate = set.Project(z + tau * step);
  if (Objective(qp, candidate) <= Objective(qp, z)) {
    z = std::move(candidate);
    return true;
  }
  return false;
}

void ValidateQp(const SimplexBoxQP& qp) {
  const Eigen::Index n = qp.Q.rows();
  RequireSameSize(qp.Q.cols(), n, "QP Hessian columns");
  RequireSameSize(qp.b.size(), n, "QP linear term");
  if (qp.simplex_size < 0 || qp.simplex_size > n) {
    throw Error(ErrorCode::kInvalidArgument, "QP simplex block larger than problem");
  }
  RequireSameSize(qp.lower.size(), n - qp.simplex_size, "QP lower bound");
  RequireSameSize(qp.upper.size(), n - qp.simplex_size, "QP upper bound");
  if (!qp.Q.allFinite() || !qp.b.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "QP data has non-finite entries");
  }
  if ((qp.lower.array() > qp.upper.array()).any()) {
    throw Error(ErrorCode::kInvalidArgument, "QP lower bound exceeds upper bound");
  }
  if (qp.simplex_size > 0 && !(qp.simplex_total >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "QP simplex total must be non-negative");
  }
  const double asym = (qp.Q - qp.Q.transpose()).lpNorm<Eigen::Infinity>();
  if (asym > 1e-9 * (1.0 + qp.Q.lpNorm<Eigen::Infinity>())) {
    throw Error(ErrorCode::kInvalidArgument, "QP Hessian is not symmetric");
  }
}

}  // namespace

QpResult SolveSimplexBoxQp(const SimplexBoxQP& qp, double tol, int max_iterations) {
  ValidateQp(qp);
  if (!(tol > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "QP tolerance must be positive");
  }
  const FeasibleSet set(qp);
  const Eigen::Index n = qp.Q.rows();

  QpResult result;
  if (n == 0) {
    result.solution = Vector::Zero(0);
    result.converged = true;
    return result;
  }

  Vector z = set.Project(Vector::Zero(n));
  Vector g = qp.Q * z + qp.b;
  const double qmax = qp.Q.cwiseAbs().rowwise().sum().maxCoeff();
  double alpha = qmax > 0.0 ? 1.0 / qmax : 1.0;
  constexpr double kAlphaMin = 1e-12;
  constexpr double kAlphaMax = 1e12;
  constexpr int kPolishEvery = 8;

  int it = 0;
  for (; it < max_iterations; ++it) {
    result.kkt_residual = (set.Project(z - g) - z).lpNorm<Eigen::Infinity>();
    if (result.kkt_residual <= tol) {
      result.converged = true;
      break;
    }
    if (it % kPolishEvery == kPolishEvery - 1) {
      bool moved = false;
      for (Eigen::Index pass = 0; pass <= n && PolishOnFace(qp, set, z); ++pass) {
        moved = true;
      }
      if (moved) {
        g = qp.Q * z + qp.b;
        continue;
      }
    }
    const Vector d = set.Project(z - alpha * g) - z;
    const double gd = g.dot(d);
    const Vector qd = qp.Q * d;
    const double dqd = d.dot(qd);
    if (gd >= 0.0) {
      // Numerically stalled along the projected arc; shrink and retry.
      alpha = std::max(kAlphaMin, 0.5 * alpha);
      continue;
    }
    const double t = dqd > 0.0 ? std::min(1.0, -gd / dqd) : 1.0;
    z += t * d;
    g += t * qd;
    alpha = dqd > 0.0 ? std::clamp(d.squaredNorm() / dqd, kAlphaMin, kAlphaMax) : kAlphaMax;
  }
  // Guard against drift off the feasible set from accumulated updates.
  z = set.Project(z);
  g = qp.Q * z + qp.b;
  result.kkt_residual = (set.Project(z - g) - z).lpNorm<Eigen::Infinity>();
  result.converged = result.kkt_residual <= tol;
  result.iterations = it;
  result.objective = Objective(qp, z);
  result.solution = std::move(z);
  return result;
}

QpResult SolveBoxQp(const BoxQP& qp, double tol, int max_iterations) {
  SimplexBoxQP general;
  general.Q = qp.Q;
  general.b = qp.b;
  general.simplex_size = 0;
  general.lower = qp.lower;
  general.upper = qp.upper;
  return SolveSimplexBoxQp(general, tol, max_iterations);
}

TerminationResult SolveTerminationQp(const TerminationQP& tqp, double tol, int max_iterations) {
  if (tqp.H == nullptr) {
    throw Error(ErrorCode::kInvalidArgument, "termination QP needs an inverse Hessian");
  }
  if (!(tqp.mu >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "termination QP needs mu >= 0");
  }
  const Eigen::Index dim = tqp.G.rows();
  const Eigen::Index l = tqp.G.cols();
  if (l == 0) {
    throw Error(ErrorCode::kInvalidArgument, "termination QP needs at least one gradient sample");
  }
  RequireSameSize(tqp.H->dim(), dim, "termination QP inverse Hessian");
  const auto p = static_cast<Eigen::Index>(tqp.J.size());
  RequireSameSize(tqp.c_values.size(), p, "termination QP constraint values");
  if (!tqp.is_equality.empty()) {
    RequireSameSize(static_cast<Eigen::Index>(tqp.is_equality.size()), p,
                    "termination QP equality flags");
  }

  const Eigen::Index cols = l * (1 + p);
  Matrix m(dim, cols);
  m.leftCols(l) = tqp.G;
  for (Eigen::Index i = 0; i < p; ++i) {
    const Matrix& ji = tqp.J[static_cast<std::size_t>(i)];
    RequireSameSize(ji.rows(), dim, "termination QP constraint gradient rows");
    RequireSameSize(ji.cols(), l, "termination QP constraint gradient columns");
    m.middleCols(l * (1 + i), l) = ji;
  }
  Matrix hm(dim, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    hm.col(j) = tqp.H->Apply(m.col(j));
  }

  SimplexBoxQP qp;
  qp.Q = m.transpose() * hm;
  qp.Q = 0.5 * (qp.Q + qp.Q.transpose()).eval();
  qp.b = Vector::Zero(cols);
  qp.simplex_size = l;
  qp.simplex_total = tqp.mu;
  qp.lower.resize(l * p);
  qp.upper = Vector::Ones(l * p);
  for (Eigen::Index i = 0; i < p; ++i) {
    const bool eq = !tqp.is_equality.empty() && tqp.is_equality[static_cast<std::size_t>(i)];
    qp.lower.segment(l * i, l).setConstant(eq ? -1.0 : 0.0);
    qp.b.segment(l * (1 + i), l).setConstant(-tqp.c_values[i]);
  }

  TerminationResult out;
  out.qp = SolveSimplexBoxQp(qp, tol, max_iterations);
  out.sigma = out.qp.solution.head(l);
  out.lambda = out.qp.solution.tail(l * p);
  out.d_diamond = hm * out.qp.solution;
  out.stationarity = out.d_diamond.norm();
  return out;
}

}  // namespace pwcf::qp
