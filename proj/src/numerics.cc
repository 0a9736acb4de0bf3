#include "pwcf/numerics.hpp"

#include <cmath>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace pwcf {

const char* ToString(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch:
      return "dimension_mismatch";
    case ErrorCode::kNonFinite:
      return "non_finite";
    case ErrorCode::kInvalidArgument:
      return "invalid_argument";
    case ErrorCode::kUnsupportedFormulation:
      return "unsupported_formulation";
    case ErrorCode::kNotConverged:
      return "not_converged";
    case ErrorCode::kIo:
      return "io";
  }
  return "unknown";
}

void RequireFinite(const Vector& v, std::string_view what) {
  if (!v.allFinite()) {
    throw Error(ErrorCode::kNonFinite, fmt::format("{} has non-finite entries", what));
  }
}

void RequireSameSize(Eigen::Index a, Eigen::Index b, std::string_view what) {
  if (a != b) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("{}: dimension {} does not match {}", what, a, b));
  }
}

InverseHessian::InverseHessian(Eigen::Index dim, int memory, bool scale_initial)
    : dim_(dim), memory_(memory), scale_initial_(scale_initial) {
  if (dim <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "InverseHessian needs a positive dimension");
  }
  if (memory_ == 0) {
    full_ = Matrix::Identity(dim, dim);
  }
}

InverseHessian InverseHessian::Full(Eigen::Index dim, bool scale_initial) {
  return InverseHessian(dim, 0, scale_initial);
}

InverseHessian InverseHessian::LimitedMemory(Eigen::Index dim, int memory,
                                             bool scale_initial) {
  if (memory <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "limited-memory size must be positive");
  }
  return InverseHessian(dim, memory, scale_initial);
}

bool InverseHessian::Update(const Vector& s, const Vector& y) {
  RequireSameSize(s.size(), dim_, "bfgs update s");
  RequireSameSize(y.size(), dim_, "bfgs update y");
  RequireFinite(s, "bfgs update s");
  RequireFinite(y, "bfgs update y");

  const double sy = s.dot(y);
  if (!(sy > kCurvatureSkip * s.norm() * y.norm())) {
    return false;
  }
  const double rho = 1.0 / sy;

  if (scale_initial_ && !scaled_) {
    gamma_ = sy / y.squaredNorm();
    if (memory_ == 0) {
      full_ = gamma_ * Matrix::Identity(dim_, dim_);
    }
  }
  scaled_ = true;

  if (memory_ > 0) {
    if (static_cast<int>(pairs_.size()) == memory_) {
      pairs_.pop_front();
    }
    pairs_.push_back(Pair{s, y, rho});
    return true;
  }

  // H' = (I - rho s y') H (I - rho y s') + rho s s'
  const Vector hy = full_ * y;
  const double yhy = y.dot(hy);
  full_.noalias() -= rho * (s * hy.transpose() + hy * s.transpose());
  full_.noalias() += (rho * rho * yhy + rho) * (s * s.transpose());
  full_ = 0.5 * (full_ + full_.transpose()).eval();
  return true;
}

Vector InverseHessian::Apply(const Vector& g) const {
  RequireSameSize(g.size(), dim_, "inverse Hessian product");
  if (memory_ == 0) {
    return full_ * g;
  }
  Vector q = g;
  std::vector<double> alpha(pairs_.size());
  for (std::size_t i = pairs_.size(); i-- > 0;) {
    alpha[i] = pairs_[i].rho * pairs_[i].s.dot(q);
    q -= alpha[i] * pairs_[i].y;
  }
  q *= gamma_;
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    const double beta = pairs_[i].rho * pairs_[i].y.dot(q);
    q += (alpha[i] - beta) * pairs_[i].s;
  }
  return q;
}

Matrix InverseHessian::Dense() const {
  if (memory_ == 0) {
    return full_;
  }
  Matrix out(dim_, dim_);
  for (Eigen::Index j = 0; j < dim_; ++j) {
    out.col(j) = Apply(Vector::Unit(dim_, j));
  }
  return out;
}

InverseHessian BfgsUpdate(InverseHessian h, const Vector& s, const Vector& y) {
  h.Update(s, y);
  return h;
}

Vector ApplyInverseHessian(const InverseHessian& h, const Vector& g) { return h.Apply(g); }

Vector FiniteDiffGrad(const ScalarField& f, const Vector& x, double h) {
  if (!(h > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "finite-difference step must be positive");
  }
  Vector grad(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorCode::kNonFinite,
                  fmt::format("finite difference oracle returned non-finite at coordinate {}", i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

std::optional<double> SparsityMeasure(const Vector& delta) {
  RequireFinite(delta, "perturbation");
  const double m = delta.lpNorm<Eigen::Infinity>();
  if (m == 0.0) return std::nullopt;
  const Vector r = delta / m;
  return r.lpNorm<1>() / r.norm();
}

std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed ^ (stream * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace pwcf
