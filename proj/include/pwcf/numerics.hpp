#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string_view>

#include <Eigen/Dense>

#include "pwcf/error.hpp"

namespace pwcf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Throws kNonFinite if any entry of v is NaN or Inf. `what` names the value in
// the error message.
void RequireFinite(const Vector& v, std::string_view what);
void RequireSameSize(Eigen::Index a, Eigen::Index b, std::string_view what);

// Inverse-Hessian approximation for BFGS. Stores the *inverse* of the Hessian
// model, so Apply(g) returns H^{-1} g in the usual notation.
//
// Full mode keeps a dense symmetric matrix. Limited-memory mode keeps the m
// most recent curvature pairs and evaluates products with the two-loop
// recursion. Both start from the identity; with `scale_initial` set, the first
// accepted pair rescales the initial matrix by y's/y'y before updating.
class InverseHessian {
 public:
  struct Pair {
    Vector s;
    Vector y;
    double rho;  // 1 / (y's)
  };

  // Skip rule: the update is ignored when y's <= kCurvatureSkip * |s| |y|.
  static constexpr double kCurvatureSkip = 1e-10;
  static constexpr int kDefaultMemory = 20;

  static InverseHessian Full(Eigen::Index dim, bool scale_initial = false);
  static InverseHessian LimitedMemory(Eigen::Index dim, int memory = kDefaultMemory,
                                      bool scale_initial = false);

  Eigen::Index dim() const { return dim_; }
  bool limited_memory() const { return memory_ > 0; }
  int memory() const { return memory_; }
  const std::deque<Pair>& pairs() const { return pairs_; }
  double initial_scale() const { return gamma_; }

  // Returns true when the pair was applied, false when skipped for curvature.
  bool Update(const Vector& s, const Vector& y);

  Vector Apply(const Vector& g) const;

  // Materializes the matrix. In limited-memory mode this applies the recursion
  // to each unit vector, so it is O(n^2 m); used by tests and small QPs.
  Matrix Dense() const;

 private:
  InverseHessian(Eigen::Index dim, int memory, bool scale_initial);

  Eigen::Index dim_ = 0;
  int memory_ = 0;  // 0 means full mode
  bool scale_initial_ = false;
  bool scaled_ = false;
  double gamma_ = 1.0;
  Matrix full_;
  std::deque<Pair> pairs_;
};

// Value-returning form of the update, for call sites that want H unchanged.
InverseHessian BfgsUpdate(InverseHessian h, const Vector& s, const Vector& y);
Vector ApplyInverseHessian(const InverseHessian& h, const Vector& g);

using ScalarField = std::function<double(const Vector&)>;

// Central differences, (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Vector FiniteDiffGrad(const ScalarField& f, const Vector& x, double h = 1e-6);

// |delta|_1 / |delta|_2 in [1, sqrt(n)]; empty for delta = 0.
std::optional<double> SparsityMeasure(const Vector& delta);

// splitmix64 of (seed, stream): per-sample seeds independent of scheduling.
std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t stream);

}  // namespace pwcf
