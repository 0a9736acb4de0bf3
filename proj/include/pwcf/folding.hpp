#pragma once

#include <string>

#include "pwcf/numerics.hpp"
#include "pwcf/penalty_sqp.hpp"

namespace pwcf::folding {

// F applied to the nonnegative parts of a constraint group. Each choice
// satisfies F(z) = 0 iff z = 0 on the nonnegative orthant.
enum class Aggregator { kL2, kL1, kMax };

const char* ToString(Aggregator a);
Aggregator AggregatorFromString(const std::string& name);

struct FoldResult {
  double value = 0.0;
  // d value / d c_i, inequalities first then equalities. Zero when every
  // member is satisfied.
  Vector weights;
};

// value = F(max{c_1, 0}, ..., |h_1|, ...). Exact: value == 0 iff every c_i <= 0
// and every h_j == 0, with no underflow in the l2 case. Max ties resolve to
// the lowest index.
FoldResult FoldConstraints(const Vector& ineq, const Vector& eq,
                           Aggregator aggregator = Aggregator::kL2);

// Folded -eps <= x - x' <= eps over the first n = x.size() coordinates of a
// dim-dimensional variable vector (x' leads the layout).
sqp::Oracle LinfToBox(const Vector& x, double eps, Eigen::Index dim,
                      Aggregator aggregator = Aggregator::kL2);
sqp::Oracle LinfToBox(const Vector& x, double eps, Aggregator aggregator = Aggregator::kL2);

// Folded 0 <= x' <= 1 over the first n coordinates.
sqp::Oracle BoxFold(Eigen::Index n, Eigen::Index dim, Aggregator aggregator = Aggregator::kL2);

enum class LossKind { kCrossEntropy, kMargin };

const char* ToString(LossKind k);
LossKind LossKindFromString(const std::string& name);

struct ClippedLoss {
  LossKind base = LossKind::kMargin;
  double clip_at = 0.01;

  static constexpr double kMarginClip = 0.01;
  static ClippedLoss Margin();
  // clip_at = ln(num_classes): the loss once the true-class probability
  // falls to 1 / num_classes.
  static ClippedLoss CrossEntropy(int num_classes);
  static ClippedLoss For(LossKind kind, int num_classes);
};

struct LossValue {
  double value = 0.0;
  Vector gradient;
};

// min(raw, clip_at); the gradient is zeroed when raw > clip_at.
LossValue ClipLoss(const ClippedLoss& loss, double raw_value, const Vector& raw_grad);

// Objective scale of the rescaled min-radius linf form: t * sqrt(n).
double LinfRescaleFactor(Eigen::Index n);

}  // namespace pwcf::folding
