#include "pwcf/folding.hpp"

#include <cmath>
#include <string>

#include <fmt/format.h>

namespace pwcf::folding {

const char* ToString(Aggregator a) {
  switch (a) {
    case Aggregator::kL2:
      return "l2";
    case Aggregator::kL1:
      return "l1";
    case Aggregator::kMax:
      return "max";
  }
  return "unknown";
}

Aggregator AggregatorFromString(const std::string& name) {
  if (name == "l2") return Aggregator::kL2;
  if (name == "l1") return Aggregator::kL1;
  if (name == "max") return Aggregator::kMax;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown aggregator '{}'", name));
}

FoldResult FoldConstraints(const Vector& ineq, const Vector& eq, Aggregator aggregator) {
  const Eigen::Index p = ineq.size();
  const Eigen::Index total = p + eq.size();
  if (total == 0) throw Error(ErrorCode::kInvalidArgument, "cannot fold an empty constraint group");
  RequireFinite(ineq, "folded inequality values");
  RequireFinite(eq, "folded equality values");

  // z: nonnegative parts; sign: d z_i / d (member i).
  Vector z(total);
  Vector sign(total);
  for (Eigen::Index i = 0; i < p; ++i) {
    z[i] = ineq[i] > 0.0 ? ineq[i] : 0.0;
    sign[i] = ineq[i] > 0.0 ? 1.0 : 0.0;
  }
  for (Eigen::Index j = 0; j < eq.size(); ++j) {
    z[p + j] = std::abs(eq[j]);
    sign[p + j] = eq[j] > 0.0 ? 1.0 : (eq[j] < 0.0 ? -1.0 : 0.0);
  }

  FoldResult out;
  out.weights = Vector::Zero(total);
  switch (aggregator) {
    case Aggregator::kL2: {
      const double m = z.maxCoeff();
      if (m == 0.0) return out;
      // Scaled so that tiny members cannot underflow to a zero fold.
      const Vector r = z / m;
      const double norm_r = std::sqrt(r.squaredNorm());
      out.value = m * norm_r;
      out.weights = sign.cwiseProduct(r) / norm_r;
      break;
    }
    case Aggregator::kL1:
      out.value = z.sum();
      out.weights = sign;
      break;
    case Aggregator::kMax: {
      Eigen::Index k = 0;
      for (Eigen::Index i = 1; i < total; ++i) {
        if (z[i] > z[k]) k = i;
      }
      out.value = z[k];
      if (out.value > 0.0) out.weights[k] = sign[k];
      break;
    }
  }
  return out;
}

sqp::Oracle LinfToBox(const Vector& x, double eps, Eigen::Index dim, Aggregator aggregator) {
  RequireFinite(x, "linf center");
  if (!(eps > 0.0) || !std::isfinite(eps)) {
    throw Error(ErrorCode::kInvalidArgument, "linf budget must be positive");
  }
  if (dim < x.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "variable vector shorter than the image block");
  }
  return [x, eps, dim, aggregator](const Vector& v) {
    RequireSameSize(v.size(), dim, "linf fold argument");
    const Eigen::Index n = x.size();
    const Vector diff = v.head(n) - x;
    Vector ineq(2 * n);
    ineq << diff.array() - eps, -diff.array() - eps;
    const FoldResult fold = FoldConstraints(ineq, Vector(), aggregator);
    sqp::Evaluation e{fold.value, Vector::Zero(dim)};
    e.gradient.head(n) = fold.weights.head(n) - fold.weights.tail(n);
    return e;
  };
}

sqp::Oracle LinfToBox(const Vector& x, double eps, Aggregator aggregator) {
  return LinfToBox(x, eps, x.size(), aggregator);
}

sqp::Oracle BoxFold(Eigen::Index n, Eigen::Index dim, Aggregator aggregator) {
  if (n <= 0 || dim < n) throw Error(ErrorCode::kDimensionMismatch, "invalid box fold layout");
  return [n, dim, aggregator](const Vector& v) {
    RequireSameSize(v.size(), dim, "box fold argument");
    Vector ineq(2 * n);
    ineq << -v.head(n), v.head(n).array() - 1.0;
    const FoldResult fold = FoldConstraints(ineq, Vector(), aggregator);
    sqp::Evaluation e{fold.value, Vector::Zero(dim)};
    e.gradient.head(n) = fold.weights.tail(n) - fold.weights.head(n);
    return e;
  };
}

const char* ToString(LossKind k) {
  return k == LossKind::kMargin ? "margin" : "ce";
}

LossKind LossKindFromString(const std::string& name) {
  if (name == "margin") return LossKind::kMargin;
  if (name == "ce" || name == "cross_entropy") return LossKind::kCrossEntropy;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown loss '{}'", name));
}

ClippedLoss ClippedLoss::Margin() { return ClippedLoss{LossKind::kMargin, kMarginClip}; }

ClippedLoss ClippedLoss::CrossEntropy(int num_classes) {
  if (num_classes < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two classes");
  return ClippedLoss{LossKind::kCrossEntropy, std::log(static_cast<double>(num_classes))};
}

ClippedLoss ClippedLoss::For(LossKind kind, int num_classes) {
  return kind == LossKind::kMargin ? Margin() : CrossEntropy(num_classes);
}

LossValue ClipLoss(const ClippedLoss& loss, double raw_value, const Vector& raw_grad) {
  if (raw_value > loss.clip_at) return LossValue{loss.clip_at, Vector::Zero(raw_grad.size())};
  return LossValue{raw_value, raw_grad};
}

double LinfRescaleFactor(Eigen::Index n) { return std::sqrt(static_cast<double>(n)); }

}  // namespace pwcf::folding
