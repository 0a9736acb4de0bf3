#pragma once

// Invariant suites run by `pwcf verify` and the acceptance binary. Each check
// is timed and fails if it overruns its budget.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pwcf::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double budget_seconds = 0.0;
};

struct Outcome {
  bool ok = false;
  std::string detail;
};

// Runs body, timing it. Exceptions become failures.
CheckResult Timed(std::string name, double budget_seconds, const std::function<Outcome()>& body);

// Closed-form linf-box projector against both sequential compositions.
CheckResult ProjectionLinfBox(int trials = 100000, std::uint64_t seed = 1);
// Sequential l2-box projections are feasible; a stored 2-D point where they
// miss the true projection.
CheckResult ProjectionL2Box(int trials = 10000, std::uint64_t seed = 2);
CheckResult QpOracle(int trials = 1000, std::uint64_t seed = 3);
CheckResult SolverRegression();
CheckResult FoldingZeroSet(int trials = 100000, std::uint64_t seed = 5);
CheckResult LossClipping(int trials = 10000, std::uint64_t seed = 6);
CheckResult Danskin();
CheckResult TwoStageDeterminism(std::uint64_t seed = 8);
CheckResult GradientChecks(int points = 1000, std::uint64_t seed = 9);

// Every check above, in that order.
std::vector<CheckResult> RunAll();

}  // namespace pwcf::verify
