#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "pwcf/attacks.hpp"

namespace pwcf::analysis {

using attacks::PerturbationRecord;
using attacks::SolverTag;

// |delta|_1 / |delta|_2, in [1, sqrt(n)]; nullopt for delta = 0.
using pwcf::SparsityMeasure;

// sample_id -> clean prediction is correct.
using CleanPredictions = std::map<int, bool>;

// Fraction of the samples in `clean` that are classified correctly and have
// no successful record. Misclassified samples count as broken. Every record
// must name a known sample, and every correctly classified sample needs at
// least one record.
double RobustAccuracy(const std::vector<PerturbationRecord>& records,
                      const CleanPredictions& clean);
// Only the records of `solver`.
double RobustAccuracy(const std::vector<PerturbationRecord>& records,
                      const CleanPredictions& clean, SolverTag solver);
// A sample survives only if no record of any listed solver broke it. Each
// solver must cover the sample set on its own.
double UnionRobustAccuracy(const std::vector<PerturbationRecord>& records,
                           const CleanPredictions& clean, const std::vector<SolverTag>& solvers);

struct RadiusStats {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;  // population
};

RadiusStats ComputeRadiusStats(const std::vector<double>& radii);
// Records must be min-radius with violation <= tau_v.
RadiusStats ComputeRadiusStats(const std::vector<PerturbationRecord>& records, double tau_v);

struct RadiusDifference {
  int sample_id = 0;
  double difference = 0.0;  // a - b
};

// Per-sample a - b, ordered by sample id. Both sides must cover the same
// samples exactly once.
std::vector<RadiusDifference> RadiusDifferences(const std::vector<PerturbationRecord>& a,
                                                const std::vector<PerturbationRecord>& b);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<int> counts;
};

inline constexpr int kSparsityBins = 30;

// Uniform bins over [1, sqrt(n)]; the last bin is closed. NaN entries are
// skipped, values within rounding of the range are clamped into it.
Histogram SparsityHistogram(const std::vector<double>& values, Eigen::Index n,
                            int bins = kSparsityBins);

struct GroupKey {
  SolverTag solver = SolverTag::kPwcf;
  attacks::Formulation formulation = attacks::Formulation::kMaxLoss;
  folding::LossKind loss = folding::LossKind::kMargin;
  std::string metric;
  double eps = 0.0;

  auto operator<=>(const GroupKey&) const = default;
};

GroupKey KeyOf(const PerturbationRecord& r);

struct GroupSummary {
  GroupKey key;
  std::size_t records = 0;
  double robust_accuracy = 0.0;
  std::optional<RadiusStats> radius;  // min-radius groups with feasible records
  std::optional<double> mean_sparsity;
  std::size_t missing_sparsity = 0;
  Histogram sparsity;
};

struct UnionSummary {
  attacks::Formulation formulation = attacks::Formulation::kMaxLoss;
  folding::LossKind loss = folding::LossKind::kMargin;
  std::string metric;
  double eps = 0.0;
  std::vector<SolverTag> solvers;
  double robust_accuracy = 0.0;
};

struct RunSummary {
  std::size_t samples = 0;
  double clean_accuracy = 0.0;
  std::vector<GroupSummary> groups;
  // Configurations attacked by more than one solver.
  std::vector<UnionSummary> unions;
};

RunSummary Summarize(const std::vector<PerturbationRecord>& records,
                     const CleanPredictions& clean, Eigen::Index n, double tau_v);

nlohmann::json ToJson(const RunSummary& summary);

}  // namespace pwcf::analysis
