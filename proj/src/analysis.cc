#include "pwcf/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include <fmt/format.h>

namespace pwcf::analysis {
namespace {

// Samples broken by any record in `records` for which keep(r) holds.
std::set<int> Broken(const std::vector<PerturbationRecord>& records, const CleanPredictions& clean,
                     const std::function<bool(const PerturbationRecord&)>& keep) {
  std::set<int> covered;
  std::set<int> broken;
  for (const auto& r : records) {
    if (!keep(r)) continue;
    if (!clean.contains(r.sample_id)) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("record for unknown sample {}", r.sample_id));
    }
    covered.insert(r.sample_id);
    if (r.attack_success) broken.insert(r.sample_id);
  }
  for (const auto& [id, correct] : clean) {
    if (correct && !covered.contains(id)) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("sample {} has no record; coverage is inconsistent", id));
    }
  }
  return broken;
}

double Survivors(const CleanPredictions& clean, const std::set<int>& broken) {
  if (clean.empty()) throw Error(ErrorCode::kInvalidArgument, "empty sample set");
  std::size_t robust = 0;
  for (const auto& [id, correct] : clean) {
    if (correct && !broken.contains(id)) ++robust;
  }
  return static_cast<double>(robust) / static_cast<double>(clean.size());
}

}  // namespace

double RobustAccuracy(const std::vector<PerturbationRecord>& records,
                      const CleanPredictions& clean) {
  return Survivors(clean, Broken(records, clean, [](const PerturbationRecord&) { return true; }));
}

double RobustAccuracy(const std::vector<PerturbationRecord>& records,
                      const CleanPredictions& clean, SolverTag solver) {
  return Survivors(clean, Broken(records, clean,
                                 [&](const PerturbationRecord& r) { return r.solver == solver; }));
}

double UnionRobustAccuracy(const std::vector<PerturbationRecord>& records,
                           const CleanPredictions& clean, const std::vector<SolverTag>& solvers) {
  if (solvers.empty()) throw Error(ErrorCode::kInvalidArgument, "union over no solvers");
  std::set<int> broken;
  for (SolverTag tag : solvers) {
    const auto b =
        Broken(records, clean, [&](const PerturbationRecord& r) { return r.solver == tag; });
    broken.insert(b.begin(), b.end());
  }
  return Survivors(clean, broken);
}

RadiusStats ComputeRadiusStats(const std::vector<double>& radii) {
  if (radii.empty()) throw Error(ErrorCode::kInvalidArgument, "radius statistics of no records");
  RadiusStats s;
  s.count = radii.size();
  double sum = 0.0;
  for (double r : radii) sum += r;
  s.mean = sum / static_cast<double>(s.count);
  double sq = 0.0;
  for (double r : radii) sq += (r - s.mean) * (r - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(s.count));
  std::vector<double> sorted = radii;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = s.count / 2;
  s.median = s.count % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return s;
}

RadiusStats ComputeRadiusStats(const std::vector<PerturbationRecord>& records, double tau_v) {
  std::vector<double> radii;
  radii.reserve(records.size());
  for (const auto& r : records) {
    if (r.formulation != attacks::Formulation::kMinRadius) {
      throw Error(ErrorCode::kInvalidArgument, "radius statistics need min-radius records");
    }
    if (!(r.violation <= tau_v)) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("sample {} is infeasible (violation {})", r.sample_id, r.violation));
    }
    radii.push_back(r.objective_or_radius);
  }
  return ComputeRadiusStats(radii);
}

std::vector<RadiusDifference> RadiusDifferences(const std::vector<PerturbationRecord>& a,
                                                const std::vector<PerturbationRecord>& b) {
  auto index = [](const std::vector<PerturbationRecord>& rs) {
    std::map<int, double> out;
    for (const auto& r : rs) {
      if (!out.emplace(r.sample_id, r.objective_or_radius).second) {
        throw Error(ErrorCode::kInvalidArgument,
                    fmt::format("sample {} appears twice", r.sample_id));
      }
    }
    return out;
  };
  const auto ia = index(a);
  const auto ib = index(b);
  if (ia.size() != ib.size()) {
    throw Error(ErrorCode::kInvalidArgument, "radius series cover different samples");
  }
  std::vector<RadiusDifference> out;
  out.reserve(ia.size());
  for (const auto& [id, ra] : ia) {
    const auto it = ib.find(id);
    if (it == ib.end()) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("sample {} missing on one side", id));
    }
    out.push_back({id, ra - it->second});
  }
  return out;
}

Histogram SparsityHistogram(const std::vector<double>& values, Eigen::Index n, int bins) {
  if (n < 1 || bins < 1) throw Error(ErrorCode::kInvalidArgument, "histogram needs n, bins >= 1");
  const double lo = 1.0;
  const double hi = std::sqrt(static_cast<double>(n));
  Histogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) h.edges[i] = lo + (hi - lo) * i / bins;
  h.edges.back() = hi;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    if (std::isnan(v)) continue;
    int bin = 0;
    if (hi > lo) {
      bin = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
      bin = std::clamp(bin, 0, bins - 1);
    }
    ++h.counts[static_cast<std::size_t>(bin)];
  }
  return h;
}

GroupKey KeyOf(const PerturbationRecord& r) {
  GroupKey k;
  k.solver = r.solver;
  k.formulation = r.formulation;
  k.metric = r.metric;
  if (r.formulation == attacks::Formulation::kMaxLoss) {
    k.loss = r.loss;
    k.eps = r.eps;
  }
  return k;
}

RunSummary Summarize(const std::vector<PerturbationRecord>& records,
                     const CleanPredictions& clean, Eigen::Index n, double tau_v) {
  RunSummary out;
  out.samples = clean.size();
  std::size_t correct = 0;
  for (const auto& [id, ok] : clean) correct += ok ? 1 : 0;
  out.clean_accuracy =
      clean.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(clean.size());

  std::map<GroupKey, std::vector<PerturbationRecord>> groups;
  for (const auto& r : records) groups[KeyOf(r)].push_back(r);

  for (const auto& [key, rs] : groups) {
    GroupSummary g;
    g.key = key;
    g.records = rs.size();
    g.robust_accuracy = RobustAccuracy(rs, clean);
    std::vector<double> sparsity;
    std::vector<double> radii;
    for (const auto& r : rs) {
      if (std::isnan(r.sparsity)) {
        ++g.missing_sparsity;
      } else {
        sparsity.push_back(r.sparsity);
      }
      if (key.formulation == attacks::Formulation::kMinRadius && r.violation <= tau_v) {
        radii.push_back(r.objective_or_radius);
      }
    }
    if (!radii.empty()) g.radius = ComputeRadiusStats(radii);
    if (!sparsity.empty()) {
      double sum = 0.0;
      for (double s : sparsity) sum += s;
      g.mean_sparsity = sum / static_cast<double>(sparsity.size());
    }
    g.sparsity = SparsityHistogram(sparsity, n);
    out.groups.push_back(std::move(g));
  }

  // Same configuration, several solvers.
  std::map<GroupKey, std::vector<SolverTag>> configs;
  for (const auto& [key, rs] : groups) {
    GroupKey k = key;
    k.solver = SolverTag::kPwcf;
    configs[k].push_back(key.solver);
  }
  for (const auto& [k, solvers] : configs) {
    if (solvers.size() < 2) continue;
    std::vector<PerturbationRecord> rs;
    for (SolverTag t : solvers) {
      GroupKey gk = k;
      gk.solver = t;
      const auto& part = groups.at(gk);
      rs.insert(rs.end(), part.begin(), part.end());
    }
    UnionSummary u;
    u.formulation = k.formulation;
    u.loss = k.loss;
    u.metric = k.metric;
    u.eps = k.eps;
    u.solvers = solvers;
    u.robust_accuracy = UnionRobustAccuracy(rs, clean, solvers);
    out.unions.push_back(std::move(u));
  }
  return out;
}

nlohmann::json ToJson(const RunSummary& summary) {
  using nlohmann::json;
  auto stats = [](const std::optional<RadiusStats>& s) -> json {
    if (!s) return nullptr;
    return {{"count", s->count}, {"mean", s->mean}, {"median", s->median}, {"std", s->stddev}};
  };
  auto optional = [](const std::optional<double>& v) -> json {
    if (!v) return nullptr;
    return *v;
  };
  json j;
  j["samples"] = summary.samples;
  j["clean_accuracy"] = summary.clean_accuracy;
  j["groups"] = json::array();
  for (const auto& g : summary.groups) {
    json e;
    e["solver"] = attacks::ToString(g.key.solver);
    e["formulation"] = attacks::ToString(g.key.formulation);
    e["metric"] = g.key.metric;
    if (g.key.formulation == attacks::Formulation::kMaxLoss) {
      e["loss"] = folding::ToString(g.key.loss);
      e["eps"] = g.key.eps;
    }
    e["records"] = g.records;
    e["robust_accuracy"] = g.robust_accuracy;
    e["radius"] = stats(g.radius);
    e["mean_sparsity"] = optional(g.mean_sparsity);
    e["missing_sparsity"] = g.missing_sparsity;
    e["sparsity_histogram"] = {{"edges", g.sparsity.edges}, {"counts", g.sparsity.counts}};
    j["groups"].push_back(std::move(e));
  }
  j["unions"] = json::array();
  for (const auto& u : summary.unions) {
    json e;
    e["formulation"] = attacks::ToString(u.formulation);
    e["metric"] = u.metric;
    if (u.formulation == attacks::Formulation::kMaxLoss) {
      e["loss"] = folding::ToString(u.loss);
      e["eps"] = u.eps;
    }
    std::vector<std::string> names;
    for (SolverTag t : u.solvers) names.emplace_back(attacks::ToString(t));
    e["solvers"] = names;
    e["robust_accuracy"] = u.robust_accuracy;
    j["unions"].push_back(std::move(e));
  }
  return j;
}

}  // namespace pwcf::analysis
