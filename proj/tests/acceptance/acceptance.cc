// Runs every acceptance criterion once and prints one PASS/FAIL line each.
// Usage: acceptance [config.json]   (default: configs/default.json)

#include <cmath>
#include <iostream>
#include <map>

#include <fmt/format.h>

#include "checks.hpp"
#include "pwcf/experiment.hpp"

using namespace pwcf;
using attacks::Formulation;
using attacks::SolverTag;
using verify::CheckResult;
using verify::Outcome;
using verify::Timed;

namespace {

struct Desk {
  config::RunConfig cfg;
  model::Dataset data;
  std::shared_ptr<const model::Classifier> model;
  std::vector<experiment::SelectedSample> samples;
  analysis::CleanPredictions clean;
};

attacks::AttackSpec MinRadius(const std::string& metric) {
  attacks::AttackSpec s;
  s.formulation = Formulation::kMinRadius;
  s.metric = attacks::Metric::Parse(metric);
  return s;
}

std::vector<attacks::AttackSpec> MaxLossSpecs(const config::RunConfig& cfg) {
  std::vector<attacks::AttackSpec> out;
  for (const auto& s : cfg.attacks) {
    if (s.formulation == Formulation::kMaxLoss) out.push_back(s);
  }
  return out;
}

// Criterion 7. Also returns the l2 radii for criterion 8.
CheckResult RadiusOrdering(const Desk& d, std::map<int, double>& l2_radius) {
  return Timed("radius ordering l1.5 >= l2 >= l8 on the desk suite", 600.0, [&] {
    std::map<std::string, std::vector<attacks::PerturbationRecord>> r;
    for (const char* m : {"l1.5", "l2", "l8"}) {
      r[m] = experiment::RunSpec(d.model, d.samples, MinRadius(m), SolverTag::kPwcf, d.cfg);
    }
    const double tau = d.cfg.solver.tau_v;
    int ordered = 0;
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      const auto& a = r["l1.5"][i];
      const auto& b = r["l2"][i];
      const auto& c = r["l8"][i];
      l2_radius[b.sample_id] = b.objective_or_radius;
      const bool feasible = a.violation <= tau && b.violation <= tau && c.violation <= tau;
      if (feasible && a.objective_or_radius >= b.objective_or_radius - 1e-4 &&
          b.objective_or_radius >= c.objective_or_radius - 1e-4) {
        ++ordered;
      }
    }
    const double frac = static_cast<double>(ordered) / static_cast<double>(d.samples.size());
    return Outcome{frac >= 0.95, fmt::format("{}/{} samples ordered ({:.1f}%)", ordered,
                                             d.samples.size(), 100.0 * frac)};
  });
}

// Criterion 8.
CheckResult BudgetScaling(const Desk& d, const std::map<int, double>& l2_radius) {
  return Timed("l2 attacks at 0.8x / 1.2x the measured radius", 600.0, [&] {
    if (l2_radius.size() != d.samples.size()) return Outcome{false, "no l2 radii measured"};
    const attacks::PwcfOptions options{d.cfg.solver, d.cfg.max_loss};
    std::map<double, double> accuracy;
    for (double factor : {0.8, 1.2}) {
      std::vector<attacks::PerturbationRecord> records;
      for (const auto& s : d.samples) {
        attacks::AttackSpec spec;
        spec.metric = attacks::Metric::Lp(2.0);
        spec.eps = factor * l2_radius.at(s.id);
        records.push_back(attacks::RunPwcf(d.model, s.x, s.y, s.id, spec, options, d.cfg.seed));
      }
      accuracy[factor] = analysis::RobustAccuracy(records, d.clean);
    }
    return Outcome{accuracy[0.8] >= 0.85 && accuracy[1.2] <= 0.25,
                   fmt::format("robust accuracy {:.1f}% at 0.8x, {:.1f}% at 1.2x",
                               100.0 * accuracy[0.8], 100.0 * accuracy[1.2])};
  });
}

// Criterion 9.
CheckResult SparsitySeparation(const Desk& d) {
  return Timed("mean sparsity l1 < l2 < linf of max-loss solutions", 300.0, [&] {
    std::map<std::pair<folding::LossKind, std::string>, double> mean;
    for (const auto& spec : MaxLossSpecs(d.cfg)) {
      const auto records = experiment::RunSpec(d.model, d.samples, spec, SolverTag::kPwcf, d.cfg);
      double sum = 0.0;
      int count = 0;
      for (const auto& r : records) {
        if (std::isnan(r.sparsity)) continue;
        sum += r.sparsity;
        ++count;
      }
      if (count > 0) mean[{spec.loss, spec.metric.Name()}] = sum / count;
    }
    bool ok = false;
    std::string detail;
    for (auto loss : {folding::LossKind::kMargin, folding::LossKind::kCrossEntropy}) {
      const auto a = mean.find({loss, "l1"});
      const auto b = mean.find({loss, "l2"});
      const auto c = mean.find({loss, "linf"});
      if (a == mean.end() || b == mean.end() || c == mean.end()) continue;
      const bool strict = a->second < b->second && b->second < c->second;
      ok = (detail.empty() || ok) && strict;
      detail += fmt::format("{}{}: {:.4f} < {:.4f} < {:.4f}{}", detail.empty() ? "" : "; ",
                            folding::ToString(loss), a->second, b->second, c->second,
                            strict ? "" : " (violated)");
    }
    if (detail.empty()) return Outcome{false, "config has no l1/l2/linf max-loss specs"};
    return Outcome{ok, detail};
  });
}

// Criterion 10.
CheckResult UnionProperty(const Desk& d) {
  return Timed("union robust accuracy over pwcf and pgd", 600.0, [&] {
    int configs = 0;
    int strict = 0;
    int violations = 0;
    std::string best;
    double best_gain = 0.0;
    for (const auto& base : MaxLossSpecs(d.cfg)) {
      for (double factor : {0.6, 0.8, 1.0, 1.2, 1.4}) {
        attacks::AttackSpec spec = base;
        spec.eps = factor * base.eps;
        std::vector<attacks::PerturbationRecord> all;
        for (auto solver : {SolverTag::kPwcf, SolverTag::kPgd}) {
          auto r = experiment::RunSpec(d.model, d.samples, spec, solver, d.cfg);
          all.insert(all.end(), r.begin(), r.end());
        }
        const double a = analysis::RobustAccuracy(all, d.clean, SolverTag::kPwcf);
        const double b = analysis::RobustAccuracy(all, d.clean, SolverTag::kPgd);
        const double u =
            analysis::UnionRobustAccuracy(all, d.clean, {SolverTag::kPwcf, SolverTag::kPgd});
        ++configs;
        if (u > a || u > b) ++violations;
        if (u < std::min(a, b)) {
          ++strict;
          if (std::min(a, b) - u > best_gain) {
            best_gain = std::min(a, b) - u;
            best = fmt::format("{} {} eps={:g}: pwcf {:.2f}, pgd {:.2f}, union {:.2f}",
                               folding::ToString(spec.loss), spec.metric.Name(), spec.eps, a, b,
                               u);
          }
        }
      }
    }
    std::string detail = fmt::format("{} configurations, {} with union below both, {} violations",
                                     configs, strict, violations);
    if (!best.empty()) detail += "; largest gain at " + best;
    return Outcome{configs > 0 && violations == 0 && strict > 0, detail};
  });
}

}  // namespace

int main(int argc, char** argv) {
  const std::string path = argc > 1 ? argv[1] : "configs/default.json";
  Desk d;
  try {
    d.cfg = config::Load(path);
    d.data = d.cfg.dataset.Make();
    d.model = std::make_shared<const model::Classifier>(experiment::TrainModel(d.cfg, d.data));
    d.samples = experiment::SelectSamples(*d.model, d.data, d.cfg.samples);
    d.clean.clear();
    for (const auto& s : d.samples) d.clean[s.id] = true;
  } catch (const std::exception& e) {
    std::cerr << "setup failed: " << e.what() << "\n";
    return 1;
  }

  int failed = 0;
  int index = 0;
  auto print = [&](const CheckResult& r) {
    ++index;
    failed += r.passed ? 0 : 1;
    std::cout << fmt::format("[{}] {:2d} {} ({:.2f} s): {}", r.passed ? "PASS" : "FAIL", index,
                             r.name, r.seconds, r.detail)
              << std::endl;
  };
  print(verify::ProjectionLinfBox());
  print(verify::ProjectionL2Box());
  print(verify::QpOracle());
  print(verify::SolverRegression());
  print(verify::FoldingZeroSet());
  print(verify::LossClipping());
  std::map<int, double> l2_radius;
  print(RadiusOrdering(d, l2_radius));
  print(BudgetScaling(d, l2_radius));
  print(SparsitySeparation(d));
  print(UnionProperty(d));
  print(verify::Danskin());
  print(verify::TwoStageDeterminism());
  print(verify::GradientChecks());
  std::cout << fmt::format("{} of {} criteria passed", index - failed, index) << std::endl;
  return failed == 0 ? 0 : 1;
}
