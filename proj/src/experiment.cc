#include "pwcf/experiment.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/format.h>

namespace pwcf::experiment {

const std::vector<model::Sample>& Split(const model::Dataset& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "val") return data.val;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown split '{}'", split));
}

namespace {

std::size_t Window(const std::vector<model::Sample>& split, int count) {
  if (count < 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be non-negative");
  return std::min(split.size(), static_cast<std::size_t>(count));
}

}  // namespace

std::vector<SelectedSample> SelectSamples(const model::Classifier& model,
                                          const model::Dataset& data,
                                          const config::SampleSelection& sel) {
  const auto& split = Split(data, sel.split);
  std::vector<SelectedSample> out;
  for (std::size_t i = 0; i < Window(split, sel.count); ++i) {
    if (sel.only_correct && model.Predict(split[i].x) != split[i].y) continue;
    out.push_back({static_cast<int>(i), split[i].x, split[i].y});
  }
  return out;
}

analysis::CleanPredictions CleanPredictions(const model::Classifier& model,
                                            const model::Dataset& data,
                                            const config::SampleSelection& sel) {
  const auto& split = Split(data, sel.split);
  analysis::CleanPredictions out;
  for (std::size_t i = 0; i < Window(split, sel.count); ++i) {
    out[static_cast<int>(i)] = model.Predict(split[i].x) == split[i].y;
  }
  return out;
}

model::Classifier TrainModel(const config::RunConfig& cfg, const model::Dataset& data,
                             model::TrainReport* report) {
  if (cfg.model.sizes.front() != data.dim || cfg.model.sizes.back() != data.num_classes) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("model sizes do not fit the dataset ({} inputs, {} classes)", data.dim,
                            data.num_classes));
  }
  model::Classifier m =
      model::Classifier::Random(cfg.model.sizes, cfg.model.activation, cfg.model.init_seed);
  model::TrainReport r;
  if (cfg.adversarial.enabled) {
    const auto inner = attacks::MakeInnerMaximizer(cfg.adversarial.solver, cfg.adversarial.spec,
                                                   cfg.adversarial.steps);
    r = model::AdversarialTrain(m, data, inner, cfg.train);
  } else {
    r = model::Train(m, data, cfg.train);
  }
  if (r.diverged) throw Error(ErrorCode::kNonFinite, "training diverged");
  if (report) *report = r;
  return m;
}

std::vector<PerturbationRecord> RunSpec(std::shared_ptr<const model::Classifier> model,
                                        const std::vector<SelectedSample>& samples,
                                        const attacks::AttackSpec& spec, SolverTag solver,
                                        const config::RunConfig& cfg, int jobs) {
  spec.Validate();
  if (solver == SolverTag::kPgd && spec.formulation != attacks::Formulation::kMaxLoss) {
    throw Error(ErrorCode::kUnsupportedFormulation, "pgd only runs max-loss attacks");
  }
  const attacks::PwcfOptions options{cfg.solver, cfg.TwoStage(spec.formulation)};
  auto run_one = [&](const SelectedSample& s) {
    if (solver == SolverTag::kPgd) {
      return attacks::RunPgd(*model, s.x, s.y, s.id, spec, cfg.pgd, cfg.solver.tau_v);
    }
    return attacks::RunPwcf(model, s.x, s.y, s.id, spec, options, cfg.seed);
  };

  std::vector<PerturbationRecord> out(samples.size());
  const int workers =
      std::max(1, std::min(jobs, static_cast<int>(samples.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = run_one(samples[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < samples.size(); i = next++) {
        try {
          out[i] = run_one(samples[i]);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = samples.size();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

namespace {

std::string Stem(const attacks::AttackSpec& spec, SolverTag solver) {
  if (spec.formulation == attacks::Formulation::kMinRadius) {
    return fmt::format("{}_min_radius_{}", attacks::ToString(solver), spec.metric.Name());
  }
  return fmt::format("{}_max_loss_{}_{}", attacks::ToString(solver), folding::ToString(spec.loss),
                     spec.metric.Name());
}

}  // namespace

std::string RecordFileName(const attacks::AttackSpec& spec, SolverTag solver) {
  return "records_" + Stem(spec, solver) + ".csv";
}

std::string DeltaFileName(const attacks::AttackSpec& spec, SolverTag solver) {
  return "deltas_" + Stem(spec, solver) + ".csv";
}

}  // namespace pwcf::experiment
