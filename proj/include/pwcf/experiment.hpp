#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pwcf/analysis.hpp"
#include "pwcf/config.hpp"

namespace pwcf::experiment {

using attacks::PerturbationRecord;
using attacks::SolverTag;

struct SelectedSample {
  int id = 0;  // index in the split
  Vector x;
  int y = 0;
};

const std::vector<model::Sample>& Split(const model::Dataset& data, const std::string& split);

// The first `count` samples of the split; misclassified ones are dropped
// when only_correct is set.
std::vector<SelectedSample> SelectSamples(const model::Classifier& model,
                                          const model::Dataset& data,
                                          const config::SampleSelection& sel);

// Clean correctness of the same first `count` samples.
analysis::CleanPredictions CleanPredictions(const model::Classifier& model,
                                            const model::Dataset& data,
                                            const config::SampleSelection& sel);

// Builds, trains (adversarially if enabled) and returns the model.
model::Classifier TrainModel(const config::RunConfig& cfg, const model::Dataset& data,
                             model::TrainReport* report = nullptr);

// One record per sample, in input order. Samples are spread over `jobs`
// threads; every sample seeds itself from (cfg.seed, id), so the output does
// not depend on jobs. PGD has no min-radius mode (kUnsupportedFormulation).
std::vector<PerturbationRecord> RunSpec(std::shared_ptr<const model::Classifier> model,
                                        const std::vector<SelectedSample>& samples,
                                        const attacks::AttackSpec& spec, SolverTag solver,
                                        const config::RunConfig& cfg, int jobs = 1);

// records_{solver}_{formulation}[_{loss}]_{metric}.csv
std::string RecordFileName(const attacks::AttackSpec& spec, SolverTag solver);
std::string DeltaFileName(const attacks::AttackSpec& spec, SolverTag solver);

}  // namespace pwcf::experiment
