#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "pwcf/attacks.hpp"
#include "pwcf/model.hpp"

namespace pwcf::config {

inline constexpr int kSchemaVersion = 1;

struct DatasetConfig {
  std::string kind = "blobs";  // "blobs" or "moons"
  model::BlobsConfig blobs;
  model::MoonsConfig moons;

  model::Dataset Make() const;
};

struct ModelConfig {
  std::vector<int> sizes = {2, 16, 16, 3};
  model::Activation activation = model::Activation::kTanh;
  std::uint64_t init_seed = 1;
  // Relative paths resolve against the output directory.
  std::string checkpoint = "model.json";
};

struct AdversarialConfig {
  bool enabled = false;
  attacks::InnerSolver solver = attacks::InnerSolver::kPgd;
  attacks::AttackSpec spec;
  int steps = 10;
};

struct SampleSelection {
  std::string split = "val";  // "train" or "val"
  int count = 50;
  bool only_correct = true;
};

// Everything a command needs besides the command line. Unknown keys are
// rejected so typos do not silently fall back to defaults.
struct RunConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  ModelConfig model;
  model::TrainConfig train;
  AdversarialConfig adversarial;
  sqp::SolverConfig solver;
  attacks::TwoStageConfig max_loss = attacks::TwoStageConfig::MaxLossDefaults();
  attacks::TwoStageConfig min_radius = attacks::TwoStageConfig::MinRadiusDefaults();
  attacks::PgdConfig pgd;
  SampleSelection samples;
  std::vector<attacks::AttackSpec> attacks;

  const attacks::TwoStageConfig& TwoStage(attacks::Formulation f) const;
  // Throws kInvalidArgument.
  void Validate() const;
};

// Throws kInvalidArgument on schema errors.
RunConfig FromJson(const nlohmann::json& j);
RunConfig Parse(const std::string& text);
RunConfig Load(const std::string& path);
nlohmann::json ToJson(const RunConfig& cfg);

nlohmann::json SpecToJson(const attacks::AttackSpec& spec);
attacks::AttackSpec SpecFromJson(const nlohmann::json& j);

}  // namespace pwcf::config
