#include "pwcf/config.hpp"

#include <set>

#include <fmt/format.h>

#include "pwcf/io.hpp"

namespace pwcf::config {
namespace {

using nlohmann::json;

[[noreturn]] void Bad(const std::string& where, const std::string& why) {
  throw Error(ErrorCode::kInvalidArgument, fmt::format("config {}: {}", where, why));
}

// Reads members of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) Bad(where_, "expected an object");
  }

  template <typename T>
  void Get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      Bad(Path(key), e.what());
    }
  }

  bool Has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& At(const char* key) const { return j_.at(key); }
  std::string Path(const char* key) const { return where_ + "." + key; }

  void Finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) Bad(where_, fmt::format("unknown key '{}'", key));
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename F>
auto Translate(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    Bad(where, e.what());
  }
}

const char* ToString(attacks::RadiusForm f) {
  switch (f) {
    case attacks::RadiusForm::kAuto:
      return "auto";
    case attacks::RadiusForm::kDirect:
      return "direct";
    case attacks::RadiusForm::kDecoupled:
      return "decoupled";
  }
  return "auto";
}

attacks::RadiusForm RadiusFormFromString(const std::string& s) {
  if (s == "auto") return attacks::RadiusForm::kAuto;
  if (s == "direct") return attacks::RadiusForm::kDirect;
  if (s == "decoupled") return attacks::RadiusForm::kDecoupled;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown radius_form '{}'", s));
}

attacks::Formulation FormulationFromString(const std::string& s) {
  if (s == "max_loss") return attacks::Formulation::kMaxLoss;
  if (s == "min_radius") return attacks::Formulation::kMinRadius;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown formulation '{}'", s));
}

void ReadSolver(const json& j, sqp::SolverConfig& s) {
  Section r(j, "solver");
  r.Get("mu0", s.mu0);
  r.Get("c_v", s.c_v);
  r.Get("c_mu", s.c_mu);
  r.Get("tau_diamond", s.tau_diamond);
  r.Get("tau_v", s.tau_v);
  r.Get("max_iter", s.max_iter);
  r.Get("wolfe_c1", s.wolfe_c1);
  r.Get("wolfe_c2", s.wolfe_c2);
  r.Get("max_bisections", s.max_bisections);
  r.Get("max_expansions", s.max_expansions);
  r.Get("grad_history", s.grad_history);
  r.Get("eval_distance", s.eval_distance);
  r.Get("sample_radius", s.sample_radius);
  r.Get("fallback_samples", s.fallback_samples);
  r.Get("memory", s.memory);
  r.Get("h0_scaling", s.h0_scaling);
  r.Get("max_steering_shrinks", s.max_steering_shrinks);
  r.Get("qp_tolerance", s.qp_tolerance);
  r.Get("qp_max_iterations", s.qp_max_iterations);
  r.Finish();
}

json SolverToJson(const sqp::SolverConfig& s) {
  return {{"mu0", s.mu0},
          {"c_v", s.c_v},
          {"c_mu", s.c_mu},
          {"tau_diamond", s.tau_diamond},
          {"tau_v", s.tau_v},
          {"max_iter", s.max_iter},
          {"wolfe_c1", s.wolfe_c1},
          {"wolfe_c2", s.wolfe_c2},
          {"max_bisections", s.max_bisections},
          {"max_expansions", s.max_expansions},
          {"grad_history", s.grad_history},
          {"eval_distance", s.eval_distance},
          {"sample_radius", s.sample_radius},
          {"fallback_samples", s.fallback_samples},
          {"memory", s.memory},
          {"h0_scaling", s.h0_scaling},
          {"max_steering_shrinks", s.max_steering_shrinks},
          {"qp_tolerance", s.qp_tolerance},
          {"qp_max_iterations", s.qp_max_iterations}};
}

void ReadTwoStage(const json& j, const std::string& where, attacks::TwoStageConfig& t) {
  Section r(j, where);
  r.Get("restarts", t.restarts);
  r.Get("stage1_iterations", t.stage1_iterations);
  r.Get("max_iterations", t.max_iterations);
  r.Get("init_noise_scale", t.init_noise_scale);
  r.Finish();
}

json TwoStageToJson(const attacks::TwoStageConfig& t) {
  return {{"restarts", t.restarts},
          {"stage1_iterations", t.stage1_iterations},
          {"max_iterations", t.max_iterations},
          {"init_noise_scale", t.init_noise_scale}};
}

}  // namespace

model::Dataset DatasetConfig::Make() const {
  if (kind == "blobs") return model::MakeBlobs(blobs);
  if (kind == "moons") return model::MakeMoons(moons);
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown dataset kind '{}'", kind));
}

const attacks::TwoStageConfig& RunConfig::TwoStage(attacks::Formulation f) const {
  return f == attacks::Formulation::kMaxLoss ? max_loss : min_radius;
}

void RunConfig::Validate() const {
  if (schema_version != kSchemaVersion) {
    Bad("schema_version", fmt::format("expected {}, got {}", kSchemaVersion, schema_version));
  }
  if (dataset.kind != "blobs" && dataset.kind != "moons") {
    Bad("dataset.kind", fmt::format("unknown kind '{}'", dataset.kind));
  }
  if (model.sizes.size() < 2) Bad("model.sizes", "need at least input and output sizes");
  for (int s : model.sizes) {
    if (s < 1) Bad("model.sizes", "sizes must be positive");
  }
  if (samples.split != "train" && samples.split != "val") {
    Bad("samples.split", "must be 'train' or 'val'");
  }
  if (samples.count < 0) Bad("samples.count", "must be non-negative");
  if (train.epochs < 0 || !(train.lr > 0.0) || train.batch_size < 1) {
    Bad("train", "epochs >= 0, lr > 0 and batch_size >= 1 required");
  }
  if (adversarial.steps < 1) Bad("adversarial.steps", "must be positive");
  if (pgd.steps < 0 || !(pgd.step_fraction > 0.0)) Bad("pgd", "steps >= 0, step_fraction > 0");
  Translate("solver", [&] {
    solver.Validate();
    return 0;
  });
  Translate("max_loss", [&] {
    max_loss.Validate();
    return 0;
  });
  Translate("min_radius", [&] {
    min_radius.Validate();
    return 0;
  });
  for (std::size_t i = 0; i < attacks.size(); ++i) {
    Translate(fmt::format("attacks[{}]", i), [&] {
      attacks[i].Validate();
      return 0;
    });
  }
  if (adversarial.enabled) {
    Translate("adversarial.spec", [&] {
      adversarial.spec.Validate();
      return 0;
    });
    if (adversarial.spec.formulation != attacks::Formulation::kMaxLoss) {
      Bad("adversarial.spec", "adversarial training needs a max-loss spec");
    }
  }
}

json SpecToJson(const attacks::AttackSpec& spec) {
  json j = {{"formulation", attacks::ToString(spec.formulation)},
            {"metric", spec.metric.Name()},
            {"fold", spec.fold},
            {"aggregator", folding::ToString(spec.aggregator)}};
  if (spec.formulation == attacks::Formulation::kMaxLoss) {
    j["eps"] = spec.eps;
    j["loss"] = folding::ToString(spec.loss);
  } else {
    j["rescale"] = spec.rescale;
    j["radius_form"] = ToString(spec.radius_form);
  }
  return j;
}

attacks::AttackSpec SpecFromJson(const json& j) {
  Section r(j, "attack spec");
  attacks::AttackSpec spec;
  std::string formulation = "max_loss";
  std::string metric = "l2";
  std::string loss = folding::ToString(spec.loss);
  std::string aggregator = folding::ToString(spec.aggregator);
  std::string radius_form = ToString(spec.radius_form);
  r.Get("formulation", formulation);
  r.Get("metric", metric);
  r.Get("eps", spec.eps);
  r.Get("loss", loss);
  r.Get("fold", spec.fold);
  r.Get("aggregator", aggregator);
  r.Get("rescale", spec.rescale);
  r.Get("radius_form", radius_form);
  r.Finish();
  Translate("attack spec", [&] {
    spec.formulation = FormulationFromString(formulation);
    spec.metric = attacks::Metric::Parse(metric);
    spec.loss = folding::LossKindFromString(loss);
    spec.aggregator = folding::AggregatorFromString(aggregator);
    spec.radius_form = RadiusFormFromString(radius_form);
    return 0;
  });
  return spec;
}

RunConfig FromJson(const json& j) {
  RunConfig cfg;
  Section top(j, "root");
  if (!top.Has("schema_version")) Bad("root", "missing schema_version");
  top.Get("schema_version", cfg.schema_version);
  if (cfg.schema_version != kSchemaVersion) {
    Bad("schema_version", fmt::format("expected {}, got {}", kSchemaVersion, cfg.schema_version));
  }
  top.Get("seed", cfg.seed);

  if (top.Has("dataset")) {
    Section d(top.At("dataset"), "dataset");
    d.Get("kind", cfg.dataset.kind);
    if (d.Has("blobs")) {
      Section b(d.At("blobs"), "dataset.blobs");
      b.Get("num_classes", cfg.dataset.blobs.num_classes);
      b.Get("train_size", cfg.dataset.blobs.train_size);
      b.Get("val_size", cfg.dataset.blobs.val_size);
      b.Get("stddev", cfg.dataset.blobs.stddev);
      b.Get("seed", cfg.dataset.blobs.seed);
      b.Finish();
    }
    if (d.Has("moons")) {
      Section m(d.At("moons"), "dataset.moons");
      m.Get("train_size", cfg.dataset.moons.train_size);
      m.Get("val_size", cfg.dataset.moons.val_size);
      m.Get("noise", cfg.dataset.moons.noise);
      m.Get("seed", cfg.dataset.moons.seed);
      m.Finish();
    }
    d.Finish();
  }

  if (top.Has("model")) {
    Section m(top.At("model"), "model");
    std::string activation = model::ToString(cfg.model.activation);
    m.Get("sizes", cfg.model.sizes);
    m.Get("activation", activation);
    m.Get("init_seed", cfg.model.init_seed);
    m.Get("checkpoint", cfg.model.checkpoint);
    m.Finish();
    cfg.model.activation =
        Translate("model.activation", [&] { return model::ActivationFromString(activation); });
  }

  if (top.Has("train")) {
    Section t(top.At("train"), "train");
    t.Get("epochs", cfg.train.epochs);
    t.Get("lr", cfg.train.lr);
    t.Get("batch_size", cfg.train.batch_size);
    t.Get("seed", cfg.train.seed);
    t.Finish();
  }

  if (top.Has("adversarial")) {
    Section a(top.At("adversarial"), "adversarial");
    std::string solver = "pgd";
    a.Get("enabled", cfg.adversarial.enabled);
    a.Get("solver", solver);
    a.Get("steps", cfg.adversarial.steps);
    if (a.Has("spec")) cfg.adversarial.spec = SpecFromJson(a.At("spec"));
    a.Finish();
    if (solver == "pgd") {
      cfg.adversarial.solver = attacks::InnerSolver::kPgd;
    } else if (solver == "pwcf") {
      cfg.adversarial.solver = attacks::InnerSolver::kPwcf;
    } else {
      Bad("adversarial.solver", fmt::format("unknown solver '{}'", solver));
    }
  }

  if (top.Has("solver")) ReadSolver(top.At("solver"), cfg.solver);
  if (top.Has("max_loss")) ReadTwoStage(top.At("max_loss"), "max_loss", cfg.max_loss);
  if (top.Has("min_radius")) ReadTwoStage(top.At("min_radius"), "min_radius", cfg.min_radius);

  if (top.Has("pgd")) {
    Section p(top.At("pgd"), "pgd");
    p.Get("steps", cfg.pgd.steps);
    p.Get("step_fraction", cfg.pgd.step_fraction);
    p.Finish();
  }

  if (top.Has("samples")) {
    Section s(top.At("samples"), "samples");
    s.Get("split", cfg.samples.split);
    s.Get("count", cfg.samples.count);
    s.Get("only_correct", cfg.samples.only_correct);
    s.Finish();
  }

  if (top.Has("attacks")) {
    const json& list = top.At("attacks");
    if (!list.is_array()) Bad("attacks", "expected an array");
    for (const auto& e : list) cfg.attacks.push_back(SpecFromJson(e));
  }
  top.Finish();
  cfg.Validate();
  return cfg;
}

RunConfig Parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("config is not valid JSON: {}", e.what()));
  }
  return FromJson(j);
}

RunConfig Load(const std::string& path) { return Parse(io::ReadFile(path)); }

json ToJson(const RunConfig& cfg) {
  json j;
  j["schema_version"] = cfg.schema_version;
  j["seed"] = cfg.seed;
  const auto& b = cfg.dataset.blobs;
  const auto& m = cfg.dataset.moons;
  j["dataset"] = {{"kind", cfg.dataset.kind},
                  {"blobs",
                   {{"num_classes", b.num_classes},
                    {"train_size", b.train_size},
                    {"val_size", b.val_size},
                    {"stddev", b.stddev},
                    {"seed", b.seed}}},
                  {"moons",
                   {{"train_size", m.train_size},
                    {"val_size", m.val_size},
                    {"noise", m.noise},
                    {"seed", m.seed}}}};
  j["model"] = {{"sizes", cfg.model.sizes},
                {"activation", model::ToString(cfg.model.activation)},
                {"init_seed", cfg.model.init_seed},
                {"checkpoint", cfg.model.checkpoint}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"lr", cfg.train.lr},
                {"batch_size", cfg.train.batch_size},
                {"seed", cfg.train.seed}};
  j["adversarial"] = {
      {"enabled", cfg.adversarial.enabled},
      {"solver", cfg.adversarial.solver == attacks::InnerSolver::kPgd ? "pgd" : "pwcf"},
      {"steps", cfg.adversarial.steps},
      {"spec", SpecToJson(cfg.adversarial.spec)}};
  j["solver"] = SolverToJson(cfg.solver);
  j["max_loss"] = TwoStageToJson(cfg.max_loss);
  j["min_radius"] = TwoStageToJson(cfg.min_radius);
  j["pgd"] = {{"steps", cfg.pgd.steps}, {"step_fraction", cfg.pgd.step_fraction}};
  j["samples"] = {{"split", cfg.samples.split},
                  {"count", cfg.samples.count},
                  {"only_correct", cfg.samples.only_correct}};
  j["attacks"] = json::array();
  for (const auto& s : cfg.attacks) j["attacks"].push_back(SpecToJson(s));
  return j;
}

}  // namespace pwcf::config
