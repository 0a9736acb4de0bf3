#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "checks.hpp"
#include "json.hpp"
#include "pwcf/experiment.hpp"
#include "pwcf/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pwcf;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitVerify = 2;
constexpr int kExitRuntime = 3;

// Errors raised before any work starts.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VerifyFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::string out_dir = "pwcf_out";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string solver = "both";
};

std::string UtcNow() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Run {
 public:
  Run(std::string command, const Options& opt, std::vector<std::string> argv)
      : command_(std::move(command)), opt_(opt), argv_(std::move(argv)), started_(UtcNow()) {
    try {
      cfg_ = opt.config_path.empty() ? config::RunConfig{} : config::Load(opt.config_path);
      if (opt.seed) cfg_.seed = *opt.seed;
      cfg_.Validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    if (opt.jobs < 1) throw ConfigError("--jobs must be at least 1");
  }

  const config::RunConfig& cfg() const { return cfg_; }
  const Options& options() const { return opt_; }

  fs::path Out(const std::string& name) const { return fs::path(opt_.out_dir) / name; }

  fs::path Checkpoint() const {
    const fs::path p(cfg_.model.checkpoint);
    return p.is_absolute() ? p : Out(cfg_.model.checkpoint);
  }

  void Write(const std::string& name, const std::string& contents) {
    const fs::path p = Out(name);
    io::WriteFile(p.string(), contents);
    files_.push_back({{"path", name}, {"fnv1a", io::Hex(io::Fnv1a(contents))}});
  }

  json& extra() { return extra_; }

  void Finish() {
    const std::string canonical = config::ToJson(cfg_).dump();
    json m = {{"command", command_},
              {"argv", argv_},
              {"binary_version", PWCF_VERSION},
              {"schema_version", config::kSchemaVersion},
              {"config_hash", io::Hex(io::Fnv1a(canonical))},
              {"config", config::ToJson(cfg_)},
              {"seed", cfg_.seed},
              {"jobs", opt_.jobs},
              {"started_at", started_},
              {"finished_at", UtcNow()},
              {"files", files_}};
    for (auto& [k, v] : extra_.items()) m[k] = v;
    io::WriteFile(Out("manifest_" + command_ + ".json").string(), m.dump(2) + "\n");
  }

 private:
  std::string command_;
  Options opt_;
  std::vector<std::string> argv_;
  std::string started_;
  config::RunConfig cfg_;
  json files_ = json::array();
  json extra_ = json::object();
};

std::vector<attacks::SolverTag> Solvers(const std::string& flag) {
  if (flag == "pwcf") return {attacks::SolverTag::kPwcf};
  if (flag == "pgd") return {attacks::SolverTag::kPgd};
  return {attacks::SolverTag::kPwcf, attacks::SolverTag::kPgd};
}

std::shared_ptr<const model::Classifier> LoadModel(const Run& run) {
  const fs::path p = run.Checkpoint();
  if (!fs::exists(p)) {
    throw Error(ErrorCode::kIo,
                fmt::format("no checkpoint at '{}'; run `pwcf train` first", p.string()));
  }
  return std::make_shared<const model::Classifier>(model::Load(p.string()));
}

int Train(Run& run) {
  const auto& cfg = run.cfg();
  const model::Dataset data = cfg.dataset.Make();
  model::TrainReport report;
  const model::Classifier m = experiment::TrainModel(cfg, data, &report);
  const fs::path ckpt = run.Checkpoint();
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  model::Save(m, ckpt.string());
  run.extra()["checkpoint"] = ckpt.string();
  const json j = {{"train_accuracy", report.train_accuracy},
                  {"val_accuracy", report.val_accuracy},
                  {"final_loss", report.final_loss},
                  {"epochs_run", report.epochs_run},
                  {"adversarial", cfg.adversarial.enabled}};
  run.Write("train.json", j.dump(2) + "\n");
  std::cout << j.dump() << "\n";
  return 0;
}

// Runs every spec of one formulation and writes one CSV per
// (solver, formulation, loss, metric).
int Attack(Run& run, attacks::Formulation formulation) {
  const auto& cfg = run.cfg();
  const auto m = LoadModel(run);
  const model::Dataset data = cfg.dataset.Make();
  const auto samples = experiment::SelectSamples(*m, data, cfg.samples);
  std::vector<attacks::SolverTag> solvers = Solvers(run.options().solver);
  if (formulation == attacks::Formulation::kMinRadius) {
    std::erase(solvers, attacks::SolverTag::kPgd);
  }

  std::map<std::string, std::vector<attacks::PerturbationRecord>> by_file;
  std::map<std::string, std::string> delta_name;
  std::size_t specs = 0;
  for (const auto& spec : cfg.attacks) {
    if (spec.formulation != formulation) continue;
    ++specs;
    for (auto solver : solvers) {
      auto records = experiment::RunSpec(m, samples, spec, solver, cfg, run.options().jobs);
      const std::string name = experiment::RecordFileName(spec, solver);
      delta_name[name] = experiment::DeltaFileName(spec, solver);
      auto& bucket = by_file[name];
      bucket.insert(bucket.end(), records.begin(), records.end());
    }
  }
  if (specs == 0) {
    std::cerr << fmt::format("note: the config lists no {} attacks\n",
                             attacks::ToString(formulation));
  }
  json timings = json::object();
  std::size_t total = 0;
  for (const auto& [name, records] : by_file) {
    run.Write(name, io::FormatRecords(records));
    std::ostringstream deltas;
    io::WriteDeltas(deltas, records);
    run.Write(delta_name[name], deltas.str());
    json t = json::array();
    for (const auto& r : records) t.push_back(r.wall_time_ms);
    timings[name] = t;
    total += records.size();
  }
  run.extra()["wall_time_ms"] = timings;
  run.extra()["samples"] = samples.size();
  std::cout << fmt::format("{} records over {} samples in {} files under {}\n", total,
                           samples.size(), by_file.size(), run.options().out_dir);
  return 0;
}

int Analyze(Run& run) {
  const auto& cfg = run.cfg();
  const auto m = LoadModel(run);
  const model::Dataset data = cfg.dataset.Make();
  std::vector<attacks::PerturbationRecord> records;
  std::vector<std::string> inputs;
  if (fs::is_directory(run.options().out_dir)) {
    for (const auto& entry : fs::directory_iterator(run.options().out_dir)) {
      const std::string name = entry.path().filename().string();
      if (name.starts_with("records_") && name.ends_with(".csv")) inputs.push_back(name);
    }
  }
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) {
    throw Error(ErrorCode::kIo, fmt::format("no records_*.csv under '{}'; run `pwcf attack` or "
                                            "`pwcf radius` first",
                                            run.options().out_dir));
  }
  for (const auto& name : inputs) {
    auto part = io::ParseRecords(io::ReadFile(run.Out(name).string()));
    records.insert(records.end(), part.begin(), part.end());
  }
  const auto clean = experiment::CleanPredictions(*m, data, cfg.samples);
  const auto summary = analysis::Summarize(records, clean, data.dim, cfg.solver.tau_v);
  run.Write("summary.json", analysis::ToJson(summary).dump(2) + "\n");

  std::ostringstream hist;
  hist << "solver_tag,formulation,loss,metric,eps,bin,lower,upper,count\n";
  for (const auto& g : summary.groups) {
    const bool max_loss = g.key.formulation == attacks::Formulation::kMaxLoss;
    for (std::size_t b = 0; b < g.sparsity.counts.size(); ++b) {
      hist << attacks::ToString(g.key.solver) << ',' << attacks::ToString(g.key.formulation) << ','
           << (max_loss ? folding::ToString(g.key.loss) : "none") << ',' << g.key.metric << ','
           << (max_loss ? io::FormatReal(g.key.eps) : "") << ',' << b << ','
           << io::FormatReal(g.sparsity.edges[b]) << ',' << io::FormatReal(g.sparsity.edges[b + 1])
           << ',' << g.sparsity.counts[b] << '\n';
    }
  }
  run.Write("sparsity_histograms.csv", hist.str());
  run.extra()["inputs"] = inputs;
  std::cout << fmt::format("{} records, {} groups, clean accuracy {:.4f}\n", records.size(),
                           summary.groups.size(), summary.clean_accuracy);
  return 0;
}

int Verify(Run& run) {
  json results = json::array();
  bool all = true;
  for (const auto& r : verify::RunAll()) {
    std::cout << fmt::format("[{}] {} ({:.2f} s): {}\n", r.passed ? "PASS" : "FAIL", r.name,
                             r.seconds, r.detail);
    results.push_back({{"name", r.name},
                       {"passed", r.passed},
                       {"seconds", r.seconds},
                       {"budget_seconds", r.budget_seconds},
                       {"detail", r.detail}});
    all = all && r.passed;
  }
  run.Write("verify.json", results.dump(2) + "\n");
  if (!all) throw VerifyFailure("one or more invariant checks failed");
  return 0;
}

int DanskinDemo(Run&) {
  const double theta = 1.0;
  const double g0 = model::DanskinSubgradient(theta, model::DanskinInner::kStationaryZero);
  const double g1 = model::DanskinSubgradient(theta, model::DanskinInner::kUpperEndpoint);
  std::cout << fmt::format("g(theta) = max_{{-1 <= x' <= 1}} max(theta x', 0)^2 at theta = {}\n",
                           theta);
  std::cout << fmt::format("  inner point x' = 0 (stationary): subgradient {}\n", g0);
  std::cout << fmt::format("  inner point x' = 1 (global max): subgradient {}\n", g1);
  std::cout << fmt::format("  one step, lr 0.1: g {} -> {} using x' = 0, {} -> {} using x' = 1\n",
                           model::DanskinObjective(theta),
                           model::DanskinObjective(theta - 0.1 * g0),
                           model::DanskinObjective(theta),
                           model::DanskinObjective(theta - 0.1 * g1));
  return 0;
}

void PrintError(const char* code, const std::string& message) {
  std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Penalty BFGS-SQP solver with constraint folding, for adversarial attacks on a "
               "small classifier."};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  if (const char* env = std::getenv("PWCF_OUT_DIR"); env && *env) opt.out_dir = env;
  std::uint64_t seed = 0;
  app.add_option("--config", opt.config_path, "JSON run configuration (see configs/default.json)")
      ->check(CLI::ExistingFile);
  app.add_option("--out", opt.out_dir,
                 "Output directory (default: $PWCF_OUT_DIR, else ./pwcf_out)");
  auto* seed_opt = app.add_option("--seed", seed, "Override the global seed from the config");
  app.add_option("--jobs", opt.jobs, "Worker threads for per-sample solves")->capture_default_str();
  app.add_option("--solver", opt.solver, "Attack solvers to run")
      ->check(CLI::IsMember({"pwcf", "pgd", "both"}))
      ->capture_default_str();

  struct Command {
    const char* name;
    const char* help;
    int (*body)(Run&);
  };
  const Command commands[] = {
      {"train", "Train the classifier; writes the checkpoint and train.json", Train},
      {"attack", "Max-loss attacks; writes records_*.csv and deltas_*.csv",
       [](Run& r) { return Attack(r, attacks::Formulation::kMaxLoss); }},
      {"radius", "Min-radius attacks (pwcf only); writes records_*.csv and deltas_*.csv",
       [](Run& r) { return Attack(r, attacks::Formulation::kMinRadius); }},
      {"analyze", "Summarize the records in --out; writes summary.json and sparsity_histograms.csv",
       Analyze},
      {"verify", "Run the invariant suites; exit 2 on any failure", Verify},
      {"danskin-demo", "Print the max-function subgradient example", DanskinDemo},
  };
  for (const auto& c : commands) app.add_subcommand(c.name, c.help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    PrintError("config", e.what());
    return kExitConfig;
  }
  if (*seed_opt) opt.seed = seed;

  const Command* chosen = nullptr;
  for (const auto& c : commands) {
    if (app.got_subcommand(c.name)) chosen = &c;
  }
  if (opt.solver == "pgd" && std::string(chosen->name) == "radius") {
    PrintError("config", "pgd has no min-radius mode; use --solver pwcf");
    return kExitConfig;
  }
  try {
    Run run(chosen->name, opt, std::vector<std::string>(argv, argv + argc));
    int code = 0;
    try {
      code = chosen->body(run);
    } catch (const VerifyFailure&) {
      run.Finish();
      throw;
    }
    run.Finish();
    return code;
  } catch (const ConfigError& e) {
    PrintError("config", e.what());
    return kExitConfig;
  } catch (const VerifyFailure& e) {
    PrintError("verification", e.what());
    return kExitVerify;
  } catch (const std::exception& e) {
    PrintError("runtime", e.what());
    return kExitRuntime;
  }
}
