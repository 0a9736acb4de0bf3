#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pwcf/folding.hpp"
#include "pwcf/model.hpp"
#include "pwcf/penalty_sqp.hpp"

namespace pwcf::attacks {

using model::Classifier;

enum class Formulation { kMaxLoss, kMinRadius };
enum class InnerNorm { kL1, kL2 };

const char* ToString(Formulation f);

struct Metric {
  enum class Kind { kLp, kPerceptual };
  Kind kind = Kind::kLp;
  double p = 2.0;  // Lp only; +infinity for linf
  InnerNorm inner = InnerNorm::kL2;  // perceptual only

  static Metric Lp(double p);
  static Metric Linf();
  static Metric Perceptual(InnerNorm inner);

  bool is_linf() const;
  bool is_l1() const;
  // "l1", "l1.5", "l2", "l8", "linf", "pd-l1", "pd-l2"
  std::string Name() const;
  static Metric Parse(const std::string& name);
};

// How the min-radius problem carries the radius: directly as d(x, x'), or
// through decoupled radius variables t (linf and l1 only).
enum class RadiusForm { kAuto, kDirect, kDecoupled };

struct AttackSpec {
  Formulation formulation = Formulation::kMaxLoss;
  Metric metric;
  double eps = 0.0;  // max-loss only
  folding::LossKind loss = folding::LossKind::kMargin;  // max-loss only
  bool rescale = true;  // linf min-radius objective t * sqrt(n)
  bool fold = true;     // false: one scalar constraint per box/linf member
  folding::Aggregator aggregator = folding::Aggregator::kL2;
  RadiusForm radius_form = RadiusForm::kAuto;

  // Throws kInvalidArgument or kUnsupportedFormulation.
  void Validate() const;
  bool decoupled() const;
};

struct LossValue {
  double value = 0.0;
  Vector gradient;
};

// max_{i != y} logits_i - logits_y with the gradient w.r.t. the logits;
// ties go to the lowest index.
LossValue MarginLoss(const Vector& logits, int y);

// Unclipped loss and its input gradient.
LossValue RawLoss(const Classifier& model, const Vector& x, int y, folding::LossKind kind);
LossValue ClippedLossAt(const Classifier& model, const Vector& x, int y, folding::LossKind kind);

// |x' - x|_p with the gradient w.r.t. x'. Zero gradient at x' = x.
LossValue LpDistance(const Vector& x, const Vector& x_prime, double p);
// |phi(x') - phi(x)|_inner over the concatenated hidden activations.
LossValue PerceptualDistance(const Classifier& model, const Vector& x, const Vector& x_prime,
                             InnerNorm inner);
LossValue Distance(const Metric& metric, const Classifier& model, const Vector& x,
                   const Vector& x_prime);

struct ProblemLayout {
  enum class RadiusBlock { kNone, kScalar, kVector };
  Eigen::Index n = 0;    // image dimension; x' is v.head(n)
  Eigen::Index dim = 0;  // solver variables
  RadiusBlock radius = RadiusBlock::kNone;
  double objective_scale = 1.0;
};

struct AttackProblem {
  sqp::NonsmoothProblem problem;
  ProblemLayout layout;
  std::shared_ptr<const Classifier> model;
  Vector x;
  int y = 0;
  AttackSpec spec;

  Vector XPrime(const Vector& v) const { return v.head(layout.n); }
};

// min -clipped loss  s.t.  d(x, x') <= eps, 0 <= x' <= 1.
AttackProblem BuildMaxLoss(std::shared_ptr<const Classifier> model, const Vector& x, int y,
                           const AttackSpec& spec);
// min d(x, x')  s.t.  f_y(x') - max_{i != y} f_i(x') <= 0, 0 <= x' <= 1.
AttackProblem BuildMinRadius(std::shared_ptr<const Classifier> model, const Vector& x, int y,
                             const AttackSpec& spec);
AttackProblem Build(std::shared_ptr<const Classifier> model, const Vector& x, int y,
                    const AttackSpec& spec);

// x'_0 = clip(x + U(-scale, scale)); radius variables start at the current
// distance plus 1e-3.
Vector InitialPoint(const AttackProblem& problem, std::uint64_t seed, double noise_scale);

struct TwoStageConfig {
  int restarts = 10;
  int stage1_iterations = 20;
  int max_iterations = 400;
  double init_noise_scale = 1e-2;

  static TwoStageConfig MaxLossDefaults();
  static TwoStageConfig MinRadiusDefaults();
  static TwoStageConfig For(Formulation f);
  void Validate() const;
};

struct StageRun {
  std::uint64_t seed = 0;
  Vector x0;
  sqp::SolverReport report;
};

struct TwoStageResult {
  sqp::SolverReport best;
  Vector x0;
  std::vector<StageRun> stage1;
  std::size_t winner = 0;
};

// Feasible (violation <= tau_v) run with the least objective, otherwise the
// least violation. Earliest index wins ties.
std::size_t Screen(const std::vector<sqp::SolverReport>& runs, double tau_v);

using InitFactory = std::function<Vector(std::uint64_t seed)>;

// Restart r starts from init(DeriveSeed(seed, r)). Both stages run with H0
// scaling off so stage 2 replays the winner exactly.
TwoStageResult TwoStageSolve(const sqp::NonsmoothProblem& problem, const InitFactory& init,
                             std::uint64_t seed, const TwoStageConfig& cfg,
                             sqp::SolverConfig solver);

struct PgdConfig {
  int steps = 50;
  // Multiplies eps; the raw gradient is not normalized.
  double step_fraction = 0.25;
};

struct PgdResult {
  Vector x_prime;
  double loss = 0.0;
  int iterations = 0;
};

// x' <- P(x' + step * grad loss) with the unclipped spec loss; returns the
// best-loss iterate. linf uses the exact coordinatewise projector, l2 and l1
// project onto the ball and then the box. Every iterate is passed to
// on_iterate when given.
PgdResult Pgd(const Classifier& model, const Vector& x, int y, const AttackSpec& spec,
              const PgdConfig& cfg,
              const std::function<void(const Vector&)>& on_iterate = nullptr);

enum class SolverTag { kPwcf, kPgd };

const char* ToString(SolverTag t);
SolverTag SolverTagFromString(const std::string& name);

struct PerturbationRecord {
  int sample_id = 0;
  SolverTag solver = SolverTag::kPwcf;
  Formulation formulation = Formulation::kMaxLoss;
  folding::LossKind loss = folding::LossKind::kMargin;
  std::string metric;
  double eps = 0.0;
  Vector x_prime;
  Vector delta;
  double objective_or_radius = 0.0;
  double violation = 0.0;
  double stationarity = 0.0;
  bool attack_success = false;
  double sparsity = 0.0;  // NaN when delta = 0
  int iterations = 0;
  double wall_time_ms = 0.0;
};

// Violation of the original (unfolded) constraints at x'.
double OriginalViolation(const Classifier& model, const Vector& x, int y, const AttackSpec& spec,
                         const Vector& x_prime);

// Everything but timing and solver data, recomputed from x'.
PerturbationRecord MakeRecord(const Classifier& model, const Vector& x, int y, int sample_id,
                              const AttackSpec& spec, SolverTag solver, const Vector& x_prime,
                              double tau_v);

struct PwcfOptions {
  sqp::SolverConfig solver;
  TwoStageConfig two_stage;
};

PerturbationRecord RunPwcf(std::shared_ptr<const Classifier> model, const Vector& x, int y,
                           int sample_id, const AttackSpec& spec, const PwcfOptions& options,
                           std::uint64_t global_seed);
PerturbationRecord RunPgd(const Classifier& model, const Vector& x, int y, int sample_id,
                          const AttackSpec& spec, const PgdConfig& cfg, double tau_v);

enum class InnerSolver { kPgd, kPwcf };

// Inner maximizer for adversarial training; pwcf runs a single solve of at
// most `steps` iterations.
model::InnerMaximizer MakeInnerMaximizer(InnerSolver solver, const AttackSpec& spec, int steps);

}  // namespace pwcf::attacks
