#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "drivesim/metrics.hpp"
#include "drivesim/multipliers.hpp"
#include "drivesim/objectives.hpp"
#include "drivesim/policy.hpp"
#include "drivesim/world.hpp"

// Training loop over the three rollout objectives. Each iteration draws a
// scenario batch, runs the closed-loop bound, the open-loop bound and the
// reward rollout for every scenario, averages the three loss gradients over
// the batch, clips each to a norm budget, and then updates every parameter
// group along its multiplier-combined direction with plain gradient descent.
// Periodic validation rolls the current policy from the prior on held-out
// scenarios and keeps the parameters with the lowest displacement metric.
namespace drivesim::train {

struct TrainConfig {
  int iterations = 2000;  // desk-scale default; full-scale runs use far more
  int batch = 16;
  double learning_rate = 1e-4;
  double clip_norm = 1.0;  // per-objective gradient budget, applied before mixing
  std::array<double, 3> omega = multipliers::kDefaultWeights;
  int validation_interval = 50;  // iterations between validations; 0 disables
  int validation_rollouts = 4;   // prior rollouts per validation scenario
  std::uint64_t seed = 0;
  policy::PolicyConfig policy;
  objectives::RolloutConfig rollout;
};

struct IterationLog;
struct ValidationLog;

// Optional progress hooks, called after each record is appended.
struct TrainHooks {
  std::function<void(const IterationLog&)> on_iteration;
  std::function<void(const ValidationLog&)> on_validation;
};

// The three parameter groups updated independently: high-level policy,
// low-level policy together with the codebooks, posterior.
struct GroupSpec {
  std::string name;
  std::vector<std::string> prefixes;
};
const std::vector<GroupSpec>& parameter_groups();

struct GroupLog {
  std::string name;
  std::array<double, 3> lambda{};
  double sigma = 0.0;
  double residual = 0.0;
  std::array<double, 3> column_norms{};
  int retained = 0;
  bool rank_floor_hit = false;
};

struct IterationLog {
  int iteration = 0;    // 1-based
  bool skipped = false;  // non-finite loss or gradient; no update applied
  double elbo_cl = 0.0;
  double elbo_ol = 0.0;
  double rl_return = 0.0;
  double recon_cl = 0.0;  // closed-loop reconstruction part alone (positive)
  std::array<double, 3> grad_norms{};  // batch-mean loss gradients, before clipping
  std::vector<GroupLog> groups;
};

struct ValidationLog {
  int iteration = 0;
  metrics::ReconstructionMetrics recon;
  metrics::InfractionRates infractions;
  bool is_best = false;  // lowest min_sade so far
};

struct TrainResult {
  policy::ParamStore params;       // after the last iteration
  policy::ParamStore best_params;  // lowest validation min_sade (final params
                                   // when validation never ran)
  double best_min_sade = std::numeric_limits<double>::infinity();
  int best_iteration = -1;
  std::vector<IterationLog> iterations;
  std::vector<ValidationLog> validations;
  // Differences between this configuration and the full-scale defaults,
  // reported once at startup.
  std::vector<std::string> deviations;
};

TrainResult train(const std::vector<world::Scenario>& dataset,
                  const std::vector<world::Scenario>& validation, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

// Differences between a configuration and the full-scale defaults; also
// stored in TrainResult::deviations.
std::vector<std::string> config_deviations(const TrainConfig& cfg, std::size_t n_train,
                                           std::size_t n_val);

// K prior rollouts of one scenario bundled for the metrics module. The batch
// keeps a pointer to `sc`; the scenario must outlive it.
metrics::EvalBatch prior_rollouts(const world::Scenario& sc, const policy::ParamStore& params,
                                  const policy::PolicyConfig& pcfg,
                                  const objectives::RolloutConfig& rcfg, int rollouts, Rng& rng);

// Runs `rollouts` prior rollouts per scenario and averages the metrics.
// Used by the trainer for checkpoint selection and by the evaluation tool.
struct EvalSummary {
  metrics::ReconstructionMetrics recon;
  metrics::InfractionRates infractions;
};
EvalSummary evaluate_policy(const std::vector<world::Scenario>& scenarios,
                            const policy::ParamStore& params, const policy::PolicyConfig& pcfg,
                            const objectives::RolloutConfig& rcfg, int rollouts, Rng& rng);

std::string training_log_csv(const std::vector<IterationLog>& logs);
std::string validation_log_csv(const std::vector<ValidationLog>& logs);

}  // namespace drivesim::train
