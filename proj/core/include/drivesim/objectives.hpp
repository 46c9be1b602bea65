#pragma once

#include <memory>
#include <string>
#include <vector>

#include "drivesim/policy.hpp"
#include "drivesim/rewards.hpp"
#include "drivesim/tape.hpp"
#include "drivesim/world.hpp"

// Differentiable rollout engines and the three training objectives built on
// them: a closed-loop imitation evidence bound (policy sees its own generated
// observations), an open-loop variant (policy sees logged observations while
// states still evolve from its actions), and a reward return with latents
// drawn from the prior. Every rollout owns one tape with the parameters
// mounted as leaves, so each objective yields its own gradient column.
// gradient_diagnostics decomposes a rollout's sensitivity into per-step
// Jacobian products and checks the exponential norm bound.
namespace drivesim::objectives {

// Which observation stream fed the policy and where the latents came from.
enum class Provenance {
  kClosedLoopPosterior,  // self-induced observations, posterior latents
  kOpenLoopPosterior,    // logged observations, posterior latents
  kClosedLoopPrior,      // self-induced observations, prior latents
};

const char* provenance_name(Provenance p);

struct RolloutConfig {
  world::ObservationConfig obs;
  world::KinematicParams kin;
  rewards::RewardThresholds thresholds;
  double huber_delta = 1.0;     // position loss transition point [m]
  double heading_weight = 1.0;  // squared heading error weight
  double gamma = 1.0;           // reward discount per step
  int horizon = -1;             // simulated steps; -1 means the scenario horizon
  int start_step = 0;           // first simulated step (nonzero when resuming)
  bool params_as_leaves = true;

  // Analysis switches used by gradient_diagnostics: the policy sees only the
  // current state (single-row ego history), the recurrent state is reset
  // every step, and one latent is drawn at the first step then held as a
  // tape constant. Together these make the rollout a pure per-step
  // composition state -> observation -> action -> next state.
  bool instant_obs = false;
  bool memoryless = false;
  bool hold_latent = false;
};

// Everything needed to continue a rollout from where another one stopped.
// Plain values only; the continuation mounts them as tape constants, which
// reproduces the same numbers the uninterrupted rollout would compute.
struct ResumePoint {
  std::vector<world::AgentState> states;             // per controlled agent
  std::vector<std::vector<world::AgentState>> history;  // recent past, oldest first
  std::vector<std::vector<double>> hidden;           // recurrent state
  std::vector<std::vector<double>> latent;           // active codebook row
  std::vector<int> latent_index;
  bool empty() const { return states.empty(); }
};

// One latent draw. `step` is the absolute simulation step (start_step + t),
// so a replay list recorded from a full rollout can be sliced for a resumed
// segment. Draws happen in (step, controlled-agent) order.
struct GateSample {
  int step = 0;
  int agent = 0;  // scenario agent index
  int index = -1;
  std::vector<double> gumbel;
};

struct StepRecord {
  world::Scene scene;                  // before the step, plain values
  std::vector<world::Action> actions;  // per controlled agent
  std::vector<double> rewards;         // per controlled agent at the next state
  double recon = 0.0;                  // summed reconstruction loss (positive)
  double kl = 0.0;                     // summed latent divergence
  double reward = 0.0;                 // discounted reward sum over agents
  double contribution = 0.0;           // this step's share of the objective
};

// A finished differentiable rollout. Movable, not copyable (owns the tape;
// every Var below points into it).
struct Rollout {
  Provenance provenance{};
  RolloutConfig config;  // the configuration the rollout ran under
  std::unique_ptr<ad::Tape> tape;
  std::unique_ptr<policy::TapeBinding> params;
  std::vector<int> controlled;  // scenario agent indices driven by the policy

  // states[t][c]: traced state of controlled agent c before step t
  // (states[0] holds the initial states, states[T] the final ones).
  std::vector<std::vector<world::TracedState>> states;
  std::vector<std::vector<world::TracedObservation>> observations;  // T x C
  std::vector<std::vector<ad::Var>> latents;      // T x C, z in effect at step t
  std::vector<std::vector<ad::Var>> action_rows;  // T x C
  std::vector<StepRecord> steps;                  // T
  std::vector<GateSample> gates;

  ad::Var objective;   // scalar on the tape; larger is better
  double value = 0.0;  // objective value; equals the sum of step contributions
  int start_step = 0;
  ResumePoint end;  // continuation point after the last step

  int horizon() const { return static_cast<int>(steps.size()); }
};

// Closed-loop imitation bound: the policy runs on its own generated
// observations, latents come from the posterior at gate steps (one draw per
// interval), and the objective per step is
//   -huber(position error) - heading_weight * wrap(heading error)^2
// minus, at gate steps, KL(posterior index dist || prior index dist at the
// generated observation). `replay` substitutes recorded gumbel noise for
// fresh draws. Throws if the log does not cover the simulated window.
Rollout rollout_closed_loop(const world::Scenario& sc, const policy::ParamStore& store,
                            const policy::PolicyConfig& pcfg, const RolloutConfig& rcfg, Rng& rng,
                            const std::vector<GateSample>* replay = nullptr,
                            const ResumePoint* resume = nullptr);

// Open-loop variant: identical except the policy (and the prior inside the
// KL) consumes observations built from the logged states, while the traced
// states still evolve from the policy's actions.
Rollout rollout_open_loop(const world::Scenario& sc, const policy::ParamStore& store,
                          const policy::PolicyConfig& pcfg, const RolloutConfig& rcfg, Rng& rng,
                          const std::vector<GateSample>* replay = nullptr,
                          const ResumePoint* resume = nullptr);

// Reward rollout: latents from the prior at gate steps, objective
//   sum_t gamma^t sum_i reward_i(next state).
// Needs logged states only through the starting point.
Rollout rollout_rl(const world::Scenario& sc, const policy::ParamStore& store,
                   const policy::PolicyConfig& pcfg, const RolloutConfig& rcfg, Rng& rng,
                   const std::vector<GateSample>* replay = nullptr,
                   const ResumePoint* resume = nullptr);

struct ObjectiveValues {
  double elbo_cl = 0.0;
  double elbo_ol = 0.0;
  double rl_return = 0.0;
  std::vector<double> cl_steps, ol_steps, rl_steps;  // each sums to its total
};

// The three rollouts for one scenario, drawn with independent noise.
struct ObjectiveSet {
  Rollout cl, ol, rl;
  ObjectiveValues values() const;
};

ObjectiveSet evaluate_objectives(const world::Scenario& sc, const policy::ParamStore& store,
                                 const policy::PolicyConfig& pcfg, const RolloutConfig& rcfg,
                                 Rng& rng);

// Gradient of `sign * rollout.objective` with respect to every parameter
// entry, flattened in store registration order. The default sign -1 gives
// the gradient of the loss that training minimizes.
std::vector<double> parameter_gradient(const Rollout& ro, double sign = -1.0);

// Cross-step sensitivity analysis of a rollout produced with the analysis
// switches on (instant_obs, memoryless, hold_latent) and self-induced
// observations. The per-step Jacobian of the composed map splits into a
// state branch (closed-form transition Jacobian) and an action branch
// (closed-form d(next state)/d(action) times the tape's d(action)/d(state)):
//   J_k = dT/ds_k + dT/da_k * da_k/ds_k,   ds_t/ds_j = J_{t-1} ... J_j.
// All matrices are over the stacked controlled-agent state (4 per agent).
struct DiagnosticsReport {
  int horizon = 0;  // T
  int dim = 0;      // 4 * controlled agents
  double sigma_s = 0.0;  // max_k ||state branch||_2
  double sigma_a = 0.0;  // max_k ||action branch||_2

  std::vector<ad::Tensor> state_jac;   // T blocks, dim x dim
  std::vector<ad::Tensor> action_jac;  // T blocks, dim x dim
  std::vector<ad::Tensor> step_jac;    // element-wise sum of the two

  // Pairs (t, j) with 0 <= j < t <= T, grouped by j ascending then t.
  std::vector<ad::Tensor> cross;      // ds_t/ds_j
  std::vector<double> cross_norm;     // spectral norms
  std::vector<double> cross_bound;    // (sigma_s + sigma_a)^(t-j)
  std::vector<double> highway_gap;    // ||product of state branches - I||_2

  // Norm-versus-interval growth curves over d = t - j = 1..T.
  std::vector<double> growth_max, growth_mean;

  int cross_index(int t, int j) const;
  bool bound_satisfied(double slack = 1e-9) const;
  // CSV of the growth curves: interval, max_norm, mean_norm, bound.
  std::string csv() const;
};

DiagnosticsReport gradient_diagnostics(const Rollout& ro);

}  // namespace drivesim::objectives
