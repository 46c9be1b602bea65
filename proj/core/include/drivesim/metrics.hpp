#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "drivesim/rewards.hpp"
#include "drivesim/world.hpp"

// Post-hoc evaluation over plain rollout trajectories: displacement metrics
// against the log, infraction rates from the reward signed distances, and
// base-2 Jensen-Shannon divergence over pinned feature histograms.
namespace drivesim::metrics {

inline constexpr int kRolloutsPerScenario = 16;
inline constexpr int kHistogramBins = 200;

// Kinematic feasibility caps for the finite-difference estimates.
inline constexpr double kMaxFeasibleAccel = 6.0;      // m/s^2
inline constexpr double kMaxFeasibleCurvature = 0.3;  // 1/m
inline constexpr double kCurvatureSpeedGuard = 0.1;   // m/s; below this the estimate is skipped

// One simulated trajectory for the evaluated agents. states[a][t] is the state
// of the a-th evaluated agent at track time t; t = 0 is the shared start state,
// so a track with T transitions holds T+1 states.
struct RolloutTrack {
  std::vector<std::vector<world::AgentState>> states;
};

// A group of rollouts of one scenario sharing the start state and horizon.
// `agents` lists the evaluated agent ids; everyone else replays the log.
// `start_step` is the log step aligned with track time 0.
struct EvalBatch {
  const world::Scenario* scenario = nullptr;
  std::vector<int> agents;
  int start_step = 0;
  std::vector<RolloutTrack> rollouts;

  int horizon() const;    // transitions per track
  void validate() const;  // throws std::invalid_argument on shape violations
};

struct ReconstructionMetrics {
  double min_ade = 0.0;   // per-agent best rollout
  double min_sade = 0.0;  // best rollout for the whole scene
  double ade = 0.0;       // mean over every rollout
};

// Average positional displacement against the logged trajectories. The log
// must cover the evaluation window; throws when it does not or when there are
// no evaluated agents. Always min_ade <= min_sade <= ade.
ReconstructionMetrics reconstruction_metrics(const EvalBatch& batch);

struct InfractionRates {
  double collision = 0.0;       // object distance below zero
  double off_road = 0.0;        // road-edge distance above zero, vehicles only
  double rule_violation = 0.0;  // past the stop point of a red light, vehicles only
  double kinematic = 0.0;       // estimated accel or curvature beyond the caps, vehicles only
};

// Fraction of (rollout, agent) pairs with at least one infraction step.
// Curvature is estimated as wrapped heading change over v*dt and skipped below
// the speed guard; acceleration as the speed difference quotient.
InfractionRates infraction_rates(const EvalBatch& batch);

// Feature streams for the divergence metrics. Per-step features sample every
// simulated step of every rollout; per-trajectory features (curvature,
// progress) emit one sample per agent per rollout.
enum class Feature {
  kLinearSpeed,      // m/s, state speed
  kAngularSpeed,     // rad/s, wrapped heading difference quotient
  kLinearAccel,      // m/s^2, speed difference quotient
  kAngularAccel,     // rad/s^2, angular-speed difference quotient
  kNearestObject,    // m, signed box distance to the nearest other agent
  kTimeToCollision,  // s, constant-velocity first-overlap time, capped
  kEdgeDistance,     // m, distance to the road edge, positive inside the road
  kCurvature,        // 1/m, trajectory mean of heading change over arclength
  kProgress,         // m, trajectory cumulative arclength
};
inline constexpr int kFeatureCount = 9;

const char* feature_name(Feature f);
std::pair<double, double> feature_range(Feature f);  // pinned histogram range

struct FeatureSamples {
  std::array<std::vector<double>, kFeatureCount> streams;

  std::vector<double>& stream(Feature f) { return streams[static_cast<int>(f)]; }
  const std::vector<double>& stream(Feature f) const { return streams[static_cast<int>(f)]; }
  void append(const FeatureSamples& other);
};

// Streams measured on the simulated tracks, pooled over all rollouts.
FeatureSamples extract_features(const EvalBatch& batch);
// The same streams measured on the logged trajectories over the same window.
FeatureSamples extract_log_features(const EvalBatch& batch);

// Fixed-range histogram; out-of-range samples land in the boundary bins so no
// mass is lost. The standard constructor pins the published range and bin
// count for the feature; the explicit one is for ad-hoc binnings.
class FeatureHistogram {
 public:
  explicit FeatureHistogram(Feature f);
  FeatureHistogram(Feature f, double lo, double hi, int bins);

  void add(double x);
  void add_all(const std::vector<double>& xs);

  Feature feature() const { return feature_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  int bins() const { return static_cast<int>(counts_.size()); }
  double total() const { return total_; }
  const std::vector<double>& counts() const { return counts_; }
  // Mass per bin, summing to one; throws when the histogram is empty.
  std::vector<double> normalized() const;

 private:
  Feature feature_;
  double lo_, hi_;
  std::vector<double> counts_;
  double total_ = 0.0;
};

// Base-2 Jensen-Shannon divergence in [0, 1]. Bins empty on both sides are
// skipped. Throws on mismatched binning or empty histograms.
double jsd(const FeatureHistogram& p, const FeatureHistogram& q);
// The same on two equal-length mass vectors (each summing to one).
double jsd_mass(const std::vector<double>& p, const std::vector<double>& q);

// Per-feature divergence between two sample sets under the pinned binnings.
// Features with an empty stream on either side come back as NaN.
std::array<double, kFeatureCount> feature_jsd(const FeatureSamples& a, const FeatureSamples& b);

// Signed box distance to the nearest other agent; +infinity when alone.
double nearest_object_distance(const world::Scene& scene, int agent);

// Earliest time within [0, cap] at which the agent's box first overlaps
// another agent's box when every agent keeps its current velocity vector and
// heading. Returns cap when no overlap happens. Contacts briefer than the
// 10 ms march floor can be stepped over.
double time_to_collision(const world::Scene& scene, int agent, double cap = 5.0);

// "bin_lo,bin_hi,mass" rows for external plotting.
std::string histogram_csv(const FeatureHistogram& h);

}  // namespace drivesim::metrics
