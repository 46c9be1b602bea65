#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drivesim/world.hpp"

// Synthetic scenario generation: small maps with scripted expert agents whose
// logged trajectories are produced by forward-rolling the kinematic models, so
// they are reproducible from recovered actions to machine precision.
namespace drivesim::synth {

struct GenerateOptions {
  int count = 1;
  std::uint64_t seed = 0;
  int init_steps = 6;  // warmup states before the simulated window
  int horizon = 40;    // simulated transitions
};

// Supported kinds: "straight" (lane following with speed modulation, may add
// a cyclist), "tjunction" (side-road vehicle turning onto the main road),
// "crossing" (signalized intersection with a stopping vehicle and a crossing
// pedestrian), "merge" (ramp vehicle blending onto a main road).
const std::vector<std::string>& scenario_kinds();

// Deterministic in (kind, options). Every scenario passes validate_scenario.
// Throws std::invalid_argument on an unsupported kind.
std::vector<world::Scenario> generate_scenarios(const std::string& kind,
                                                const GenerateOptions& opt);

// Per-step actions recovered from consecutive logged states under the agent's
// kinematic model (bicycle for vehicles and cyclists, deltas for
// pedestrians). Replaying them through the model reproduces the track exactly
// when the track was produced by that model with in-bound actions.
std::vector<world::Action> fit_actions(const std::vector<world::AgentState>& track,
                                       world::AgentType type, double length,
                                       const world::KinematicParams& kp);

}  // namespace drivesim::synth
