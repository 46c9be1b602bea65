#pragma once

#include <array>
#include <string>
#include <vector>

#include "drivesim/common.hpp"
#include "drivesim/geometry.hpp"
#include "drivesim/scalar.hpp"
#include "drivesim/tensor.hpp"

namespace drivesim::world {

enum class AgentType { kVehicle, kPedestrian, kCyclist };
enum class LightState { kUnknown, kRed, kYellow, kGreen };
enum class MapFeatureType { kRoadEdge, kLaneCenter, kCrosswalk };

const char* agent_type_name(AgentType t);
const char* light_state_name(LightState s);
const char* map_feature_name(MapFeatureType t);

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;  // heading, wrapped to (-pi, pi]
  double v = 0.0;    // speed, >= 0
};

// Vehicle/cyclist: u0 = acceleration [m/s^2], u1 = steering [rad], u2 unused.
// Pedestrian: u0 = dx [m], u1 = dy [m], u2 = dpsi [rad].
struct Action {
  double u0 = 0.0;
  double u1 = 0.0;
  double u2 = 0.0;
};

struct KinematicParams {
  double dt = 0.2;                 // 5 Hz
  double rear_axle_ratio = 0.3;    // l_r = ratio * length
  double front_axle_ratio = 0.3;   // l_f = ratio * length
  double max_accel = 6.0;          // |u0| bound
  double max_steer = kPi / 4.0;    // |u1| bound, 45 deg
  double max_delta_pos = 1.0;      // pedestrian |dx|, |dy| per-step bound
  double max_delta_psi = 0.5;      // pedestrian |dpsi| per-step bound
};

template <class Real>
struct StateT {
  Real x, y, psi, v;
};

inline double wrap_heading(double psi) { return wrap_angle(psi); }
inline ad::Scalar wrap_heading(ad::Scalar psi) { return ad::atan2(ad::sin(psi), ad::cos(psi)); }

// Kinematic bicycle step. Actions are clamped to their bounds and the speed is
// clamped at zero from below; the heading is re-wrapped after the update.
template <class Real>
StateT<Real> step_bicycle(const StateT<Real>& s, Real accel, Real steer, double length,
                          const KinematicParams& kp) {
  using ad::clamp;
  using ad::cmax;
  using ad::atan;
  using ad::cos;
  using ad::sin;
  using ad::tan;
  using std::atan;
  using std::cos;
  using std::sin;
  using std::tan;
  const double lr = kp.rear_axle_ratio * length;
  const double ratio = kp.rear_axle_ratio / (kp.rear_axle_ratio + kp.front_axle_ratio);
  Real a = clamp(accel, -kp.max_accel, kp.max_accel);
  Real b = clamp(steer, -kp.max_steer, kp.max_steer);
  Real rho = atan(ratio * tan(b));
  Real hdg = s.psi + rho;
  StateT<Real> out{
      s.x + s.v * cos(hdg) * kp.dt,
      s.y + s.v * sin(hdg) * kp.dt,
      wrap_heading(s.psi + (s.v / lr) * sin(rho) * kp.dt),
      cmax(s.v + a * kp.dt, 0.0),
  };
  return out;
}

// Pedestrian delta step: position and heading move by bounded increments, the
// new speed is the implied step speed (independent of the previous one).
template <class Real>
StateT<Real> step_delta(const StateT<Real>& s, Real dx, Real dy, Real dpsi,
                        const KinematicParams& kp) {
  using ad::clamp;
  using ad::hypot;
  using std::hypot;
  Real cdx = clamp(dx, -kp.max_delta_pos, kp.max_delta_pos);
  Real cdy = clamp(dy, -kp.max_delta_pos, kp.max_delta_pos);
  Real cdp = clamp(dpsi, -kp.max_delta_psi, kp.max_delta_psi);
  StateT<Real> out{
      s.x + cdx,
      s.y + cdy,
      wrap_heading(s.psi + cdp),
      hypot(cdx, cdy) / kp.dt,
  };
  return out;
}

// Closed-form d(next state)/d(state) in (x, y, psi, v) order, row-major 4x4.
// Valid away from the standstill clamp (v + a*dt > 0); the heading wrap has
// unit derivative so it does not appear.
std::array<double, 16> bicycle_state_jacobian(const AgentState& s, const Action& a, double length,
                                              const KinematicParams& kp);
// d(next state)/d(accel, steer), row-major 4x2. Zero columns where the action
// clamp is active.
std::array<double, 8> bicycle_action_jacobian(const AgentState& s, const Action& a, double length,
                                              const KinematicParams& kp);
std::array<double, 16> delta_state_jacobian();
std::array<double, 12> delta_action_jacobian(const Action& a, const KinematicParams& kp);

struct MapPolyline {
  MapFeatureType type = MapFeatureType::kRoadEdge;
  std::vector<geom::Vec2> pts;
};

struct Lane {
  int polyline = -1;
  std::vector<int> successors;
};

struct MapPoint {
  geom::Vec2 p;
  geom::Vec2 dir;  // unit tangent
};

struct MapData {
  std::vector<MapPolyline> polylines;
  std::vector<Lane> lanes;
  // Flattened sample points over all polylines and road-edge polyline indices,
  // rebuilt after the polylines change.
  std::vector<MapPoint> points;
  std::vector<int> road_edges;
  void rebuild_caches();
};

struct LightInfo {
  geom::Vec2 position;
  int lane = -1;              // lane whose traffic the light controls
  geom::Vec2 stop_point;      // on that lane's route
  std::vector<LightState> schedule;  // per time step; last entry holds beyond the end
};

struct AgentSpec {
  AgentType type = AgentType::kVehicle;
  double length = 4.5;
  double width = 2.0;
  bool controlled = false;    // driven by the policy (vs replayed from the log)
  bool road_exempt = false;   // excluded from the on-road term
  int route_lane = -1;        // starting lane for route search
  std::vector<AgentState> logged;
};

struct Scenario {
  std::string name;
  double dt = 0.2;
  int init_steps = 6;  // logged states 0 .. init_steps-1 warm up the history
  int horizon = 40;    // simulated transitions after the warmup
  MapData map;
  std::vector<LightInfo> lights;
  std::vector<AgentSpec> agents;

  // Index of the last state a full rollout reaches.
  int last_step() const { return init_steps - 1 + horizon; }
};

struct Scene {
  const Scenario* scenario = nullptr;
  std::vector<AgentState> states;   // one per scenario agent
  std::vector<LightState> lights;   // one per scenario light
  int time_step = 0;
};

LightState light_state_at(const LightInfo& info, int time_step);
AgentState logged_state_at(const AgentSpec& spec, int time_step);
Scene make_scene(const Scenario& sc, int time_step);

// Advances every agent one step: controlled agents through their kinematic
// model, replayed agents from the log; lights follow the schedule. Agents are
// independent, so the update commutes with any agent permutation.
Scene transition(const Scene& s, const std::vector<Action>& actions, const KinematicParams& kp);

inline constexpr int kAgentFeatures = 8;  // x, y, yaw, speed, vx, vy, length, width
inline constexpr int kMapFeatures = 4;    // x, y, dir_x, dir_y
inline constexpr int kLightFeatures = 6;  // x, y, one-hot(unknown/red/yellow/green)

struct ObservationConfig {
  int ego_history = 6;
  int max_objects = 16;
  int max_map_points = 2000;
  int max_lights = 16;
};

// Nearest-first element selection, ties broken toward the lower index.
struct ObservationPlan {
  std::vector<int> objects;     // agent indices
  std::vector<int> map_points;  // indices into MapData::points
  std::vector<int> lights;      // light indices
};

ObservationPlan plan_observation(const Scene& scene, int agent, const ObservationConfig& cfg);

// Fixed-size ego-frame observation with validity masks (1 = real element,
// 0 = zero padding). Ego history rows run oldest to current; missing history
// is padded at the front.
struct Observation {
  ad::Tensor ego;      // ego_history x kAgentFeatures
  ad::Tensor objects;  // max_objects x kAgentFeatures
  ad::Tensor map_pts;  // max_map_points x kMapFeatures
  ad::Tensor lights;   // max_lights x kLightFeatures
  std::vector<double> ego_mask, object_mask, map_mask, light_mask;
};

Observation observe(const Scene& scene, int agent, const std::vector<AgentState>& ego_history,
                    const ObservationConfig& cfg);

// Tape-resident agent state used inside differentiable rollouts.
struct TracedState {
  ad::Scalar x, y, psi, v;
};

TracedState trace_state(ad::Tape& tape, const AgentState& s, bool as_leaf);
AgentState untrace(const TracedState& s);

// Observation on the tape. Modalities carry only their valid elements (no
// padding rows); a modality with no elements has an invalid Var.
struct TracedObservation {
  ad::Var ego;      // n_hist x kAgentFeatures
  ad::Var objects;  // n_obj x kAgentFeatures
  ad::Var map_pts;  // n_map x kMapFeatures
  ad::Var lights;   // n_light x kLightFeatures
};

// `traced` holds tape states for controlled agents (others read from
// `scene`). `ego_history` runs oldest to current, current last.
TracedObservation observe_traced(ad::Tape& tape, const Scene& scene,
                                 const std::vector<const TracedState*>& traced, int agent,
                                 const std::vector<TracedState>& ego_history,
                                 const ObservationConfig& cfg);

// Uniform draw of a scenario index (the scene starts at the end of the warmup).
int sample_initial(const std::vector<Scenario>& dataset, Rng& rng);

}  // namespace drivesim::world
