#include "drivesim/world.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace drivesim::world {

using geom::Vec2;

const char* agent_type_name(AgentType t) {
  switch (t) {
    case AgentType::kVehicle: return "vehicle";
    case AgentType::kPedestrian: return "pedestrian";
    case AgentType::kCyclist: return "cyclist";
  }
  return "?";
}

const char* light_state_name(LightState s) {
  switch (s) {
    case LightState::kUnknown: return "unknown";
    case LightState::kRed: return "red";
    case LightState::kYellow: return "yellow";
    case LightState::kGreen: return "green";
  }
  return "?";
}

const char* map_feature_name(MapFeatureType t) {
  switch (t) {
    case MapFeatureType::kRoadEdge: return "road_edge";
    case MapFeatureType::kLaneCenter: return "lane_center";
    case MapFeatureType::kCrosswalk: return "crosswalk";
  }
  return "?";
}

std::array<double, 16> bicycle_state_jacobian(const AgentState& s, const Action& a, double length,
                                              const KinematicParams& kp) {
  const double lr = kp.rear_axle_ratio * length;
  const double ratio = kp.rear_axle_ratio / (kp.rear_axle_ratio + kp.front_axle_ratio);
  const double steer = std::clamp(a.u1, -kp.max_steer, kp.max_steer);
  const double rho = std::atan(ratio * std::tan(steer));
  const double hdg = s.psi + rho;
  const double dt = kp.dt;
  return {
      1.0, 0.0, -s.v * std::sin(hdg) * dt, std::cos(hdg) * dt,
      0.0, 1.0, s.v * std::cos(hdg) * dt,  std::sin(hdg) * dt,
      0.0, 0.0, 1.0,                       std::sin(rho) * dt / lr,
      0.0, 0.0, 0.0,                       1.0,
  };
}

std::array<double, 8> bicycle_action_jacobian(const AgentState& s, const Action& a, double length,
                                              const KinematicParams& kp) {
  const double lr = kp.rear_axle_ratio * length;
  const double ratio = kp.rear_axle_ratio / (kp.rear_axle_ratio + kp.front_axle_ratio);
  const bool steer_clamped = a.u1 < -kp.max_steer || a.u1 > kp.max_steer;
  const bool accel_clamped = a.u0 < -kp.max_accel || a.u0 > kp.max_accel;
  const double steer = std::clamp(a.u1, -kp.max_steer, kp.max_steer);
  const double q = ratio * std::tan(steer);
  const double rho = std::atan(q);
  const double hdg = s.psi + rho;
  const double dt = kp.dt;
  // d rho / d steer through rho = atan(ratio * tan(steer))
  const double sec2 = 1.0 / (std::cos(steer) * std::cos(steer));
  const double drho = steer_clamped ? 0.0 : ratio * sec2 / (1.0 + q * q);
  const double dv = accel_clamped ? 0.0 : dt;
  return {
      0.0, -s.v * std::sin(hdg) * dt * drho,
      0.0, s.v * std::cos(hdg) * dt * drho,
      0.0, (s.v / lr) * std::cos(rho) * dt * drho,
      dv,  0.0,
  };
}

std::array<double, 16> delta_state_jacobian() {
  return {
      1.0, 0.0, 0.0, 0.0,
      0.0, 1.0, 0.0, 0.0,
      0.0, 0.0, 1.0, 0.0,
      0.0, 0.0, 0.0, 0.0,
  };
}

std::array<double, 12> delta_action_jacobian(const Action& a, const KinematicParams& kp) {
  const bool cx = a.u0 < -kp.max_delta_pos || a.u0 > kp.max_delta_pos;
  const bool cy = a.u1 < -kp.max_delta_pos || a.u1 > kp.max_delta_pos;
  const bool cp = a.u2 < -kp.max_delta_psi || a.u2 > kp.max_delta_psi;
  const double dx = std::clamp(a.u0, -kp.max_delta_pos, kp.max_delta_pos);
  const double dy = std::clamp(a.u1, -kp.max_delta_pos, kp.max_delta_pos);
  const double h = std::hypot(dx, dy);
  const double dvx = (h > 0.0 && !cx) ? dx / (h * kp.dt) : 0.0;
  const double dvy = (h > 0.0 && !cy) ? dy / (h * kp.dt) : 0.0;
  return {
      cx ? 0.0 : 1.0, 0.0, 0.0,
      0.0, cy ? 0.0 : 1.0, 0.0,
      0.0, 0.0, cp ? 0.0 : 1.0,
      dvx, dvy, 0.0,
  };
}

void MapData::rebuild_caches() {
  points.clear();
  road_edges.clear();
  for (std::size_t pi = 0; pi < polylines.size(); ++pi) {
    const MapPolyline& pl = polylines[pi];
    if (pl.type == MapFeatureType::kRoadEdge) road_edges.push_back(static_cast<int>(pi));
    for (std::size_t i = 0; i < pl.pts.size(); ++i) {
      Vec2 dir{1.0, 0.0};
      if (pl.pts.size() >= 2) {
        // Tangent of the segment leaving the point; the last point reuses the
        // segment arriving at it.
        std::size_t a = i + 1 < pl.pts.size() ? i : i - 1;
        Vec2 d = pl.pts[a + 1] - pl.pts[a];
        double n = geom::norm(d);
        if (n > 0.0) dir = {d.x / n, d.y / n};
      }
      points.push_back({pl.pts[i], dir});
    }
  }
}

LightState light_state_at(const LightInfo& info, int time_step) {
  if (info.schedule.empty()) return LightState::kUnknown;
  std::size_t i = static_cast<std::size_t>(std::clamp(time_step, 0, static_cast<int>(info.schedule.size()) - 1));
  return info.schedule[i];
}

AgentState logged_state_at(const AgentSpec& spec, int time_step) {
  if (spec.logged.empty()) throw std::invalid_argument("world: agent has no logged states");
  std::size_t i = static_cast<std::size_t>(std::clamp(time_step, 0, static_cast<int>(spec.logged.size()) - 1));
  return spec.logged[i];
}

Scene make_scene(const Scenario& sc, int time_step) {
  Scene s;
  s.scenario = &sc;
  s.time_step = time_step;
  s.states.reserve(sc.agents.size());
  for (const AgentSpec& a : sc.agents) s.states.push_back(logged_state_at(a, time_step));
  s.lights.reserve(sc.lights.size());
  for (const LightInfo& l : sc.lights) s.lights.push_back(light_state_at(l, time_step));
  return s;
}

Scene transition(const Scene& s, const std::vector<Action>& actions, const KinematicParams& kp) {
  if (s.scenario == nullptr) throw std::invalid_argument("transition: scene without scenario");
  const Scenario& sc = *s.scenario;
  if (actions.size() != s.states.size())
    throw std::invalid_argument("transition: " + std::to_string(actions.size()) + " actions for " +
                                std::to_string(s.states.size()) + " agents");
  Scene out;
  out.scenario = s.scenario;
  out.time_step = s.time_step + 1;
  out.states.resize(s.states.size());
  for (std::size_t i = 0; i < s.states.size(); ++i) {
    const AgentSpec& spec = sc.agents[i];
    if (!spec.controlled) {
      out.states[i] = logged_state_at(spec, out.time_step);
      continue;
    }
    const AgentState& cur = s.states[i];
    StateT<double> st{cur.x, cur.y, cur.psi, cur.v};
    StateT<double> nx;
    if (spec.type == AgentType::kPedestrian) {
      nx = step_delta<double>(st, actions[i].u0, actions[i].u1, actions[i].u2, kp);
    } else {
      nx = step_bicycle<double>(st, actions[i].u0, actions[i].u1, spec.length, kp);
    }
    out.states[i] = {nx.x, nx.y, nx.psi, nx.v};
  }
  out.lights.reserve(sc.lights.size());
  for (const LightInfo& l : sc.lights) out.lights.push_back(light_state_at(l, out.time_step));
  return out;
}

namespace {

// Stable nearest-first order: (squared distance, index).
std::vector<int> nearest_indices(const std::vector<Vec2>& pts, Vec2 origin, int cap,
                                 int skip_index = -1) {
  std::vector<std::pair<double, int>> order;
  order.reserve(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (static_cast<int>(i) == skip_index) continue;
    order.emplace_back(geom::norm2sq(pts[i] - origin), static_cast<int>(i));
  }
  std::sort(order.begin(), order.end());
  if (cap >= 0 && order.size() > static_cast<std::size_t>(cap)) order.resize(static_cast<std::size_t>(cap));
  std::vector<int> out;
  out.reserve(order.size());
  for (auto& [d, i] : order) out.push_back(i);
  return out;
}

}  // namespace

ObservationPlan plan_observation(const Scene& scene, int agent, const ObservationConfig& cfg) {
  if (scene.scenario == nullptr) throw std::invalid_argument("observe: scene without scenario");
  if (agent < 0 || static_cast<std::size_t>(agent) >= scene.states.size())
    throw std::invalid_argument("observe: agent index out of range");
  const Scenario& sc = *scene.scenario;
  Vec2 origin{scene.states[static_cast<std::size_t>(agent)].x, scene.states[static_cast<std::size_t>(agent)].y};

  ObservationPlan plan;
  std::vector<Vec2> agent_pos;
  agent_pos.reserve(scene.states.size());
  for (const AgentState& st : scene.states) agent_pos.push_back({st.x, st.y});
  plan.objects = nearest_indices(agent_pos, origin, cfg.max_objects, agent);

  std::vector<Vec2> map_pos;
  map_pos.reserve(sc.map.points.size());
  for (const MapPoint& mp : sc.map.points) map_pos.push_back(mp.p);
  plan.map_points = nearest_indices(map_pos, origin, cfg.max_map_points);

  std::vector<Vec2> light_pos;
  light_pos.reserve(sc.lights.size());
  for (const LightInfo& l : sc.lights) light_pos.push_back(l.position);
  plan.lights = nearest_indices(light_pos, origin, cfg.max_lights);
  return plan;
}

namespace {

void agent_row(double* row, const AgentState& ego, const AgentState& other, double length,
               double width) {
  const double c = std::cos(ego.psi), s = std::sin(ego.psi);
  const double dx = other.x - ego.x, dy = other.y - ego.y;
  const double yaw = wrap_angle(other.psi - ego.psi);
  row[0] = c * dx + s * dy;
  row[1] = -s * dx + c * dy;
  row[2] = yaw;
  row[3] = other.v;
  row[4] = other.v * std::cos(yaw);
  row[5] = other.v * std::sin(yaw);
  row[6] = length;
  row[7] = width;
}

}  // namespace

Observation observe(const Scene& scene, int agent, const std::vector<AgentState>& ego_history,
                    const ObservationConfig& cfg) {
  ObservationPlan plan = plan_observation(scene, agent, cfg);
  const Scenario& sc = *scene.scenario;
  const AgentState& ego = scene.states[static_cast<std::size_t>(agent)];
  const AgentSpec& ego_spec = sc.agents[static_cast<std::size_t>(agent)];

  Observation obs;
  obs.ego = ad::Tensor::zeros({cfg.ego_history, kAgentFeatures});
  obs.objects = ad::Tensor::zeros({cfg.max_objects, kAgentFeatures});
  obs.map_pts = ad::Tensor::zeros({cfg.max_map_points, kMapFeatures});
  obs.lights = ad::Tensor::zeros({cfg.max_lights, kLightFeatures});
  obs.ego_mask.assign(static_cast<std::size_t>(cfg.ego_history), 0.0);
  obs.object_mask.assign(static_cast<std::size_t>(cfg.max_objects), 0.0);
  obs.map_mask.assign(static_cast<std::size_t>(cfg.max_map_points), 0.0);
  obs.light_mask.assign(static_cast<std::size_t>(cfg.max_lights), 0.0);

  int n_hist = std::min(cfg.ego_history, static_cast<int>(ego_history.size()));
  for (int i = 0; i < n_hist; ++i) {
    // Row cfg.ego_history-1 is the current state; older states precede it.
    int row = cfg.ego_history - n_hist + i;
    const AgentState& past = ego_history[ego_history.size() - static_cast<std::size_t>(n_hist - i)];
    agent_row(&obs.ego.at(row, 0), ego, past, ego_spec.length, ego_spec.width);
    obs.ego_mask[static_cast<std::size_t>(row)] = 1.0;
  }

  for (std::size_t i = 0; i < plan.objects.size(); ++i) {
    const auto oi = static_cast<std::size_t>(plan.objects[i]);
    agent_row(&obs.objects.at(static_cast<int>(i), 0), ego, scene.states[oi], sc.agents[oi].length,
              sc.agents[oi].width);
    obs.object_mask[i] = 1.0;
  }

  const double c = std::cos(ego.psi), s = std::sin(ego.psi);
  for (std::size_t i = 0; i < plan.map_points.size(); ++i) {
    const MapPoint& mp = sc.map.points[static_cast<std::size_t>(plan.map_points[i])];
    const double dx = mp.p.x - ego.x, dy = mp.p.y - ego.y;
    double* row = &obs.map_pts.at(static_cast<int>(i), 0);
    row[0] = c * dx + s * dy;
    row[1] = -s * dx + c * dy;
    row[2] = c * mp.dir.x + s * mp.dir.y;
    row[3] = -s * mp.dir.x + c * mp.dir.y;
    obs.map_mask[i] = 1.0;
  }

  for (std::size_t i = 0; i < plan.lights.size(); ++i) {
    const auto li = static_cast<std::size_t>(plan.lights[i]);
    const LightInfo& light = sc.lights[li];
    const double dx = light.position.x - ego.x, dy = light.position.y - ego.y;
    double* row = &obs.lights.at(static_cast<int>(i), 0);
    row[0] = c * dx + s * dy;
    row[1] = -s * dx + c * dy;
    row[2 + static_cast<int>(scene.lights[li])] = 1.0;
    obs.light_mask[i] = 1.0;
  }
  return obs;
}

TracedState trace_state(ad::Tape& tape, const AgentState& s, bool as_leaf) {
  auto lift = [&](double v) {
    return ad::Scalar{as_leaf ? tape.scalar_leaf(v) : tape.scalar_const(v)};
  };
  return {lift(s.x), lift(s.y), lift(s.psi), lift(s.v)};
}

AgentState untrace(const TracedState& s) {
  return {s.x.val(), s.y.val(), s.psi.val(), s.v.val()};
}

namespace {

using ad::Scalar;
using ad::Var;

// Ego-frame feature row for one agent-like element, on the tape.
Var traced_agent_row(ad::Tape& tape, const TracedState& ego, const TracedState& other,
                     double length, double width) {
  Scalar c = ad::cos(ego.psi), s = ad::sin(ego.psi);
  Scalar dx = other.x - ego.x, dy = other.y - ego.y;
  Scalar yaw = wrap_heading(other.psi - ego.psi);
  Scalar relx = c * dx + s * dy;
  Scalar rely = (-s) * dx + c * dy;
  Scalar vx = other.v * ad::cos(yaw);
  Scalar vy = other.v * ad::sin(yaw);
  return ad::concat({relx.v, rely.v, yaw.v, other.v.v, vx.v, vy.v,
                     tape.scalar_const(length), tape.scalar_const(width)});
}

}  // namespace

TracedObservation observe_traced(ad::Tape& tape, const Scene& scene,
                                 const std::vector<const TracedState*>& traced, int agent,
                                 const std::vector<TracedState>& ego_history,
                                 const ObservationConfig& cfg) {
  ObservationPlan plan = plan_observation(scene, agent, cfg);
  const Scenario& sc = *scene.scenario;
  const auto ai = static_cast<std::size_t>(agent);
  if (traced.size() != scene.states.size())
    throw std::invalid_argument("observe_traced: traced states incomplete");
  // A null ego entry means a constant (untrainable) observation.
  TracedState const_ego;
  if (traced[ai] == nullptr) const_ego = trace_state(tape, scene.states[ai], false);
  const TracedState& ego = traced[ai] != nullptr ? *traced[ai] : const_ego;
  const AgentSpec& ego_spec = sc.agents[ai];

  TracedObservation obs;

  std::vector<Var> rows;
  int n_hist = std::min(cfg.ego_history, static_cast<int>(ego_history.size()));
  for (int i = 0; i < n_hist; ++i) {
    const TracedState& past = ego_history[ego_history.size() - static_cast<std::size_t>(n_hist - i)];
    rows.push_back(traced_agent_row(tape, ego, past, ego_spec.length, ego_spec.width));
  }
  if (!rows.empty()) obs.ego = ad::stack_rows(rows);

  rows.clear();
  for (int oi : plan.objects) {
    const auto o = static_cast<std::size_t>(oi);
    if (traced[o] != nullptr) {
      rows.push_back(traced_agent_row(tape, ego, *traced[o], sc.agents[o].length, sc.agents[o].width));
    } else {
      TracedState other = trace_state(tape, scene.states[o], false);
      rows.push_back(traced_agent_row(tape, ego, other, sc.agents[o].length, sc.agents[o].width));
    }
  }
  if (!rows.empty()) obs.objects = ad::stack_rows(rows);

  if (!plan.map_points.empty()) {
    // Constant (n x 4) block [p | dir] rotated and shifted into the ego frame
    // through one matmul with the block rotation.
    int n = static_cast<int>(plan.map_points.size());
    ad::Tensor raw = ad::Tensor::zeros({n, 4});
    for (int i = 0; i < n; ++i) {
      const MapPoint& mp = sc.map.points[static_cast<std::size_t>(plan.map_points[static_cast<std::size_t>(i)])];
      raw.at(i, 0) = mp.p.x;
      raw.at(i, 1) = mp.p.y;
      raw.at(i, 2) = mp.dir.x;
      raw.at(i, 3) = mp.dir.y;
    }
    Var raw_v = tape.constant(std::move(raw));
    Var shift = ad::concat({ego.x.v, ego.y.v, tape.scalar_const(0.0), tape.scalar_const(0.0)});
    Var centered = ad::sub(raw_v, shift);
    Scalar c = ad::cos(ego.psi), s = ad::sin(ego.psi);
    Var zero = tape.scalar_const(0.0);
    Var ns = ad::neg(s.v);
    Var rot = ad::reshape(ad::concat({c.v, ns, zero, zero,
                                      s.v, c.v, zero, zero,
                                      zero, zero, c.v, ns,
                                      zero, zero, s.v, c.v}),
                          {4, 4});
    obs.map_pts = ad::matmul(centered, rot);
  }

  rows.clear();
  for (int li : plan.lights) {
    const auto l = static_cast<std::size_t>(li);
    const LightInfo& light = sc.lights[l];
    Scalar c = ad::cos(ego.psi), s = ad::sin(ego.psi);
    Scalar dx = ad::make_const(tape, light.position.x) - ego.x;
    Scalar dy = ad::make_const(tape, light.position.y) - ego.y;
    Scalar relx = c * dx + s * dy;
    Scalar rely = (-s) * dx + c * dy;
    ad::Tensor onehot = ad::Tensor::zeros({4});
    onehot[static_cast<std::size_t>(scene.lights[l])] = 1.0;
    rows.push_back(ad::concat({relx.v, rely.v, tape.constant(std::move(onehot))}));
  }
  if (!rows.empty()) obs.lights = ad::stack_rows(rows);

  return obs;
}

int sample_initial(const std::vector<Scenario>& dataset, Rng& rng) {
  if (dataset.empty()) throw std::invalid_argument("sample_initial: empty dataset");
  return static_cast<int>(rng.index(dataset.size()));
}

}  // namespace drivesim::world
