#include "drivesim/synth.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "drivesim/common.hpp"
#include "drivesim/rewards.hpp"
#include "drivesim/scenario.hpp"

namespace drivesim::synth {

namespace {

using geom::Vec2;
using world::AgentSpec;
using world::AgentState;
using world::AgentType;
using world::KinematicParams;
using world::MapFeatureType;
using world::MapPolyline;
using world::Scenario;

// Polylines are sampled at roughly one meter.
std::vector<Vec2> sample_segment(Vec2 a, Vec2 b) {
  const double len = geom::norm(b - a);
  const int n = std::max(1, static_cast<int>(std::ceil(len)));
  std::vector<Vec2> pts;
  for (int i = 0; i <= n; ++i) {
    const double u = static_cast<double>(i) / n;
    pts.push_back({a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)});
  }
  return pts;
}

std::vector<Vec2> resample_chain(const std::vector<Vec2>& chain) {
  std::vector<Vec2> out;
  for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
    std::vector<Vec2> seg = sample_segment(chain[i], chain[i + 1]);
    if (!out.empty()) seg.erase(seg.begin());
    out.insert(out.end(), seg.begin(), seg.end());
  }
  return out;
}

void add_polyline(world::MapData& map, MapFeatureType type, std::vector<Vec2> pts) {
  MapPolyline pl;
  pl.type = type;
  pl.pts = std::move(pts);
  map.polylines.push_back(std::move(pl));
}

void add_edge(world::MapData& map, Vec2 a, Vec2 b) {
  add_polyline(map, MapFeatureType::kRoadEdge, sample_segment(a, b));
}

// Registers the polyline as a lane and returns the lane index.
int add_lane(world::MapData& map, std::vector<Vec2> center) {
  add_polyline(map, MapFeatureType::kLaneCenter, std::move(center));
  map.lanes.push_back({static_cast<int>(map.polylines.size()) - 1, {}});
  return static_cast<int>(map.lanes.size()) - 1;
}

rewards::Route make_route(const std::vector<Vec2>& pts) {
  rewards::Route r;
  r.pts = pts;
  r.arclen.assign(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i)
    r.arclen[i] = r.arclen[i - 1] + geom::norm(pts[i] - pts[i - 1]);
  return r;
}

Vec2 point_at(const rewards::Route& r, double s) {
  if (s <= 0.0) return r.pts.front();
  if (s >= r.arclen.back()) return r.pts.back();
  const auto it = std::upper_bound(r.arclen.begin(), r.arclen.end(), s);
  const std::size_t i = static_cast<std::size_t>(it - r.arclen.begin());
  const double seg = r.arclen[i] - r.arclen[i - 1];
  const double u = seg > 0.0 ? (s - r.arclen[i - 1]) / seg : 0.0;
  return {r.pts[i - 1].x + u * (r.pts[i].x - r.pts[i - 1].x),
          r.pts[i - 1].y + u * (r.pts[i].y - r.pts[i - 1].y)};
}

using SpeedFn = std::function<double(int, const AgentState&)>;

// Pursuit controller: steer toward a lookahead point on the path, track the
// commanded speed. Everything goes through the forward model, so the log is
// exactly reproducible from recovered actions.
std::vector<AgentState> drive_vehicle(AgentState s0, const std::vector<Vec2>& path,
                                      const SpeedFn& v_des, int steps, double length,
                                      const KinematicParams& kp) {
  const rewards::Route route = make_route(path);
  std::vector<AgentState> out{s0};
  world::StateT<double> s{s0.x, s0.y, s0.psi, s0.v};
  for (int t = 0; t < steps; ++t) {
    const double s_arc = rewards::route_arclength(route, {s.x, s.y});
    const double look = std::clamp(2.0 + 0.8 * s.v, 3.0, 9.0);
    const Vec2 tgt = point_at(route, s_arc + look);
    const double err = world::wrap_heading(std::atan2(tgt.y - s.y, tgt.x - s.x) - s.psi);
    const double steer = std::clamp(1.8 * err, -0.9 * kp.max_steer, 0.9 * kp.max_steer);
    const AgentState here{s.x, s.y, s.psi, s.v};
    const double want = std::max(0.0, v_des(t, here));
    const double accel = std::clamp((want - s.v) / kp.dt, -5.0, 4.0);
    s = world::step_bicycle<double>(s, accel, steer, length, kp);
    out.push_back({s.x, s.y, s.psi, s.v});
  }
  return out;
}

std::vector<AgentState> walk_line(Vec2 from, double heading, double speed, int steps,
                                  const KinematicParams& kp) {
  std::vector<AgentState> out;
  world::StateT<double> s{from.x, from.y, world::wrap_heading(heading), speed};
  out.push_back({s.x, s.y, s.psi, s.v});
  const double dx = speed * std::cos(heading) * kp.dt;
  const double dy = speed * std::sin(heading) * kp.dt;
  for (int t = 0; t < steps; ++t) {
    s = world::step_delta<double>(s, dx, dy, 0.0, kp);
    out.push_back({s.x, s.y, s.psi, s.v});
  }
  return out;
}

AgentSpec vehicle_spec(std::vector<AgentState> logged, double length, int route_lane) {
  AgentSpec spec;
  spec.type = AgentType::kVehicle;
  spec.length = length;
  spec.width = 2.0;
  spec.controlled = true;
  spec.route_lane = route_lane;
  spec.logged = std::move(logged);
  return spec;
}

// Worst pairwise box separation over the whole log; used to keep scripted
// experts from colliding with each other.
double min_log_distance(const Scenario& sc) {
  double best = std::numeric_limits<double>::infinity();
  for (int t = 0; t <= sc.last_step() + 1; ++t) {
    for (std::size_t i = 0; i < sc.agents.size(); ++i) {
      const AgentState a = world::logged_state_at(sc.agents[i], t);
      const geom::OrientedBox ba{{a.x, a.y}, a.psi, sc.agents[i].length / 2, sc.agents[i].width / 2};
      for (std::size_t j = i + 1; j < sc.agents.size(); ++j) {
        const AgentState b = world::logged_state_at(sc.agents[j], t);
        const geom::OrientedBox bb{{b.x, b.y}, b.psi, sc.agents[j].length / 2,
                                   sc.agents[j].width / 2};
        best = std::min(best, rewards::minkowski_signed_distance(ba, bb));
      }
    }
  }
  return best;
}

Scenario base_scenario(const std::string& name, const GenerateOptions& opt) {
  Scenario sc;
  sc.name = name;
  sc.dt = 0.2;
  sc.init_steps = opt.init_steps;
  sc.horizon = opt.horizon;
  return sc;
}

int log_steps(const Scenario& sc) { return sc.last_step() + 1; }

Scenario gen_straight(const GenerateOptions& opt, int idx, Rng& rng) {
  Scenario sc = base_scenario("straight-" + std::to_string(idx), opt);
  add_edge(sc.map, {-20.0, -8.0}, {160.0, -8.0});
  add_edge(sc.map, {160.0, 8.0}, {-20.0, 8.0});
  const int lane_lo = add_lane(sc.map, sample_segment({-16.0, -2.0}, {156.0, -2.0}));
  const int lane_hi = add_lane(sc.map, sample_segment({-16.0, 2.0}, {156.0, 2.0}));
  sc.map.rebuild_caches();

  const int n_veh = 1 + (rng.uniform() < 0.5 ? 1 : 0);
  for (int j = 0; j < n_veh; ++j) {
    const int lane = j % 2 == 0 ? lane_lo : lane_hi;
    const double y = j % 2 == 0 ? -2.0 : 2.0;
    const double x0 = -10.0 + 10.0 * j + rng.uniform(0.0, 4.0);
    const double v0 = rng.uniform(4.0, 8.0);
    const double cruise = rng.uniform(5.0, 9.0);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const double length = 4.5 + rng.uniform(-0.3, 0.5);
    const auto& path = sc.map.polylines[static_cast<std::size_t>(
        sc.map.lanes[static_cast<std::size_t>(lane)].polyline)].pts;
    SpeedFn prof = [cruise, phase](int t, const AgentState&) {
      return std::max(0.5, cruise + 1.5 * std::sin(0.15 * t + phase));
    };
    sc.agents.push_back(vehicle_spec(
        drive_vehicle({x0, y, 0.0, v0}, path, prof, log_steps(sc), length, {}), length, lane));
  }
  if (rng.uniform() < 0.4) {
    // A cyclist hugging the upper side of the road.
    AgentSpec cyc;
    cyc.type = AgentType::kCyclist;
    cyc.length = 1.8;
    cyc.width = 0.6;
    cyc.controlled = true;
    const double v0 = rng.uniform(2.5, 4.0);
    std::vector<Vec2> path = sample_segment({-12.0, 5.0}, {156.0, 5.0});
    SpeedFn prof = [v0](int, const AgentState&) { return v0; };
    cyc.logged = drive_vehicle({-8.0 + rng.uniform(0.0, 6.0), 5.0, 0.0, v0}, path, prof,
                               log_steps(sc), cyc.length, {});
    sc.agents.push_back(cyc);
  }
  return sc;
}

Scenario gen_tjunction(const GenerateOptions& opt, int idx, Rng& rng) {
  Scenario sc = base_scenario("tjunction-" + std::to_string(idx), opt);
  // Main road with a gap in the bottom edge where the side road joins.
  add_edge(sc.map, {-40.0, -8.0}, {-6.0, -8.0});
  add_edge(sc.map, {6.0, -8.0}, {120.0, -8.0});
  add_edge(sc.map, {120.0, 8.0}, {-40.0, 8.0});
  add_edge(sc.map, {-6.0, -8.0}, {-6.0, -60.0});
  add_edge(sc.map, {6.0, -60.0}, {6.0, -8.0});

  const int lane_main = add_lane(sc.map, sample_segment({-36.0, -2.0}, {116.0, -2.0}));
  // Side-road approach, quarter-circle right turn, then eastbound.
  std::vector<Vec2> turn = sample_segment({0.0, -56.0}, {0.0, -14.0});
  for (int i = 1; i <= 19; ++i) {
    const double th = kPi - (kPi / 2.0) * (static_cast<double>(i) / 19.0);
    turn.push_back({12.0 + 12.0 * std::cos(th), -14.0 + 12.0 * std::sin(th)});
  }
  std::vector<Vec2> out_leg = sample_segment({12.0, -2.0}, {116.0, -2.0});
  turn.insert(turn.end(), out_leg.begin() + 1, out_leg.end());
  const int lane_turn = add_lane(sc.map, resample_chain(turn));
  sc.map.rebuild_caches();

  const auto& main_path = sc.map.polylines[static_cast<std::size_t>(
      sc.map.lanes[static_cast<std::size_t>(lane_main)].polyline)].pts;
  const auto& turn_path = sc.map.polylines[static_cast<std::size_t>(
      sc.map.lanes[static_cast<std::size_t>(lane_turn)].polyline)].pts;

  const double main_cruise = rng.uniform(6.0, 8.0);
  const double main_x0 = -34.0 + rng.uniform(0.0, 4.0);
  double side_scale = 1.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    sc.agents.clear();
    SpeedFn main_prof = [main_cruise](int, const AgentState&) { return main_cruise; };
    sc.agents.push_back(vehicle_spec(
        drive_vehicle({main_x0, -2.0, 0.0, main_cruise}, main_path, main_prof, log_steps(sc), 4.6,
                      {}),
        4.6, lane_main));
    const rewards::Route turn_route = make_route(turn_path);
    const double v_side = 6.0 * side_scale;
    SpeedFn side_prof = [&turn_route, v_side](int, const AgentState& s) {
      const double arc = rewards::route_arclength(turn_route, {s.x, s.y});
      return arc > 30.0 && arc < 62.0 ? std::min(v_side, 3.5) : v_side;  // slow through the turn
    };
    sc.agents.push_back(vehicle_spec(
        drive_vehicle({0.0, -52.0, kPi / 2.0, v_side}, turn_path, side_prof, log_steps(sc), 4.4,
                      {}),
        4.4, lane_turn));
    if (min_log_distance(sc) >= 1.0) break;
    side_scale *= 0.8;  // let the main vehicle pass first
  }
  return sc;
}

Scenario gen_crossing(const GenerateOptions& opt, int idx, Rng& rng) {
  Scenario sc = base_scenario("crossing-" + std::to_string(idx), opt);
  // Two perpendicular strips with the intersection square left open.
  add_edge(sc.map, {-60.0, -8.0}, {-8.0, -8.0});
  add_edge(sc.map, {8.0, -8.0}, {60.0, -8.0});
  add_edge(sc.map, {60.0, 8.0}, {8.0, 8.0});
  add_edge(sc.map, {-8.0, 8.0}, {-60.0, 8.0});
  add_edge(sc.map, {-8.0, 60.0}, {-8.0, 8.0});
  add_edge(sc.map, {-8.0, -8.0}, {-8.0, -60.0});
  add_edge(sc.map, {8.0, -60.0}, {8.0, -8.0});
  add_edge(sc.map, {8.0, 8.0}, {8.0, 60.0});
  add_polyline(sc.map, MapFeatureType::kCrosswalk, sample_segment({12.0, -8.0}, {12.0, 8.0}));

  const int lane_east = add_lane(sc.map, sample_segment({-56.0, -2.0}, {56.0, -2.0}));
  const int lane_north = add_lane(sc.map, sample_segment({2.0, -56.0}, {2.0, 56.0}));
  sc.map.rebuild_caches();

  world::LightInfo li;
  li.lane = lane_east;
  li.stop_point = {-10.0, -2.0};
  li.position = {-10.0, -7.0};
  const int red_until = 16 + static_cast<int>(rng.uniform(0.0, 8.0));
  for (int t = 0; t <= log_steps(sc); ++t)
    li.schedule.push_back(t < red_until ? world::LightState::kRed : world::LightState::kGreen);
  sc.lights.push_back(li);

  const auto& east_path = sc.map.polylines[static_cast<std::size_t>(
      sc.map.lanes[static_cast<std::size_t>(lane_east)].polyline)].pts;
  const auto& north_path = sc.map.polylines[static_cast<std::size_t>(
      sc.map.lanes[static_cast<std::size_t>(lane_north)].polyline)].pts;
  const world::LightInfo& light = sc.lights.back();
  const double x0 = -46.0 + rng.uniform(0.0, 5.0);
  const double ped_y0 = -12.0 + rng.uniform(0.0, 2.0);
  const double ped_speed = 1.1 + rng.uniform(0.0, 0.4);
  const bool with_cross_traffic = rng.uniform() < 0.5;
  const double vn = rng.uniform(5.0, 7.0);

  double ped_shift = 0.0, vn_scale = 1.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    sc.agents.clear();
    SpeedFn east_prof = [&light](int t, const AgentState& s) {
      if (world::light_state_at(light, t) == world::LightState::kRed && s.x < -11.0)
        return std::clamp(0.6 * (-12.0 - s.x), 0.0, 7.5);  // roll gently up to the stop line
      return 7.0;
    };
    sc.agents.push_back(vehicle_spec(
        drive_vehicle({x0, -2.0, 0.0, 7.0}, east_path, east_prof, log_steps(sc), 4.7, {}), 4.7,
        lane_east));

    // Pedestrian on the crosswalk east of the junction.
    AgentSpec ped;
    ped.type = AgentType::kPedestrian;
    ped.length = 0.8;
    ped.width = 0.8;
    ped.controlled = true;
    ped.road_exempt = true;
    ped.logged = walk_line({12.0, ped_y0 - ped_shift}, kPi / 2.0, ped_speed, log_steps(sc), {});
    sc.agents.push_back(ped);

    if (with_cross_traffic) {
      // Cross traffic heading north on its own green, replayed.
      SpeedFn north_prof = [vn, vn_scale](int, const AgentState&) { return vn * vn_scale; };
      AgentSpec north = vehicle_spec(drive_vehicle({2.0, -52.0, kPi / 2.0, vn * vn_scale},
                                                   north_path, north_prof, log_steps(sc), 4.5, {}),
                                     4.5, lane_north);
      north.controlled = false;
      sc.agents.push_back(north);
    }
    if (min_log_distance(sc) >= 1.0) break;
    ped_shift += 2.5;  // let the traffic clear the crosswalk first
    vn_scale *= 0.75;
  }
  return sc;
}

Scenario gen_merge(const GenerateOptions& opt, int idx, Rng& rng) {
  Scenario sc = base_scenario("merge-" + std::to_string(idx), opt);
  auto blend = [](double x) {  // ramp centerline height
    if (x <= 0.0) return -20.0;
    if (x >= 40.0) return -2.0;
    const double u = x / 40.0;
    return -20.0 + 18.0 * (3.0 * u * u - 2.0 * u * u * u);
  };
  add_edge(sc.map, {160.0, 8.0}, {-40.0, 8.0});
  // Bottom edge of the main road, interrupted where the ramp corridor enters.
  add_edge(sc.map, {-40.0, -8.0}, {14.0, -8.0});
  add_edge(sc.map, {32.0, -8.0}, {160.0, -8.0});
  // Ramp corridor edges follow the centerline offset by the half width.
  MapPolyline ramp_north, ramp_south;
  ramp_north.type = ramp_south.type = MapFeatureType::kRoadEdge;
  for (int x = -40; blend(x) + 4.0 < -8.0; ++x) ramp_north.pts.push_back({static_cast<double>(x), blend(x) + 4.0});
  std::reverse(ramp_north.pts.begin(), ramp_north.pts.end());  // drivable below
  for (int x = -40; blend(x) - 4.0 < -8.0; ++x) ramp_south.pts.push_back({static_cast<double>(x), blend(x) - 4.0});
  sc.map.polylines.push_back(ramp_north);
  sc.map.polylines.push_back(ramp_south);

  const int lane_main = add_lane(sc.map, sample_segment({-36.0, -2.0}, {156.0, -2.0}));
  std::vector<Vec2> ramp_center;
  for (int x = -36; x <= 44; ++x) ramp_center.push_back({static_cast<double>(x), blend(x)});
  std::vector<Vec2> tail = sample_segment({44.0, -2.0}, {156.0, -2.0});
  ramp_center.insert(ramp_center.end(), tail.begin() + 1, tail.end());
  const int lane_ramp = add_lane(sc.map, ramp_center);
  sc.map.rebuild_caches();

  const auto& main_path = sc.map.polylines[static_cast<std::size_t>(
      sc.map.lanes[static_cast<std::size_t>(lane_main)].polyline)].pts;
  const auto& ramp_path = sc.map.polylines[static_cast<std::size_t>(
      sc.map.lanes[static_cast<std::size_t>(lane_ramp)].polyline)].pts;

  const double main_cruise = rng.uniform(7.0, 9.0);
  const double ramp_cruise = rng.uniform(5.5, 7.0);
  const double main_x0 = -30.0 + rng.uniform(0.0, 3.0);
  double ramp_scale = 1.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    sc.agents.clear();
    SpeedFn mp = [main_cruise](int, const AgentState&) { return main_cruise; };
    sc.agents.push_back(vehicle_spec(
        drive_vehicle({main_x0, -2.0, 0.0, main_cruise}, main_path, mp, log_steps(sc), 4.6, {}),
        4.6, lane_main));
    const double vr = ramp_cruise * ramp_scale;
    SpeedFn rp = [vr](int, const AgentState&) { return vr; };
    sc.agents.push_back(vehicle_spec(
        drive_vehicle({-35.0, -20.0, 0.0, vr}, ramp_path, rp, log_steps(sc), 4.4, {}), 4.4,
        lane_ramp));
    if (min_log_distance(sc) >= 1.0) break;
    ramp_scale *= 0.8;
  }
  return sc;
}

}  // namespace

const std::vector<std::string>& scenario_kinds() {
  static const std::vector<std::string> kinds{"straight", "tjunction", "crossing", "merge"};
  return kinds;
}

std::vector<world::Scenario> generate_scenarios(const std::string& kind,
                                                const GenerateOptions& opt) {
  const auto& kinds = scenario_kinds();
  const auto it = std::find(kinds.begin(), kinds.end(), kind);
  if (it == kinds.end()) throw std::invalid_argument("generate_scenarios: unsupported kind " + kind);
  const int kind_id = static_cast<int>(it - kinds.begin());

  std::vector<Scenario> out;
  for (int idx = 0; idx < opt.count; ++idx) {
    Rng rng(opt.seed * 1000003ULL + static_cast<std::uint64_t>(kind_id) * 7919ULL +
            static_cast<std::uint64_t>(idx));
    Scenario sc;
    switch (kind_id) {
      case 0: sc = gen_straight(opt, idx, rng); break;
      case 1: sc = gen_tjunction(opt, idx, rng); break;
      case 2: sc = gen_crossing(opt, idx, rng); break;
      default: sc = gen_merge(opt, idx, rng); break;
    }
    world::validate_scenario(sc);
    out.push_back(std::move(sc));
  }
  return out;
}

std::vector<world::Action> fit_actions(const std::vector<world::AgentState>& track,
                                       world::AgentType type, double length,
                                       const world::KinematicParams& kp) {
  if (track.size() < 2) throw std::invalid_argument("fit_actions: need at least two states");
  std::vector<world::Action> out;
  const double lr = kp.rear_axle_ratio * length;
  const double ratio = kp.rear_axle_ratio / (kp.rear_axle_ratio + kp.front_axle_ratio);
  for (std::size_t t = 0; t + 1 < track.size(); ++t) {
    const world::AgentState& s0 = track[t];
    const world::AgentState& s1 = track[t + 1];
    world::Action a;
    if (type == world::AgentType::kPedestrian) {
      a.u0 = s1.x - s0.x;
      a.u1 = s1.y - s0.y;
      a.u2 = world::wrap_heading(s1.psi - s0.psi);
    } else {
      a.u0 = (s1.v - s0.v) / kp.dt;
      const double turn = world::wrap_heading(s1.psi - s0.psi);
      if (std::fabs(s0.v) * kp.dt > 1e-12) {
        const double sin_rho = std::clamp(turn * lr / (s0.v * kp.dt), -1.0, 1.0);
        const double rho = std::asin(sin_rho);
        a.u1 = std::atan(std::tan(rho) / ratio);
      }
    }
    out.push_back(a);
  }
  return out;
}

}  // namespace drivesim::synth
