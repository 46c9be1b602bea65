#include "drivesim/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace drivesim::rewards {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_box(const geom::OrientedBox& b) {
  if (!(b.half_length > 0.0) || !(b.half_width > 0.0))
    throw std::invalid_argument("minkowski_signed_distance: degenerate (zero-area) box");
}

// Everything needed to rebuild the signed distance as a local expression:
// which corner pairs support the active hull edge and where the projection
// of the origin landed on it.
struct MsdActive {
  double value = 0.0;  // signed distance
  double sign = 1.0;   // +1 disjoint, -1 overlapping
  int ua = 0, ub = 0;  // active edge start = A.corner(ua) - B.corner(ub)
  int wa = 0, wb = 0;  // active edge end
  double t = 0.0;      // clamped projection parameter along start->end
  double cross_sign = 1.0;  // sign of cross(edge, origin-start) when t is interior
};

MsdActive msd_active(const geom::OrientedBox& a, const geom::OrientedBox& b) {
  check_box(a);
  check_box(b);
  auto ca = a.corners();
  auto cb = b.corners();
  std::vector<geom::Vec2> diffs(16);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      diffs[static_cast<std::size_t>(i * 4 + j)] = ca[static_cast<std::size_t>(i)] - cb[static_cast<std::size_t>(j)];

  std::vector<int> hull = geom::convex_hull_indices(diffs);
  if (hull.size() < 2) throw std::invalid_argument("minkowski_signed_distance: degenerate difference hull");

  std::vector<geom::Vec2> hull_pts;
  hull_pts.reserve(hull.size());
  for (int h : hull) hull_pts.push_back(diffs[static_cast<std::size_t>(h)]);
  bool overlap = geom::point_in_convex_ccw(hull_pts, {0.0, 0.0});

  MsdActive best;
  best.value = kInf;
  std::size_t n = hull.size();
  std::size_t n_edges = n == 2 ? 1 : n;  // a 2-point hull has a single edge
  for (std::size_t k = 0; k < n_edges; ++k) {
    geom::Vec2 u = hull_pts[k];
    geom::Vec2 w = hull_pts[(k + 1) % n];
    geom::SegmentProjection pr = geom::project_point_segment({0.0, 0.0}, u, w);
    if (pr.dist < best.value) {
      best.value = pr.dist;
      best.t = pr.t;
      int iu = hull[k], iw = hull[(k + 1) % n];
      best.ua = iu / 4;
      best.ub = iu % 4;
      best.wa = iw / 4;
      best.wb = iw % 4;
      double cr = geom::cross(w - u, geom::Vec2{0.0, 0.0} - u);
      best.cross_sign = cr >= 0.0 ? 1.0 : -1.0;
    }
  }
  best.sign = overlap ? -1.0 : 1.0;
  best.value *= best.sign;
  return best;
}

geom::Vec2T<ad::Scalar> traced_corner(const TracedBox& b, int corner) {
  const double lx[4] = {b.half_length, b.half_length, -b.half_length, -b.half_length};
  const double ly[4] = {b.half_width, -b.half_width, -b.half_width, b.half_width};
  ad::Scalar c = ad::cos(b.heading), s = ad::sin(b.heading);
  return {b.cx + lx[corner] * c - ly[corner] * s, b.cy + lx[corner] * s + ly[corner] * c};
}

geom::OrientedBox untraced_box(const TracedBox& b) {
  return {{b.cx.val(), b.cy.val()}, b.heading.val(), b.half_length, b.half_width};
}

}  // namespace

double minkowski_signed_distance(const geom::OrientedBox& a, const geom::OrientedBox& b) {
  return msd_active(a, b).value;
}

ad::Scalar minkowski_signed_distance_traced(const TracedBox& a, const TracedBox& b) {
  MsdActive act = msd_active(untraced_box(a), untraced_box(b));
  geom::Vec2T<ad::Scalar> u = traced_corner(a, act.ua) - traced_corner(b, act.ub);
  ad::Scalar dist = ad::hypot(u.x, u.y);
  if (act.t >= 1.0) {
    geom::Vec2T<ad::Scalar> w = traced_corner(a, act.wa) - traced_corner(b, act.wb);
    dist = ad::hypot(w.x, w.y);
  } else if (act.t > 0.0) {
    // Interior support: distance from the origin to the line through the
    // active edge, with the orientation frozen at the current values.
    geom::Vec2T<ad::Scalar> w = traced_corner(a, act.wa) - traced_corner(b, act.wb);
    geom::Vec2T<ad::Scalar> e = w - u;
    ad::Scalar cr = cross(e, geom::Vec2T<ad::Scalar>{-u.x, -u.y});
    dist = act.cross_sign * cr / ad::hypot(e.x, e.y);
  }
  return act.sign * dist;
}

namespace {

// Nearest road-edge segment per box vertex, then the worst vertex.
struct EdgeActive {
  double value = -kInf;     // signed distance, positive off road
  int vertex = 0;
  int polyline = -1, seg = -1;
  double t = 0.0;
  double side = -1.0;       // +1 off road, -1 on road
};

EdgeActive edge_active(const geom::OrientedBox& box, const world::MapData& map) {
  check_box(box);
  auto corners = box.corners();
  EdgeActive best;
  bool any_segment = false;
  for (int vi = 0; vi < 4; ++vi) {
    geom::Vec2 v = corners[static_cast<std::size_t>(vi)];
    double vdist = kInf;
    int vpoly = -1, vseg = -1;
    double vt = 0.0, vside = -1.0;
    for (int pi : map.road_edges) {
      const auto& pts = map.polylines[static_cast<std::size_t>(pi)].pts;
      for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
        any_segment = true;
        geom::SegmentProjection pr = geom::project_point_segment(v, pts[s], pts[s + 1]);
        if (pr.dist < vdist) {
          vdist = pr.dist;
          vpoly = pi;
          vseg = static_cast<int>(s);
          vt = pr.t;
          // Drivable side is left of the edge direction, so right = off road.
          double cr = geom::cross(pts[s + 1] - pts[s], v - pts[s]);
          vside = cr < 0.0 ? 1.0 : -1.0;
        }
      }
    }
    double signed_dist = vside * vdist;
    if (signed_dist > best.value) {
      best.value = signed_dist;
      best.vertex = vi;
      best.polyline = vpoly;
      best.seg = vseg;
      best.t = vt;
      best.side = vside;
    }
  }
  if (!any_segment) throw std::invalid_argument("on_road_distance: map has no road-edge segments");
  return best;
}

}  // namespace

double on_road_distance(const geom::OrientedBox& box, const world::MapData& map) {
  return edge_active(box, map).value;
}

ad::Scalar on_road_distance_traced(const TracedBox& box, const world::MapData& map) {
  EdgeActive act = edge_active(untraced_box(box), map);
  const auto& pts = map.polylines[static_cast<std::size_t>(act.polyline)].pts;
  geom::Vec2 a = pts[static_cast<std::size_t>(act.seg)];
  geom::Vec2 b = pts[static_cast<std::size_t>(act.seg) + 1];
  geom::Vec2T<ad::Scalar> v = traced_corner(box, act.vertex);
  if (act.t > 0.0 && act.t < 1.0) {
    // Interior projection: the signed distance is linear in the vertex and
    // smooth through the edge, -cross(g, v-a)/|g| with the drivable side left.
    geom::Vec2 g = b - a;
    ad::Scalar cr = g.x * (v.y - a.y) - g.y * (v.x - a.x);
    return cr * (-1.0 / geom::norm(g));
  }
  geom::Vec2 e = act.t <= 0.0 ? a : b;
  return act.side * ad::hypot(v.x - e.x, v.y - e.y);
}

std::vector<Route> route_search(const world::MapData& map, int start_lane,
                                int max_routes, int max_depth) {
  if (start_lane < 0 || start_lane >= static_cast<int>(map.lanes.size()))
    throw std::invalid_argument("route_search: start lane out of range");

  std::vector<Route> routes;
  std::vector<int> path;
  std::vector<char> on_path(map.lanes.size(), 0);

  auto emit = [&]() {
    if (static_cast<int>(routes.size()) >= max_routes) return;
    Route r;
    r.lanes = path;
    for (int lane : path) {
      int pi = map.lanes[static_cast<std::size_t>(lane)].polyline;
      if (pi < 0 || pi >= static_cast<int>(map.polylines.size())) continue;
      for (const geom::Vec2& p : map.polylines[static_cast<std::size_t>(pi)].pts) {
        if (!r.pts.empty() && r.pts.back().x == p.x && r.pts.back().y == p.y) continue;
        r.pts.push_back(p);
      }
    }
    if (r.pts.size() < 2) return;  // no usable centerline
    r.arclen.resize(r.pts.size());
    r.arclen[0] = 0.0;
    for (std::size_t i = 1; i < r.pts.size(); ++i)
      r.arclen[i] = r.arclen[i - 1] + geom::norm(r.pts[i] - r.pts[i - 1]);
    routes.push_back(std::move(r));
  };

  auto dfs = [&](auto&& self, int lane) -> void {
    if (static_cast<int>(routes.size()) >= max_routes) return;
    path.push_back(lane);
    on_path[static_cast<std::size_t>(lane)] = 1;
    bool recursed = false;
    if (static_cast<int>(path.size()) < max_depth) {
      for (int succ : map.lanes[static_cast<std::size_t>(lane)].successors) {
        if (succ < 0 || succ >= static_cast<int>(map.lanes.size())) continue;
        if (on_path[static_cast<std::size_t>(succ)]) continue;
        self(self, succ);
        recursed = true;
        if (static_cast<int>(routes.size()) >= max_routes) break;
      }
    }
    if (!recursed) emit();
    on_path[static_cast<std::size_t>(lane)] = 0;
    path.pop_back();
  };
  dfs(dfs, start_lane);
  return routes;
}

namespace {

struct RouteActive {
  double arclen = 0.0;
  int seg = 0;
  double t = 0.0;
};

RouteActive route_active(const Route& r, geom::Vec2 p) {
  if (r.pts.size() < 2) throw std::invalid_argument("route_arclength: route needs >= 2 points");
  RouteActive best;
  double best_dist = kInf;
  for (std::size_t s = 0; s + 1 < r.pts.size(); ++s) {
    geom::SegmentProjection pr = geom::project_point_segment(p, r.pts[s], r.pts[s + 1]);
    if (pr.dist < best_dist) {
      best_dist = pr.dist;
      best.seg = static_cast<int>(s);
      best.t = pr.t;
    }
  }
  std::size_t s = static_cast<std::size_t>(best.seg);
  best.arclen = r.arclen[s] + best.t * (r.arclen[s + 1] - r.arclen[s]);
  return best;
}

}  // namespace

double route_arclength(const Route& r, geom::Vec2 p) { return route_active(r, p).arclen; }

ad::Scalar route_arclength_traced(ad::Tape& tape, const Route& r, ad::Scalar px, ad::Scalar py) {
  RouteActive act = route_active(r, {px.val(), py.val()});
  std::size_t s = static_cast<std::size_t>(act.seg);
  if (act.t <= 0.0 || act.t >= 1.0) return ad::make_const(tape, act.arclen);
  geom::Vec2 a = r.pts[s], b = r.pts[s + 1];
  geom::Vec2 g = b - a;
  double len2 = geom::norm2sq(g);
  ad::Scalar t = ((px - a.x) * g.x + (py - a.y) * g.y) / len2;
  return r.arclen[s] + t * (r.arclen[s + 1] - r.arclen[s]);
}

const Route* find_route_with_lane(const std::vector<Route>& routes, int lane) {
  for (const Route& r : routes)
    for (int l : r.lanes)
      if (l == lane) return &r;
  return nullptr;
}

geom::OrientedBox agent_box(const world::Scene& scene, int agent) {
  const world::AgentSpec& spec = scene.scenario->agents[static_cast<std::size_t>(agent)];
  const world::AgentState& st = scene.states[static_cast<std::size_t>(agent)];
  return {{st.x, st.y}, st.psi, 0.5 * spec.length, 0.5 * spec.width};
}

namespace {

TracedBox traced_box_of(ad::Tape& tape, const world::Scene& scene,
                        const std::vector<const world::TracedState*>& traced, int agent) {
  const world::AgentSpec& spec = scene.scenario->agents[static_cast<std::size_t>(agent)];
  const world::TracedState* ts =
      agent < static_cast<int>(traced.size()) ? traced[static_cast<std::size_t>(agent)] : nullptr;
  if (ts != nullptr)
    return {ts->x, ts->y, ts->psi, 0.5 * spec.length, 0.5 * spec.width};
  const world::AgentState& st = scene.states[static_cast<std::size_t>(agent)];
  return {ad::make_const(tape, st.x), ad::make_const(tape, st.y), ad::make_const(tape, st.psi),
          0.5 * spec.length, 0.5 * spec.width};
}

// Nearest neighbor by signed distance, lowest index on ties. -1 when alone.
int nearest_neighbor(const world::Scene& scene, int agent, double* dist_out) {
  geom::OrientedBox mine = agent_box(scene, agent);
  int best = -1;
  double best_d = kInf;
  for (int j = 0; j < static_cast<int>(scene.states.size()); ++j) {
    if (j == agent) continue;
    double d = minkowski_signed_distance(mine, agent_box(scene, j));
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (dist_out != nullptr) *dist_out = best_d;
  return best;
}

bool rule_applies(const world::Scene& scene, int agent) {
  return scene.scenario->agents[static_cast<std::size_t>(agent)].type == world::AgentType::kVehicle;
}

bool on_road_applies(const world::Scene& scene, int agent) {
  const world::AgentSpec& spec = scene.scenario->agents[static_cast<std::size_t>(agent)];
  return spec.type == world::AgentType::kVehicle && !spec.road_exempt &&
         !scene.scenario->map.road_edges.empty();
}

// Most severe applicable red light, or -1. Severity = lowest reward.
int active_red_light(const world::Scene& scene, const std::vector<Route>& routes,
                     geom::Vec2 pos, const RewardThresholds& thr, double* reward_out,
                     const Route** route_out) {
  int best = -1;
  double best_reward = 0.0;
  for (int li = 0; li < static_cast<int>(scene.lights.size()); ++li) {
    if (scene.lights[static_cast<std::size_t>(li)] != world::LightState::kRed) continue;
    const world::LightInfo& info = scene.scenario->lights[static_cast<std::size_t>(li)];
    const Route* r = find_route_with_lane(routes, info.lane);
    if (r == nullptr) continue;
    double d = route_arclength(*r, pos) - route_arclength(*r, info.stop_point);
    double reward = -std::max(std::min(d, thr.eps3), thr.eps4);
    if (reward < best_reward) {
      best_reward = reward;
      best = li;
      if (route_out != nullptr) *route_out = r;
    }
  }
  if (reward_out != nullptr) *reward_out = best_reward;
  return best;
}

}  // namespace

double collision_reward(const world::Scene& scene, int agent, const RewardThresholds& thr) {
  double d = kInf;
  if (nearest_neighbor(scene, agent, &d) < 0) return thr.eps1;
  return std::min(d, thr.eps1);
}

double on_road_reward(const world::Scene& scene, int agent, const RewardThresholds& thr) {
  if (!on_road_applies(scene, agent)) return 0.0;
  double d = on_road_distance(agent_box(scene, agent), scene.scenario->map);
  return -std::max(d, thr.eps2);
}

double traffic_rule_reward(const world::Scene& scene, int agent,
                           const std::vector<Route>& routes, const RewardThresholds& thr) {
  if (!rule_applies(scene, agent)) return 0.0;
  const world::AgentState& st = scene.states[static_cast<std::size_t>(agent)];
  double reward = 0.0;
  active_red_light(scene, routes, {st.x, st.y}, thr, &reward, nullptr);
  return reward;
}

RewardTerms total_reward(const world::Scene& scene, int agent,
                         const std::vector<Route>& routes, const RewardThresholds& thr) {
  RewardTerms out;
  out.collision = collision_reward(scene, agent, thr);
  out.on_road = on_road_reward(scene, agent, thr);
  out.rule = traffic_rule_reward(scene, agent, routes, thr);
  out.total = out.collision + out.on_road + out.rule;
  return out;
}

TracedRewardTerms total_reward_traced(ad::Tape& tape, const world::Scene& scene,
                                      const std::vector<const world::TracedState*>& traced,
                                      int agent, const std::vector<Route>& routes,
                                      const RewardThresholds& thr) {
  TracedRewardTerms out;
  TracedBox mine = traced_box_of(tape, scene, traced, agent);

  int nb = nearest_neighbor(scene, agent, nullptr);
  if (nb < 0) {
    out.collision = ad::make_const(tape, thr.eps1);
  } else {
    ad::Scalar d = minkowski_signed_distance_traced(mine, traced_box_of(tape, scene, traced, nb));
    out.collision = ad::cmin(d, thr.eps1);
  }

  if (on_road_applies(scene, agent)) {
    ad::Scalar d = on_road_distance_traced(mine, scene.scenario->map);
    out.on_road = -ad::cmax(d, thr.eps2);
  } else {
    out.on_road = ad::make_const(tape, 0.0);
  }

  out.rule = ad::make_const(tape, 0.0);
  if (rule_applies(scene, agent)) {
    const world::AgentState& st = scene.states[static_cast<std::size_t>(agent)];
    const Route* route = nullptr;
    int li = active_red_light(scene, routes, {st.x, st.y}, thr, nullptr, &route);
    if (li >= 0) {
      const world::LightInfo& info = scene.scenario->lights[static_cast<std::size_t>(li)];
      ad::Scalar along = route_arclength_traced(tape, *route, mine.cx, mine.cy);
      ad::Scalar d = along - route_arclength(*route, info.stop_point);
      out.rule = -ad::cmax(ad::cmin(d, thr.eps3), thr.eps4);
    }
  }

  out.total = out.collision + out.on_road + out.rule;
  return out;
}

std::vector<std::vector<Route>> routes_for_scenario(const world::Scenario& sc) {
  std::vector<std::vector<Route>> out(sc.agents.size());
  for (std::size_t i = 0; i < sc.agents.size(); ++i) {
    int lane = sc.agents[i].route_lane;
    if (lane >= 0 && lane < static_cast<int>(sc.map.lanes.size()))
      out[i] = route_search(sc.map, lane);
  }
  return out;
}

}  // namespace drivesim::rewards
