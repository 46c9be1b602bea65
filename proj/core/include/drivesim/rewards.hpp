#pragma once

#include <vector>

#include "drivesim/geometry.hpp"
#include "drivesim/world.hpp"

// Differentiable driving rewards: collision avoidance from the signed distance
// between bounding boxes, on-road keeping from the signed distance to road
// edges, and traffic-light compliance from arclength along a searched route.
//
// Every reward has a plain double evaluation and a traced twin that emits a
// tape expression. Nonsmooth reductions (nearest neighbor, supporting hull
// edge, worst box vertex, nearest segment) are resolved at the current values
// and the traced expression follows that active branch, so its gradient is a
// subgradient of the full expression. Ties pick the lowest index.
namespace drivesim::rewards {

struct RewardThresholds {
  double eps1 = 1.0;   // collision reward cap (m)
  double eps2 = -1.0;  // on-road distance floor (m)
  double eps3 = 2.0;   // rule violation distance cap (m)
  double eps4 = 0.0;   // rule violation distance floor (m)
};

// Box pose living on a tape; the extents stay plain constants.
struct TracedBox {
  ad::Scalar cx, cy, heading;
  double half_length = 0.0;
  double half_width = 0.0;
};

// Signed distance between two oriented boxes: the separation distance when
// disjoint, minus the penetration depth when overlapping. Computed from the
// boundary of the convex hull of the 16 corner differences (the Minkowski
// difference of the two boxes): distance from the origin to that boundary,
// negated when the origin lies inside. Symmetric, translation-invariant and
// invariant under joint rotation. Throws on zero-area boxes.
double minkowski_signed_distance(const geom::OrientedBox& a, const geom::OrientedBox& b);
ad::Scalar minkowski_signed_distance_traced(const TracedBox& a, const TracedBox& b);

// Signed distance from a box to the road edges: per box vertex, distance to
// the globally nearest road-edge segment signed by the side test (edges are
// oriented with the drivable side on the left, so a vertex to the right of
// its nearest segment is off road and counts positive); then the worst (max)
// vertex. Throws if the map has no road-edge segments.
double on_road_distance(const geom::OrientedBox& box, const world::MapData& map);
ad::Scalar on_road_distance_traced(const TracedBox& box, const world::MapData& map);

// A lane-center chain discovered by depth-first search, flattened to a
// polyline with cumulative arclengths.
struct Route {
  std::vector<geom::Vec2> pts;
  std::vector<double> arclen;  // arclen[0] = 0, strictly increasing
  std::vector<int> lanes;      // lane indices, in traversal order
};

// Depth-first search over lane successors from `start_lane`, successors in
// listed order. A path ends at a lane with no unvisited successors (dead end
// or cycle cut) or at the depth cap; every ended path is one route. At most
// `max_routes` routes are returned, in discovery order. Lanes never repeat
// within a route. Out-of-range start throws; a start lane without a usable
// polyline yields an empty list.
std::vector<Route> route_search(const world::MapData& map, int start_lane,
                                int max_routes = 64, int max_depth = 180);

// Arclength of the closest point on the route polyline (clamped projection
// onto the nearest segment, lowest segment index on ties).
double route_arclength(const Route& r, geom::Vec2 p);
ad::Scalar route_arclength_traced(ad::Tape& tape, const Route& r, ad::Scalar px, ad::Scalar py);

// First route (discovery order) whose lane chain contains `lane`, else null.
const Route* find_route_with_lane(const std::vector<Route>& routes, int lane);

struct RewardTerms {
  double collision = 0.0;
  double on_road = 0.0;
  double rule = 0.0;
  double total = 0.0;
};

struct TracedRewardTerms {
  ad::Scalar collision, on_road, rule, total;
};

// Collision term: min over all other agents of the box signed distance,
// capped at eps1; eps1 when the agent is alone.
double collision_reward(const world::Scene& scene, int agent, const RewardThresholds& thr);

// On-road term: -max(d_edge, eps2). Zero for non-vehicles, road-exempt
// agents, and maps without road edges.
double on_road_reward(const world::Scene& scene, int agent, const RewardThresholds& thr);

// Traffic-rule term: for each currently red light whose controlled lane lies
// on one of the agent's routes, the overshoot past the stop point along that
// route gives -max(min(d_light, eps3), eps4); the most severe applicable
// light wins. Zero for non-vehicles or when no red light applies.
double traffic_rule_reward(const world::Scene& scene, int agent,
                           const std::vector<Route>& routes, const RewardThresholds& thr);

// Sum of the three terms with the masking above applied.
RewardTerms total_reward(const world::Scene& scene, int agent,
                         const std::vector<Route>& routes, const RewardThresholds& thr);

// Traced rewards for one agent. `traced` holds tape states for controlled
// agents (null entries fall back to scene.states as constants). Masked terms
// are constant zeros so `total` is always a valid tape scalar.
TracedRewardTerms total_reward_traced(ad::Tape& tape, const world::Scene& scene,
                                      const std::vector<const world::TracedState*>& traced,
                                      int agent, const std::vector<Route>& routes,
                                      const RewardThresholds& thr);

// Bounding box of an agent at its current scene state.
geom::OrientedBox agent_box(const world::Scene& scene, int agent);

// Per-agent routes from each agent's starting lane (empty when unset).
std::vector<std::vector<Route>> routes_for_scenario(const world::Scenario& sc);

}  // namespace drivesim::rewards
