#pragma once

#include <string>

#include "drivesim/world.hpp"

namespace drivesim::world {

// JSON scenario files. Every file carries {"format": "drivesim-scenario",
// "version": 1}; loading rejects unknown formats and versions.
//
// Schema (all lengths in meters, angles in radians, speeds in m/s):
//   dt            fixed 0.2 (5 Hz); other rates are rejected
//   init_steps    logged warmup states per agent (history length)
//   horizon       simulated transitions after warmup
//   map.polylines [{type: road_edge|lane_center|crosswalk, points: [[x,y],..]}]
//                 road edges are oriented with the drivable side on the left
//   map.lanes     [{polyline: index, successors: [lane indices]}]
//   lights        [{position, lane, stop_point, schedule: [unknown|red|yellow|green]}]
//   agents        [{type, length, width, controlled, road_exempt, route_lane,
//                   states: [[x,y,psi,v],..]}]
// Controlled agents must log init_steps + horizon + 1 states (imitation
// targets); replayed agents need at least one (held beyond the end).
Scenario scenario_from_json_string(const std::string& text);
std::string scenario_to_json_string(const Scenario& sc);

Scenario load_scenario(const std::string& path);
void save_scenario(const Scenario& sc, const std::string& path);

// Contract checks shared by the loader and the generator; throws on violation.
void validate_scenario(const Scenario& sc);

}  // namespace drivesim::world
