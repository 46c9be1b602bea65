#include "drivesim/scenario.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace drivesim::world {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "drivesim-scenario";
constexpr int kVersion = 1;

AgentType agent_type_from(const std::string& s) {
  if (s == "vehicle") return AgentType::kVehicle;
  if (s == "pedestrian") return AgentType::kPedestrian;
  if (s == "cyclist") return AgentType::kCyclist;
  throw std::invalid_argument("scenario: unknown agent type '" + s + "'");
}

LightState light_state_from(const std::string& s) {
  if (s == "unknown") return LightState::kUnknown;
  if (s == "red") return LightState::kRed;
  if (s == "yellow") return LightState::kYellow;
  if (s == "green") return LightState::kGreen;
  throw std::invalid_argument("scenario: unknown light state '" + s + "'");
}

MapFeatureType map_type_from(const std::string& s) {
  if (s == "road_edge") return MapFeatureType::kRoadEdge;
  if (s == "lane_center") return MapFeatureType::kLaneCenter;
  if (s == "crosswalk") return MapFeatureType::kCrosswalk;
  throw std::invalid_argument("scenario: unknown map feature type '" + s + "'");
}

json vec2_to_json(geom::Vec2 v) { return json::array({v.x, v.y}); }

geom::Vec2 vec2_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("scenario: bad point");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

Scenario scenario_from_json_string(const std::string& text) {
  json j = json::parse(text);
  if (j.value("format", "") != kFormat)
    throw std::invalid_argument("scenario: missing or wrong format tag");
  if (j.value("version", -1) != kVersion)
    throw std::invalid_argument("scenario: unsupported version");

  Scenario sc;
  sc.name = j.value("name", "");
  sc.dt = j.value("dt", 0.2);
  sc.init_steps = j.value("init_steps", 6);
  sc.horizon = j.value("horizon", 40);

  const json& map = j.at("map");
  for (const json& pl : map.value("polylines", json::array())) {
    MapPolyline out;
    out.type = map_type_from(pl.at("type").get<std::string>());
    for (const json& p : pl.at("points")) out.pts.push_back(vec2_from_json(p));
    sc.map.polylines.push_back(std::move(out));
  }
  for (const json& ln : map.value("lanes", json::array())) {
    Lane lane;
    lane.polyline = ln.at("polyline").get<int>();
    for (const json& s : ln.value("successors", json::array())) lane.successors.push_back(s.get<int>());
    sc.map.lanes.push_back(std::move(lane));
  }
  sc.map.rebuild_caches();

  for (const json& lt : j.value("lights", json::array())) {
    LightInfo info;
    info.position = vec2_from_json(lt.at("position"));
    info.lane = lt.value("lane", -1);
    info.stop_point = vec2_from_json(lt.at("stop_point"));
    for (const json& s : lt.at("schedule")) info.schedule.push_back(light_state_from(s.get<std::string>()));
    sc.lights.push_back(std::move(info));
  }

  for (const json& ag : j.value("agents", json::array())) {
    AgentSpec spec;
    spec.type = agent_type_from(ag.at("type").get<std::string>());
    spec.length = ag.at("length").get<double>();
    spec.width = ag.at("width").get<double>();
    spec.controlled = ag.value("controlled", false);
    spec.road_exempt = ag.value("road_exempt", false);
    spec.route_lane = ag.value("route_lane", -1);
    for (const json& st : ag.at("states")) {
      if (!st.is_array() || st.size() != 4) throw std::invalid_argument("scenario: bad state row");
      spec.logged.push_back({st[0].get<double>(), st[1].get<double>(), st[2].get<double>(), st[3].get<double>()});
    }
    sc.agents.push_back(std::move(spec));
  }

  validate_scenario(sc);
  return sc;
}

std::string scenario_to_json_string(const Scenario& sc) {
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["name"] = sc.name;
  j["dt"] = sc.dt;
  j["init_steps"] = sc.init_steps;
  j["horizon"] = sc.horizon;

  json polylines = json::array();
  for (const MapPolyline& pl : sc.map.polylines) {
    json points = json::array();
    for (geom::Vec2 p : pl.pts) points.push_back(vec2_to_json(p));
    polylines.push_back({{"type", map_feature_name(pl.type)}, {"points", points}});
  }
  json lanes = json::array();
  for (const Lane& ln : sc.map.lanes)
    lanes.push_back({{"polyline", ln.polyline}, {"successors", ln.successors}});
  j["map"] = {{"polylines", polylines}, {"lanes", lanes}};

  json lights = json::array();
  for (const LightInfo& lt : sc.lights) {
    json schedule = json::array();
    for (LightState s : lt.schedule) schedule.push_back(light_state_name(s));
    lights.push_back({{"position", vec2_to_json(lt.position)},
                      {"lane", lt.lane},
                      {"stop_point", vec2_to_json(lt.stop_point)},
                      {"schedule", schedule}});
  }
  j["lights"] = lights;

  json agents = json::array();
  for (const AgentSpec& ag : sc.agents) {
    json states = json::array();
    for (const AgentState& st : ag.logged) states.push_back(json::array({st.x, st.y, st.psi, st.v}));
    agents.push_back({{"type", agent_type_name(ag.type)},
                      {"length", ag.length},
                      {"width", ag.width},
                      {"controlled", ag.controlled},
                      {"road_exempt", ag.road_exempt},
                      {"route_lane", ag.route_lane},
                      {"states", states}});
  }
  j["agents"] = agents;
  return j.dump(2) + "\n";
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("scenario: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return scenario_from_json_string(ss.str());
}

void save_scenario(const Scenario& sc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("scenario: cannot write " + path);
  out << scenario_to_json_string(sc);
}

void validate_scenario(const Scenario& sc) {
  if (std::fabs(sc.dt - 0.2) > 1e-12)
    throw std::invalid_argument("scenario: dt must be 0.2 s (5 Hz), got " + std::to_string(sc.dt));
  if (sc.init_steps < 1 || sc.horizon < 1)
    throw std::invalid_argument("scenario: init_steps and horizon must be positive");
  for (const Lane& ln : sc.map.lanes) {
    if (ln.polyline < 0 || ln.polyline >= static_cast<int>(sc.map.polylines.size()))
      throw std::invalid_argument("scenario: lane polyline index out of range");
    for (int s : ln.successors)
      if (s < 0 || s >= static_cast<int>(sc.map.lanes.size()))
        throw std::invalid_argument("scenario: lane successor out of range");
  }
  for (const LightInfo& lt : sc.lights) {
    if (lt.lane >= static_cast<int>(sc.map.lanes.size()))
      throw std::invalid_argument("scenario: light lane out of range");
    if (lt.schedule.empty()) throw std::invalid_argument("scenario: light without schedule");
  }
  const std::size_t need = static_cast<std::size_t>(sc.last_step()) + 1;
  for (const AgentSpec& ag : sc.agents) {
    if (ag.length <= 0.0 || ag.width <= 0.0)
      throw std::invalid_argument("scenario: nonpositive agent extent");
    if (ag.logged.empty()) throw std::invalid_argument("scenario: agent without states");
    if (ag.controlled && ag.logged.size() < need)
      throw std::invalid_argument("scenario: controlled agent logs " + std::to_string(ag.logged.size()) +
                                  " states, needs " + std::to_string(need));
    if (ag.route_lane >= static_cast<int>(sc.map.lanes.size()))
      throw std::invalid_argument("scenario: route lane out of range");
    for (const AgentState& st : ag.logged) {
      if (st.v < 0.0) throw std::invalid_argument("scenario: negative speed in log");
      if (st.psi <= -kPi - 1e-9 || st.psi > kPi + 1e-9)
        throw std::invalid_argument("scenario: heading not wrapped");
    }
  }
}

}  // namespace drivesim::world
