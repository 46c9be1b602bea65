#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "drivesim/metrics.hpp"
#include "drivesim/rewards.hpp"
#include "drivesim/world.hpp"
#include "testutil.hpp"

using namespace drivesim;
using metrics::EvalBatch;
using metrics::Feature;
using metrics::FeatureHistogram;
using metrics::FeatureSamples;
using metrics::RolloutTrack;

namespace {

// Open ground, no map: n stationary vehicles spread along x.
world::Scenario bare_scenario(int n, int log_len, double spacing = 50.0, double length = 4.5) {
  world::Scenario sc;
  sc.name = "bare";
  sc.init_steps = 1;
  sc.horizon = log_len;
  for (int i = 0; i < n; ++i) {
    world::AgentSpec spec;
    spec.length = length;
    spec.width = 2.0;
    spec.logged.assign(static_cast<std::size_t>(log_len),
                       {spacing * static_cast<double>(i), 0.0, 0.0, 0.0});
    sc.agents.push_back(spec);
  }
  return sc;
}

// Tracks copied straight from the log.
EvalBatch batch_from_log(const world::Scenario& sc, std::vector<int> agents, int K, int T,
                         int start_step = 0) {
  EvalBatch b;
  b.scenario = &sc;
  b.agents = std::move(agents);
  b.start_step = start_step;
  for (int k = 0; k < K; ++k) {
    RolloutTrack r;
    for (int id : b.agents) {
      std::vector<world::AgentState> track;
      for (int t = 0; t <= T; ++t)
        track.push_back(world::logged_state_at(sc.agents[static_cast<std::size_t>(id)], start_step + t));
      r.states.push_back(std::move(track));
    }
    b.rollouts.push_back(std::move(r));
  }
  return b;
}

std::vector<world::AgentState> random_walk(Rng& rng, int len, double x0, double y0) {
  std::vector<world::AgentState> out;
  world::AgentState s{x0, y0, 0.0, 0.0};
  for (int t = 0; t < len; ++t) {
    out.push_back(s);
    s.x += rng.uniform(-1.0, 1.0);
    s.y += rng.uniform(-1.0, 1.0);
    s.psi = world::wrap_heading(s.psi + rng.uniform(-0.2, 0.2));
    s.v = rng.uniform(0.0, 10.0);
  }
  return out;
}

// Direct transcription of the three displacement averages.
struct ReconOracle {
  double min_ade, min_sade, ade;
};

ReconOracle recon_oracle(const EvalBatch& b) {
  const int T = b.horizon();
  const int K = static_cast<int>(b.rollouts.size());
  const int N = static_cast<int>(b.agents.size());
  auto disp = [&](int k, int a, int t) {
    const auto& s = b.rollouts[static_cast<std::size_t>(k)].states[static_cast<std::size_t>(a)]
                              [static_cast<std::size_t>(t)];
    const auto l = world::logged_state_at(
        b.scenario->agents[static_cast<std::size_t>(b.agents[static_cast<std::size_t>(a)])],
        b.start_step + t);
    return std::hypot(s.x - l.x, s.y - l.y);
  };
  ReconOracle o{0.0, std::numeric_limits<double>::infinity(), 0.0};
  for (int a = 0; a < N; ++a) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
      double s = 0.0;
      for (int t = 1; t <= T; ++t) s += disp(k, a, t);
      best = std::min(best, s);
    }
    o.min_ade += best;
  }
  o.min_ade /= static_cast<double>(N * T);
  for (int k = 0; k < K; ++k) {
    double tot = 0.0;
    for (int a = 0; a < N; ++a)
      for (int t = 1; t <= T; ++t) tot += disp(k, a, t);
    o.min_sade = std::min(o.min_sade, tot / static_cast<double>(N * T));
    o.ade += tot;
  }
  o.ade /= static_cast<double>(K * N * T);
  return o;
}

// Road strip |y| <= 8 (drivable side left of each edge), a straight lane at
// y = 0 from x = 0 to 40, and a light over that lane stopping at x = 18.
world::Scenario signal_scenario(world::AgentType type, world::LightState light) {
  world::Scenario sc;
  sc.name = "signal";
  sc.init_steps = 1;
  sc.horizon = 8;
  world::MapPolyline bottom;
  bottom.type = world::MapFeatureType::kRoadEdge;
  for (int i = -60; i <= 60; ++i) bottom.pts.push_back({static_cast<double>(i), -8.0});
  world::MapPolyline top;
  top.type = world::MapFeatureType::kRoadEdge;
  for (int i = 60; i >= -60; --i) top.pts.push_back({static_cast<double>(i), 8.0});
  world::MapPolyline lane;
  lane.type = world::MapFeatureType::kLaneCenter;
  for (int i = 0; i <= 40; ++i) lane.pts.push_back({static_cast<double>(i), 0.0});
  sc.map.polylines = {bottom, top, lane};
  sc.map.lanes.push_back({2, {}});
  sc.map.rebuild_caches();

  world::LightInfo li;
  li.position = {18.0, 5.0};
  li.lane = 0;
  li.stop_point = {18.0, 0.0};
  li.schedule.assign(16, light);
  sc.lights.push_back(li);

  world::AgentSpec spec;
  spec.type = type;
  spec.route_lane = type == world::AgentType::kVehicle ? 0 : -1;
  spec.logged.assign(16, {5.0, 0.0, 0.0, 0.0});
  sc.agents.push_back(spec);
  return sc;
}

}  // namespace

TEST_CASE("batch validation rejects malformed shapes") {
  world::Scenario sc = bare_scenario(2, 6);
  EvalBatch b = batch_from_log(sc, {0, 1}, 2, 4);
  CHECK_NOTHROW(b.validate());
  CHECK(b.horizon() == 4);

  EvalBatch no_agents = b;
  no_agents.agents.clear();
  CHECK_THROWS_AS(no_agents.validate(), std::invalid_argument);

  EvalBatch no_rollouts = b;
  no_rollouts.rollouts.clear();
  CHECK_THROWS_AS(no_rollouts.validate(), std::invalid_argument);

  EvalBatch bad_id = b;
  bad_id.agents[1] = 7;
  CHECK_THROWS_AS(bad_id.validate(), std::invalid_argument);

  EvalBatch ragged = b;
  ragged.rollouts[1].states[0].pop_back();
  CHECK_THROWS_AS(ragged.validate(), std::invalid_argument);

  EvalBatch short_log = batch_from_log(sc, {0, 1}, 2, 4, 3);
  CHECK_THROWS_AS(metrics::reconstruction_metrics(short_log), std::invalid_argument);
}

TEST_CASE("exact replays and constant offsets give the obvious displacement averages") {
  world::Scenario sc = bare_scenario(2, 8);
  EvalBatch b = batch_from_log(sc, {0, 1}, 2, 4);

  metrics::ReconstructionMetrics m = metrics::reconstruction_metrics(b);
  CHECK(m.min_ade == 0.0);
  CHECK(m.min_sade == 0.0);
  CHECK(m.ade == 0.0);

  // Shift every rollout of every agent one meter along x.
  for (auto& r : b.rollouts)
    for (auto& track : r.states)
      for (auto& s : track) s.x += 1.0;
  m = metrics::reconstruction_metrics(b);
  CHECK(m.min_ade == 1.0);
  CHECK(m.min_sade == 1.0);
  CHECK(m.ade == 1.0);
}

TEST_CASE("crossed per-agent errors split the three averages") {
  // Rollout 0 nails agent A and misses B by two meters; rollout 1 swaps them.
  world::Scenario sc = bare_scenario(2, 8);
  EvalBatch b = batch_from_log(sc, {0, 1}, 2, 4);
  for (auto& s : b.rollouts[0].states[1]) s.y += 2.0;
  for (auto& s : b.rollouts[1].states[0]) s.y += 2.0;

  metrics::ReconstructionMetrics m = metrics::reconstruction_metrics(b);
  CHECK(m.min_ade == 0.0);   // each agent has one perfect rollout
  CHECK(m.min_sade == 1.0);  // every scene carries one miss across two agents
  CHECK(m.ade == 1.0);
}

TEST_CASE("displacement averages match a direct transcription on random batches") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int N = 3, K = 5, T = 7;
    world::Scenario sc = bare_scenario(N, T + 2);
    for (int a = 0; a < N; ++a)
      sc.agents[static_cast<std::size_t>(a)].logged = random_walk(rng, T + 2, 30.0 * a, 0.0);
    EvalBatch b = batch_from_log(sc, {0, 1, 2}, K, T);
    for (auto& r : b.rollouts)
      for (auto& track : r.states)
        for (auto& s : track) {
          s.x += rng.uniform(-3.0, 3.0);
          s.y += rng.uniform(-3.0, 3.0);
        }
    metrics::ReconstructionMetrics m = metrics::reconstruction_metrics(b);
    ReconOracle o = recon_oracle(b);
    CHECK(m.min_ade == doctest::Approx(o.min_ade).epsilon(1e-12));
    CHECK(m.min_sade == doctest::Approx(o.min_sade).epsilon(1e-12));
    CHECK(m.ade == doctest::Approx(o.ade).epsilon(1e-12));
    CHECK(m.min_ade <= m.min_sade + 1e-12);
    CHECK(m.min_sade <= m.ade + 1e-12);
  }
}

TEST_CASE("a quiet scene has every infraction rate at zero") {
  world::Scenario sc = bare_scenario(3, 8);
  EvalBatch b = batch_from_log(sc, {0, 1, 2}, 4, 6);
  metrics::InfractionRates r = metrics::infraction_rates(b);
  CHECK(r.collision == 0.0);
  CHECK(r.off_road == 0.0);
  CHECK(r.rule_violation == 0.0);
  CHECK(r.kinematic == 0.0);
}

TEST_CASE("one of four agents colliding in every rollout makes a quarter") {
  // Agent 4 is a replayed obstacle at the origin; evaluated agent 0 parks on
  // top of it in every rollout.
  world::Scenario sc = bare_scenario(5, 8, 20.0);
  sc.agents[4].logged.assign(8, {0.0, 0.0, 0.0, 0.0});
  for (int i = 0; i < 4; ++i)
    sc.agents[static_cast<std::size_t>(i)].logged.assign(
        8, {20.0 + 20.0 * static_cast<double>(i), 0.0, 0.0, 0.0});

  EvalBatch b = batch_from_log(sc, {0, 1, 2, 3}, 3, 5);
  for (auto& r : b.rollouts)
    for (std::size_t t = 1; t < r.states[0].size(); ++t) r.states[0][t] = {0.5, 0.0, 0.0, 0.0};

  metrics::InfractionRates r = metrics::infraction_rates(b);
  CHECK(r.collision == 0.25);
  CHECK(r.off_road == 0.0);
  CHECK(r.rule_violation == 0.0);
  CHECK(r.kinematic == 0.0);
}

TEST_CASE("off-road and red-light infractions apply to vehicles only") {
  auto crossing_tracks = [](EvalBatch& b) {
    // Step 1 overshoots the stop line inside the road, step 2 leaves the road.
    b.rollouts[0].states[0][1] = {25.0, 0.0, 0.0, 0.0};
    b.rollouts[0].states[0][2] = {25.0, 9.0, 0.0, 0.0};
  };

  SUBCASE("vehicle on red") {
    world::Scenario sc = signal_scenario(world::AgentType::kVehicle, world::LightState::kRed);
    EvalBatch b = batch_from_log(sc, {0}, 1, 2);
    crossing_tracks(b);
    metrics::InfractionRates r = metrics::infraction_rates(b);
    CHECK(r.off_road == 1.0);
    CHECK(r.rule_violation == 1.0);
    CHECK(r.collision == 0.0);
  }
  SUBCASE("vehicle on green") {
    world::Scenario sc = signal_scenario(world::AgentType::kVehicle, world::LightState::kGreen);
    EvalBatch b = batch_from_log(sc, {0}, 1, 2);
    crossing_tracks(b);
    metrics::InfractionRates r = metrics::infraction_rates(b);
    CHECK(r.off_road == 1.0);
    CHECK(r.rule_violation == 0.0);
  }
  SUBCASE("pedestrian ignores both") {
    world::Scenario sc = signal_scenario(world::AgentType::kPedestrian, world::LightState::kRed);
    EvalBatch b = batch_from_log(sc, {0}, 1, 2);
    crossing_tracks(b);
    metrics::InfractionRates r = metrics::infraction_rates(b);
    CHECK(r.off_road == 0.0);
    CHECK(r.rule_violation == 0.0);
  }
  SUBCASE("vehicle staying in lane before the stop line is clean") {
    world::Scenario sc = signal_scenario(world::AgentType::kVehicle, world::LightState::kRed);
    EvalBatch b = batch_from_log(sc, {0}, 1, 2);
    metrics::InfractionRates r = metrics::infraction_rates(b);
    CHECK(r.off_road == 0.0);
    CHECK(r.rule_violation == 0.0);
  }
}

TEST_CASE("in-bound bicycle actions on a five-meter vehicle are never flagged infeasible") {
  // At full steer the path curvature is sin(atan(0.5)) / (0.3 * length), which
  // stays below the 0.3 cap once the length reaches five meters.
  Rng rng(23);
  world::KinematicParams kp;
  const int T = 40;
  for (int trial = 0; trial < 100; ++trial) {
    world::Scenario sc = bare_scenario(1, 2, 50.0, 5.0);
    world::StateT<double> s{0.0, 0.0, rng.uniform(-kPi, kPi), rng.uniform(0.0, 15.0)};
    sc.agents[0].logged.assign(2, {s.x, s.y, s.psi, s.v});
    EvalBatch b;
    b.scenario = &sc;
    b.agents = {0};
    RolloutTrack r;
    std::vector<world::AgentState> track{{s.x, s.y, s.psi, s.v}};
    for (int t = 0; t < T; ++t) {
      s = world::step_bicycle<double>(s, rng.uniform(-kp.max_accel, kp.max_accel),
                                      rng.uniform(-kp.max_steer, kp.max_steer), 5.0, kp);
      track.push_back({s.x, s.y, s.psi, s.v});
    }
    r.states.push_back(std::move(track));
    b.rollouts.push_back(std::move(r));
    CHECK(metrics::infraction_rates(b).kinematic == 0.0);
  }

  SUBCASE("a short vehicle at full steer is flagged") {
    world::Scenario sc = bare_scenario(1, 2);
    EvalBatch b;
    b.scenario = &sc;
    b.agents = {0};
    world::StateT<double> s{0.0, 0.0, 0.0, 5.0};
    world::KinematicParams kp2;
    RolloutTrack r;
    std::vector<world::AgentState> track{{s.x, s.y, s.psi, s.v}};
    for (int t = 0; t < 10; ++t) {
      s = world::step_bicycle<double>(s, 0.0, kp2.max_steer, 4.5, kp2);
      track.push_back({s.x, s.y, s.psi, s.v});
    }
    r.states.push_back(std::move(track));
    b.rollouts.push_back(std::move(r));
    CHECK(metrics::infraction_rates(b).kinematic == 1.0);
  }
  SUBCASE("a speed jump beyond the acceleration cap is flagged") {
    world::Scenario sc = bare_scenario(1, 2);
    EvalBatch b;
    b.scenario = &sc;
    b.agents = {0};
    RolloutTrack r;
    r.states.push_back({{0, 0, 0, 0}, {0.5, 0, 0, 2.0}});  // 10 m/s^2 estimated
    b.rollouts.push_back(std::move(r));
    CHECK(metrics::infraction_rates(b).kinematic == 1.0);
  }
  SUBCASE("heading jumps below the speed guard are skipped") {
    world::Scenario sc = bare_scenario(1, 2);
    EvalBatch b;
    b.scenario = &sc;
    b.agents = {0};
    RolloutTrack r;
    r.states.push_back({{0, 0, 0.0, 0.05}, {0, 0, 1.5, 0.05}, {0, 0, 3.0, 0.05}});
    b.rollouts.push_back(std::move(r));
    CHECK(metrics::infraction_rates(b).kinematic == 0.0);
    b.rollouts[0].states[0][0].v = 0.2;  // same spin above the guard
    b.rollouts[0].states[0][1].v = 0.2;
    CHECK(metrics::infraction_rates(b).kinematic == 1.0);
  }
}

TEST_CASE("histograms conserve mass and clip into the boundary bins") {
  FeatureHistogram h(Feature::kLinearSpeed);
  CHECK(h.bins() == 200);
  CHECK(h.lo() == 0.0);
  CHECK(h.hi() == 35.0);
  h.add(-5.0);   // below range: first bin
  h.add(0.0);    // exactly at the low edge: first bin
  h.add(100.0);  // above range: last bin
  h.add(35.0);   // exactly at the high edge: last bin
  h.add(17.5);   // midpoint: bin 100
  CHECK(h.total() == 5.0);
  CHECK(h.counts()[0] == 2.0);
  CHECK(h.counts()[199] == 2.0);
  CHECK(h.counts()[100] == 1.0);

  Rng rng(31);
  for (int i = 0; i < 10000; ++i) h.add(rng.uniform(-20.0, 60.0));
  std::vector<double> mass = h.normalized();
  double sum = 0.0;
  for (double m : mass) sum += m;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(h.add(std::nan("")), std::invalid_argument);
  CHECK_THROWS_AS(FeatureHistogram(Feature::kProgress, 1.0, 1.0, 10), std::invalid_argument);
  CHECK_THROWS_AS(FeatureHistogram(Feature::kProgress, 0.0, 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(FeatureHistogram(Feature::kProgress).normalized(), std::invalid_argument);

  const std::string csv = metrics::histogram_csv(h);
  CHECK(csv.rfind("bin_lo,bin_hi,mass\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 201);
}

TEST_CASE("divergence of identical, disjoint, and hand-computed distributions") {
  FeatureHistogram p(Feature::kProgress, 0.0, 1.0, 2);
  FeatureHistogram q(Feature::kProgress, 0.0, 1.0, 2);
  p.add(0.25);
  p.add(0.75);  // [0.5, 0.5]
  q.add(0.25);
  q.add(0.25);  // [1, 0]

  const double expect = 0.5 * (0.5 * std::log2(0.5 / 0.75) + 0.5 * std::log2(0.5 / 0.25)) +
                        0.5 * (1.0 * std::log2(1.0 / 0.75));
  CHECK(metrics::jsd(p, q) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(metrics::jsd(p, q) == doctest::Approx(0.3113).epsilon(2e-4));
  CHECK(metrics::jsd(p, p) == 0.0);

  CHECK(metrics::jsd_mass({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(metrics::jsd_mass({0.2, 0.8, 0.0}, {0.2, 0.8, 0.0}) == 0.0);

  FeatureHistogram other_bins(Feature::kProgress, 0.0, 1.0, 3);
  other_bins.add(0.5);
  CHECK_THROWS_AS(metrics::jsd(p, other_bins), std::invalid_argument);
  FeatureHistogram other_feature(Feature::kCurvature, 0.0, 1.0, 2);
  other_feature.add(0.5);
  CHECK_THROWS_AS(metrics::jsd(p, other_feature), std::invalid_argument);
  FeatureHistogram empty(Feature::kProgress, 0.0, 1.0, 2);
  CHECK_THROWS_AS(metrics::jsd(p, empty), std::invalid_argument);
  CHECK_THROWS_AS(metrics::jsd_mass({0.5, 0.5}, {1.0}), std::invalid_argument);
}

TEST_CASE("divergence is symmetric and bounded on random distributions") {
  Rng rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 16;
    std::vector<double> p(n), q(n);
    double sp = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      p[static_cast<std::size_t>(i)] = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
      q[static_cast<std::size_t>(i)] = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
      sp += p[static_cast<std::size_t>(i)];
      sq += q[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < n; ++i) {
      p[static_cast<std::size_t>(i)] /= sp;
      q[static_cast<std::size_t>(i)] /= sq;
    }
    const double d = metrics::jsd_mass(p, q);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0 + 1e-12);
    CHECK(d == doctest::Approx(metrics::jsd_mass(q, p)).epsilon(1e-12));
    CHECK(metrics::jsd_mass(p, p) == 0.0);
  }
}

TEST_CASE("feature streams of stationary and cruising agents") {
  SUBCASE("stationary pair") {
    world::Scenario sc = bare_scenario(2, 8, 30.0);
    EvalBatch b = batch_from_log(sc, {0, 1}, 1, 5);
    FeatureSamples fs = metrics::extract_features(b);
    for (double v : fs.stream(Feature::kLinearSpeed)) CHECK(v == 0.0);
    for (double v : fs.stream(Feature::kAngularSpeed)) CHECK(v == 0.0);
    for (double v : fs.stream(Feature::kLinearAccel)) CHECK(v == 0.0);
    for (double v : fs.stream(Feature::kProgress)) CHECK(v == 0.0);
    for (double v : fs.stream(Feature::kCurvature)) CHECK(v == 0.0);
    // No collision course: the projection caps out.
    for (double v : fs.stream(Feature::kTimeToCollision)) CHECK(v == 5.0);
    // Two aligned boxes 30 m apart with 2.25 m half lengths.
    REQUIRE(!fs.stream(Feature::kNearestObject).empty());
    for (double v : fs.stream(Feature::kNearestObject))
      CHECK(v == doctest::Approx(25.5).epsilon(1e-9));
  }
  SUBCASE("straight cruise at ten meters per second for eight seconds") {
    world::Scenario sc = bare_scenario(2, 42, 30.0);
    sc.agents[1].logged.assign(42, {0.0, 50.0, 0.0, 0.0});  // parked far off the path
    const int T = 40;
    EvalBatch b = batch_from_log(sc, {0}, 1, T);
    for (int t = 0; t <= T; ++t)
      b.rollouts[0].states[0][static_cast<std::size_t>(t)] = {2.0 * t, 0.0, 0.0, 10.0};
    FeatureSamples fs = metrics::extract_features(b);
    REQUIRE(fs.stream(Feature::kProgress).size() == 1);
    CHECK(fs.stream(Feature::kProgress)[0] == 80.0);
    CHECK(fs.stream(Feature::kCurvature)[0] == 0.0);
    for (double v : fs.stream(Feature::kLinearSpeed)) CHECK(v == 10.0);
    for (double v : fs.stream(Feature::kLinearAccel)) CHECK(v == 0.0);
    REQUIRE(fs.stream(Feature::kAngularAccel).size() == static_cast<std::size_t>(T - 1));
  }
}

TEST_CASE("head-on time to collision is the gap over the closing speed") {
  world::Scenario sc = bare_scenario(2, 4);
  world::Scene scn = world::make_scene(sc, 0);

  SUBCASE("one mover, twenty meter gap at ten meters per second") {
    scn.states[0] = {0.0, 0.0, 0.0, 10.0};
    scn.states[1] = {24.5, 0.0, kPi, 0.0};  // bumper gap 24.5 - 2 * 2.25 = 20
    CHECK(metrics::time_to_collision(scn, 0) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(metrics::time_to_collision(scn, 1) == doctest::Approx(2.0).epsilon(1e-6));
  }
  SUBCASE("both closing at five meters per second") {
    scn.states[0] = {0.0, 0.0, 0.0, 5.0};
    scn.states[1] = {24.5, 0.0, kPi, 5.0};
    CHECK(metrics::time_to_collision(scn, 0) == doctest::Approx(2.0).epsilon(1e-6));
  }
  SUBCASE("wide lateral offset never collides") {
    scn.states[0] = {0.0, 0.0, 0.0, 10.0};
    scn.states[1] = {24.5, 10.0, kPi, 10.0};
    CHECK(metrics::time_to_collision(scn, 0) == 5.0);
  }
  SUBCASE("already overlapping") {
    scn.states[0] = {0.0, 0.0, 0.0, 10.0};
    scn.states[1] = {1.0, 0.0, 0.0, 0.0};
    CHECK(metrics::time_to_collision(scn, 0) == 0.0);
  }
  SUBCASE("receding caps out") {
    scn.states[0] = {0.0, 0.0, kPi, 10.0};
    scn.states[1] = {24.5, 0.0, 0.0, 10.0};
    CHECK(metrics::time_to_collision(scn, 0) == 5.0);
  }
}

TEST_CASE("log features equal rollout features when the rollout replays the log") {
  world::Scenario sc = bare_scenario(2, 12, 25.0);
  Rng rng(41);
  sc.agents[0].logged = random_walk(rng, 12, 0.0, 0.0);
  sc.agents[1].logged = random_walk(rng, 12, 25.0, 0.0);
  EvalBatch b = batch_from_log(sc, {0, 1}, 1, 8);
  FeatureSamples sim = metrics::extract_features(b);
  FeatureSamples log = metrics::extract_log_features(b);
  for (int i = 0; i < metrics::kFeatureCount; ++i) {
    const Feature f = static_cast<Feature>(i);
    REQUIRE(sim.stream(f).size() == log.stream(f).size());
    for (std::size_t j = 0; j < sim.stream(f).size(); ++j)
      CHECK(sim.stream(f)[j] == log.stream(f)[j]);
  }

  std::array<double, metrics::kFeatureCount> div = metrics::feature_jsd(sim, log);
  for (int i = 0; i < metrics::kFeatureCount; ++i) {
    if (static_cast<Feature>(i) == Feature::kEdgeDistance) {
      CHECK(std::isnan(div[static_cast<std::size_t>(i)]));  // no road edges in this map
    } else {
      CHECK(div[static_cast<std::size_t>(i)] == 0.0);
    }
  }
}

TEST_CASE("a scripted arc produces the scripted angular rates and curvature") {
  world::Scenario sc = bare_scenario(1, 2);
  const int T = 12;
  EvalBatch b;
  b.scenario = &sc;
  b.agents = {0};
  RolloutTrack r;
  double x = 0.0, y = 0.0, psi = 0.0;
  std::vector<world::AgentState> track{{x, y, psi, 5.0}};
  for (int t = 0; t < T; ++t) {
    x += std::cos(psi);
    y += std::sin(psi);
    psi = world::wrap_heading(psi + 0.1);
    track.push_back({x, y, psi, 5.0});
  }
  r.states.push_back(std::move(track));
  b.rollouts.push_back(std::move(r));

  FeatureSamples fs = metrics::extract_features(b);
  for (double w : fs.stream(Feature::kAngularSpeed)) CHECK(w == doctest::Approx(0.5).epsilon(1e-12));
  for (double a : fs.stream(Feature::kAngularAccel)) CHECK(a == doctest::Approx(0.0).scale(1.0).epsilon(1e-10));
  REQUIRE(fs.stream(Feature::kCurvature).size() == 1);
  CHECK(fs.stream(Feature::kCurvature)[0] == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(fs.stream(Feature::kProgress)[0] == doctest::Approx(static_cast<double>(T)).epsilon(1e-12));

  // Mirrored turn flips the sign.
  for (auto& s : b.rollouts[0].states[0]) {
    s.y = -s.y;
    s.psi = -s.psi;
  }
  FeatureSamples neg = metrics::extract_features(b);
  CHECK(neg.stream(Feature::kCurvature)[0] == doctest::Approx(-0.1).epsilon(1e-9));
}

TEST_CASE("road-edge distance stream is positive inside the strip") {
  world::Scenario sc = signal_scenario(world::AgentType::kVehicle, world::LightState::kGreen);
  EvalBatch b = batch_from_log(sc, {0}, 1, 2);
  FeatureSamples fs = metrics::extract_features(b);
  REQUIRE(fs.stream(Feature::kEdgeDistance).size() == 2);
  // Box center y = 0, half width 1, edges at |y| = 8: worst vertex is 7 in.
  for (double d : fs.stream(Feature::kEdgeDistance)) CHECK(d == doctest::Approx(7.0).epsilon(1e-9));

  b.rollouts[0].states[0][1] = {25.0, 9.0, 0.0, 0.0};
  fs = metrics::extract_features(b);
  CHECK(fs.stream(Feature::kEdgeDistance)[0] == doctest::Approx(-2.0).epsilon(1e-9));
}
