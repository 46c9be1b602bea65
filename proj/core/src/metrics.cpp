#include "drivesim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace drivesim::metrics {

namespace {

constexpr double kTtcMarchFloor = 1e-2;  // s

double position_error(const world::AgentState& a, const world::AgentState& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

// Scene at track time t: the log everywhere, the track for evaluated agents.
world::Scene scene_at(const EvalBatch& batch, int rollout, int t) {
  world::Scene scn = world::make_scene(*batch.scenario, batch.start_step + t);
  for (std::size_t a = 0; a < batch.agents.size(); ++a) {
    scn.states[static_cast<std::size_t>(batch.agents[a])] =
        batch.rollouts[static_cast<std::size_t>(rollout)].states[a][static_cast<std::size_t>(t)];
  }
  return scn;
}

bool is_vehicle(const EvalBatch& batch, int id) {
  return batch.scenario->agents[static_cast<std::size_t>(id)].type == world::AgentType::kVehicle;
}

}  // namespace

int EvalBatch::horizon() const {
  if (rollouts.empty() || rollouts.front().states.empty()) return 0;
  return static_cast<int>(rollouts.front().states.front().size()) - 1;
}

void EvalBatch::validate() const {
  if (scenario == nullptr) throw std::invalid_argument("EvalBatch: scenario not set");
  if (agents.empty()) throw std::invalid_argument("EvalBatch: no evaluated agents");
  if (rollouts.empty()) throw std::invalid_argument("EvalBatch: no rollouts");
  for (int id : agents) {
    if (id < 0 || id >= static_cast<int>(scenario->agents.size()))
      throw std::invalid_argument("EvalBatch: agent id out of range");
  }
  const int T = horizon();
  if (T < 1) throw std::invalid_argument("EvalBatch: tracks need at least one transition");
  for (const RolloutTrack& r : rollouts) {
    if (r.states.size() != agents.size())
      throw std::invalid_argument("EvalBatch: rollout agent count mismatch");
    for (const auto& track : r.states) {
      if (static_cast<int>(track.size()) != T + 1)
        throw std::invalid_argument("EvalBatch: rollout horizon mismatch");
    }
  }
}

ReconstructionMetrics reconstruction_metrics(const EvalBatch& batch) {
  batch.validate();
  const int T = batch.horizon();
  const int K = static_cast<int>(batch.rollouts.size());
  const int N = static_cast<int>(batch.agents.size());
  for (int id : batch.agents) {
    const auto& logged = batch.scenario->agents[static_cast<std::size_t>(id)].logged;
    if (static_cast<int>(logged.size()) <= batch.start_step + T)
      throw std::invalid_argument("reconstruction_metrics: log does not cover the window");
  }

  // err[a][k]: displacement summed over the simulated steps.
  std::vector<std::vector<double>> err(static_cast<std::size_t>(N),
                                       std::vector<double>(static_cast<std::size_t>(K), 0.0));
  for (int a = 0; a < N; ++a) {
    const auto& spec = batch.scenario->agents[static_cast<std::size_t>(batch.agents[a])];
    for (int k = 0; k < K; ++k) {
      double sum = 0.0;
      for (int t = 1; t <= T; ++t) {
        sum += position_error(
            batch.rollouts[static_cast<std::size_t>(k)].states[static_cast<std::size_t>(a)]
                          [static_cast<std::size_t>(t)],
            world::logged_state_at(spec, batch.start_step + t));
      }
      err[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)] = sum;
    }
  }

  ReconstructionMetrics out;
  const double denom = static_cast<double>(N) * static_cast<double>(T);
  for (int a = 0; a < N; ++a) {
    const auto& row = err[static_cast<std::size_t>(a)];
    out.min_ade += *std::min_element(row.begin(), row.end());
  }
  out.min_ade /= denom;

  double best_scene = std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    double scene_sum = 0.0;
    for (int a = 0; a < N; ++a)
      scene_sum += err[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)];
    best_scene = std::min(best_scene, scene_sum);
    out.ade += scene_sum;
  }
  out.min_sade = best_scene / denom;
  out.ade /= denom * static_cast<double>(K);
  return out;
}

InfractionRates infraction_rates(const EvalBatch& batch) {
  batch.validate();
  const world::Scenario& sc = *batch.scenario;
  const int T = batch.horizon();
  const int K = static_cast<int>(batch.rollouts.size());
  const int N = static_cast<int>(batch.agents.size());
  const auto routes = rewards::routes_for_scenario(sc);
  const rewards::RewardThresholds thr;
  const bool has_edges = !sc.map.road_edges.empty();

  InfractionRates rates;
  for (int k = 0; k < K; ++k) {
    std::vector<bool> coll(static_cast<std::size_t>(N)), off(static_cast<std::size_t>(N)),
        rule(static_cast<std::size_t>(N)), kin(static_cast<std::size_t>(N));
    for (int t = 1; t <= T; ++t) {
      world::Scene scn = scene_at(batch, k, t);
      for (int a = 0; a < N; ++a) {
        const int id = batch.agents[static_cast<std::size_t>(a)];
        if (nearest_object_distance(scn, id) < 0.0) coll[static_cast<std::size_t>(a)] = true;
        if (!is_vehicle(batch, id)) continue;
        const auto& spec = sc.agents[static_cast<std::size_t>(id)];
        if (has_edges && !spec.road_exempt &&
            rewards::on_road_distance(rewards::agent_box(scn, id), sc.map) > 0.0)
          off[static_cast<std::size_t>(a)] = true;
        // The rule reward is strictly negative exactly when the agent sits
        // past the stop point of an applicable red light.
        if (rewards::traffic_rule_reward(scn, id, routes[static_cast<std::size_t>(id)], thr) < 0.0)
          rule[static_cast<std::size_t>(a)] = true;
      }
    }
    for (int a = 0; a < N; ++a) {
      const int id = batch.agents[static_cast<std::size_t>(a)];
      if (!is_vehicle(batch, id)) continue;
      const auto& track = batch.rollouts[static_cast<std::size_t>(k)].states[static_cast<std::size_t>(a)];
      for (int t = 0; t < T; ++t) {
        const world::AgentState& s0 = track[static_cast<std::size_t>(t)];
        const world::AgentState& s1 = track[static_cast<std::size_t>(t) + 1];
        const double accel = (s1.v - s0.v) / sc.dt;
        if (std::fabs(accel) > kMaxFeasibleAccel) kin[static_cast<std::size_t>(a)] = true;
        if (s0.v >= kCurvatureSpeedGuard) {
          const double kappa = world::wrap_heading(s1.psi - s0.psi) / (s0.v * sc.dt);
          if (std::fabs(kappa) > kMaxFeasibleCurvature) kin[static_cast<std::size_t>(a)] = true;
        }
      }
    }
    for (int a = 0; a < N; ++a) {
      rates.collision += coll[static_cast<std::size_t>(a)] ? 1.0 : 0.0;
      rates.off_road += off[static_cast<std::size_t>(a)] ? 1.0 : 0.0;
      rates.rule_violation += rule[static_cast<std::size_t>(a)] ? 1.0 : 0.0;
      rates.kinematic += kin[static_cast<std::size_t>(a)] ? 1.0 : 0.0;
    }
  }
  const double denom = static_cast<double>(K) * static_cast<double>(N);
  rates.collision /= denom;
  rates.off_road /= denom;
  rates.rule_violation /= denom;
  rates.kinematic /= denom;
  return rates;
}

const char* feature_name(Feature f) {
  switch (f) {
    case Feature::kLinearSpeed: return "linear_speed";
    case Feature::kAngularSpeed: return "angular_speed";
    case Feature::kLinearAccel: return "linear_accel";
    case Feature::kAngularAccel: return "angular_accel";
    case Feature::kNearestObject: return "nearest_object";
    case Feature::kTimeToCollision: return "time_to_collision";
    case Feature::kEdgeDistance: return "edge_distance";
    case Feature::kCurvature: return "curvature";
    case Feature::kProgress: return "progress";
  }
  throw std::invalid_argument("feature_name: bad feature");
}

std::pair<double, double> feature_range(Feature f) {
  switch (f) {
    case Feature::kLinearSpeed: return {0.0, 35.0};
    case Feature::kAngularSpeed: return {-1.0, 1.0};
    case Feature::kLinearAccel: return {-10.0, 10.0};
    case Feature::kAngularAccel: return {-2.0, 2.0};
    case Feature::kNearestObject: return {-5.0, 40.0};
    case Feature::kTimeToCollision: return {0.0, 5.0};
    case Feature::kEdgeDistance: return {-20.0, 40.0};
    case Feature::kCurvature: return {-0.2, 0.2};
    case Feature::kProgress: return {0.0, 280.0};
  }
  throw std::invalid_argument("feature_range: bad feature");
}

void FeatureSamples::append(const FeatureSamples& other) {
  for (int i = 0; i < kFeatureCount; ++i) {
    streams[static_cast<std::size_t>(i)].insert(streams[static_cast<std::size_t>(i)].end(),
                                                other.streams[static_cast<std::size_t>(i)].begin(),
                                                other.streams[static_cast<std::size_t>(i)].end());
  }
}

namespace {

// Streams from one agent track plus the scenes it lives in.
void extract_track(const EvalBatch& batch, const std::vector<world::Scene>& scenes,
                   const std::vector<world::AgentState>& track, int id, FeatureSamples& out) {
  const world::Scenario& sc = *batch.scenario;
  const int T = static_cast<int>(track.size()) - 1;
  const double ttc_cap = feature_range(Feature::kTimeToCollision).second;
  const bool edge_ok = is_vehicle(batch, id) && !sc.map.road_edges.empty() &&
                       !sc.agents[static_cast<std::size_t>(id)].road_exempt;

  double prev_omega = 0.0;
  for (int t = 1; t <= T; ++t) {
    const world::AgentState& s0 = track[static_cast<std::size_t>(t) - 1];
    const world::AgentState& s1 = track[static_cast<std::size_t>(t)];
    const double omega = world::wrap_heading(s1.psi - s0.psi) / sc.dt;
    out.stream(Feature::kLinearSpeed).push_back(s1.v);
    out.stream(Feature::kAngularSpeed).push_back(omega);
    out.stream(Feature::kLinearAccel).push_back((s1.v - s0.v) / sc.dt);
    if (t >= 2) out.stream(Feature::kAngularAccel).push_back((omega - prev_omega) / sc.dt);
    prev_omega = omega;

    const world::Scene& scn = scenes[static_cast<std::size_t>(t) - 1];
    const double d_obj = nearest_object_distance(scn, id);
    if (std::isfinite(d_obj)) out.stream(Feature::kNearestObject).push_back(d_obj);
    out.stream(Feature::kTimeToCollision).push_back(time_to_collision(scn, id, ttc_cap));
    if (edge_ok)
      out.stream(Feature::kEdgeDistance)
          .push_back(-rewards::on_road_distance(rewards::agent_box(scn, id), sc.map));
  }

  // Trajectory features: signed per-step curvature averaged over moving steps,
  // and total arclength.
  double progress = 0.0, curv_sum = 0.0;
  int curv_steps = 0;
  for (int t = 1; t <= T; ++t) {
    const world::AgentState& s0 = track[static_cast<std::size_t>(t) - 1];
    const world::AgentState& s1 = track[static_cast<std::size_t>(t)];
    const double ds = std::hypot(s1.x - s0.x, s1.y - s0.y);
    progress += ds;
    if (ds > kCurvatureSpeedGuard * sc.dt) {
      curv_sum += world::wrap_heading(s1.psi - s0.psi) / ds;
      ++curv_steps;
    }
  }
  out.stream(Feature::kCurvature).push_back(curv_steps > 0 ? curv_sum / curv_steps : 0.0);
  out.stream(Feature::kProgress).push_back(progress);
}

}  // namespace

FeatureSamples extract_features(const EvalBatch& batch) {
  batch.validate();
  const int T = batch.horizon();
  FeatureSamples out;
  std::vector<world::Scene> scenes(static_cast<std::size_t>(T));
  for (int k = 0; k < static_cast<int>(batch.rollouts.size()); ++k) {
    for (int t = 1; t <= T; ++t) scenes[static_cast<std::size_t>(t) - 1] = scene_at(batch, k, t);
    for (std::size_t a = 0; a < batch.agents.size(); ++a) {
      extract_track(batch, scenes, batch.rollouts[static_cast<std::size_t>(k)].states[a],
                    batch.agents[a], out);
    }
  }
  return out;
}

FeatureSamples extract_log_features(const EvalBatch& batch) {
  batch.validate();
  const int T = batch.horizon();
  FeatureSamples out;
  std::vector<world::Scene> scenes(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t)
    scenes[static_cast<std::size_t>(t) - 1] = world::make_scene(*batch.scenario, batch.start_step + t);
  for (int id : batch.agents) {
    const auto& spec = batch.scenario->agents[static_cast<std::size_t>(id)];
    std::vector<world::AgentState> track(static_cast<std::size_t>(T) + 1);
    for (int t = 0; t <= T; ++t)
      track[static_cast<std::size_t>(t)] = world::logged_state_at(spec, batch.start_step + t);
    extract_track(batch, scenes, track, id, out);
  }
  return out;
}

FeatureHistogram::FeatureHistogram(Feature f)
    : FeatureHistogram(f, feature_range(f).first, feature_range(f).second, kHistogramBins) {}

FeatureHistogram::FeatureHistogram(Feature f, double lo, double hi, int bins)
    : feature_(f), lo_(lo), hi_(hi), counts_(static_cast<std::size_t>(bins), 0.0) {
  if (bins < 1 || !(hi > lo)) throw std::invalid_argument("FeatureHistogram: bad binning");
}

void FeatureHistogram::add(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("FeatureHistogram: non-finite sample");
  const double u = (x - lo_) / (hi_ - lo_) * static_cast<double>(bins());
  int b = static_cast<int>(std::floor(u));
  b = std::clamp(b, 0, bins() - 1);  // boundary bins swallow out-of-range samples
  counts_[static_cast<std::size_t>(b)] += 1.0;
  total_ += 1.0;
}

void FeatureHistogram::add_all(const std::vector<double>& xs) {
  for (double x : xs) add(x);
}

std::vector<double> FeatureHistogram::normalized() const {
  if (total_ <= 0.0) throw std::invalid_argument("FeatureHistogram: empty histogram");
  std::vector<double> out(counts_.size());
  for (std::size_t i = 0; i < counts_.size(); ++i) out[i] = counts_[i] / total_;
  return out;
}

double jsd_mass(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("jsd: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0 && q[i] <= 0.0) continue;
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) acc += 0.5 * q[i] * std::log2(q[i] / m);
  }
  return std::max(0.0, acc);
}

double jsd(const FeatureHistogram& p, const FeatureHistogram& q) {
  if (p.feature() != q.feature() || p.bins() != q.bins() || p.lo() != q.lo() || p.hi() != q.hi())
    throw std::invalid_argument("jsd: binning mismatch");
  return jsd_mass(p.normalized(), q.normalized());
}

std::array<double, kFeatureCount> feature_jsd(const FeatureSamples& a, const FeatureSamples& b) {
  std::array<double, kFeatureCount> out;
  for (int i = 0; i < kFeatureCount; ++i) {
    const Feature f = static_cast<Feature>(i);
    if (a.stream(f).empty() || b.stream(f).empty()) {
      out[static_cast<std::size_t>(i)] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    FeatureHistogram hp(f), hq(f);
    hp.add_all(a.stream(f));
    hq.add_all(b.stream(f));
    out[static_cast<std::size_t>(i)] = jsd(hp, hq);
  }
  return out;
}

double nearest_object_distance(const world::Scene& scene, int agent) {
  double best = std::numeric_limits<double>::infinity();
  const geom::OrientedBox mine = rewards::agent_box(scene, agent);
  for (int j = 0; j < static_cast<int>(scene.states.size()); ++j) {
    if (j == agent) continue;
    best = std::min(best, rewards::minkowski_signed_distance(mine, rewards::agent_box(scene, j)));
  }
  return best;
}

namespace {

geom::Vec2 velocity_of(const world::AgentState& s) {
  return {s.v * std::cos(s.psi), s.v * std::sin(s.psi)};
}

// First time the moving box (velocity `rel`, heading fixed) overlaps the fixed
// one, or `cap` if never. The signed distance is 1-Lipschitz in the relative
// displacement, so marching by distance / speed cannot step over a crossing;
// the floor keeps the march from stalling at grazing contact.
double first_overlap(const geom::OrientedBox& moving, geom::Vec2 rel, const geom::OrientedBox& fixed,
                     double cap) {
  auto dist = [&](double tau) {
    geom::OrientedBox b = moving;
    b.center.x += rel.x * tau;
    b.center.y += rel.y * tau;
    return rewards::minkowski_signed_distance(b, fixed);
  };
  double d = dist(0.0);
  if (d < 0.0) return 0.0;
  const double speed = geom::norm(rel);
  if (speed < 1e-12) return cap;
  double t_lo = 0.0;
  while (true) {
    if (d > (cap - t_lo) * speed) return cap;  // cannot close the gap in time
    double t_hi = std::min(t_lo + std::max(kTtcMarchFloor, d / speed), cap);
    const double dh = dist(t_hi);
    if (dh < 0.0) {
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (t_lo + t_hi);
        (dist(mid) < 0.0 ? t_hi : t_lo) = mid;
      }
      return t_hi;
    }
    if (t_hi >= cap) return cap;
    t_lo = t_hi;
    d = dh;
  }
}

}  // namespace

double time_to_collision(const world::Scene& scene, int agent, double cap) {
  const geom::OrientedBox mine = rewards::agent_box(scene, agent);
  const geom::Vec2 v_me = velocity_of(scene.states[static_cast<std::size_t>(agent)]);
  double best = cap;
  for (int j = 0; j < static_cast<int>(scene.states.size()); ++j) {
    if (j == agent) continue;
    const geom::Vec2 rel = v_me - velocity_of(scene.states[static_cast<std::size_t>(j)]);
    best = std::min(best, first_overlap(mine, rel, rewards::agent_box(scene, j), best));
    if (best <= 0.0) return 0.0;
  }
  return best;
}

std::string histogram_csv(const FeatureHistogram& h) {
  std::ostringstream os;
  os << "bin_lo,bin_hi,mass\n";
  const std::vector<double> mass = h.normalized();
  const double w = (h.hi() - h.lo()) / static_cast<double>(h.bins());
  for (int b = 0; b < h.bins(); ++b) {
    os << (h.lo() + w * b) << "," << (h.lo() + w * (b + 1)) << ","
       << mass[static_cast<std::size_t>(b)] << "\n";
  }
  return os.str();
}

}  // namespace drivesim::metrics
