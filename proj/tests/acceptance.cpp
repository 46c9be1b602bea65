// Acceptance gate: seven end-to-end criteria covering gradients, geometry,
// the multiplier solver, the sensitivity bounds, metrics, a training smoke
// run and determinism. Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails. Tolerances and runtime budgets are pinned here.
//
// Run a subset with explicit criterion numbers: `acceptance 1 3 7`.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "drivesim/checkpoint.hpp"
#include "drivesim/metrics.hpp"
#include "drivesim/multipliers.hpp"
#include "drivesim/objectives.hpp"
#include "drivesim/policy.hpp"
#include "drivesim/rewards.hpp"
#include "drivesim/scenario.hpp"
#include "drivesim/synth.hpp"
#include "drivesim/trainer.hpp"
#include "drivesim/world.hpp"

using namespace drivesim;

namespace {

double now_s() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

struct Outcome {
  bool pass = true;
  std::string details;

  void fail(const std::string& why) {
    pass = false;
    if (!details.empty()) details += "; ";
    details += why;
  }
  void note(const std::string& what) {
    if (!details.empty()) details += "; ";
    details += what;
  }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// ------------------------------------------------------------- criterion 1
// Gradient suite: tape ops, kinematic Jacobians, box-distance gradient and a
// full three-step single-vehicle closed-loop rollout, all against central
// finite differences.

// Random magnitude clear of every kink in the composite expression below
// (relu at 0, huber knee at 0.7, clamp edges beyond 0.9).
double safe_value(Rng& rng) {
  for (;;) {
    const double m = rng.uniform(0.1, 0.9);
    if (m > 0.6 && m < 0.8) continue;
    return rng.uniform() < 0.5 ? -m : m;
  }
}

// One scalar expression touching every differentiable tape operation.
double composite_loss(const ad::Tensor& xt, const ad::Tensor& mt, const ad::Tensor& wt,
                      ad::Tape& tape, ad::Var* out_x, ad::Var* out_m, ad::Var* out_w) {
  using namespace ad;
  Var x = tape.leaf(xt);
  Var m = tape.leaf(mt);
  Var wv = tape.leaf(wt);
  Var w = reshape(wv, {4, 3});

  Var loss = sum(mul(softmax(x), x));
  loss = loss + mean(relu(x));
  loss = loss + sum(square(matmul(m, w)));
  loss = loss + sum(gather_row(m, 1)) + scale(pick(x, 2), 2.0);
  loss = loss + norm2(concat({slice(x, 0, 3), slice(x, 3, 5)}));
  loss = loss + sum(transpose(m));
  loss = loss + min_all(x) + max_all(x) + sum(col_max(m));
  loss = loss + sum(log_softmax(slice(x, 2, 4)));
  loss = loss + sum(square(stack_rows({slice(x, 0, 4), slice(x, 4, 4)})));
  loss = loss + sum(stack_cols({gather_row(m, 0), gather_row(m, 2)}));
  loss = loss + sum(slice_rows(m, 0, 2)) + sum(slice_cols(m, 1, 2));

  Var t = mul(tanh(x), sigmoid(x));
  t = t + mul(sin(x), cos(x));
  t = t + mul(exp(clamp(x, -1.5, 1.5)), log(add_const(square(x), 1.0)));
  t = t - sqrt(add_const(square(x), 0.5));
  t = t + mul(atan(x), huber(x, 0.7));
  t = t + atan2(x, add_const(square(x), 1.0));
  t = t + tan(scale(x, 0.5));
  t = t + cmin(x, 0.95) + cmax(x, -0.95);
  t = t + div(x, add_const(square(x), 2.0));
  loss = loss + sum(t);

  tape.backward(loss);
  if (out_x) *out_x = x;
  if (out_m) *out_m = m;
  if (out_w) *out_w = wv;
  return loss.scalar();
}

double check_tape_ops(std::uint64_t seed, int* checks) {
  Rng rng(seed);
  double max_rel = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    ad::Tensor x = ad::Tensor::zeros({8}), m = ad::Tensor::zeros({3, 4}),
               w = ad::Tensor::zeros({12});
    for (auto* t : {&x, &m, &w})
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = safe_value(rng);

    ad::Tape tape;
    ad::Var vx, vm, vw;
    composite_loss(x, m, w, tape, &vx, &vm, &vw);
    const ad::Tensor gx = tape.grad(vx), gm = tape.grad(vm), gw = tape.grad(vw);

    const double h = 1e-6;
    auto run = [&](ad::Tensor& t, const ad::Tensor& g) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double keep = t[i];
        ad::Tape up_tape, dn_tape;
        t[i] = keep + h;
        const double up = composite_loss(x, m, w, up_tape, nullptr, nullptr, nullptr);
        t[i] = keep - h;
        const double dn = composite_loss(x, m, w, dn_tape, nullptr, nullptr, nullptr);
        t[i] = keep;
        const double fd = (up - dn) / (2.0 * h);
        max_rel = std::max(max_rel, std::fabs(g[i] - fd) / std::max(1.0, std::fabs(fd)));
        ++*checks;
      }
    };
    run(x, gx);
    run(m, gm);
    run(w, gw);
  }
  return max_rel;
}

double check_kinematic_jacobians(std::uint64_t seed, int* checks) {
  Rng rng(seed);
  const world::KinematicParams kp;
  const double h = 1e-6;
  double max_rel = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const double length = rng.uniform(3.5, 5.5);
    world::AgentState s{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-kPi, kPi),
                        rng.uniform(1.0, 12.0)};
    world::Action a;
    a.u0 = rng.uniform(-0.9 * kp.max_accel, 0.9 * kp.max_accel);
    a.u1 = rng.uniform(-0.9 * kp.max_steer, 0.9 * kp.max_steer);
    if (s.v + a.u0 * kp.dt < 0.05) continue;  // keep the standstill clamp inactive

    auto step = [&](const world::AgentState& st, const world::Action& ac) {
      return world::step_bicycle<double>({st.x, st.y, st.psi, st.v}, ac.u0, ac.u1, length, kp);
    };
    const auto js = world::bicycle_state_jacobian(s, a, length, kp);
    const auto ja = world::bicycle_action_jacobian(s, a, length, kp);
    for (int col = 0; col < 4; ++col) {
      world::AgentState up = s, dn = s;
      double* pu = col == 0 ? &up.x : col == 1 ? &up.y : col == 2 ? &up.psi : &up.v;
      double* pd = col == 0 ? &dn.x : col == 1 ? &dn.y : col == 2 ? &dn.psi : &dn.v;
      *pu += h;
      *pd -= h;
      const auto su = step(up, a), sd = step(dn, a);
      const double fd[4] = {(su.x - sd.x) / (2 * h), (su.y - sd.y) / (2 * h),
                            wrap_angle(su.psi - sd.psi) / (2 * h), (su.v - sd.v) / (2 * h)};
      for (int row = 0; row < 4; ++row) {
        const double g = js[static_cast<std::size_t>(row * 4 + col)];
        max_rel = std::max(max_rel, std::fabs(g - fd[row]) / std::max(1.0, std::fabs(fd[row])));
        ++*checks;
      }
    }
    for (int col = 0; col < 2; ++col) {
      world::Action up = a, dn = a;
      (col == 0 ? up.u0 : up.u1) += h;
      (col == 0 ? dn.u0 : dn.u1) -= h;
      const auto su = step(s, up), sd = step(s, dn);
      const double fd[4] = {(su.x - sd.x) / (2 * h), (su.y - sd.y) / (2 * h),
                            wrap_angle(su.psi - sd.psi) / (2 * h), (su.v - sd.v) / (2 * h)};
      for (int row = 0; row < 4; ++row) {
        const double g = ja[static_cast<std::size_t>(row * 2 + col)];
        max_rel = std::max(max_rel, std::fabs(g - fd[row]) / std::max(1.0, std::fabs(fd[row])));
        ++*checks;
      }
    }
  }
  return max_rel;
}

// Signed-distance gradient. The looser tolerance covers curvature of the
// distance field; configurations whose support vertex switches inside the
// stencil (detected with a second, smaller step) are excluded.
double check_minkowski_grad(std::uint64_t seed, int* checks) {
  Rng rng(seed);
  const double h = 1e-6;
  double max_rel = 0.0;
  for (int trial = 0; trial < 150; ++trial) {
    double p[6] = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-kPi, kPi),
                   rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-kPi, kPi)};
    const double la = rng.uniform(1, 5), wa = rng.uniform(1, 3);
    const double lb = rng.uniform(1, 5), wb = rng.uniform(1, 3);
    auto plain = [&](const double* q) {
      return rewards::minkowski_signed_distance(
          {{q[0], q[1]}, q[2], 0.5 * la, 0.5 * wa}, {{q[3], q[4]}, q[5], 0.5 * lb, 0.5 * wb});
    };
    ad::Tape tape;
    ad::Scalar s[6];
    for (int i = 0; i < 6; ++i) s[i] = {tape.scalar_leaf(p[i])};
    const ad::Scalar d = rewards::minkowski_signed_distance_traced(
        {s[0], s[1], s[2], 0.5 * la, 0.5 * wa}, {s[3], s[4], s[5], 0.5 * lb, 0.5 * wb});
    tape.backward(d.v);
    for (int i = 0; i < 6; ++i) {
      const double keep = p[i];
      p[i] = keep + h;
      const double up = plain(p);
      p[i] = keep - h;
      const double dn = plain(p);
      p[i] = keep + 0.1 * h;
      const double up2 = plain(p);
      p[i] = keep - 0.1 * h;
      const double dn2 = plain(p);
      p[i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double fd2 = (up2 - dn2) / (0.2 * h);
      if (std::fabs(fd - fd2) > 1e-4 * std::max(1.0, std::fabs(fd))) continue;
      const double g = tape.grad(s[i].v)[0];
      max_rel = std::max(max_rel, std::fabs(g - fd) / std::max(1.0, std::fabs(fd)));
      ++*checks;
    }
  }
  return max_rel;
}

// Full rollout gradient on a single-vehicle road, horizon three. The
// index-selection head trains through a straight-through surrogate whose
// backward intentionally differs from the piecewise-constant forward, so
// finite differences validate the smooth groups: low-level and codebooks.
double check_rollout_grad(int* checks) {
  synth::GenerateOptions opt;
  opt.count = 1;
  opt.seed = 2;  // single vehicle
  opt.horizon = 3;
  const world::Scenario sc = synth::generate_scenarios("straight", opt)[0];
  if (sc.agents.size() != 1) throw std::logic_error("expected a single-vehicle scenario");

  Rng rng(11);
  policy::ParamStore params;
  const policy::PolicyConfig pcfg = policy::PolicyConfig{}.scaled(0.125);
  policy::init_policy_params(params, pcfg, rng);
  objectives::RolloutConfig rcfg;

  Rng roll_rng(12);
  objectives::Rollout ro = objectives::rollout_closed_loop(sc, params, pcfg, rcfg, roll_rng);
  const std::vector<objectives::GateSample> gates = ro.gates;
  const std::vector<double> grad = objectives::parameter_gradient(ro, +1.0);

  auto value_at = [&](policy::ParamStore& store) {
    Rng dummy(0);  // unused: the gate replay substitutes the recorded noise
    return objectives::rollout_closed_loop(sc, store, pcfg, rcfg, dummy, &gates).value;
  };
  std::vector<std::size_t> smooth;
  {
    std::size_t off = 0;
    for (const auto& e : params.entries()) {
      if (e.name.rfind("ll.", 0) == 0 || e.name.rfind("cb.", 0) == 0)
        for (std::size_t i = 0; i < e.value.size(); ++i) smooth.push_back(off + i);
      off += e.value.size();
    }
  }
  const double h = 1e-6;
  double max_rel = 0.0;
  for (int k = 0; k < 24; ++k) {
    const std::size_t flat = smooth[(smooth.size() * static_cast<std::size_t>(2 * k + 1)) / 48];
    std::size_t offset = flat, entry = 0;
    while (offset >= params.entries()[entry].value.size()) {
      offset -= params.entries()[entry].value.size();
      ++entry;
    }
    double& slot = params.entries()[entry].value.vec()[offset];
    const double keep = slot;
    slot = keep + h;
    const double up = value_at(params);
    slot = keep - h;
    const double dn = value_at(params);
    slot = keep;
    const double fd = (up - dn) / (2 * h);
    max_rel = std::max(max_rel, std::fabs(grad[flat] - fd) / std::max(1.0, std::fabs(fd)));
    ++*checks;
  }
  return max_rel;
}

Outcome criterion_gradients() {
  Outcome out;
  int n_ops = 0, n_kin = 0, n_geo = 0, n_roll = 0;
  const double r_ops = check_tape_ops(5, &n_ops);
  const double r_kin = check_kinematic_jacobians(6, &n_kin);
  const double r_geo = check_minkowski_grad(7, &n_geo);
  const double r_roll = check_rollout_grad(&n_roll);
  if (r_ops > 1e-5) out.fail(fmt("tape ops rel %.2e > 1e-5", r_ops));
  if (r_kin > 1e-5) out.fail(fmt("kinematics rel %.2e > 1e-5", r_kin));
  if (r_geo > 1e-4) out.fail(fmt("geometry rel %.2e > 1e-4", r_geo));
  if (r_roll > 1e-5) out.fail(fmt("rollout rel %.2e > 1e-5", r_roll));
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "ops %.1e/%d, kinematics %.1e/%d, geometry %.1e/%d, rollout %.1e/%d", r_ops, n_ops,
                r_kin, n_kin, r_geo, n_geo, r_roll, n_roll);
  out.note(buf);
  return out;
}

// ------------------------------------------------------------- criterion 2
// Signed box distance against a dense boundary-sampling oracle and a
// separating-axis sign reference on ten thousand random pairs.

bool sat_disjoint(const geom::OrientedBox& a, const geom::OrientedBox& b) {
  auto ca = a.corners();
  auto cb = b.corners();
  std::vector<geom::Vec2> axes = {{std::cos(a.heading), std::sin(a.heading)},
                                  {-std::sin(a.heading), std::cos(a.heading)},
                                  {std::cos(b.heading), std::sin(b.heading)},
                                  {-std::sin(b.heading), std::cos(b.heading)}};
  for (geom::Vec2 ax : axes) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (auto p : ca) {
      double d = dot(p, ax);
      amin = std::min(amin, d);
      amax = std::max(amax, d);
    }
    for (auto p : cb) {
      double d = dot(p, ax);
      bmin = std::min(bmin, d);
      bmax = std::max(bmax, d);
    }
    if (amax < bmin || bmax < amin) return true;
  }
  return false;
}

// The difference polygon is rebuilt by a support-function walk over the
// exact normal fan (every edge normal of the difference set is an edge
// normal of one of the boxes, so probing the support between consecutive
// normals enumerates the true vertex cycle); its boundary is then sampled
// densely with bracket refinement. The sign comes from the separating-axis
// test.
double oracle_signed_distance(const geom::OrientedBox& a, const geom::OrientedBox& b) {
  auto ca = a.corners();
  auto cb = b.corners();
  geom::Vec2 diffs[16];
  int nd = 0;
  for (auto pa : ca)
    for (auto pb : cb) diffs[nd++] = pa - pb;

  std::vector<double> normals;
  for (int k = 0; k < 4; ++k) {
    normals.push_back(std::fmod(a.heading + 0.5 * kPi * k + 4.0 * kPi, 2.0 * kPi));
    normals.push_back(std::fmod(b.heading + 0.5 * kPi * k + 4.0 * kPi, 2.0 * kPi));
  }
  std::sort(normals.begin(), normals.end());

  std::vector<geom::Vec2> poly;
  for (std::size_t k = 0; k < normals.size(); ++k) {
    const double next = k + 1 < normals.size() ? normals[k + 1] : normals[0] + 2.0 * kPi;
    const double th = 0.5 * (normals[k] + next);
    geom::Vec2 dir{std::cos(th), std::sin(th)};
    int arg = 0;
    double best = -1e300;
    for (int i = 0; i < 16; ++i) {
      double d = dot(diffs[i], dir);
      if (d > best) {
        best = d;
        arg = i;
      }
    }
    geom::Vec2 p = diffs[arg];
    if (poly.empty() || poly.back().x != p.x || poly.back().y != p.y) poly.push_back(p);
  }
  if (poly.size() > 1 && poly.front().x == poly.back().x && poly.front().y == poly.back().y)
    poly.pop_back();

  // Coarse pass: proportional sampling along each edge.
  double perim = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i)
    perim += geom::norm(poly[(i + 1) % poly.size()] - poly[i]);
  double best = 1e300;
  std::size_t best_edge = 0;
  double best_t = 0.0;
  int best_m = 2;
  const int total = 4096;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    geom::Vec2 u = poly[i], w = poly[(i + 1) % poly.size()];
    double len = geom::norm(w - u);
    int m = std::max(2, static_cast<int>(total * len / std::max(perim, 1e-12)));
    for (int s = 0; s <= m; ++s) {
      double t = static_cast<double>(s) / m;
      geom::Vec2 p{u.x + t * (w.x - u.x), u.y + t * (w.y - u.y)};
      double d = geom::norm(p);
      if (d < best) {
        best = d;
        best_edge = i;
        best_t = t;
        best_m = m;
      }
    }
  }

  // Refinement: resample shrinking brackets on one edge; the bracket starts
  // one coarse step wide so the continuum minimum cannot escape it.
  auto refine_edge = [&](geom::Vec2 u, geom::Vec2 w, double c0, double span0) {
    double c = c0, span = span0;
    for (int round = 0; round < 24; ++round) {
      const double a0 = std::max(0.0, c - span), b0 = std::min(1.0, c + span);
      double local = 1e300, local_t = c;
      for (int s = 0; s <= 32; ++s) {
        double t = a0 + (b0 - a0) * s / 32.0;
        geom::Vec2 p{u.x + t * (w.x - u.x), u.y + t * (w.y - u.y)};
        double d = geom::norm(p);
        if (d < local) {
          local = d;
          local_t = t;
        }
      }
      best = std::min(best, local);
      c = local_t;
      span /= 8.0;
      if (span * geom::norm(w - u) < 1e-14) break;
    }
  };
  // The best edge around its coarse argmin, both neighbours over their full
  // range in case the minimum sits at a shared vertex.
  for (std::size_t off = poly.size() - 1; off <= poly.size() + 1; ++off) {
    std::size_t i = (best_edge + off) % poly.size();
    geom::Vec2 u = poly[i], w = poly[(i + 1) % poly.size()];
    if (i == best_edge)
      refine_edge(u, w, best_t, 1.0 / best_m);
    else
      refine_edge(u, w, 0.5, 0.5);
  }
  return (sat_disjoint(a, b) ? 1.0 : -1.0) * best;
}

Outcome criterion_geometry() {
  Outcome out;
  Rng rng(21);
  const int kPairs = 10000;
  double max_diff = 0.0;
  int sign_ok = 0, overlapping = 0;
  for (int k = 0; k < kPairs; ++k) {
    geom::OrientedBox a{{rng.uniform(-4, 4), rng.uniform(-4, 4)}, rng.uniform(-kPi, kPi),
                        0.5 * rng.uniform(1, 6), 0.5 * rng.uniform(0.5, 3)};
    geom::OrientedBox b{{rng.uniform(-4, 4), rng.uniform(-4, 4)}, rng.uniform(-kPi, kPi),
                        0.5 * rng.uniform(1, 6), 0.5 * rng.uniform(0.5, 3)};
    const double got = rewards::minkowski_signed_distance(a, b);
    const double want = oracle_signed_distance(a, b);
    max_diff = std::max(max_diff, std::fabs(got - want));
    const bool disjoint = sat_disjoint(a, b);
    if ((got > 0.0) == disjoint) ++sign_ok;
    if (!disjoint) ++overlapping;
  }
  if (max_diff > 1e-6) out.fail(fmt("max |value - oracle| %.2e > 1e-6", max_diff));
  if (sign_ok != kPairs) out.fail(fmt("sign agreement %g/%g", sign_ok, kPairs));
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d pairs (%d overlapping), max diff %.1e, signs %d/%d", kPairs,
                overlapping, max_diff, sign_ok, kPairs);
  out.note(buf);
  return out;
}

// ------------------------------------------------------------- criterion 3
// Multiplier solver on a thousand random full-rank tall matrices: the
// orthogonalized frame is orthonormal, the rescaled projection residual is at
// solver precision, and an already-orthonormal input returns the preference
// weights unchanged.

Outcome criterion_multipliers() {
  Outcome out;
  Rng rng(31);
  const std::array<double, 3> omega{0.6, 0.3, 0.1};
  double worst_ortho = 0.0, worst_res = 0.0, worst_lambda = 0.0;
  const int kTrials = 1000;
  for (int trial = 0; trial < kTrials; ++trial) {
    const int n = 3 + static_cast<int>(rng.index(510));  // 3..512
    multipliers::GradientMatrix g;
    g.elbo_cl.resize(n);
    g.elbo_ol.resize(n);
    g.rl.resize(n);
    for (int i = 0; i < n; ++i) {
      g.elbo_cl[i] = rng.normal();
      g.elbo_ol[i] = rng.normal();
      g.rl[i] = rng.normal();
    }
    const auto sol = multipliers::solve_multipliers(g, omega);
    if (sol.retained != 3) {
      out.fail(fmt("column dropped at trial %g", trial));
      continue;
    }
    // G*'G* against the identity.
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += sol.gstar[3 * i + r] * sol.gstar[3 * i + c];
        worst_ortho = std::max(worst_ortho, std::fabs(s - (r == c ? 1.0 : 0.0)));
      }
    worst_res = std::max(worst_res, sol.residual / std::max(sol.target_norm, 1e-300));

    // Orthonormalize the same columns (Gram-Schmidt) and resolve: the
    // multipliers must come back as the preference weights themselves.
    std::vector<std::array<double, 3>> q(n);
    std::array<const std::vector<double>*, 3> cols{&g.elbo_cl, &g.elbo_ol, &g.rl};
    for (int c = 0; c < 3; ++c) {
      std::vector<double> v(n);
      for (int i = 0; i < n; ++i) v[i] = (*cols[c])[i];
      for (int p = 0; p < c; ++p) {
        double d = 0.0;
        for (int i = 0; i < n; ++i) d += v[i] * q[i][p];
        for (int i = 0; i < n; ++i) v[i] -= d * q[i][p];
      }
      double nn = 0.0;
      for (int i = 0; i < n; ++i) nn += v[i] * v[i];
      nn = std::sqrt(nn);
      for (int i = 0; i < n; ++i) q[i][c] = v[i] / nn;
    }
    multipliers::GradientMatrix go;
    go.elbo_cl.resize(n);
    go.elbo_ol.resize(n);
    go.rl.resize(n);
    for (int i = 0; i < n; ++i) {
      go.elbo_cl[i] = q[i][0];
      go.elbo_ol[i] = q[i][1];
      go.rl[i] = q[i][2];
    }
    const auto so = multipliers::solve_multipliers(go, omega);
    for (int c = 0; c < 3; ++c)
      worst_lambda = std::max(worst_lambda, std::fabs(so.lambda[c] - omega[c]));
  }
  if (worst_ortho > 1e-10) out.fail(fmt("orthonormality error %.2e > 1e-10", worst_ortho));
  if (worst_res > 1e-8) out.fail(fmt("residual ratio %.2e > 1e-8", worst_res));
  if (worst_lambda > 1e-12) out.fail(fmt("orthonormal-case lambda error %.2e > 1e-12", worst_lambda));
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "%d solves, orthonormality %.1e, residual ratio %.1e, lambda %.1e", kTrials,
                worst_ortho, worst_res, worst_lambda);
  out.note(buf);
  return out;
}

// ------------------------------------------------------------- criterion 4
// Sensitivity structure on two-vehicle closed-loop rollouts: the measured
// state-to-state spectral norms respect the exponential bound, a policy with
// a zeroed low-level head reproduces the analytic kinematic Jacobian chain,
// and the norm growth curve is monotone under a random initialization.

// Flat field between two distant road edges; vehicles cruise straight from
// their start states.
world::Scenario open_field(const std::vector<world::AgentState>& starts, int horizon) {
  world::Scenario sc;
  sc.name = "field";
  sc.horizon = horizon;
  world::MapPolyline lane;
  lane.type = world::MapFeatureType::kLaneCenter;
  for (int i = 0; i <= 50; ++i) lane.pts.push_back({-40.0 + 4.0 * i, 0.0});
  world::MapPolyline bottom;
  bottom.type = world::MapFeatureType::kRoadEdge;
  for (int i = 0; i <= 50; ++i) bottom.pts.push_back({-40.0 + 4.0 * i, -8.0});
  world::MapPolyline top;
  top.type = world::MapFeatureType::kRoadEdge;
  for (int i = 50; i >= 0; --i) top.pts.push_back({-40.0 + 4.0 * i, 8.0});
  sc.map.polylines = {lane, bottom, top};
  sc.map.lanes.push_back({0, {}});
  sc.map.rebuild_caches();

  for (const world::AgentState& s0 : starts) {
    world::AgentSpec spec;
    spec.type = world::AgentType::kVehicle;
    spec.controlled = true;
    for (int t = 0; t <= sc.last_step() + 1; ++t) {
      world::AgentState s = s0;
      s.x += s0.v * std::cos(s0.psi) * sc.dt * t;
      s.y += s0.v * std::sin(s0.psi) * sc.dt * t;
      spec.logged.push_back(s);
    }
    sc.agents.push_back(spec);
  }
  return sc;
}

void zero_group(policy::ParamStore& store, const std::string& prefix) {
  for (auto& e : store.entries())
    if (e.name.rfind(prefix, 0) == 0)
      for (double& x : e.value.vec()) x = 0.0;
}

Outcome criterion_sensitivity() {
  Outcome out;
  const int T = 8;
  const policy::PolicyConfig pcfg = policy::PolicyConfig{}.scaled(0.125);
  objectives::RolloutConfig rcfg;
  rcfg.instant_obs = true;
  rcfg.memoryless = true;
  rcfg.hold_latent = true;

  auto random_scene = [&](Rng& rng) {
    std::vector<world::AgentState> starts;
    for (int i = 0; i < 2; ++i)
      starts.push_back({rng.uniform(-15, 15), rng.uniform(-5, 5), rng.uniform(-kPi, kPi),
                        rng.uniform(1.0, 10.0)});
    return open_field(starts, T);
  };

  // (a) bound and (c) monotone growth over one hundred random rollouts.
  double worst_margin = -1e300;
  int monotone_ok = 0, bound_ok = 0;
  const int kTrials = 100;
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(1000 + trial);
    world::Scenario sc = random_scene(rng);
    policy::ParamStore params;
    policy::init_policy_params(params, pcfg, rng);
    Rng roll_rng(2000 + trial);
    objectives::Rollout ro = objectives::rollout_rl(sc, params, pcfg, rcfg, roll_rng);
    const auto rep = objectives::gradient_diagnostics(ro);
    if (rep.bound_satisfied()) ++bound_ok;
    for (std::size_t i = 0; i < rep.cross_norm.size(); ++i)
      worst_margin = std::max(worst_margin, rep.cross_norm[i] - rep.cross_bound[i]);
    bool mono = true;
    for (std::size_t d = 1; d < rep.growth_max.size(); ++d)
      if (rep.growth_max[d] < rep.growth_max[d - 1] - 1e-9) mono = false;
    if (mono) ++monotone_ok;
  }
  if (bound_ok != kTrials) out.fail(fmt("bound violated on %g of %g rollouts",
                                        kTrials - bound_ok, kTrials));
  if (monotone_ok != kTrials)
    out.fail(fmt("growth not monotone on %g of %g rollouts", kTrials - monotone_ok, kTrials));

  // (b) zeroed low-level head: the measured cross blocks equal the bare
  // kinematic Jacobian chain.
  double worst_zero = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(3000 + trial);
    world::Scenario sc = random_scene(rng);
    policy::ParamStore params;
    policy::init_policy_params(params, pcfg, rng);
    zero_group(params, "ll.");
    Rng roll_rng(4000 + trial);
    objectives::Rollout ro = objectives::rollout_rl(sc, params, pcfg, rcfg, roll_rng);
    const auto rep = objectives::gradient_diagnostics(ro);

    // Per-step block-diagonal state Jacobians from the recorded scenes.
    const int C = static_cast<int>(ro.controlled.size());
    const int dim = 4 * C;
    std::vector<std::vector<double>> step_jac(T, std::vector<double>(dim * dim, 0.0));
    for (int k = 0; k < T; ++k) {
      for (int c = 0; c < C; ++c) {
        const int i = ro.controlled[c];
        const world::AgentState s = ro.steps[k].scene.states[i];
        const world::Action act = ro.steps[k].actions[c];
        if (std::fabs(act.u0) > 0.0 || std::fabs(act.u1) > 0.0)
          throw std::logic_error("zeroed head still produced an action");
        const auto j =
            world::bicycle_state_jacobian(s, act, sc.agents[i].length, rcfg.kin);
        for (int r = 0; r < 4; ++r)
          for (int q = 0; q < 4; ++q)
            step_jac[k][(4 * c + r) * dim + (4 * c + q)] = j[static_cast<std::size_t>(r * 4 + q)];
      }
    }
    auto matmul_sq = [dim](const std::vector<double>& a, const std::vector<double>& b) {
      std::vector<double> r(a.size(), 0.0);
      for (int i = 0; i < dim; ++i)
        for (int k2 = 0; k2 < dim; ++k2) {
          const double av = a[i * dim + k2];
          if (av == 0.0) continue;
          for (int j = 0; j < dim; ++j) r[i * dim + j] += av * b[k2 * dim + j];
        }
      return r;
    };
    for (int j = 0; j < T; ++j) {
      std::vector<double> prod(dim * dim, 0.0);
      for (int i = 0; i < dim; ++i) prod[i * dim + i] = 1.0;
      for (int t = j + 1; t <= T; ++t) {
        prod = matmul_sq(step_jac[t - 1], prod);
        const ad::Tensor& got = rep.cross[static_cast<std::size_t>(rep.cross_index(t, j))];
        for (int e = 0; e < dim * dim; ++e)
          worst_zero = std::max(worst_zero, std::fabs(got[static_cast<std::size_t>(e)] - prod[e]));
      }
    }
  }
  if (worst_zero > 1e-8) out.fail(fmt("zero-policy chain error %.2e > 1e-8", worst_zero));

  char buf[200];
  std::snprintf(buf, sizeof buf,
                "%d rollouts, bound margin %.1e, monotone %d/%d, zero-policy %.1e", kTrials,
                worst_margin, monotone_ok, kTrials, worst_zero);
  out.note(buf);
  return out;
}

// ------------------------------------------------------------- criterion 5
// Metric identities: the displacement averages are ordered on random
// batches, the crossed-error construction hits (0, 1, 1) exactly, and the
// divergence is zero on identical histograms and one on disjoint ones.

world::Scenario bare_scenario(int n, int log_len, double spacing = 50.0) {
  world::Scenario sc;
  sc.name = "bare";
  sc.init_steps = 1;
  sc.horizon = log_len;
  for (int i = 0; i < n; ++i) {
    world::AgentSpec spec;
    spec.logged.assign(static_cast<std::size_t>(log_len),
                       {spacing * static_cast<double>(i), 0.0, 0.0, 0.0});
    sc.agents.push_back(spec);
  }
  return sc;
}

metrics::EvalBatch batch_from_log(const world::Scenario& sc, std::vector<int> agents, int K,
                                  int T) {
  metrics::EvalBatch b;
  b.scenario = &sc;
  b.agents = std::move(agents);
  for (int k = 0; k < K; ++k) {
    metrics::RolloutTrack r;
    for (int id : b.agents) {
      std::vector<world::AgentState> track;
      for (int t = 0; t <= T; ++t)
        track.push_back(world::logged_state_at(sc.agents[static_cast<std::size_t>(id)], t));
      r.states.push_back(std::move(track));
    }
    b.rollouts.push_back(std::move(r));
  }
  return b;
}

Outcome criterion_metrics() {
  Outcome out;
  Rng rng(41);
  const int kBatches = 1000;
  int ordered = 0;
  for (int trial = 0; trial < kBatches; ++trial) {
    const int N = 1 + static_cast<int>(rng.index(3));
    const int K = 1 + static_cast<int>(rng.index(5));
    const int T = 2 + static_cast<int>(rng.index(5));
    world::Scenario sc = bare_scenario(N, T + 2);
    for (auto& a : sc.agents)
      for (auto& s : a.logged) {
        s.x += rng.uniform(-20, 20);
        s.y += rng.uniform(-20, 20);
      }
    std::vector<int> ids(N);
    for (int i = 0; i < N; ++i) ids[i] = i;
    metrics::EvalBatch b = batch_from_log(sc, ids, K, T);
    for (auto& r : b.rollouts)
      for (auto& track : r.states)
        for (auto& s : track) {
          s.x += rng.uniform(-3.0, 3.0);
          s.y += rng.uniform(-3.0, 3.0);
        }
    const auto m = metrics::reconstruction_metrics(b);
    if (m.min_ade <= m.min_sade + 1e-12 && m.min_sade <= m.ade + 1e-12) ++ordered;
  }
  if (ordered != kBatches) out.fail(fmt("ordering broken on %g batches", kBatches - ordered));

  // Crossed errors: rollout 0 nails agent 0 and misses agent 1 by two
  // meters, rollout 1 swaps them.
  {
    world::Scenario sc = bare_scenario(2, 8);
    metrics::EvalBatch b = batch_from_log(sc, {0, 1}, 2, 4);
    for (auto& s : b.rollouts[0].states[1]) s.y += 2.0;
    for (auto& s : b.rollouts[1].states[0]) s.y += 2.0;
    const auto m = metrics::reconstruction_metrics(b);
    if (m.min_ade != 0.0 || m.min_sade != 1.0 || m.ade != 1.0)
      out.fail(fmt("crossed errors gave (%g, %g, %g), want (0, 1, 1)", m.min_ade, m.min_sade,
                   m.ade));
  }

  // Divergence identities on histograms over a shared range.
  {
    metrics::FeatureHistogram p(metrics::Feature::kLinearSpeed, 0.0, 1.0, 32);
    metrics::FeatureHistogram q(metrics::Feature::kLinearSpeed, 0.0, 1.0, 32);
    Rng hr(42);
    for (int i = 0; i < 1000; ++i) p.add(hr.uniform(0.0, 0.45));
    for (int i = 0; i < 1000; ++i) q.add(hr.uniform(0.55, 1.0));
    const double self = metrics::jsd(p, p);
    const double disjoint = metrics::jsd(p, q);
    if (self != 0.0) out.fail(fmt("self-divergence %g, want exactly 0", self));
    if (std::fabs(disjoint - 1.0) > 1e-12)
      out.fail(fmt("disjoint divergence %.15g, want 1", disjoint));
    char buf[120];
    std::snprintf(buf, sizeof buf, "%d batches ordered, crossed exact, jsd self %g / disjoint %g",
                  kBatches, self, disjoint);
    out.note(buf);
  }
  return out;
}

// ------------------------------------------------------------- criterion 6
// Training smoke test at desk scale. A 200-iteration run on a single-vehicle
// road halves the closed-loop reconstruction loss; on a two-agent crossing
// the reward gradient column is live in the logs, and a 2000-iteration run
// with the default preference weights ends with a strictly lower collision
// rate than the same run with the reward weight zeroed.

train::TrainConfig smoke_config() {
  train::TrainConfig cfg;
  cfg.batch = 1;
  cfg.learning_rate = 2e-3;
  cfg.validation_interval = 0;
  cfg.policy = cfg.policy.scaled(0.125);
  cfg.rollout.horizon = 12;
  cfg.seed = 7;
  return cfg;
}

Outcome criterion_training() {
  Outcome out;

  // (a) reconstruction drop on a single-vehicle road.
  {
    synth::GenerateOptions opt;
    opt.count = 1;
    opt.seed = 2;  // single vehicle
    const auto ds = synth::generate_scenarios("straight", opt);
    train::TrainConfig cfg = smoke_config();
    cfg.iterations = 200;
    const auto res = train::train(ds, {}, cfg);
    const int W = 10;
    double first = 0.0, last = 0.0;
    const int n = static_cast<int>(res.iterations.size());
    for (int i = 0; i < W; ++i) first += res.iterations[i].recon_cl / W;
    for (int i = n - W; i < n; ++i) last += res.iterations[i].recon_cl / W;
    if (!(last <= 0.5 * first))
      out.fail(fmt("recon %.3f -> %.3f, needs at least a halving", first, last));
    else
      out.note(fmt("recon %.2f -> %.2f", first, last));
  }

  // (b, c) two-agent crossing: live reward column, then the collision-rate
  // comparison between the default weights and a zeroed reward weight.
  {
    synth::GenerateOptions opt;
    opt.count = 1;
    opt.seed = 39;  // one vehicle, one pedestrian, close pass late in the log
    opt.horizon = 46;
    const auto ds = synth::generate_scenarios("crossing", opt);
    train::TrainConfig cfg = smoke_config();
    cfg.iterations = 2000;
    cfg.learning_rate = 3e-4;
    cfg.rollout.start_step = 30;  // aligned with the latent refresh interval

    const auto with_rl = train::train(ds, {}, cfg);
    int live = 0, ran = 0;
    for (const auto& it : with_rl.iterations)
      if (!it.skipped) {
        ++ran;
        if (it.grad_norms[2] > 0.0) ++live;
      }
    if (live != ran) out.fail(fmt("reward column zero on %g of %g iterations", ran - live, ran));

    train::TrainConfig cfg0 = cfg;
    cfg0.omega = {0.6, 0.3, 0.0};
    const auto no_rl = train::train(ds, {}, cfg0);

    auto collision_rate = [&](const policy::ParamStore& params) {
      Rng rng(12345);
      const auto batch = train::prior_rollouts(ds[0], params, cfg.policy, cfg.rollout, 64, rng);
      return metrics::infraction_rates(batch).collision;
    };
    const double rate_rl = collision_rate(with_rl.params);
    const double rate_no = collision_rate(no_rl.params);
    if (!(rate_rl < rate_no))
      out.fail(fmt("collision rate %.4f with the reward column vs %.4f without", rate_rl, rate_no));
    else
      out.note(fmt("reward column live, collisions %.3f < %.3f", rate_rl, rate_no));
  }
  return out;
}

// ------------------------------------------------------------- criterion 7
// Determinism: identical seed and configuration reproduce the checkpoint
// hash bit for bit, simulation dumps are byte-identical, and a checkpoint
// survives a save/load round trip into identical evaluations.

std::string dump_batch(const metrics::EvalBatch& batch) {
  std::string out = "rollout,agent,step,x,y,psi,v\n";
  char line[200];
  for (std::size_t r = 0; r < batch.rollouts.size(); ++r)
    for (std::size_t c = 0; c < batch.rollouts[r].states.size(); ++c)
      for (std::size_t t = 0; t < batch.rollouts[r].states[c].size(); ++t) {
        const auto& s = batch.rollouts[r].states[c][t];
        std::snprintf(line, sizeof line, "%zu,%d,%zu,%.17g,%.17g,%.17g,%.17g\n", r,
                      batch.agents[c], t, s.x, s.y, s.psi, s.v);
        out += line;
      }
  return out;
}

Outcome criterion_determinism() {
  Outcome out;
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "drivesim-acceptance";
  fs::create_directories(dir);

  synth::GenerateOptions opt;
  opt.count = 2;
  opt.seed = 5;
  const auto ds = synth::generate_scenarios("straight", opt);

  // (a) two identical training runs, one worker each.
  train::TrainConfig cfg = smoke_config();
  cfg.iterations = 20;
  cfg.rollout.horizon = 8;
  const auto run1 = train::train(ds, {}, cfg);
  const auto run2 = train::train(ds, {}, cfg);
  const std::uint64_t h1 = ckpt::param_hash(run1.params);
  const std::uint64_t h2 = ckpt::param_hash(run2.params);
  if (h1 != h2) out.fail("repeated training produced different checkpoint hashes");
  ckpt::save_params(run1.params, (dir / "a.bin").string());
  ckpt::save_params(run2.params, (dir / "b.bin").string());
  std::ifstream fa(dir / "a.bin", std::ios::binary), fb(dir / "b.bin", std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  if (ba != bb) out.fail("checkpoint files differ byte for byte");

  // (b) identical simulation dumps from a fresh parameter draw.
  policy::ParamStore params;
  Rng prng(3);
  policy::init_policy_params(params, cfg.policy, prng);
  objectives::RolloutConfig rcfg = cfg.rollout;
  std::string d1, d2;
  {
    Rng rng(9);
    d1 = dump_batch(train::prior_rollouts(ds[0], params, cfg.policy, rcfg, 4, rng));
  }
  {
    Rng rng(9);
    d2 = dump_batch(train::prior_rollouts(ds[0], params, cfg.policy, rcfg, 4, rng));
  }
  if (d1 != d2) out.fail("repeated simulation dumps differ");

  // (c) save, reload, evaluate: bit-exact metrics and hash.
  ckpt::save_params(params, (dir / "c.bin").string());
  policy::ParamStore reloaded = ckpt::read_params((dir / "c.bin").string());
  if (ckpt::param_hash(params) != ckpt::param_hash(reloaded))
    out.fail("reloaded checkpoint hash differs");
  auto eval_with = [&](const policy::ParamStore& p) {
    Rng rng(13);
    return train::evaluate_policy(ds, p, cfg.policy, rcfg, 4, rng);
  };
  const auto e1 = eval_with(params);
  const auto e2 = eval_with(reloaded);
  if (std::memcmp(&e1, &e2, sizeof e1) != 0) out.fail("evaluation after reload differs");

  char buf[120];
  std::snprintf(buf, sizeof buf, "hash %016llx reproduced, dump %zu bytes identical",
                static_cast<unsigned long long>(h1), d1.size());
  out.note(buf);
  fs::remove_all(dir);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  struct Entry {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> entries = {
      {1, "gradients", 120.0, criterion_gradients},
      {2, "geometry", 60.0, criterion_geometry},
      {3, "multipliers", 30.0, criterion_multipliers},
      {4, "sensitivity", 300.0, criterion_sensitivity},
      {5, "metrics", 60.0, criterion_metrics},
      {6, "training", 1800.0, criterion_training},
      {7, "determinism", 0.0, criterion_determinism},  // no pinned budget
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  bool all_ok = true;
  for (const auto& e : entries) {
    if (!wanted.empty() && !wanted.count(e.id)) continue;
    Outcome out;
    const double t0 = now_s();
    try {
      out = e.fn();
    } catch (const std::exception& ex) {
      out.fail(std::string("exception: ") + ex.what());
    }
    const double dt = now_s() - t0;
    if (e.budget_s > 0.0 && dt > e.budget_s)
      out.fail(fmt("over budget: %.1fs > %.0fs", dt, e.budget_s));
    std::printf("criterion %d (%s): %s  [%.1fs%s]  %s\n", e.id, e.name,
                out.pass ? "PASS" : "FAIL", dt,
                e.budget_s > 0.0 ? fmt(" of %.0fs", e.budget_s).c_str() : "",
                out.details.c_str());
    std::fflush(stdout);
    all_ok = all_ok && out.pass;
  }
  std::printf(all_ok ? "acceptance: all criteria passed\n" : "acceptance: FAILURES above\n");
  return all_ok ? 0 : 1;
}
