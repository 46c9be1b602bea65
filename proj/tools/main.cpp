// drivesim command line: scenario generation, training, evaluation, rollout
// dumps, gradient checking and gradient diagnostics. Every subcommand takes
// its randomness from one --seed flag; options can also come from an INI file
// via --config, with command-line flags taking precedence.
#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "drivesim/checkpoint.hpp"
#include "drivesim/metrics.hpp"
#include "drivesim/objectives.hpp"
#include "drivesim/scenario.hpp"
#include "drivesim/synth.hpp"
#include "drivesim/trainer.hpp"
#include "drivesim/world.hpp"

namespace fs = std::filesystem;
using namespace drivesim;

namespace {

std::vector<world::Scenario> load_scenario_dir(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .json scenarios in " + dir);
  std::vector<world::Scenario> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(world::load_scenario(f));
  return out;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

// Parameters from a checkpoint, checked against the policy widths by loading
// into a freshly initialized store of the expected shapes.
policy::ParamStore params_for(const std::string& checkpoint, const policy::PolicyConfig& pcfg,
                              std::uint64_t seed) {
  Rng rng(seed);
  policy::ParamStore store;
  policy::init_policy_params(store, pcfg, rng);
  if (!checkpoint.empty()) ckpt::load_params(store, checkpoint);
  return store;
}

// ---------------------------------------------------------------- gen

int run_gen(const std::string& kind, int count, std::uint64_t seed, int horizon, int init_steps,
            const std::string& out_dir) {
  synth::GenerateOptions opt;
  opt.count = count;
  opt.seed = seed;
  opt.horizon = horizon;
  opt.init_steps = init_steps;
  const auto scenarios = synth::generate_scenarios(kind, opt);
  fs::create_directories(out_dir);
  for (const auto& sc : scenarios)
    world::save_scenario(sc, (fs::path(out_dir) / (sc.name + ".json")).string());
  std::printf("wrote %zu %s scenarios to %s\n", scenarios.size(), kind.c_str(), out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------- train

int run_train(const std::string& data_dir, const std::string& val_dir, const std::string& out_dir,
              train::TrainConfig cfg, double width_scale, int log_every) {
  const auto dataset = load_scenario_dir(data_dir);
  std::vector<world::Scenario> validation;
  if (!val_dir.empty()) validation = load_scenario_dir(val_dir);
  cfg.policy = policy::PolicyConfig{}.scaled(width_scale);

  train::TrainHooks hooks;
  hooks.on_iteration = [log_every](const train::IterationLog& log) {
    if (log.skipped) {
      std::printf("iteration %d skipped (non-finite loss)\n", log.iteration);
      return;
    }
    if (log_every > 0 && log.iteration % log_every == 0)
      std::printf("iteration %d  elbo_cl %.4f  elbo_ol %.4f  rl_return %.4f\n", log.iteration,
                  log.elbo_cl, log.elbo_ol, log.rl_return);
  };
  hooks.on_validation = [](const train::ValidationLog& log) {
    std::printf("validation @%d  min_ade %.4f  min_sade %.4f  ade %.4f  collision %.3f%s\n",
                log.iteration, log.recon.min_ade, log.recon.min_sade, log.recon.ade,
                log.infractions.collision, log.is_best ? "  (best)" : "");
  };

  for (const auto& d : train::config_deviations(cfg, dataset.size(), validation.size()))
    std::printf("deviation from full-scale defaults: %s\n", d.c_str());
  const train::TrainResult res = train::train(dataset, validation, cfg, hooks);

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  ckpt::save_params(res.params, (out / "checkpoint.bin").string());
  ckpt::save_params(res.best_params, (out / "best.bin").string());
  write_file((out / "train_log.csv").string(), train::training_log_csv(res.iterations));
  write_file((out / "validation_log.csv").string(), train::validation_log_csv(res.validations));
  std::printf("final checkpoint hash %016llx\n",
              static_cast<unsigned long long>(ckpt::param_hash(res.params)));
  if (res.best_iteration >= 0)
    std::printf("best checkpoint from iteration %d (min_sade %.4f)\n", res.best_iteration,
                res.best_min_sade);
  std::printf("artifacts in %s\n", out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------- eval

int run_eval(const std::string& data_dir, const std::string& checkpoint, std::uint64_t seed,
             int rollouts, double width_scale, const std::string& out_dir) {
  const auto scenarios = load_scenario_dir(data_dir);
  const policy::PolicyConfig pcfg = policy::PolicyConfig{}.scaled(width_scale);
  const policy::ParamStore params = params_for(checkpoint, pcfg, seed);
  objectives::RolloutConfig rcfg;
  rcfg.params_as_leaves = false;

  Rng rng(seed);
  const train::EvalSummary sum =
      train::evaluate_policy(scenarios, params, pcfg, rcfg, rollouts, rng);

  // Feature histograms pooled over all scenarios, simulated versus logged.
  metrics::FeatureSamples sim, logged;
  Rng hist_rng(seed + 1);
  for (const auto& sc : scenarios) {
    const metrics::EvalBatch batch =
        train::prior_rollouts(sc, params, pcfg, rcfg, rollouts, hist_rng);
    sim.append(metrics::extract_features(batch));
    logged.append(metrics::extract_log_features(batch));
  }
  const auto divergences = metrics::feature_jsd(sim, logged);

  std::printf("scenarios %zu  rollouts/scenario %d\n", scenarios.size(), rollouts);
  std::printf("min_ade %.4f  min_sade %.4f  ade %.4f\n", sum.recon.min_ade, sum.recon.min_sade,
              sum.recon.ade);
  std::printf("collision %.4f  off_road %.4f  rule_violation %.4f  kinematic %.4f\n",
              sum.infractions.collision, sum.infractions.off_road, sum.infractions.rule_violation,
              sum.infractions.kinematic);
  for (int f = 0; f < metrics::kFeatureCount; ++f)
    std::printf("jsd %-16s %.4f\n", metrics::feature_name(static_cast<metrics::Feature>(f)),
                divergences[static_cast<std::size_t>(f)]);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    std::string csv = "metric,value\n";
    char buf[64];
    auto row = [&](const std::string& name, double v) {
      std::snprintf(buf, sizeof(buf), "%s,%.10g\n", name.c_str(), v);
      csv += buf;
    };
    row("min_ade", sum.recon.min_ade);
    row("min_sade", sum.recon.min_sade);
    row("ade", sum.recon.ade);
    row("collision", sum.infractions.collision);
    row("off_road", sum.infractions.off_road);
    row("rule_violation", sum.infractions.rule_violation);
    row("kinematic", sum.infractions.kinematic);
    for (int f = 0; f < metrics::kFeatureCount; ++f) {
      const auto feature = static_cast<metrics::Feature>(f);
      row(std::string("jsd_") + metrics::feature_name(feature),
          divergences[static_cast<std::size_t>(f)]);
      metrics::FeatureHistogram hs(feature), hl(feature);
      hs.add_all(sim.stream(feature));
      hl.add_all(logged.stream(feature));
      if (hs.total() > 0)
        write_file((out / (std::string("hist_") + metrics::feature_name(feature) + "_sim.csv"))
                       .string(),
                   metrics::histogram_csv(hs));
      if (hl.total() > 0)
        write_file((out / (std::string("hist_") + metrics::feature_name(feature) + "_log.csv"))
                       .string(),
                   metrics::histogram_csv(hl));
    }
    write_file((out / "metrics.csv").string(), csv);
    std::printf("reports in %s\n", out_dir.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------- simulate

int run_simulate(const std::string& scenario_path, const std::string& checkpoint,
                 std::uint64_t seed, int rollouts, double width_scale, const std::string& out) {
  const world::Scenario sc = world::load_scenario(scenario_path);
  const policy::PolicyConfig pcfg = policy::PolicyConfig{}.scaled(width_scale);
  const policy::ParamStore params = params_for(checkpoint, pcfg, seed);
  objectives::RolloutConfig rcfg;
  rcfg.params_as_leaves = false;

  Rng rng(seed);
  const metrics::EvalBatch batch = train::prior_rollouts(sc, params, pcfg, rcfg, rollouts, rng);

  std::string dump = "rollout,agent,step,x,y,psi,v\n";
  char buf[160];
  for (std::size_t k = 0; k < batch.rollouts.size(); ++k)
    for (std::size_t a = 0; a < batch.agents.size(); ++a)
      for (std::size_t t = 0; t < batch.rollouts[k].states[a].size(); ++t) {
        const world::AgentState& s = batch.rollouts[k].states[a][t];
        std::snprintf(buf, sizeof(buf), "%zu,%d,%zu,%.17g,%.17g,%.17g,%.17g\n", k,
                      batch.agents[a], t, s.x, s.y, s.psi, s.v);
        dump += buf;
      }
  if (out.empty() || out == "-") {
    std::fputs(dump.c_str(), stdout);
  } else {
    write_file(out, dump);
    std::printf("wrote %zu rollouts of %s to %s\n", batch.rollouts.size(), sc.name.c_str(),
                out.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct CheckResult {
  std::string name;
  int checks = 0;
  double max_rel = 0.0;
  double tolerance = 0.0;
  bool ok() const { return max_rel <= tolerance; }
};

void report(const CheckResult& r, bool& all_ok) {
  std::printf("gradcheck %-22s %5d checks  max rel err %.3e  tol %.0e  %s\n", r.name.c_str(),
              r.checks, r.max_rel, r.tolerance, r.ok() ? "ok" : "FAIL");
  all_ok = all_ok && r.ok();
}

// Random magnitude clear of every kink used in the composite expression
// (relu at 0, huber knee at 0.7, clamp edges beyond 0.9).
double safe_value(Rng& rng) {
  for (;;) {
    const double m = rng.uniform(0.1, 0.9);
    if (m > 0.6 && m < 0.8) continue;
    return rng.uniform() < 0.5 ? -m : m;
  }
}

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

CheckResult check_tape_ops(std::uint64_t seed) {
  CheckResult res{"tape ops", 0, 0.0, 1e-5};
  Rng rng(seed);
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
    auto fd_for = [&](ad::Tensor& t, std::size_t i) {
      const double keep = t[i];
      ad::Tape up_tape, dn_tape;
      t[i] = keep + h;
      const double up = composite_loss(x, m, w, up_tape, nullptr, nullptr, nullptr);
      t[i] = keep - h;
      const double dn = composite_loss(x, m, w, dn_tape, nullptr, nullptr, nullptr);
      t[i] = keep;
      return (up - dn) / (2.0 * h);
    };
    auto run = [&](ad::Tensor& t, const ad::Tensor& g) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double fd = fd_for(t, i);
        res.max_rel = std::max(res.max_rel, std::fabs(g[i] - fd) / std::max(1.0, std::fabs(fd)));
        ++res.checks;
      }
    };
    run(x, gx);
    run(m, gm);
    run(w, gw);
  }
  return res;
}

CheckResult check_kinematic_jacobians(std::uint64_t seed) {
  CheckResult res{"kinematic jacobians", 0, 0.0, 1e-5};
  Rng rng(seed);
  const world::KinematicParams kp;
  const double h = 1e-6;
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
        res.max_rel =
            std::max(res.max_rel, std::fabs(g - fd[row]) / std::max(1.0, std::fabs(fd[row])));
        ++res.checks;
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
        res.max_rel =
            std::max(res.max_rel, std::fabs(g - fd[row]) / std::max(1.0, std::fabs(fd[row])));
        ++res.checks;
      }
    }
  }
  return res;
}

CheckResult check_minkowski(std::uint64_t seed) {
  CheckResult res{"box distance", 0, 0.0, 1e-4};
  Rng rng(seed);
  const double h = 1e-6;
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
      // Support-switch detection with a smaller step; kinks are excluded.
      p[i] = keep + 0.1 * h;
      const double up2 = plain(p);
      p[i] = keep - 0.1 * h;
      const double dn2 = plain(p);
      p[i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double fd2 = (up2 - dn2) / (0.2 * h);
      if (std::fabs(fd - fd2) > 1e-4 * std::max(1.0, std::fabs(fd))) continue;
      const double g = tape.grad(s[i].v)[0];
      res.max_rel = std::max(res.max_rel, std::fabs(g - fd) / std::max(1.0, std::fabs(fd)));
      ++res.checks;
    }
  }
  return res;
}

CheckResult check_rollout(std::uint64_t seed) {
  CheckResult res{"rollout gradient", 0, 0.0, 1e-5};
  synth::GenerateOptions opt;
  opt.count = 1;
  opt.seed = seed;
  opt.horizon = 3;
  const world::Scenario sc = synth::generate_scenarios("straight", opt)[0];

  Rng rng(seed);
  policy::ParamStore params;
  const policy::PolicyConfig pcfg = policy::PolicyConfig{}.scaled(0.125);
  policy::init_policy_params(params, pcfg, rng);
  objectives::RolloutConfig rcfg;

  Rng roll_rng(seed + 1);
  objectives::Rollout ro = objectives::rollout_closed_loop(sc, params, pcfg, rcfg, roll_rng);
  const std::vector<objectives::GateSample> gates = ro.gates;
  const std::vector<double> grad = objectives::parameter_gradient(ro, +1.0);

  auto value_at = [&](policy::ParamStore& store) {
    Rng dummy(0);  // unused: the gate replay substitutes the recorded noise
    return objectives::rollout_closed_loop(sc, store, pcfg, rcfg, dummy, &gates).value;
  };
  // The index-selection head trains through a straight-through surrogate whose
  // backward intentionally differs from the piecewise-constant forward, so
  // finite differences validate the smooth groups: low-level and codebooks.
  std::vector<std::size_t> smooth;
  {
    std::size_t off = 0;
    for (const auto& e : params.entries()) {
      if (e.name.rfind("ll.", 0) == 0 || e.name.rfind("cb.", 0) == 0)
        for (std::size_t i = 0; i < e.value.size(); ++i) smooth.push_back(off + i);
      off += e.value.size();
    }
  }
  const double h = 1e-6;  // small enough that the h^2 truncation term is negligible
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
    res.max_rel = std::max(res.max_rel, std::fabs(grad[flat] - fd) / std::max(1.0, std::fabs(fd)));
    ++res.checks;
  }
  return res;
}

int run_gradcheck(std::uint64_t seed) {
  bool ok = true;
  report(check_tape_ops(seed), ok);
  report(check_kinematic_jacobians(seed + 1), ok);
  report(check_minkowski(seed + 2), ok);
  report(check_rollout(seed + 3), ok);
  std::printf(ok ? "all gradient checks passed\n" : "gradient checks FAILED\n");
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------- diagnose

int run_diagnose(const std::string& scenario_path, std::uint64_t seed, int horizon,
                 double width_scale, const std::string& out) {
  world::Scenario sc;
  if (scenario_path.empty()) {
    synth::GenerateOptions opt;
    opt.count = 1;
    opt.seed = seed;
    opt.horizon = horizon;
    sc = synth::generate_scenarios("straight", opt)[0];
  } else {
    sc = world::load_scenario(scenario_path);
  }

  Rng rng(seed);
  policy::ParamStore params;
  const policy::PolicyConfig pcfg = policy::PolicyConfig{}.scaled(width_scale);
  policy::init_policy_params(params, pcfg, rng);

  objectives::RolloutConfig rcfg;
  rcfg.instant_obs = true;
  rcfg.memoryless = true;
  rcfg.hold_latent = true;
  Rng roll_rng(seed + 1);
  const objectives::Rollout ro = objectives::rollout_rl(sc, params, pcfg, rcfg, roll_rng);
  const objectives::DiagnosticsReport rep = objectives::gradient_diagnostics(ro);

  std::printf("scenario %s  horizon %d  state dim %d\n", sc.name.c_str(), rep.horizon, rep.dim);
  std::printf("sigma_s %.6f  sigma_a %.6f  per-step bound %.6f\n", rep.sigma_s, rep.sigma_a,
              rep.sigma_s + rep.sigma_a);
  std::printf("cross-step bound satisfied: %s\n", rep.bound_satisfied() ? "yes" : "NO");
  for (std::size_t d = 0; d < rep.growth_max.size(); ++d)
    std::printf("interval %2zu  max norm %.6f  mean norm %.6f  bound %.6f\n", d + 1,
                rep.growth_max[d], rep.growth_mean[d],
                std::pow(rep.sigma_s + rep.sigma_a, static_cast<double>(d + 1)));
  if (!out.empty()) {
    write_file(out, rep.csv());
    std::printf("growth curves in %s\n", out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentiable multi-agent driving simulator"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI file with option defaults");
  app.set_version_flag("--version", "0.1.0");

  // gen
  auto* gen = app.add_subcommand("gen", "generate synthetic scenarios");
  std::string gen_kind = "straight", gen_out = "scenarios";
  int gen_count = 10, gen_horizon = 40, gen_init = 6;
  std::uint64_t gen_seed = 0;
  gen->add_option("--kind", gen_kind, "one of: straight, tjunction, crossing, merge");
  gen->add_option("--count", gen_count, "scenarios to generate")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "random seed");
  gen->add_option("--horizon", gen_horizon, "simulated steps")->check(CLI::PositiveNumber);
  gen->add_option("--init-steps", gen_init, "warmup history length")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "output directory");

  // train
  auto* tr = app.add_subcommand("train", "train a policy");
  std::string tr_data, tr_val, tr_out = "run";
  train::TrainConfig tr_cfg;
  double tr_scale = 0.25;
  int tr_log_every = 10;
  tr->add_option("--data", tr_data, "training scenario directory")->required();
  tr->add_option("--val", tr_val, "validation scenario directory");
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--iterations", tr_cfg.iterations, "training iterations");
  tr->add_option("--batch", tr_cfg.batch, "scenarios per iteration")->check(CLI::PositiveNumber);
  tr->add_option("--lr", tr_cfg.learning_rate, "learning rate");
  tr->add_option("--clip", tr_cfg.clip_norm, "per-objective gradient norm budget");
  std::vector<double> tr_omega(tr_cfg.omega.begin(), tr_cfg.omega.end());
  tr->add_option("--omega", tr_omega, "objective preference weights")->expected(3);
  tr->add_option("--validation-interval", tr_cfg.validation_interval,
                 "iterations between validations (0 disables)");
  tr->add_option("--validation-rollouts", tr_cfg.validation_rollouts,
                 "prior rollouts per validation scenario");
  tr->add_option("--seed", tr_cfg.seed, "random seed");
  tr->add_option("--width-scale", tr_scale, "policy width multiplier");
  tr->add_option("--log-every", tr_log_every, "print every n-th iteration (0 silences)");

  // eval
  auto* ev = app.add_subcommand("eval", "metrics for a checkpoint");
  std::string ev_data, ev_ckpt, ev_out;
  std::uint64_t ev_seed = 0;
  int ev_rollouts = metrics::kRolloutsPerScenario;
  double ev_scale = 0.25;
  ev->add_option("--data", ev_data, "scenario directory")->required();
  ev->add_option("--checkpoint", ev_ckpt, "parameter checkpoint")->required();
  ev->add_option("--seed", ev_seed, "random seed");
  ev->add_option("--rollouts", ev_rollouts, "rollouts per scenario")->check(CLI::PositiveNumber);
  ev->add_option("--width-scale", ev_scale, "policy width multiplier of the checkpoint");
  ev->add_option("--out", ev_out, "directory for CSV reports");

  // simulate
  auto* sim = app.add_subcommand("simulate", "dump prior rollouts as CSV");
  std::string sim_scenario, sim_ckpt, sim_out;
  std::uint64_t sim_seed = 0;
  int sim_rollouts = 1;
  double sim_scale = 0.25;
  sim->add_option("--scenario", sim_scenario, "scenario file")->required();
  sim->add_option("--checkpoint", sim_ckpt, "parameter checkpoint (fresh init when absent)");
  sim->add_option("--seed", sim_seed, "random seed");
  sim->add_option("--rollouts", sim_rollouts, "rollouts to dump")->check(CLI::PositiveNumber);
  sim->add_option("--width-scale", sim_scale, "policy width multiplier");
  sim->add_option("--out", sim_out, "output file ('-' for stdout)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  std::uint64_t gc_seed = 0;
  gc->add_option("--seed", gc_seed, "random seed");

  // diagnose
  auto* dg = app.add_subcommand("diagnose", "cross-step gradient growth report");
  std::string dg_scenario, dg_out;
  std::uint64_t dg_seed = 0;
  int dg_horizon = 8;
  double dg_scale = 0.25;
  dg->add_option("--scenario", dg_scenario, "scenario file (generated when absent)");
  dg->add_option("--seed", dg_seed, "random seed");
  dg->add_option("--horizon", dg_horizon, "horizon for the generated scenario")
      ->check(CLI::PositiveNumber);
  dg->add_option("--width-scale", dg_scale, "policy width multiplier");
  dg->add_option("--out", dg_out, "growth-curve CSV file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen(gen_kind, gen_count, gen_seed, gen_horizon, gen_init, gen_out);
    if (tr->parsed()) {
      std::copy_n(tr_omega.begin(), 3, tr_cfg.omega.begin());
      return run_train(tr_data, tr_val, tr_out, tr_cfg, tr_scale, tr_log_every);
    }
    if (ev->parsed()) return run_eval(ev_data, ev_ckpt, ev_seed, ev_rollouts, ev_scale, ev_out);
    if (sim->parsed())
      return run_simulate(sim_scenario, sim_ckpt, sim_seed, sim_rollouts, sim_scale, sim_out);
    if (gc->parsed()) return run_gradcheck(gc_seed);
    if (dg->parsed()) return run_diagnose(dg_scenario, dg_seed, dg_horizon, dg_scale, dg_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
