#include "drivesim/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "drivesim/common.hpp"

namespace drivesim::train {

namespace {

// Global flattened indices (store registration order) of the entries whose
// name starts with any of the group prefixes.
std::vector<std::size_t> group_indices(const policy::ParamStore& store,
                                       const std::vector<std::string>& prefixes) {
  std::vector<std::size_t> out;
  std::size_t offset = 0;
  for (const auto& e : store.entries()) {
    bool hit = false;
    for (const auto& p : prefixes) hit = hit || e.name.rfind(p, 0) == 0;
    if (hit)
      for (std::size_t i = 0; i < e.value.size(); ++i) out.push_back(offset + i);
    offset += e.value.size();
  }
  return out;
}

std::vector<double> slice(const std::vector<double>& full, const std::vector<std::size_t>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = full[idx[i]];
  return out;
}

void accumulate(std::vector<double>& sum, const std::vector<double>& g) {
  if (sum.size() != g.size()) throw std::logic_error("train: gradient length mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) sum[i] += g[i];
}

}  // namespace

std::vector<std::string> config_deviations(const TrainConfig& cfg, std::size_t n_train,
                                           std::size_t n_val) {
  // Full-scale reference settings; smaller values mean a desk-scale run.
  const policy::PolicyConfig full;
  const int full_iterations = 100000;
  const int full_batch = 16;
  std::vector<std::string> out;
  auto note = [&out](const std::string& what, long long got, long long full_value) {
    if (got != full_value)
      out.push_back(what + " " + std::to_string(got) + " (full-scale " +
                    std::to_string(full_value) + ")");
  };
  note("token_dim", cfg.policy.token_dim, full.token_dim);
  note("enc_dim", cfg.policy.enc_dim, full.enc_dim);
  note("latent_dim", cfg.policy.latent_dim, full.latent_dim);
  note("gru_hidden", cfg.policy.gru_hidden, full.gru_hidden);
  note("codebook_size", cfg.policy.codebook_size, full.codebook_size);
  note("iterations", cfg.iterations, full_iterations);
  note("batch", cfg.batch, full_batch);
  out.push_back("dataset " + std::to_string(n_train) + " scenarios, validation " +
                std::to_string(n_val));
  return out;
}

const std::vector<GroupSpec>& parameter_groups() {
  static const std::vector<GroupSpec> groups{
      {"high", {"hl."}}, {"low", {"ll.", "cb."}}, {"posterior", {"post."}}};
  return groups;
}

metrics::EvalBatch prior_rollouts(const world::Scenario& sc, const policy::ParamStore& params,
                                  const policy::PolicyConfig& pcfg,
                                  const objectives::RolloutConfig& rcfg, int rollouts, Rng& rng) {
  metrics::EvalBatch batch;
  batch.scenario = &sc;
  batch.start_step = sc.init_steps - 1 + rcfg.start_step;
  for (int k = 0; k < rollouts; ++k) {
    objectives::Rollout ro = objectives::rollout_rl(sc, params, pcfg, rcfg, rng);
    if (k == 0) batch.agents = ro.controlled;
    metrics::RolloutTrack track;
    track.states.resize(ro.controlled.size());
    for (std::size_t c = 0; c < ro.controlled.size(); ++c)
      for (std::size_t t = 0; t < ro.states.size(); ++t)
        track.states[c].push_back(world::untrace(ro.states[t][c]));
    batch.rollouts.push_back(std::move(track));
  }
  return batch;
}

EvalSummary evaluate_policy(const std::vector<world::Scenario>& scenarios,
                            const policy::ParamStore& params, const policy::PolicyConfig& pcfg,
                            const objectives::RolloutConfig& rcfg, int rollouts, Rng& rng) {
  if (scenarios.empty()) throw std::invalid_argument("evaluate_policy: no scenarios");
  if (rollouts < 1) throw std::invalid_argument("evaluate_policy: rollouts must be positive");
  objectives::RolloutConfig cheap = rcfg;
  cheap.params_as_leaves = false;  // no gradients needed
  EvalSummary sum;
  for (const auto& sc : scenarios) {
    metrics::EvalBatch batch = prior_rollouts(sc, params, pcfg, cheap, rollouts, rng);
    const metrics::ReconstructionMetrics r = metrics::reconstruction_metrics(batch);
    const metrics::InfractionRates f = metrics::infraction_rates(batch);
    sum.recon.min_ade += r.min_ade;
    sum.recon.min_sade += r.min_sade;
    sum.recon.ade += r.ade;
    sum.infractions.collision += f.collision;
    sum.infractions.off_road += f.off_road;
    sum.infractions.rule_violation += f.rule_violation;
    sum.infractions.kinematic += f.kinematic;
  }
  const double n = static_cast<double>(scenarios.size());
  sum.recon.min_ade /= n;
  sum.recon.min_sade /= n;
  sum.recon.ade /= n;
  sum.infractions.collision /= n;
  sum.infractions.off_road /= n;
  sum.infractions.rule_violation /= n;
  sum.infractions.kinematic /= n;
  return sum;
}

TrainResult train(const std::vector<world::Scenario>& dataset,
                  const std::vector<world::Scenario>& validation, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch < 1) throw std::invalid_argument("train: batch must be positive");
  if (cfg.iterations < 0) throw std::invalid_argument("train: negative iteration count");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");

  TrainResult result;
  result.deviations = config_deviations(cfg, dataset.size(), validation.size());

  Rng rng(cfg.seed);
  policy::ParamStore params;
  policy::init_policy_params(params, cfg.policy, rng);

  const std::size_t total = params.count();
  std::vector<std::vector<std::size_t>> gidx;
  for (const auto& g : parameter_groups()) gidx.push_back(group_indices(params, g.prefixes));

  // Stable element pointers for the scatter update; tensors never resize.
  std::vector<double*> flat;
  flat.reserve(total);
  for (auto& e : params.entries())
    for (auto& v : e.value.vec()) flat.push_back(&v);

  for (int it = 1; it <= cfg.iterations; ++it) {
    IterationLog log;
    log.iteration = it;

    std::array<std::vector<double>, 3> grad;
    for (auto& g : grad) g.assign(total, 0.0);
    double sum_cl = 0.0, sum_ol = 0.0, sum_rl = 0.0, sum_recon = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const world::Scenario& sc = dataset[rng.next_u64() % dataset.size()];
      objectives::ObjectiveSet set =
          objectives::evaluate_objectives(sc, params, cfg.policy, cfg.rollout, rng);
      const objectives::ObjectiveValues vals = set.values();
      sum_cl += vals.elbo_cl;
      sum_ol += vals.elbo_ol;
      sum_rl += vals.rl_return;
      for (const auto& step : set.cl.steps) sum_recon += step.recon;
      accumulate(grad[0], objectives::parameter_gradient(set.cl));
      accumulate(grad[1], objectives::parameter_gradient(set.ol));
      accumulate(grad[2], objectives::parameter_gradient(set.rl));
    }
    const double inv_b = 1.0 / cfg.batch;
    log.elbo_cl = sum_cl * inv_b;
    log.elbo_ol = sum_ol * inv_b;
    log.rl_return = sum_rl * inv_b;
    log.recon_cl = sum_recon * inv_b;
    for (auto& g : grad)
      for (auto& v : g) v *= inv_b;

    bool finite = std::isfinite(log.elbo_cl) && std::isfinite(log.elbo_ol) &&
                  std::isfinite(log.rl_return);
    for (const auto& g : grad) finite = finite && multipliers::all_finite(g);
    if (!finite) {
      log.skipped = true;  // leave the parameters untouched and move on
      result.iterations.push_back(std::move(log));
      if (hooks.on_iteration) hooks.on_iteration(result.iterations.back());
    } else {
      for (int i = 0; i < 3; ++i)
        log.grad_norms[static_cast<std::size_t>(i)] =
            multipliers::clip_norm(grad[static_cast<std::size_t>(i)], cfg.clip_norm);

      for (std::size_t g = 0; g < gidx.size(); ++g) {
        multipliers::GradientMatrix m;
        m.elbo_cl = slice(grad[0], gidx[g]);
        m.elbo_ol = slice(grad[1], gidx[g]);
        m.rl = slice(grad[2], gidx[g]);
        const multipliers::MultiplierSolution sol = multipliers::solve_multipliers(m, cfg.omega);
        const std::vector<double> dir = multipliers::combined_direction(m, sol.lambda);
        for (std::size_t k = 0; k < gidx[g].size(); ++k)
          *flat[gidx[g][k]] -= cfg.learning_rate * dir[k];
        GroupLog gl;
        gl.name = parameter_groups()[g].name;
        gl.lambda = sol.lambda;
        gl.sigma = sol.sigma;
        gl.residual = sol.residual;
        gl.column_norms = sol.column_norms;
        gl.retained = sol.retained;
        gl.rank_floor_hit = sol.rank_floor_hit;
        log.groups.push_back(std::move(gl));
      }
      result.iterations.push_back(std::move(log));
      if (hooks.on_iteration) hooks.on_iteration(result.iterations.back());
    }

    const bool validate_now = cfg.validation_interval > 0 && !validation.empty() &&
                              (it % cfg.validation_interval == 0 || it == cfg.iterations);
    if (validate_now) {
      // Validation noise is independent of the training stream.
      Rng vrng(cfg.seed ^ 0x9E3779B97F4A7C15ULL ^
               (static_cast<std::uint64_t>(it) * 0x2545F4914F6CDD1DULL));
      const EvalSummary s = evaluate_policy(validation, params, cfg.policy, cfg.rollout,
                                            cfg.validation_rollouts, vrng);
      ValidationLog vlog;
      vlog.iteration = it;
      vlog.recon = s.recon;
      vlog.infractions = s.infractions;
      if (s.recon.min_sade < result.best_min_sade) {
        result.best_min_sade = s.recon.min_sade;
        result.best_iteration = it;
        result.best_params = params;
        vlog.is_best = true;
      }
      result.validations.push_back(vlog);
      if (hooks.on_validation) hooks.on_validation(result.validations.back());
    }
  }

  if (result.best_iteration < 0) result.best_params = params;
  result.params = std::move(params);
  return result;
}

std::string training_log_csv(const std::vector<IterationLog>& logs) {
  std::ostringstream out;
  out << "iteration,skipped,elbo_cl,elbo_ol,rl_return,recon_cl,grad_norm_cl,grad_norm_ol,"
         "grad_norm_rl";
  for (const auto& g : parameter_groups())
    out << "," << g.name << "_lambda_cl," << g.name << "_lambda_ol," << g.name << "_lambda_rl,"
        << g.name << "_sigma," << g.name << "_residual," << g.name << "_retained," << g.name
        << "_rank_floor";
  out << "\n";
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    out << "," << buf;
  };
  for (const auto& log : logs) {
    out << log.iteration << "," << (log.skipped ? 1 : 0);
    num(log.elbo_cl);
    num(log.elbo_ol);
    num(log.rl_return);
    num(log.recon_cl);
    for (double v : log.grad_norms) num(v);
    if (log.groups.empty()) {
      for (std::size_t i = 0; i < parameter_groups().size() * 7; ++i) out << ",";
    } else {
      for (const auto& g : log.groups) {
        for (double v : g.lambda) num(v);
        num(g.sigma);
        num(g.residual);
        out << "," << g.retained << "," << (g.rank_floor_hit ? 1 : 0);
      }
    }
    out << "\n";
  }
  return out.str();
}

std::string validation_log_csv(const std::vector<ValidationLog>& logs) {
  std::ostringstream out;
  out << "iteration,min_ade,min_sade,ade,collision,off_road,rule_violation,kinematic,is_best\n";
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    out << buf;
  };
  for (const auto& log : logs) {
    out << log.iteration << ",";
    num(log.recon.min_ade);
    out << ",";
    num(log.recon.min_sade);
    out << ",";
    num(log.recon.ade);
    out << ",";
    num(log.infractions.collision);
    out << ",";
    num(log.infractions.off_road);
    out << ",";
    num(log.infractions.rule_violation);
    out << ",";
    num(log.infractions.kinematic);
    out << "," << (log.is_best ? 1 : 0) << "\n";
  }
  return out.str();
}

}  // namespace drivesim::train
