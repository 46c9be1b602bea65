#include "drivesim/objectives.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <deque>
#include <sstream>
#include <stdexcept>

namespace drivesim::objectives {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using world::AgentState;
using world::AgentType;
using world::Scene;
using world::TracedState;

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kClosedLoopPosterior: return "closed-loop-posterior";
    case Provenance::kOpenLoopPosterior: return "open-loop-posterior";
    case Provenance::kClosedLoopPrior: return "closed-loop-prior";
  }
  return "?";
}

namespace {

int action_arity(AgentType t) { return t == AgentType::kPedestrian ? 3 : 2; }

TracedState step_traced(const TracedState& s, Var action_row, AgentType type, double length,
                        const world::KinematicParams& kp) {
  world::StateT<ad::Scalar> in{s.x, s.y, s.psi, s.v};
  world::StateT<ad::Scalar> out;
  if (type == AgentType::kPedestrian) {
    out = world::step_delta(in, ad::Scalar{pick(action_row, 0)}, ad::Scalar{pick(action_row, 1)},
                            ad::Scalar{pick(action_row, 2)}, kp);
  } else {
    out = world::step_bicycle(in, ad::Scalar{pick(action_row, 0)}, ad::Scalar{pick(action_row, 1)},
                              length, kp);
  }
  return {out.x, out.y, out.psi, out.v};
}

// Shared engine behind the three rollout entry points.
Rollout run_rollout(const world::Scenario& sc, const policy::ParamStore& store,
                    const policy::PolicyConfig& pcfg, const RolloutConfig& rcfg, Rng& rng,
                    const std::vector<GateSample>* replay, const ResumePoint* resume,
                    Provenance prov) {
  const int T = rcfg.horizon < 0 ? sc.horizon : rcfg.horizon;
  if (T < 1) throw std::invalid_argument("rollout: horizon must be positive");
  if (rcfg.start_step < 0 || rcfg.start_step + T > sc.horizon)
    throw std::invalid_argument("rollout: window exceeds the scenario horizon");
  const bool imitation = prov != Provenance::kClosedLoopPrior;
  const bool self_obs = prov != Provenance::kOpenLoopPosterior;
  const int q0 = sc.init_steps - 1 + rcfg.start_step;  // time index of the initial states

  Rollout ro;
  ro.provenance = prov;
  ro.config = rcfg;
  ro.start_step = rcfg.start_step;
  ro.tape = std::make_unique<Tape>();
  ro.params = std::make_unique<policy::TapeBinding>(*ro.tape, store, rcfg.params_as_leaves);
  Tape& tape = *ro.tape;
  const policy::TapeBinding& P = *ro.params;

  for (std::size_t i = 0; i < sc.agents.size(); ++i)
    if (sc.agents[i].controlled) ro.controlled.push_back(static_cast<int>(i));
  const int C = static_cast<int>(ro.controlled.size());
  if (C == 0) throw std::invalid_argument("rollout: scenario has no controlled agents");

  const int need = imitation ? q0 + T : q0;
  for (int i : ro.controlled)
    if (static_cast<int>(sc.agents[static_cast<std::size_t>(i)].logged.size()) <= need)
      throw std::invalid_argument("rollout: log does not cover the simulated window");

  const bool resuming = resume != nullptr && !resume->empty();
  if (resuming &&
      (static_cast<int>(resume->states.size()) != C ||
       static_cast<int>(resume->hidden.size()) != C ||
       static_cast<int>(resume->latent.size()) != C ||
       static_cast<int>(resume->latent_index.size()) != C))
    throw std::invalid_argument("rollout: resume point does not match the controlled agents");

  std::vector<policy::PosteriorOut> post;
  if (imitation)
    for (int i : ro.controlled) post.push_back(policy::posterior_logits(P, sc, i, rcfg.obs, pcfg));

  std::vector<std::vector<rewards::Route>> routes;
  if (!imitation) routes = rewards::routes_for_scenario(sc);

  // Initial states mount as leaves so state sensitivities can be read back.
  ro.states.assign(static_cast<std::size_t>(T) + 1, {});
  for (int c = 0; c < C; ++c) {
    AgentState s0 = resuming ? resume->states[static_cast<std::size_t>(c)]
                             : world::logged_state_at(sc.agents[static_cast<std::size_t>(ro.controlled[static_cast<std::size_t>(c)])], q0);
    ro.states[0].push_back(world::trace_state(tape, s0, true));
  }

  // Past states feeding the ego history, oldest first, current excluded.
  const int hist_prev = std::max(0, rcfg.obs.ego_history - 1);
  std::vector<std::deque<TracedState>> hist(static_cast<std::size_t>(C));
  if (!rcfg.instant_obs && self_obs) {
    for (int c = 0; c < C; ++c) {
      const auto& spec = sc.agents[static_cast<std::size_t>(ro.controlled[static_cast<std::size_t>(c)])];
      if (resuming) {
        for (const AgentState& s : resume->history[static_cast<std::size_t>(c)])
          hist[static_cast<std::size_t>(c)].push_back(world::trace_state(tape, s, false));
      } else {
        for (int k = std::max(0, q0 - hist_prev); k < q0; ++k)
          hist[static_cast<std::size_t>(c)].push_back(
              world::trace_state(tape, world::logged_state_at(spec, k), false));
      }
    }
  }

  std::vector<Var> hidden(static_cast<std::size_t>(C)), z(static_cast<std::size_t>(C));
  std::vector<int> zidx(static_cast<std::size_t>(C), -1);
  for (int c = 0; c < C; ++c) {
    if (resuming) {
      hidden[static_cast<std::size_t>(c)] =
          tape.constant(Tensor::vector(resume->hidden[static_cast<std::size_t>(c)]));
      z[static_cast<std::size_t>(c)] =
          tape.constant(Tensor::vector(resume->latent[static_cast<std::size_t>(c)]));
      zidx[static_cast<std::size_t>(c)] = resume->latent_index[static_cast<std::size_t>(c)];
    } else {
      hidden[static_cast<std::size_t>(c)] = policy::initial_hidden(P, pcfg);
    }
  }

  std::size_t replay_cursor = 0;
  auto draw_gumbel = [&](int k) {
    std::vector<double> g;
    if (replay != nullptr) {
      if (replay_cursor >= replay->size())
        throw std::invalid_argument("rollout: replay noise exhausted");
      g = (*replay)[replay_cursor++].gumbel;
      if (static_cast<int>(g.size()) != k)
        throw std::invalid_argument("rollout: replay noise has the wrong arity");
    } else {
      g.resize(static_cast<std::size_t>(k));
      for (double& x : g) x = rng.gumbel();
    }
    return g;
  };

  ro.observations.assign(static_cast<std::size_t>(T), {});
  ro.latents.assign(static_cast<std::size_t>(T), {});
  ro.action_rows.assign(static_cast<std::size_t>(T), {});
  ro.steps.resize(static_cast<std::size_t>(T));

  Var obj;
  auto add_term = [&](Var v) { obj = obj.valid() ? add(obj, v) : v; };

  for (int t = 0; t < T; ++t) {
    const std::size_t ts = static_cast<std::size_t>(t);
    const int abs_t = rcfg.start_step + t;
    const int time = q0 + t;

    Scene scene = world::make_scene(sc, time);
    for (int c = 0; c < C; ++c)
      scene.states[static_cast<std::size_t>(ro.controlled[static_cast<std::size_t>(c)])] =
          world::untrace(ro.states[ts][static_cast<std::size_t>(c)]);
    StepRecord& rec = ro.steps[ts];
    rec.scene = scene;

    Scene scene_log;
    if (!self_obs) scene_log = world::make_scene(sc, time);

    std::vector<const TracedState*> tptr(sc.agents.size(), nullptr);
    if (self_obs)
      for (int c = 0; c < C; ++c)
        tptr[static_cast<std::size_t>(ro.controlled[static_cast<std::size_t>(c)])] =
            &ro.states[ts][static_cast<std::size_t>(c)];

    std::vector<Var> neg_terms;  // pieces of this step's objective share
    double recon_sum = 0.0, kl_sum = 0.0, reward_sum = 0.0;
    rec.actions.resize(static_cast<std::size_t>(C));

    for (int c = 0; c < C; ++c) {
      const std::size_t cs = static_cast<std::size_t>(c);
      const int i = ro.controlled[cs];
      const auto& spec = sc.agents[static_cast<std::size_t>(i)];
      const AgentType ty = spec.type;

      world::TracedObservation obs;
      if (self_obs) {
        std::vector<TracedState> h;
        if (rcfg.instant_obs) {
          h.push_back(ro.states[ts][cs]);
        } else {
          h.assign(hist[cs].begin(), hist[cs].end());
          h.push_back(ro.states[ts][cs]);
        }
        obs = world::observe_traced(tape, scene, tptr, i, h, rcfg.obs);
      } else {
        std::vector<TracedState> h;
        const int n_prev = rcfg.instant_obs ? 0 : hist_prev;
        for (int k = std::max(0, time - n_prev); k <= time; ++k)
          h.push_back(world::trace_state(tape, world::logged_state_at(spec, k), false));
        obs = world::observe_traced(tape, scene_log, tptr, i, h, rcfg.obs);
      }
      ro.observations[ts].push_back(obs);

      Var emb_ll = policy::tokenize(P, obs, pcfg, "ll.");

      bool gate = policy::temporal_gate(abs_t, pcfg.interval) == 1;
      if (rcfg.hold_latent) gate = t == 0 && !z[cs].valid();
      if (t == 0 && !z[cs].valid() && !gate)
        throw std::invalid_argument("rollout: starting mid-interval needs a resume latent");
      if (gate) {
        Var emb_hl = policy::tokenize(P, obs, pcfg, "hl.");
        Var prior_logits = policy::high_level_logits(P, emb_hl, pcfg);
        std::vector<double> g = draw_gumbel(pcfg.codebook_size);
        policy::HighLevelSample hs;
        if (imitation) {
          Var row = gather_row(post[cs].logits, abs_t / pcfg.interval);
          hs = policy::sample_latent(P, row, ty, pcfg, g);
          Var kl = sum(mul(softmax(row), sub(log_softmax(row), log_softmax(prior_logits))));
          kl_sum += kl.scalar();
          neg_terms.push_back(neg(kl));
        } else {
          hs = policy::sample_latent(P, prior_logits, ty, pcfg, g);
        }
        z[cs] = rcfg.hold_latent ? tape.constant(hs.z.val()) : hs.z;
        zidx[cs] = hs.index;
        ro.gates.push_back({abs_t, i, hs.index, std::move(g)});
      }
      ro.latents[ts].push_back(z[cs]);

      Var h_in = rcfg.memoryless ? policy::initial_hidden(P, pcfg) : hidden[cs];
      policy::LowLevelOut out = policy::low_level_step(P, emb_ll, z[cs], h_in, ty, pcfg, rcfg.kin);
      hidden[cs] = out.hidden;
      ro.action_rows[ts].push_back(out.action);
      rec.actions[cs] = policy::action_from_row(out.action, ty);
    }

    for (int c = 0; c < C; ++c) {
      const std::size_t cs = static_cast<std::size_t>(c);
      const auto& spec = sc.agents[static_cast<std::size_t>(ro.controlled[cs])];
      ro.states[ts + 1].push_back(
          step_traced(ro.states[ts][cs], ro.action_rows[ts][cs], spec.type, spec.length, rcfg.kin));
    }
    if (!rcfg.instant_obs && self_obs) {
      for (int c = 0; c < C; ++c) {
        const std::size_t cs = static_cast<std::size_t>(c);
        hist[cs].push_back(ro.states[ts][cs]);
        while (static_cast<int>(hist[cs].size()) > hist_prev) hist[cs].pop_front();
      }
    }

    if (imitation) {
      for (int c = 0; c < C; ++c) {
        const std::size_t cs = static_cast<std::size_t>(c);
        const auto& spec = sc.agents[static_cast<std::size_t>(ro.controlled[cs])];
        const AgentState target = world::logged_state_at(spec, time + 1);
        const TracedState& nx = ro.states[ts + 1][cs];
        ad::Scalar loss = huber(nx.x - target.x, rcfg.huber_delta) +
                          huber(nx.y - target.y, rcfg.huber_delta) +
                          rcfg.heading_weight * square(world::wrap_heading(nx.psi - target.psi));
        recon_sum += loss.val();
        neg_terms.push_back(neg(loss.v));
      }
      rec.recon = recon_sum;
      rec.kl = kl_sum;
      rec.contribution = -recon_sum - kl_sum;
    } else {
      Scene next = world::make_scene(sc, time + 1);
      std::vector<const TracedState*> nptr(sc.agents.size(), nullptr);
      for (int c = 0; c < C; ++c) {
        const std::size_t cs = static_cast<std::size_t>(c);
        const int i = ro.controlled[cs];
        next.states[static_cast<std::size_t>(i)] = world::untrace(ro.states[ts + 1][cs]);
        nptr[static_cast<std::size_t>(i)] = &ro.states[ts + 1][cs];
      }
      const double disc = std::pow(rcfg.gamma, t);
      for (int c = 0; c < C; ++c) {
        const int i = ro.controlled[static_cast<std::size_t>(c)];
        rewards::TracedRewardTerms terms = rewards::total_reward_traced(
            tape, next, nptr, i, routes[static_cast<std::size_t>(i)], rcfg.thresholds);
        rec.rewards.push_back(terms.total.val());
        reward_sum += disc * terms.total.val();
        neg_terms.push_back(scale(terms.total.v, disc));
      }
      rec.reward = reward_sum;
      rec.contribution = reward_sum;
    }

    for (Var v : neg_terms) add_term(v);
  }

  ro.objective = obj;
  ro.value = obj.scalar();

  ro.end.states.reserve(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    const std::size_t cs = static_cast<std::size_t>(c);
    ro.end.states.push_back(world::untrace(ro.states[static_cast<std::size_t>(T)][cs]));
    std::vector<AgentState> hs;
    for (const TracedState& s : hist[cs]) hs.push_back(world::untrace(s));
    ro.end.history.push_back(std::move(hs));
    ro.end.hidden.push_back(tape.value(hidden[cs]).vec());
    ro.end.latent.push_back(tape.value(z[cs]).vec());
    ro.end.latent_index.push_back(zidx[cs]);
  }
  return ro;
}

}  // namespace

Rollout rollout_closed_loop(const world::Scenario& sc, const policy::ParamStore& store,
                            const policy::PolicyConfig& pcfg, const RolloutConfig& rcfg, Rng& rng,
                            const std::vector<GateSample>* replay, const ResumePoint* resume) {
  return run_rollout(sc, store, pcfg, rcfg, rng, replay, resume,
                     Provenance::kClosedLoopPosterior);
}

Rollout rollout_open_loop(const world::Scenario& sc, const policy::ParamStore& store,
                          const policy::PolicyConfig& pcfg, const RolloutConfig& rcfg, Rng& rng,
                          const std::vector<GateSample>* replay, const ResumePoint* resume) {
  return run_rollout(sc, store, pcfg, rcfg, rng, replay, resume, Provenance::kOpenLoopPosterior);
}

Rollout rollout_rl(const world::Scenario& sc, const policy::ParamStore& store,
                   const policy::PolicyConfig& pcfg, const RolloutConfig& rcfg, Rng& rng,
                   const std::vector<GateSample>* replay, const ResumePoint* resume) {
  return run_rollout(sc, store, pcfg, rcfg, rng, replay, resume, Provenance::kClosedLoopPrior);
}

ObjectiveValues ObjectiveSet::values() const {
  ObjectiveValues v;
  v.elbo_cl = cl.value;
  v.elbo_ol = ol.value;
  v.rl_return = rl.value;
  for (const StepRecord& s : cl.steps) v.cl_steps.push_back(s.contribution);
  for (const StepRecord& s : ol.steps) v.ol_steps.push_back(s.contribution);
  for (const StepRecord& s : rl.steps) v.rl_steps.push_back(s.contribution);
  return v;
}

ObjectiveSet evaluate_objectives(const world::Scenario& sc, const policy::ParamStore& store,
                                 const policy::PolicyConfig& pcfg, const RolloutConfig& rcfg,
                                 Rng& rng) {
  ObjectiveSet set{rollout_closed_loop(sc, store, pcfg, rcfg, rng),
                   rollout_open_loop(sc, store, pcfg, rcfg, rng),
                   rollout_rl(sc, store, pcfg, rcfg, rng)};
  return set;
}

std::vector<double> parameter_gradient(const Rollout& ro, double sign) {
  if (!ro.objective.valid() || ro.tape == nullptr || ro.params == nullptr)
    throw std::invalid_argument("parameter_gradient: rollout has no objective");
  ro.tape->backward(ro.objective);
  std::vector<double> g;
  const auto& entries = ro.params->store().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor gi = ro.tape->grad(ro.params->var_at(static_cast<int>(i)));
    for (double x : gi.vec()) g.push_back(sign * x);
  }
  return g;
}

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat to_eigen(const Tensor& t) {
  return Eigen::Map<const Mat>(t.vec().data(), t.rows(), t.cols());
}

Tensor to_tensor(const Mat& m) {
  Tensor t = Tensor::zeros({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  Eigen::Map<Mat>(t.vec().data(), m.rows(), m.cols()) = m;
  return t;
}

double spectral_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
}

}  // namespace

int DiagnosticsReport::cross_index(int t, int j) const {
  if (!(0 <= j && j < t && t <= horizon))
    throw std::out_of_range("cross_index: need 0 <= j < t <= horizon");
  int off = 0;
  for (int k = 0; k < j; ++k) off += horizon - k;
  return off + (t - j - 1);
}

bool DiagnosticsReport::bound_satisfied(double slack) const {
  for (std::size_t i = 0; i < cross_norm.size(); ++i)
    if (cross_norm[i] > cross_bound[i] + slack) return false;
  return true;
}

std::string DiagnosticsReport::csv() const {
  std::ostringstream os;
  os << "# dim=" << dim << " horizon=" << horizon << " sigma_s=" << format_double(sigma_s)
     << " sigma_a=" << format_double(sigma_a) << "\n";
  os << "interval,max_norm,mean_norm,bound\n";
  const double base = sigma_s + sigma_a;
  for (std::size_t d = 0; d < growth_max.size(); ++d)
    os << (d + 1) << "," << format_double(growth_max[d]) << "," << format_double(growth_mean[d])
       << "," << format_double(std::pow(base, static_cast<double>(d + 1))) << "\n";
  return os.str();
}

DiagnosticsReport gradient_diagnostics(const Rollout& ro) {
  if (ro.provenance == Provenance::kOpenLoopPosterior)
    throw std::invalid_argument("gradient_diagnostics: needs self-induced observations");
  if (!(ro.config.instant_obs && ro.config.memoryless && ro.config.hold_latent))
    throw std::invalid_argument(
        "gradient_diagnostics: rollout must be built with the analysis switches on");
  if (ro.tape == nullptr) throw std::invalid_argument("gradient_diagnostics: tape missing");

  const int T = ro.horizon();
  const int C = static_cast<int>(ro.controlled.size());
  const int dim = 4 * C;
  DiagnosticsReport rep;
  rep.horizon = T;
  rep.dim = dim;

  const world::Scenario& sc = *ro.steps[0].scene.scenario;
  Tape& tape = *ro.tape;

  for (int k = 0; k < T; ++k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    Mat a_full = Mat::Zero(dim, dim);
    Mat ba_full = Mat::Zero(dim, dim);
    for (int c = 0; c < C; ++c) {
      const std::size_t cs = static_cast<std::size_t>(c);
      const int i = ro.controlled[cs];
      const auto& spec = sc.agents[static_cast<std::size_t>(i)];
      const AgentState s = ro.steps[ks].scene.states[static_cast<std::size_t>(i)];
      const world::Action act = ro.steps[ks].actions[cs];
      const int da = action_arity(spec.type);

      // Closed-form transition blocks.
      Mat a_blk(4, 4), b_blk(4, da);
      if (spec.type == AgentType::kPedestrian) {
        auto aj = world::delta_state_jacobian();
        auto bj = world::delta_action_jacobian(act, ro.config.kin);
        for (int r = 0; r < 4; ++r)
          for (int q = 0; q < 4; ++q) a_blk(r, q) = aj[static_cast<std::size_t>(r * 4 + q)];
        for (int r = 0; r < 4; ++r)
          for (int q = 0; q < 3; ++q) b_blk(r, q) = bj[static_cast<std::size_t>(r * 3 + q)];
      } else {
        auto aj = world::bicycle_state_jacobian(s, act, spec.length, ro.config.kin);
        auto bj = world::bicycle_action_jacobian(s, act, spec.length, ro.config.kin);
        for (int r = 0; r < 4; ++r)
          for (int q = 0; q < 4; ++q) a_blk(r, q) = aj[static_cast<std::size_t>(r * 4 + q)];
        for (int r = 0; r < 4; ++r)
          for (int q = 0; q < 2; ++q) b_blk(r, q) = bj[static_cast<std::size_t>(r * 2 + q)];
      }
      a_full.block(4 * c, 4 * c, 4, 4) = a_blk;

      // d(action)/d(stacked state) rows from the tape, one backward per
      // action component; gradients are read at this step's state nodes.
      Mat c_blk = Mat::Zero(da, dim);
      for (int m = 0; m < da; ++m) {
        Tensor seed = Tensor::zeros({da});
        seed[static_cast<std::size_t>(m)] = 1.0;
        tape.backward(ro.action_rows[ks][cs], seed);
        for (int c2 = 0; c2 < C; ++c2) {
          const TracedState& st = ro.states[ks][static_cast<std::size_t>(c2)];
          const Var comps[4] = {st.x.v, st.y.v, st.psi.v, st.v.v};
          for (int q = 0; q < 4; ++q)
            c_blk(m, 4 * c2 + q) = tape.grad(comps[q]).vec()[0];
        }
      }
      ba_full.block(4 * c, 0, 4, dim) += b_blk * c_blk;
    }
    rep.state_jac.push_back(to_tensor(a_full));
    rep.action_jac.push_back(to_tensor(ba_full));
    rep.step_jac.push_back(to_tensor(Mat(a_full + ba_full)));
    rep.sigma_s = std::max(rep.sigma_s, spectral_norm(a_full));
    rep.sigma_a = std::max(rep.sigma_a, spectral_norm(ba_full));
  }

  const double base = rep.sigma_s + rep.sigma_a;
  rep.growth_max.assign(static_cast<std::size_t>(T), 0.0);
  rep.growth_mean.assign(static_cast<std::size_t>(T), 0.0);
  std::vector<int> growth_n(static_cast<std::size_t>(T), 0);

  for (int j = 0; j < T; ++j) {
    Mat prod = Mat::Identity(dim, dim);
    Mat highway = Mat::Identity(dim, dim);
    for (int t = j + 1; t <= T; ++t) {
      prod = to_eigen(rep.step_jac[static_cast<std::size_t>(t - 1)]) * prod;
      highway = to_eigen(rep.state_jac[static_cast<std::size_t>(t - 1)]) * highway;
      const double n = spectral_norm(prod);
      rep.cross.push_back(to_tensor(prod));
      rep.cross_norm.push_back(n);
      rep.cross_bound.push_back(std::pow(base, static_cast<double>(t - j)));
      rep.highway_gap.push_back(spectral_norm(highway - Mat::Identity(dim, dim)));
      const std::size_t d = static_cast<std::size_t>(t - j - 1);
      rep.growth_max[d] = std::max(rep.growth_max[d], n);
      rep.growth_mean[d] += n;
      growth_n[d] += 1;
    }
  }
  for (std::size_t d = 0; d < rep.growth_mean.size(); ++d)
    if (growth_n[d] > 0) rep.growth_mean[d] /= growth_n[d];
  return rep;
}

}  // namespace drivesim::objectives
