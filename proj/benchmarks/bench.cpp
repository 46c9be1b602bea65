#include <benchmark/benchmark.h>

#include <vector>

#include "drivesim/common.hpp"
#include "drivesim/multipliers.hpp"
#include "drivesim/objectives.hpp"
#include "drivesim/policy.hpp"
#include "drivesim/rewards.hpp"
#include "drivesim/synth.hpp"
#include "drivesim/tape.hpp"
#include "drivesim/world.hpp"

using namespace drivesim;

namespace {

// Forward plus backward through a mid-sized dense stack on a fresh tape.
void bm_tape_mlp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  ad::Tensor w1 = ad::Tensor::zeros({n, n}), w2 = ad::Tensor::zeros({n, n}),
             x = ad::Tensor::zeros({n});
  for (auto* t : {&w1, &w2, &x})
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = rng.uniform(-1.0, 1.0);
  for (auto _ : state) {
    ad::Tape tape;
    ad::Var vw1 = tape.leaf(w1), vw2 = tape.leaf(w2), vx = tape.leaf(x);
    ad::Var h = ad::tanh(ad::matmul(vw1, ad::reshape(vx, {n, 1})));
    ad::Var out = ad::sum(ad::matmul(vw2, h));
    tape.backward(out);
    benchmark::DoNotOptimize(tape.grad(vw1));
  }
}

void bm_minkowski(benchmark::State& state) {
  Rng rng(2);
  std::vector<geom::OrientedBox> boxes;
  for (int i = 0; i < 64; ++i)
    boxes.push_back({{rng.uniform(-5, 5), rng.uniform(-5, 5)},
                     rng.uniform(-kPi, kPi),
                     rng.uniform(0.5, 2.5),
                     rng.uniform(0.3, 1.0)});
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& a = boxes[i % boxes.size()];
    const auto& b = boxes[(i * 31 + 7) % boxes.size()];
    benchmark::DoNotOptimize(rewards::minkowski_signed_distance(a, b));
    ++i;
  }
}

void bm_bicycle_step(benchmark::State& state) {
  world::StateT<double> s{0.0, 0.0, 0.1, 8.0};
  const world::KinematicParams kp;
  for (auto _ : state) {
    s = world::step_bicycle<double>(s, 0.5, 0.05, 4.5, kp);
    benchmark::DoNotOptimize(s);
    if (s.x > 1e6) s.x = 0.0;
  }
}

// One full differentiable rollout with parameter gradients.
void bm_rollout_grad(benchmark::State& state) {
  synth::GenerateOptions opt;
  opt.count = 1;
  opt.seed = 3;
  opt.horizon = static_cast<int>(state.range(0));
  const world::Scenario sc = synth::generate_scenarios("straight", opt)[0];
  Rng rng(4);
  policy::ParamStore params;
  const policy::PolicyConfig pcfg = policy::PolicyConfig{}.scaled(0.25);
  policy::init_policy_params(params, pcfg, rng);
  const objectives::RolloutConfig rcfg;
  for (auto _ : state) {
    objectives::Rollout ro = objectives::rollout_closed_loop(sc, params, pcfg, rcfg, rng);
    benchmark::DoNotOptimize(objectives::parameter_gradient(ro));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_solve_multipliers(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(5);
  multipliers::GradientMatrix g;
  for (auto* col : {&g.elbo_cl, &g.elbo_ol, &g.rl}) {
    col->resize(static_cast<std::size_t>(n));
    for (auto& v : *col) v = rng.normal();
  }
  for (auto _ : state) benchmark::DoNotOptimize(multipliers::solve_multipliers(g));
}

}  // namespace

BENCHMARK(bm_tape_mlp)->Arg(64)->Arg(256);
BENCHMARK(bm_minkowski);
BENCHMARK(bm_bicycle_step);
BENCHMARK(bm_rollout_grad)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_solve_multipliers)->Arg(64)->Arg(4096);

BENCHMARK_MAIN();
