#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "drivesim/common.hpp"
#include "drivesim/tape.hpp"

namespace testutil {

// Builds a scalar loss from leaf vars; must be deterministic in the inputs.
using BuildFn = std::function<drivesim::ad::Var(drivesim::ad::Tape&, const std::vector<drivesim::ad::Var>&)>;

struct GradCheck {
  double max_rel_err = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int worst_input = -1;
  int worst_coord = -1;
};

inline double eval_loss(const std::vector<drivesim::ad::Tensor>& inputs, const BuildFn& build) {
  drivesim::ad::Tape tape;
  std::vector<drivesim::ad::Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  return build(tape, leaves).scalar();
}

// Central differences against the tape gradient. Relative error is measured
// against max(1, |numeric|) so near-zero entries are judged absolutely.
inline GradCheck grad_check(std::vector<drivesim::ad::Tensor> inputs, const BuildFn& build,
                            double step = 1e-5) {
  GradCheck res;
  drivesim::ad::Tape tape;
  std::vector<drivesim::ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  drivesim::ad::Var loss = build(tape, leaves);
  tape.backward(loss);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    drivesim::ad::Tensor g = tape.grad(leaves[i]);
    for (std::size_t c = 0; c < inputs[i].size(); ++c) {
      double keep = inputs[i][c];
      inputs[i][c] = keep + step;
      double up = eval_loss(inputs, build);
      inputs[i][c] = keep - step;
      double dn = eval_loss(inputs, build);
      inputs[i][c] = keep;
      double fd = (up - dn) / (2.0 * step);
      double rel = std::fabs(g[c] - fd) / std::max(1.0, std::fabs(fd));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_analytic = g[c];
        res.worst_numeric = fd;
        res.worst_input = static_cast<int>(i);
        res.worst_coord = static_cast<int>(c);
      }
    }
  }
  return res;
}

inline drivesim::ad::Tensor random_tensor(std::vector<int> shape, drivesim::Rng& rng, double lo = -1.0,
                                          double hi = 1.0) {
  drivesim::ad::Tensor t = drivesim::ad::Tensor::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Fixed random projection turning any output into a scalar loss.
inline drivesim::ad::Var project_loss(drivesim::ad::Tape& tape, drivesim::ad::Var out, unsigned seed) {
  drivesim::Rng rng(seed);
  const auto& shape = out.val().shape();
  drivesim::ad::Tensor w = random_tensor(shape, rng);
  return drivesim::ad::sum(drivesim::ad::mul(out, tape.constant(w)));
}

}  // namespace testutil
