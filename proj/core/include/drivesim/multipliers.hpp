#pragma once

#include <array>
#include <string>
#include <vector>

#include "drivesim/policy.hpp"

// Balances the three training objectives per parameter group: the stacked
// gradient columns are replaced by their nearest orthogonal frame (polar
// factor from a thin SVD), rescaled to the mean singular value, and the
// multipliers come from matching the combined step to that frame under fixed
// preference weights. Column order everywhere: closed-loop bound, open-loop
// bound, reward return.
namespace drivesim::multipliers {

inline constexpr std::array<double, 3> kDefaultWeights{0.6, 0.3, 0.1};

// Flattened loss gradients of one parameter group, one column per objective.
struct GradientMatrix {
  std::vector<double> elbo_cl, elbo_ol, rl;

  int rows() const { return static_cast<int>(elbo_cl.size()); }
  // Throws unless all three columns share a positive length.
  void validate() const;
};

struct MultiplierSolution {
  std::array<double, 3> lambda{0.0, 0.0, 0.0};
  double sigma = 0.0;          // mean singular value of the retained columns
  double residual = 0.0;       // || G lambda - sigma G* omega ||
  double target_norm = 0.0;    // || sigma G* omega ||
  std::array<double, 3> singular{0.0, 0.0, 0.0};  // descending, zero padded
  std::vector<double> gstar;   // row-major rows() x 3, zero for dropped columns
  int retained = 0;            // columns that entered the solve
  bool rank_floor_hit = false; // tiny singular values were floored in the inverse

  std::array<double, 3> column_norms{0.0, 0.0, 0.0};  // of the input columns
};

// Solves for the per-objective multipliers of one group. Exactly-zero columns
// (an objective that does not touch the group) are dropped from the solve and
// get multiplier 0. Singular values below 1e-8 times the largest are floored
// when inverted and the event is flagged.
MultiplierSolution solve_multipliers(const GradientMatrix& g,
                                     const std::array<double, 3>& omega = kDefaultWeights);

// lambda-weighted sum of the three columns.
std::vector<double> combined_direction(const GradientMatrix& g,
                                       const std::array<double, 3>& lambda);

// Scales `grad` down to `max_norm` when it is longer; returns the norm it had
// before clipping.
double clip_norm(std::vector<double>& grad, double max_norm);

// Plain gradient-descent step over the store entries whose name starts with
// `prefix`: p <- p - alpha * direction, `direction` flattened in registration
// order. Throws on a length mismatch.
void update_group(policy::ParamStore& store, const std::string& prefix,
                  const std::vector<double>& direction, double alpha);

// True when every entry is finite.
bool all_finite(const std::vector<double>& v);

}  // namespace drivesim::multipliers
