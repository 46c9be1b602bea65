#include "drivesim/multipliers.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>

namespace drivesim::multipliers {

void GradientMatrix::validate() const {
  if (elbo_cl.empty() || elbo_cl.size() != elbo_ol.size() || elbo_cl.size() != rl.size())
    throw std::invalid_argument("GradientMatrix: columns must share a positive length");
}

MultiplierSolution solve_multipliers(const GradientMatrix& g, const std::array<double, 3>& omega) {
  g.validate();
  const int n = g.rows();
  const std::vector<double>* cols[3] = {&g.elbo_cl, &g.elbo_ol, &g.rl};

  MultiplierSolution out;
  std::vector<int> keep;
  for (int c = 0; c < 3; ++c) {
    double sq = 0.0;
    for (double x : *cols[c]) sq += x * x;
    out.column_norms[static_cast<std::size_t>(c)] = std::sqrt(sq);
    if (sq > 0.0) keep.push_back(c);
  }
  out.retained = static_cast<int>(keep.size());
  out.gstar.assign(static_cast<std::size_t>(n) * 3, 0.0);
  if (keep.empty()) return out;  // all-zero group: multipliers stay zero

  const int k = out.retained;
  Eigen::MatrixXd m(n, k);
  Eigen::VectorXd w(k);
  for (int c = 0; c < k; ++c) {
    const auto& col = *cols[static_cast<std::size_t>(keep[static_cast<std::size_t>(c)])];
    for (int r = 0; r < n; ++r) m(r, c) = col[static_cast<std::size_t>(r)];
    w(c) = omega[static_cast<std::size_t>(keep[static_cast<std::size_t>(c)])];
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  for (int i = 0; i < k; ++i) out.singular[static_cast<std::size_t>(i)] = s(i);
  out.sigma = s.sum() / k;

  const double floor = 1e-8 * s(0);
  Eigen::VectorXd inv(k);
  for (int i = 0; i < k; ++i) {
    double si = s(i);
    if (si < floor) {
      si = floor;
      out.rank_floor_hit = true;
    }
    inv(i) = 1.0 / si;
  }

  const Eigen::MatrixXd v = svd.matrixV();
  Eigen::VectorXd lam = out.sigma * (v * inv.asDiagonal() * v.transpose() * w);
  Eigen::MatrixXd gstar = svd.matrixU() * v.transpose();

  for (int c = 0; c < k; ++c) {
    out.lambda[static_cast<std::size_t>(keep[static_cast<std::size_t>(c)])] = lam(c);
    for (int r = 0; r < n; ++r)
      out.gstar[static_cast<std::size_t>(r) * 3 +
                static_cast<std::size_t>(keep[static_cast<std::size_t>(c)])] = gstar(r, c);
  }

  Eigen::VectorXd target = out.sigma * (gstar * w);
  out.target_norm = target.norm();
  out.residual = (m * lam - target).norm();
  return out;
}

std::vector<double> combined_direction(const GradientMatrix& g,
                                       const std::array<double, 3>& lambda) {
  g.validate();
  const std::size_t n = g.elbo_cl.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i)
    d[i] = lambda[0] * g.elbo_cl[i] + lambda[1] * g.elbo_ol[i] + lambda[2] * g.rl[i];
  return d;
}

double clip_norm(std::vector<double>& grad, double max_norm) {
  double sq = 0.0;
  for (double x : grad) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (double& x : grad) x *= f;
  }
  return norm;
}

void update_group(policy::ParamStore& store, const std::string& prefix,
                  const std::vector<double>& direction, double alpha) {
  if (direction.size() != store.count(prefix))
    throw std::invalid_argument("update_group: direction length does not match the group");
  std::size_t off = 0;
  for (auto& e : store.entries()) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    for (double& x : e.value.vec()) x -= alpha * direction[off++];
  }
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace drivesim::multipliers
