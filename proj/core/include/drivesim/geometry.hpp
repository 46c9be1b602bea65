#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "drivesim/scalar.hpp"

namespace drivesim::geom {

template <class Real>
struct Vec2T {
  Real x;
  Real y;
};

using Vec2 = Vec2T<double>;

template <class Real>
Vec2T<Real> operator+(Vec2T<Real> a, Vec2T<Real> b) { return {a.x + b.x, a.y + b.y}; }
template <class Real>
Vec2T<Real> operator-(Vec2T<Real> a, Vec2T<Real> b) { return {a.x - b.x, a.y - b.y}; }
template <class Real>
Vec2T<Real> operator*(Real s, Vec2T<Real> a) { return {s * a.x, s * a.y}; }
template <class Real>
Real dot(Vec2T<Real> a, Vec2T<Real> b) { return a.x * b.x + a.y * b.y; }
template <class Real>
Real cross(Vec2T<Real> a, Vec2T<Real> b) { return a.x * b.y - a.y * b.x; }

inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double norm2sq(Vec2 a) { return a.x * a.x + a.y * a.y; }

// Axis-aligned extent box rotated by `heading` about `center`.
struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double half_length = 0.0;
  double half_width = 0.0;

  // CCW starting at front-left, in world coordinates.
  std::array<Vec2, 4> corners() const;
};

template <class Real>
std::array<Vec2T<Real>, 4> box_corners(Vec2T<Real> center, Real heading, double half_length, double half_width) {
  using ad::cos;
  using ad::sin;
  using std::cos;
  using std::sin;
  Real c = cos(heading), s = sin(heading);
  std::array<Vec2T<Real>, 4> out;
  const double lx[4] = {half_length, half_length, -half_length, -half_length};
  const double ly[4] = {half_width, -half_width, -half_width, half_width};
  for (int i = 0; i < 4; ++i) {
    out[static_cast<std::size_t>(i)] = {center.x + lx[i] * c - ly[i] * s,
                                        center.y + lx[i] * s + ly[i] * c};
  }
  return out;
}

// Strictly convex hull (collinear interior points dropped), CCW order.
// Collinear input degenerates to a 2-point hull.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts);

// Same hull as indices into `pts`; duplicate coordinates keep the lowest
// original index so the selection is deterministic.
std::vector<int> convex_hull_indices(const std::vector<Vec2>& pts);

bool point_in_convex_ccw(const std::vector<Vec2>& hull, Vec2 p);

struct SegmentProjection {
  double t = 0.0;  // clamped to [0, 1]
  Vec2 closest;
  double dist = 0.0;
};

SegmentProjection project_point_segment(Vec2 p, Vec2 a, Vec2 b);

}  // namespace drivesim::geom
