#include "drivesim/geometry.hpp"

#include <algorithm>

namespace drivesim::geom {

std::array<Vec2, 4> OrientedBox::corners() const {
  return box_corners<double>(center, heading, half_length, half_width);
}

std::vector<int> convex_hull_indices(const std::vector<Vec2>& pts) {
  std::vector<int> order(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    Vec2 pa = pts[static_cast<std::size_t>(a)], pb = pts[static_cast<std::size_t>(b)];
    if (pa.x != pb.x) return pa.x < pb.x;
    if (pa.y != pb.y) return pa.y < pb.y;
    return a < b;  // duplicates keep the lowest original index
  });
  order.erase(std::unique(order.begin(), order.end(),
                          [&](int a, int b) {
                            Vec2 pa = pts[static_cast<std::size_t>(a)], pb = pts[static_cast<std::size_t>(b)];
                            return pa.x == pb.x && pa.y == pb.y;
                          }),
              order.end());
  std::size_t n = order.size();
  if (n < 3) return order;
  auto at = [&](int i) { return pts[static_cast<std::size_t>(i)]; };
  std::vector<int> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {  // lower
    while (k >= 2 && cross(at(hull[k - 1]) - at(hull[k - 2]), at(order[i]) - at(hull[k - 2])) <= 0.0) --k;
    hull[k++] = order[i];
  }
  for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {  // upper
    while (k >= t && cross(at(hull[k - 1]) - at(hull[k - 2]), at(order[i]) - at(hull[k - 2])) <= 0.0) --k;
    hull[k++] = order[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 2 && n >= 2) return {order.front(), order.back()};
  return hull;
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::vector<int> idx = convex_hull_indices(pts);
  std::vector<Vec2> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(pts[static_cast<std::size_t>(i)]);
  return out;
}

bool point_in_convex_ccw(const std::vector<Vec2>& hull, Vec2 p) {
  std::size_t n = hull.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 a = hull[i], b = hull[(i + 1) % n];
    if (cross(b - a, p - a) < 0.0) return false;
  }
  return true;
}

SegmentProjection project_point_segment(Vec2 p, Vec2 a, Vec2 b) {
  Vec2 ab = b - a;
  double len2 = norm2sq(ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::min(1.0, std::max(0.0, t));
  SegmentProjection out;
  out.t = t;
  out.closest = {a.x + t * ab.x, a.y + t * ab.y};
  out.dist = norm(p - out.closest);
  return out;
}

}  // namespace drivesim::geom
