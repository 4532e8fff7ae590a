#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace riskrl {

using Vec2 = Eigen::Vector2d;

inline constexpr double kNoHit = std::numeric_limits<double>::infinity();

/// Distance along a unit ray to the first intersection with a disc (0 if the origin is inside).
inline double ray_circle(const Vec2& origin, const Vec2& dir, const Vec2& center, double radius) {
  const Vec2 oc = origin - center;
  const double c = oc.squaredNorm() - radius * radius;
  if (c <= 0.0) return 0.0;
  const double b = oc.dot(dir);
  if (b > 0.0) return kNoHit;
  const double disc = b * b - c;
  if (disc < 0.0) return kNoHit;
  return -b - std::sqrt(disc);
}

/// Distance along a unit ray from inside the box [-hx, hx] x [-hy, hy] to its boundary.
inline double ray_box_exit(const Vec2& origin, const Vec2& dir, double hx, double hy) {
  double t = kNoHit;
  if (dir.x() > 0.0) t = std::min(t, (hx - origin.x()) / dir.x());
  if (dir.x() < 0.0) t = std::min(t, (-hx - origin.x()) / dir.x());
  if (dir.y() > 0.0) t = std::min(t, (hy - origin.y()) / dir.y());
  if (dir.y() < 0.0) t = std::min(t, (-hy - origin.y()) / dir.y());
  return std::max(t, 0.0);
}

inline Vec2 unit_direction(int k, int n) {
  const double angle = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
  return {std::cos(angle), std::sin(angle)};
}

}  // namespace riskrl
