#pragma once

#include "common.hpp"

namespace aesmpfp {

struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool contains(Vec2 p) const {
    return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1;
  }
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

struct Circle {
  Vec2 center;
  double radius = 0;

  bool contains(Vec2 p) const { return (p - center).norm() <= radius; }
};

// Distance from a point to the closed rectangle (0 inside).
inline double dist_to_rect(Vec2 p, const Rect& r) {
  const double dx = std::max({r.x0 - p.x, 0.0, p.x - r.x1});
  const double dy = std::max({r.y0 - p.y, 0.0, p.y - r.y1});
  return std::sqrt(dx * dx + dy * dy);
}

inline bool disc_hits_rect(Vec2 c, double radius, const Rect& r) {
  return dist_to_rect(c, r) < radius;
}

inline bool disc_hits_circle(Vec2 c, double radius, const Circle& o) {
  return (c - o.center).norm() < radius + o.radius;
}

}  // namespace aesmpfp
