#include "bisvp/polygon.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace bisvp::geom {

double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double signed_area(std::span<const Point> ring) {
  if (ring.size() < 3) throw NotAPolygon("polygon needs at least 3 vertices, got " + std::to_string(ring.size()));
  // Positive and negative terms are summed separately in order of magnitude,
  // so reversing the ring negates the result exactly.
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const Point& a = ring[i];
    const Point& b = ring[(i + 1) % ring.size()];
    const double t = a.x * b.y - b.x * a.y;
    (t >= 0 ? pos : neg).push_back(t);
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  const double twice = std::accumulate(pos.begin(), pos.end(), 0.0) + std::accumulate(neg.begin(), neg.end(), 0.0);
  if (twice == 0.0) throw NotAPolygon("polygon has zero area");
  return twice / 2.0;
}

Polygon::Polygon(std::vector<Point> vertices) : vertices_(std::move(vertices)) {
  if (vertices_.size() < 3) {
    throw NotAPolygon("polygon needs at least 3 vertices, got " + std::to_string(vertices_.size()));
  }
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    const Point& p = vertices_[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw NotAPolygon("polygon vertex is not finite");
    if (p == vertices_[(i + 1) % vertices_.size()]) throw NotAPolygon("polygon has repeated consecutive vertices");
  }
  (void)signed_area(vertices_);
}

Box Polygon::bounds() const {
  Box b{vertices_[0].x, vertices_[0].y, vertices_[0].x, vertices_[0].y};
  for (const Point& p : vertices_) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

namespace {

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool on_segment(Point a, Point b, Point p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_touch(Point a, Point b, Point c, Point d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  if (d1 == 0 && on_segment(c, d, a)) return true;
  if (d2 == 0 && on_segment(c, d, b)) return true;
  if (d3 == 0 && on_segment(a, b, c)) return true;
  if (d4 == 0 && on_segment(a, b, d)) return true;
  return false;
}

}  // namespace

bool is_simple(const Polygon& p) {
  const auto& v = p.vertices();
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) {
        // Adjacent edges may only share their common vertex: reject folds back.
        const std::size_t shared = (j == i + 1) ? j : i;
        const Point& s = v[shared];
        const Point& a = v[(shared + n - 1) % n];
        const Point& b = v[(shared + 1) % n];
        if (cross(s, a, b) == 0 && ((a.x - s.x) * (b.x - s.x) + (a.y - s.y) * (b.y - s.y)) > 0) return false;
        continue;
      }
      if (segments_touch(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n])) return false;
    }
  }
  return true;
}

Polygon reversed(const Polygon& p) {
  std::vector<Point> out;
  out.reserve(p.size());
  out.push_back(p[0]);
  for (std::size_t i = p.size() - 1; i >= 1; --i) out.push_back(p[i]);
  return Polygon(std::move(out));
}

Polygon canonicalize(const Polygon& p) {
  std::vector<Point> v = p.vertices();
  if (signed_area(v) < 0) std::reverse(v.begin(), v.end());
  auto first = std::min_element(v.begin(), v.end(), [](const Point& a, const Point& b) {
    return a.y < b.y || (a.y == b.y && a.x < b.x);
  });
  std::rotate(v.begin(), first, v.end());
  return Polygon(std::move(v));
}

bool is_canonical(const Polygon& p) { return canonicalize(p) == p; }

bool contains(const Polygon& p, Point q) {
  bool inside = false;
  const auto& v = p.vertices();
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > q.y) != (v[j].y > q.y)) {
      const double x = v[i].x + (q.y - v[i].y) * (v[j].x - v[i].x) / (v[j].y - v[i].y);
      if (q.x < x) inside = !inside;
    }
  }
  return inside;
}

}  // namespace bisvp::geom
