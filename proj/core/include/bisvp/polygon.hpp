#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace bisvp::geom {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

// Axis-aligned box in image pixels.
struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  friend bool operator==(const Box&, const Box&) = default;
};

double box_iou(const Box& a, const Box& b);

class NotAPolygon : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed vertex ring in image coordinates (y grows downward). The last
/// vertex is implicitly joined to the first.
///
/// Construction enforces: at least 3 vertices, no two consecutive (cyclic)
/// vertices equal, non-zero signed area.
class Polygon {
 public:
  explicit Polygon(std::vector<Point> vertices);

  const std::vector<Point>& vertices() const { return vertices_; }
  std::size_t size() const { return vertices_.size(); }
  const Point& operator[](std::size_t i) const { return vertices_[i]; }
  Box bounds() const;

  friend bool operator==(const Polygon&, const Polygon&) = default;

 private:
  std::vector<Point> vertices_;
};

/// Shoelace area in y-down coordinates; positive means clockwise on screen.
/// Throws NotAPolygon for fewer than 3 vertices or zero area.
double signed_area(std::span<const Point> ring);
inline double signed_area(const Polygon& p) { return signed_area(p.vertices()); }

inline bool is_clockwise(const Polygon& p) { return signed_area(p) > 0; }

// True when no two non-adjacent edges intersect or touch.
bool is_simple(const Polygon& p);

/// Clockwise orientation starting at the (y, then x)-minimal vertex.
Polygon canonicalize(const Polygon& p);
bool is_canonical(const Polygon& p);

// Same vertex set traversed in the opposite direction, keeping the first vertex.
Polygon reversed(const Polygon& p);

bool contains(const Polygon& p, Point q);

}  // namespace bisvp::geom
