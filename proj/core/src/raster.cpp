#include "bisvp/raster.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bisvp::geom {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Mask make_mask(int width, int height, double origin_x, double origin_y, double cell) {
  if (width < 0 || height < 0 || !(cell > 0)) throw std::invalid_argument("make_mask: bad lattice");
  Mask m;
  m.width = width;
  m.height = height;
  m.origin_x = origin_x;
  m.origin_y = origin_y;
  m.cell = cell;
  m.bits.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
  return m;
}

void fill_polygon(Mask& mask, const Polygon& p) {
  const auto& v = p.vertices();
  const std::size_t n = v.size();
  std::vector<double> xs;
  xs.reserve(n);
  const Box b = p.bounds();
  const int row_lo = std::max(0, static_cast<int>(std::floor((b.y0 - mask.origin_y) / mask.cell - 0.5)));
  const int row_hi = std::min(mask.height - 1, static_cast<int>(std::ceil((b.y1 - mask.origin_y) / mask.cell)));
  for (int row = row_lo; row <= row_hi; ++row) {
    const double yc = mask.origin_y + (row + 0.5) * mask.cell;
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Point& a = v[i];
      const Point& c = v[(i + 1) % n];
      if ((a.y > yc) != (c.y > yc)) xs.push_back(a.x + (yc - a.y) * (c.x - a.x) / (c.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    std::uint8_t* line = mask.bits.data() + static_cast<std::size_t>(row) * mask.width;
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // Sample centres with xs[k] <= xc < xs[k+1].
      const double lo = (xs[k] - mask.origin_x) / mask.cell - 0.5;
      const double hi = (xs[k + 1] - mask.origin_x) / mask.cell - 0.5;
      const int c0 = std::max(0, static_cast<int>(std::ceil(lo)));
      const int c1 = std::min(mask.width, static_cast<int>(std::ceil(hi)));
      for (int c = c0; c < c1; ++c) line[c] = 1;
    }
  }
}

double raster_iou(const Polygon& a, const Polygon& b, double resolution) {
  if (!(resolution > 0)) throw std::invalid_argument("raster_iou: resolution must be > 0");
  const Box ba = a.bounds();
  const Box bb = b.bounds();
  const Box joint{std::min(ba.x0, bb.x0), std::min(ba.y0, bb.y0), std::max(ba.x1, bb.x1), std::max(ba.y1, bb.y1)};
  const double cell = resolution / 2.0;
  const int w = std::max(1, static_cast<int>(std::ceil(joint.width() / cell)));
  const int h = std::max(1, static_cast<int>(std::ceil(joint.height() / cell)));
  Mask ma = make_mask(w, h, joint.x0, joint.y0, cell);
  Mask mb = make_mask(w, h, joint.x0, joint.y0, cell);
  fill_polygon(ma, a);
  fill_polygon(mb, b);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < ma.bits.size(); ++i) {
    inter += ma.bits[i] & mb.bits[i];
    uni += ma.bits[i] | mb.bits[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::pair<int, int>> line_pixels(Point a, Point b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(dx), std::abs(dy)))));
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int x = static_cast<int>(std::floor(a.x + t * dx));
    const int y = static_cast<int>(std::floor(a.y + t * dy));
    if (out.empty() || out.back() != std::make_pair(x, y)) out.emplace_back(x, y);
  }
  return out;
}

}  // namespace bisvp::geom
