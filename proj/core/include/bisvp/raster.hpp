#pragma once

#include <cstdint>
#include <vector>

#include "bisvp/polygon.hpp"

namespace bisvp::geom {

/// Binary coverage on a regular lattice of square cells. Cell (i, j) is
/// sampled at its centre: (origin_x + (j + 0.5) * cell, origin_y + (i + 0.5) * cell).
struct Mask {
  int width = 0;
  int height = 0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell = 1.0;
  std::vector<std::uint8_t> bits;

  bool at(int row, int col) const { return bits[static_cast<std::size_t>(row) * width + col] != 0; }
  std::size_t count() const;
};

Mask make_mask(int width, int height, double origin_x, double origin_y, double cell);

// Scanline fill with the even-odd rule, OR-ed into `mask`.
void fill_polygon(Mask& mask, const Polygon& p);

/// IoU of two polygons rasterized onto a shared lattice covering their joint
/// bounding box, with cell = resolution / 2 (2x supersampling).
double raster_iou(const Polygon& a, const Polygon& b, double resolution = 1.0);

// Pixels visited by a DDA walk from a to b (inclusive) in integer pixel space.
std::vector<std::pair<int, int>> line_pixels(Point a, Point b);

}  // namespace bisvp::geom
