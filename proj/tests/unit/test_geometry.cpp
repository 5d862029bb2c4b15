#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "bisvp/polygon.hpp"
#include "bisvp/raster.hpp"
#include "bisvp/rng.hpp"
#include "bisvp/tokens.hpp"
#include "oracles.hpp"

using namespace bisvp;
using namespace bisvp::geom;

namespace {

Polygon square3() { return Polygon({{0, 0}, {3, 0}, {3, 3}, {0, 3}}); }

GridSpec grid4() {
  GridSpec g;
  g.G = 4;
  g.roi = Box{0, 0, 3, 3};
  g.margin = 0.0;
  return g;
}

std::set<std::pair<double, double>> vertex_set(const Polygon& p) {
  std::set<std::pair<double, double>> s;
  for (const Point& v : p.vertices()) s.insert({v.x, v.y});
  return s;
}

}  // namespace

TEST_CASE("signed area examples") {
  CHECK(signed_area(square3()) == 9.0);
  std::vector<Point> rev = square3().vertices();
  std::reverse(rev.begin(), rev.end());
  CHECK(signed_area(rev) == -9.0);
  const std::vector<Point> collinear{{0, 0}, {1, 1}, {2, 2}};
  CHECK_THROWS_AS(signed_area(collinear), NotAPolygon);
  CHECK_THROWS_AS(Polygon{collinear}, NotAPolygon);
  CHECK_THROWS_AS(Polygon({{0, 0}, {1, 0}}), NotAPolygon);
  CHECK_THROWS_AS(Polygon({{0, 0}, {1, 0}, {1, 0}, {0, 1}}), NotAPolygon);
}

TEST_CASE("signed area flips exactly under reversal and matches the shoelace oracle") {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Polygon p = oracle::random_convex(rng, 0, 100);
    std::vector<Point> rev = p.vertices();
    std::reverse(rev.begin(), rev.end());
    CHECK(signed_area(rev) == -signed_area(p));
    CHECK(signed_area(p) == doctest::Approx(oracle::shoelace(p.vertices())).epsilon(1e-12));
  }
}

TEST_CASE("canonicalize examples") {
  const Polygon from33({{3, 3}, {0, 3}, {0, 0}, {3, 0}});
  CHECK(canonicalize(from33) == square3());
  const Polygon ccw({{0, 0}, {0, 3}, {3, 3}, {3, 0}});
  CHECK(canonicalize(ccw) == square3());
  CHECK(canonicalize(square3()) == square3());
  CHECK(is_canonical(square3()));
  CHECK_FALSE(is_canonical(from33));

  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const Polygon c = canonicalize(oracle::random_convex(rng, 0, 50));
    CHECK(is_clockwise(c));
    CHECK(canonicalize(c) == c);
  }
}

TEST_CASE("simplicity and containment") {
  CHECK(is_simple(square3()));
  CHECK_FALSE(is_simple(Polygon({{0, 0}, {4, 3}, {4, 0}, {0, 2}})));
  CHECK(contains(square3(), {1.5, 1.5}));
  CHECK_FALSE(contains(square3(), {4, 1}));
}

TEST_CASE("encode examples") {
  const GridSpec g = grid4();
  CHECK(encode_tokens(square3(), g, Direction::clockwise).tokens == std::vector<int>{0, 3, 15, 12, 16});
  const TokenSequence ccw = encode_tokens(square3(), g, Direction::counterclockwise);
  CHECK(ccw.tokens == std::vector<int>{0, 12, 15, 3, 16});
  CHECK(ccw.direction == Direction::counterclockwise);

  // (0,0) and (0.2,0) share a cell.
  const Polygon dup({{0, 0}, {0.2, 0}, {3, 0}, {3, 3}, {0, 3}});
  CHECK(encode_tokens(dup, g, Direction::clockwise).tokens == std::vector<int>{0, 3, 15, 12, 16});

  const Polygon tiny({{0, 0}, {0.3, 0}, {0.3, 0.3}});
  CHECK_THROWS_AS(encode_tokens(tiny, g, Direction::clockwise), DegenerateAfterQuantization);
}

TEST_CASE("decode examples") {
  const GridSpec g = grid4();
  CHECK(decode_tokens({Direction::clockwise, {0, 3, 15, 12, 16}}, g) == square3());
  CHECK(decode_tokens({Direction::counterclockwise, {0, 12, 15, 3, 16}}, g) == square3());
  CHECK_THROWS_AS(decode_tokens({Direction::clockwise, {16}}, g), EmptyPolygon);
  CHECK_THROWS_AS(decode_tokens({Direction::clockwise, {0, 3, 17}}, g), TokenOutOfRange);
  CHECK_THROWS_AS(dequantize(16, g), TokenOutOfRange);
}

TEST_CASE("reverse_direction examples") {
  const TokenSequence s{Direction::clockwise, {5, 1, 2, 3, 16}};
  CHECK(reverse_direction(s).tokens == std::vector<int>{5, 3, 2, 1, 16});
  CHECK(reverse_direction(reverse_direction(s)) == s);
  const TokenSequence two{Direction::clockwise, {7, 16}};
  CHECK(reverse_direction(two).tokens == std::vector<int>{7, 16});
}

TEST_CASE("sequence validation") {
  const GridSpec g = grid4();
  CHECK_NOTHROW(validate_sequence({Direction::clockwise, {0, 3, 15, 12, 16}}, g));
  CHECK_THROWS_AS(validate_sequence({Direction::clockwise, {0, 3, 15}}, g), InvalidSequence);
  CHECK_THROWS_AS(validate_sequence({Direction::clockwise, {0, 16, 3, 16}}, g), InvalidSequence);
  CHECK_THROWS_AS(validate_sequence({Direction::clockwise, {0, 3, 3, 16}}, g), InvalidSequence);
  CHECK_THROWS_AS(validate_sequence({Direction::clockwise, {0, -1, 16}}, g), TokenOutOfRange);
}

TEST_CASE("grid around a box expands by the margin and clamps") {
  const GridSpec g = GridSpec::around(Box{10, 20, 30, 60}, 16, 0.1, 128, 128);
  CHECK(g.roi == Box{8, 16, 32, 64});
  const GridSpec c = GridSpec::around(Box{0, 100, 20, 128}, 16, 0.1, 128, 128);
  CHECK(c.roi.x0 == 0.0);
  CHECK(c.roi.y1 == 128.0);
  CHECK_THROWS_AS(GridSpec::around(Box{5, 5, 5, 9}, 16, 0.0, 128, 128), std::invalid_argument);
}

TEST_CASE("codec roundtrip over random polygons") {
  Rng rng(2024);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const Polygon p = oracle::random_convex(rng, 0, 128, 3, 10);
    const int G = rng.uniform_int(4, 32);
    const GridSpec g = GridSpec::around(p.bounds(), G, 0.1, 128, 128);
    const double bx = g.roi.width() / (2.0 * (G - 1)) + 1e-9;
    const double by = g.roi.height() / (2.0 * (G - 1)) + 1e-9;
    TokenSequence cw;
    try {
      cw = encode_tokens(p, g, Direction::clockwise);
    } catch (const DegenerateAfterQuantization&) {
      continue;
    }
    Polygon decoded = square3();
    try {
      decoded = decode_tokens(cw, g);
    } catch (const NotAPolygon&) {
      continue;  // quantized ring became self-touching
    }
    ++checked;
    const Polygon canon = canonicalize(p);
    for (const Point& v : canon.vertices()) {
      const Point q = dequantize(quantize(v, g), g);
      CHECK(std::abs(q.x - v.x) <= bx);
      CHECK(std::abs(q.y - v.y) <= by);
      CHECK(vertex_set(decoded).count({q.x, q.y}) == 1);
    }
    const TokenSequence ccw = reverse_direction(cw);
    CHECK(ccw.tokens.front() == cw.tokens.front());
    CHECK(reverse_direction(ccw) == cw);
    CHECK(encode_tokens(p, g, Direction::counterclockwise) == ccw);
    CHECK(vertex_set(decode_tokens(ccw, g)) == vertex_set(decoded));
    CHECK(is_clockwise(decode_tokens(ccw, g)));
  }
  CHECK(checked >= 900);
}

TEST_CASE("raster IoU examples") {
  const Polygon a({{0, 0}, {10, 0}, {10, 10}, {0, 10}});
  const Polygon b({{5, 0}, {15, 0}, {15, 10}, {5, 10}});
  const Polygon far({{50, 50}, {60, 50}, {60, 60}});
  CHECK(raster_iou(a, a) == 1.0);
  CHECK(raster_iou(a, far) == 0.0);
  CHECK(std::abs(raster_iou(a, b) - 1.0 / 3.0) <= 0.01);
  const Polygon unit_a({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  const Polygon unit_b({{0.5, 0}, {1.5, 0}, {1.5, 1}, {0.5, 1}});
  CHECK(std::abs(raster_iou(unit_a, unit_b, 0.01) - 1.0 / 3.0) <= 0.01);
}

TEST_CASE("raster IoU agrees with the Monte-Carlo oracle, is symmetric and bounded") {
  Rng rng(77), mc(78);
  for (int i = 0; i < 30; ++i) {
    const Polygon a = oracle::random_convex(rng, 0, 60);
    const Polygon b = oracle::random_convex(rng, 0, 60);
    const double iou = raster_iou(a, b);
    CHECK(iou == raster_iou(b, a));
    CHECK(iou >= 0.0);
    CHECK(iou <= 1.0);
    CHECK(std::abs(iou - oracle::monte_carlo_iou(a, b, mc)) <= 0.02);
  }
}

TEST_CASE("mask fill and line pixels") {
  Mask m = make_mask(4, 4, 0, 0, 1);
  fill_polygon(m, Polygon({{0, 0}, {2, 0}, {2, 2}, {0, 2}}));
  CHECK(m.count() == 4);
  CHECK(m.at(1, 1));
  CHECK_FALSE(m.at(2, 2));
  const auto px = line_pixels({0, 0}, {3, 0});
  CHECK(px.size() == 4);
  CHECK(px.front() == std::pair<int, int>{0, 0});
  CHECK(px.back() == std::pair<int, int>{3, 0});
  CHECK(box_iou(Box{0, 0, 2, 2}, Box{1, 0, 3, 2}) == doctest::Approx(1.0 / 3.0));
}
