#include "bisvp/tokens.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace bisvp::geom {

void GridSpec::validate() const {
  if (G < 2) throw std::invalid_argument("GridSpec: G must be >= 2");
  if (!(roi.x1 > roi.x0) || !(roi.y1 > roi.y0)) throw std::invalid_argument("GridSpec: empty roi");
}

GridSpec GridSpec::around(const Box& box, int G, double margin, double image_w, double image_h) {
  const double mx = box.width() * margin;
  const double my = box.height() * margin;
  GridSpec g;
  g.G = G;
  g.margin = margin;
  g.roi = Box{std::max(0.0, box.x0 - mx), std::max(0.0, box.y0 - my), std::min(image_w, box.x1 + mx),
              std::min(image_h, box.y1 + my)};
  g.validate();
  return g;
}

namespace {
int axis_index(double v, double lo, double hi, int G) {
  // Round half up.
  const double t = (v - lo) / (hi - lo) * static_cast<double>(G - 1);
  const int idx = static_cast<int>(std::floor(t + 0.5));
  return std::clamp(idx, 0, G - 1);
}
}  // namespace

int quantize(Point p, const GridSpec& g) {
  const int col = axis_index(p.x, g.roi.x0, g.roi.x1, g.G);
  const int row = axis_index(p.y, g.roi.y0, g.roi.y1, g.G);
  return row * g.G + col;
}

Point dequantize(int token, const GridSpec& g) {
  if (token < 0 || token >= g.G * g.G) throw TokenOutOfRange("token " + std::to_string(token) + " is not a vertex");
  const int row = token / g.G;
  const int col = token % g.G;
  const double step = static_cast<double>(g.G - 1);
  return {g.roi.x0 + col / step * g.roi.width(), g.roi.y0 + row / step * g.roi.height()};
}

TokenSequence encode_tokens(const Polygon& p, const GridSpec& g, Direction direction) {
  g.validate();
  const Polygon canon = canonicalize(p);
  std::vector<int> ring;
  ring.reserve(canon.size());
  for (const Point& v : canon.vertices()) {
    const int t = quantize(v, g);
    if (ring.empty() || ring.back() != t) ring.push_back(t);
  }
  while (ring.size() > 1 && ring.back() == ring.front()) ring.pop_back();
  const std::set<int> distinct(ring.begin(), ring.end());
  if (distinct.size() < 3) {
    throw DegenerateAfterQuantization("polygon collapses to " + std::to_string(distinct.size()) +
                                      " distinct tokens at G=" + std::to_string(g.G));
  }
  ring.push_back(g.eos());
  TokenSequence cw{Direction::clockwise, std::move(ring)};
  return direction == Direction::clockwise ? cw : reverse_direction(cw);
}

Polygon decode_tokens(const TokenSequence& s, const GridSpec& g) {
  g.validate();
  std::vector<Point> pts;
  for (int t : s.tokens) {
    if (t < 0 || t > g.eos()) throw TokenOutOfRange("token " + std::to_string(t) + " outside [0, " + std::to_string(g.eos()) + "]");
    if (t == g.eos()) break;
    pts.push_back(dequantize(t, g));
  }
  if (pts.size() < 3) throw EmptyPolygon("sequence has " + std::to_string(pts.size()) + " vertices before EOS");
  Polygon poly(std::move(pts));
  return signed_area(poly) < 0 ? reversed(poly) : poly;
}

TokenSequence reverse_direction(const TokenSequence& s) {
  TokenSequence out;
  out.direction = s.direction == Direction::clockwise ? Direction::counterclockwise : Direction::clockwise;
  out.tokens = s.tokens;
  if (out.tokens.size() <= 2) return out;
  // Keep the first token and the trailing EOS; reverse what lies between.
  std::reverse(out.tokens.begin() + 1, out.tokens.end() - 1);
  return out;
}

void validate_sequence(const TokenSequence& s, const GridSpec& g) {
  if (s.tokens.empty() || s.tokens.back() != g.eos()) throw InvalidSequence("sequence must end with EOS");
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    const int t = s.tokens[i];
    if (t < 0 || t > g.eos()) throw TokenOutOfRange("token " + std::to_string(t) + " out of range");
    if (t == g.eos() && i + 1 != s.tokens.size()) throw InvalidSequence("EOS before the end of the sequence");
    if (i > 0 && t != g.eos() && t == s.tokens[i - 1]) throw InvalidSequence("consecutive duplicate tokens");
  }
}

}  // namespace bisvp::geom
