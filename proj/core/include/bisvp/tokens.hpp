#pragma once

#include <stdexcept>
#include <vector>

#include "bisvp/polygon.hpp"

namespace bisvp::geom {

/// Quantization domain for vertex tokens: a G x G lattice spanning `roi`.
/// `roi` is the effective extent, already margin-expanded and clamped.
struct GridSpec {
  int G = 16;
  Box roi;
  double margin = 0.10;

  int vocab() const { return G * G + 1; }
  int eos() const { return G * G; }
  void validate() const;

  // Expands `box` by `margin` of its size per side and clamps to the image.
  static GridSpec around(const Box& box, int G, double margin, double image_w, double image_h);
};

enum class Direction { clockwise, counterclockwise };

struct TokenSequence {
  Direction direction = Direction::clockwise;
  std::vector<int> tokens;
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

class DegenerateAfterQuantization : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class EmptyPolygon : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class TokenOutOfRange : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class InvalidSequence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int quantize(Point p, const GridSpec& g);
Point dequantize(int token, const GridSpec& g);

/// Quantizes a polygon's vertices (canonical order) to tokens, collapses
/// consecutive duplicates and appends EOS. The counterclockwise sequence
/// shares the first token and traverses the ring in reverse.
TokenSequence encode_tokens(const Polygon& p, const GridSpec& g, Direction direction);

/// Maps tokens up to EOS back to lattice points; the result is clockwise.
Polygon decode_tokens(const TokenSequence& s, const GridSpec& g);

TokenSequence reverse_direction(const TokenSequence& s);

// Throws InvalidSequence / TokenOutOfRange when `s` breaks the sequence contract.
void validate_sequence(const TokenSequence& s, const GridSpec& g);

}  // namespace bisvp::geom
