#pragma once

#include <json.hpp>

#include "bisvp/polygon.hpp"

namespace bisvp::detail {

inline nlohmann::json polygon_to_json(const geom::Polygon& p) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : p.vertices()) arr.push_back({v.x, v.y});
  return arr;
}

// Throws std::invalid_argument on malformed input; Polygon's own checks apply.
inline geom::Polygon polygon_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("polygon must be an array of [x,y] pairs");
  std::vector<geom::Point> pts;
  for (const auto& v : j) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw std::invalid_argument("polygon vertex must be [x,y]");
    }
    pts.push_back({v[0].get<double>(), v[1].get<double>()});
  }
  return geom::Polygon(std::move(pts));
}

}  // namespace bisvp::detail
