#include "bisvp/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "bisvp/raster.hpp"
#include "bisvp/rng.hpp"

namespace bisvp::synth {

using geom::Point;
using geom::Polygon;

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::axis_rect: return "axis-rect";
    case ShapeFamily::rotated_rect: return "rotated-rect";
    case ShapeFamily::l_shape: return "L";
    case ShapeFamily::u_shape: return "U";
    case ShapeFamily::t_shape: return "T";
    case ShapeFamily::random_convex: return "random-convex";
  }
  return "?";
}

ShapeFamily family_from_name(const std::string& name) {
  for (auto f : {ShapeFamily::axis_rect, ShapeFamily::rotated_rect, ShapeFamily::l_shape, ShapeFamily::u_shape,
                 ShapeFamily::t_shape, ShapeFamily::random_convex}) {
    if (name == family_name(f)) return f;
  }
  throw std::invalid_argument("unknown shape family '" + name + "'");
}

void SceneConfig::validate() const {
  if (width < 16 || height < 16) throw std::invalid_argument("SceneConfig: image too small");
  if (max_buildings < 1) throw std::invalid_argument("SceneConfig: max_buildings must be >= 1");
  if (!(min_side > 4) || max_side < min_side) throw std::invalid_argument("SceneConfig: bad side range");
  if (max_side + 2 * border > std::min(width, height)) throw std::invalid_argument("SceneConfig: buildings exceed image");
  if (max_attempts < 1) throw std::invalid_argument("SceneConfig: max_attempts must be >= 1");
}

namespace {

// Integer-snapped outline in a local frame with its own origin at (0,0).
std::vector<Point> rectilinear(ShapeFamily family, double w, double h, Rng& rng) {
  w = std::round(w);
  h = std::round(h);
  auto frac = [&](double lo, double hi, double extent) { return std::round(extent * rng.uniform(lo, hi)); };
  switch (family) {
    case ShapeFamily::l_shape: {
      const double cx = frac(0.35, 0.65, w), cy = frac(0.35, 0.65, h);
      return {{0, 0}, {cx, 0}, {cx, cy}, {w, cy}, {w, h}, {0, h}};
    }
    case ShapeFamily::u_shape: {
      const double a = frac(0.25, 0.38, w), b = w - frac(0.25, 0.38, w), d = frac(0.4, 0.65, h);
      return {{0, 0}, {a, 0}, {a, d}, {b, d}, {b, 0}, {w, 0}, {w, h}, {0, h}};
    }
    case ShapeFamily::t_shape: {
      const double a = frac(0.25, 0.38, w), b = w - frac(0.25, 0.38, w), d = frac(0.35, 0.6, h);
      return {{0, 0}, {w, 0}, {w, d}, {b, d}, {b, h}, {a, h}, {a, d}, {0, d}};
    }
    default:
      return {{0, 0}, {w, 0}, {w, h}, {0, h}};
  }
}

// Random orientation among the four axis-aligned rotations/flips.
std::vector<Point> random_axis_flip(std::vector<Point> pts, double w, double h, Rng& rng) {
  const bool fx = rng.uniform() < 0.5;
  const bool fy = rng.uniform() < 0.5;
  for (Point& p : pts) {
    if (fx) p.x = std::round(w) - p.x;
    if (fy) p.y = std::round(h) - p.y;
  }
  return pts;
}

std::vector<Point> rotated_rect(double w, double h, Rng& rng) {
  const double theta = rng.uniform(-std::numbers::pi / 4, std::numbers::pi / 4);
  const double c = std::cos(theta), s = std::sin(theta);
  std::vector<Point> pts;
  for (Point q : {Point{-w / 2, -h / 2}, Point{w / 2, -h / 2}, Point{w / 2, h / 2}, Point{-w / 2, h / 2}}) {
    pts.push_back({q.x * c - q.y * s, q.x * s + q.y * c});
  }
  return pts;
}

std::vector<Point> random_convex(double w, double h, Rng& rng) {
  const int n = rng.uniform_int(5, 8);
  // Points on an ellipse are in convex position; angles keep a minimum gap.
  const double slot = 2 * std::numbers::pi / n;
  const double phase = rng.uniform(0, slot);
  std::vector<Point> pts;
  for (int i = 0; i < n; ++i) {
    const double a = phase + slot * (i + rng.uniform(0.15, 0.85));
    pts.push_back({w / 2 * std::cos(a), h / 2 * std::sin(a)});
  }
  return pts;
}

geom::Box bounds_of(const std::vector<Point>& pts) { return Polygon(pts).bounds(); }

bool boxes_clear(const geom::Box& a, const geom::Box& b, double gap) {
  return a.x1 + gap <= b.x0 || b.x1 + gap <= a.x0 || a.y1 + gap <= b.y0 || b.y1 + gap <= a.y0;
}

}  // namespace

Scene sample_scene(std::uint64_t seed, const SceneConfig& config, std::string id) {
  config.validate();
  Rng rng(seed, 0x5CE7E);
  Scene scene;
  scene.id = id.empty() ? "scene_" + std::to_string(seed) : std::move(id);
  scene.width = config.width;
  scene.height = config.height;
  scene.seed = seed;
  const int count = rng.uniform_int(1, config.max_buildings);
  std::vector<geom::Box> placed;
  for (int b = 0; b < count; ++b) {
    bool ok = false;
    for (int attempt = 0; attempt < config.max_attempts && !ok; ++attempt) {
      const auto family = static_cast<ShapeFamily>(rng.uniform_int(0, 5));
      const double w = rng.uniform(config.min_side, config.max_side);
      const double h = rng.uniform(config.min_side, config.max_side);
      std::vector<Point> local;
      switch (family) {
        case ShapeFamily::rotated_rect: local = rotated_rect(w, h, rng); break;
        case ShapeFamily::random_convex: local = random_convex(w, h, rng); break;
        default: local = random_axis_flip(rectilinear(family, w, h, rng), w, h, rng); break;
      }
      const geom::Box lb = bounds_of(local);
      const double lo_x = config.border - lb.x0;
      const double hi_x = config.width - config.border - lb.x1;
      const double lo_y = config.border - lb.y0;
      const double hi_y = config.height - config.border - lb.y1;
      if (hi_x < lo_x || hi_y < lo_y) continue;
      double ox = rng.uniform(lo_x, hi_x);
      double oy = rng.uniform(lo_y, hi_y);
      if (family != ShapeFamily::rotated_rect && family != ShapeFamily::random_convex) {
        ox = std::clamp(std::round(ox), std::ceil(lo_x), std::floor(hi_x));
        oy = std::clamp(std::round(oy), std::ceil(lo_y), std::floor(hi_y));
      }
      for (Point& p : local) p = {p.x + ox, p.y + oy};
      const geom::Box box = bounds_of(local);
      if (!std::all_of(placed.begin(), placed.end(), [&](const geom::Box& o) { return boxes_clear(box, o, config.spacing); })) {
        continue;
      }
      Polygon poly = geom::canonicalize(Polygon(local));
      if (!geom::is_simple(poly)) continue;
      const double intensity = rng.uniform(0.6, 0.9);
      scene.buildings.push_back(BuildingSpec{family, std::move(poly), intensity});
      placed.push_back(box);
      ok = true;
    }
    if (!ok) {
      throw PlacementFailed("scene " + scene.id + ": could not place building " + std::to_string(b) + " after " +
                            std::to_string(config.max_attempts) + " attempts");
    }
  }
  return scene;
}

RenderedSample render(const Scene& scene, const NoiseConfig& noise) {
  Rng rng(scene.seed, 0x4E015E);
  Image img;
  img.width = scene.width;
  img.height = scene.height;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0.0);
  if (!noise.noise_free) {
    for (double& v : img.pixels) v = rng.uniform(0.0, noise.background_max);
  }
  for (const BuildingSpec& b : scene.buildings) {
    geom::Mask m = geom::make_mask(img.width, img.height, 0.0, 0.0, 1.0);
    geom::fill_polygon(m, b.polygon);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        if (!m.at(y, x)) continue;
        const bool edge = x == 0 || y == 0 || x == img.width - 1 || y == img.height - 1 || !m.at(y, x - 1) ||
                          !m.at(y, x + 1) || !m.at(y - 1, x) || !m.at(y + 1, x);
        double v = edge ? noise.boundary_factor * b.intensity : b.intensity;
        if (!noise.noise_free) v += noise.interior_sigma * rng.normal();
        img.at(x, y) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return RenderedSample{std::move(img), scene};
}

std::uint64_t scene_seed(std::uint64_t dataset_seed, std::uint64_t index) {
  Rng r(dataset_seed, 0xDA7A5E7ULL + index);
  return r.next_u64();
}

std::vector<RenderedSample> generate_dataset(std::uint64_t seed, int count, const SceneConfig& config,
                                             const NoiseConfig& noise) {
  std::vector<RenderedSample> out;
  out.reserve(static_cast<std::size_t>(std::max(0, count)));
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scene_%06d", i);
    out.push_back(render(sample_scene(scene_seed(seed, static_cast<std::uint64_t>(i)), config, id), noise));
  }
  return out;
}

}  // namespace bisvp::synth
