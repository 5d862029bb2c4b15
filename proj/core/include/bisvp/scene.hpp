#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bisvp/polygon.hpp"

namespace bisvp::synth {

enum class ShapeFamily { axis_rect, rotated_rect, l_shape, u_shape, t_shape, random_convex };

const char* family_name(ShapeFamily f);
ShapeFamily family_from_name(const std::string& name);

struct BuildingSpec {
  ShapeFamily family = ShapeFamily::axis_rect;
  geom::Polygon polygon;
  double intensity = 0.75;  // [0.6, 0.9]
  friend bool operator==(const BuildingSpec&, const BuildingSpec&) = default;
};

struct Scene {
  std::string id;
  int width = 128;
  int height = 128;
  std::vector<BuildingSpec> buildings;
  std::uint64_t seed = 0;
  friend bool operator==(const Scene&, const Scene&) = default;
};

struct SceneConfig {
  int width = 128;
  int height = 128;
  int max_buildings = 5;
  double min_side = 14.0;
  double max_side = 40.0;
  int max_attempts = 1000;
  double border = 2.0;    // keep-out band at the image border
  double spacing = 2.0;   // minimum gap between building bounding boxes
  void validate() const;
};

class PlacementFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic in (seed, config). Building count is uniform in
/// [1, max_buildings]; placements are rejection-sampled so that buildings
/// are mutually disjoint.
Scene sample_scene(std::uint64_t seed, const SceneConfig& config, std::string id = {});

// Grayscale image in [0, 1], row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

struct NoiseConfig {
  bool noise_free = false;
  double background_max = 0.2;
  double interior_sigma = 0.05;
  double boundary_factor = 0.5;
};

struct RenderedSample {
  Image image;
  Scene scene;
};

/// Background uniform in [0, background_max]; interiors at the building
/// intensity plus Gaussian noise; boundary pixels (inside, with a 4-neighbour
/// outside) at boundary_factor x intensity. Noise is seeded from scene.seed.
RenderedSample render(const Scene& scene, const NoiseConfig& noise = {});

// Per-scene seed derived from a dataset seed and an index.
std::uint64_t scene_seed(std::uint64_t dataset_seed, std::uint64_t index);
std::vector<RenderedSample> generate_dataset(std::uint64_t seed, int count, const SceneConfig& config,
                                             const NoiseConfig& noise);

}  // namespace bisvp::synth
