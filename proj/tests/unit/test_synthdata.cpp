#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "bisvp/dataset_io.hpp"
#include "bisvp/raster.hpp"
#include "bisvp/scene.hpp"

using namespace bisvp;
using namespace bisvp::synth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bisvp_synth_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("scene sampling is a pure function of seed and config") {
  SceneConfig cfg;
  CHECK(sample_scene(7, cfg) == sample_scene(7, cfg));
  CHECK_FALSE(sample_scene(7, cfg) == sample_scene(8, cfg));
  cfg.max_buildings = 1;
  for (std::uint64_t s = 0; s < 20; ++s) CHECK(sample_scene(s, cfg).buildings.size() == 1);
}

TEST_CASE("buildings are disjoint, inside the image and cover every family") {
  SceneConfig cfg;
  std::set<ShapeFamily> seen;
  for (std::uint64_t s = 0; s < 60; ++s) {
    const Scene scene = sample_scene(s, cfg);
    REQUIRE(!scene.buildings.empty());
    CHECK(scene.buildings.size() <= 5);
    for (std::size_t i = 0; i < scene.buildings.size(); ++i) {
      const auto& b = scene.buildings[i];
      seen.insert(b.family);
      CHECK(geom::is_simple(b.polygon));
      CHECK(geom::is_canonical(b.polygon));
      CHECK(b.intensity >= 0.6);
      CHECK(b.intensity <= 0.9);
      const geom::Box box = b.polygon.bounds();
      CHECK(box.x0 >= 0);
      CHECK(box.y0 >= 0);
      CHECK(box.x1 <= cfg.width);
      CHECK(box.y1 <= cfg.height);
      for (std::size_t j = i + 1; j < scene.buildings.size(); ++j) {
        CHECK(geom::raster_iou(b.polygon, scene.buildings[j].polygon) == 0.0);
      }
    }
  }
  CHECK(seen.size() == 6);
}

TEST_CASE("family names roundtrip") {
  for (auto f : {ShapeFamily::axis_rect, ShapeFamily::rotated_rect, ShapeFamily::l_shape, ShapeFamily::u_shape,
                 ShapeFamily::t_shape, ShapeFamily::random_convex}) {
    CHECK(family_from_name(family_name(f)) == f);
  }
  CHECK_THROWS(family_from_name("hexagon"));
}

TEST_CASE("impossible placement is reported") {
  SceneConfig cfg;
  cfg.width = cfg.height = 20;
  cfg.min_side = 14;
  cfg.max_side = 16;
  cfg.max_buildings = 5;
  cfg.max_attempts = 50;
  bool failed = false;
  for (std::uint64_t s = 0; s < 20 && !failed; ++s) {
    try {
      sample_scene(s, cfg);
    } catch (const PlacementFailed&) {
      failed = true;
    }
  }
  CHECK(failed);
}

TEST_CASE("rendering") {
  SceneConfig cfg;
  const Scene scene = sample_scene(3, cfg, "s");
  NoiseConfig clean;
  clean.noise_free = true;
  const RenderedSample a = render(scene, clean);
  CHECK(a.image.width == 128);
  CHECK(a.image.pixels.size() == 128u * 128u);
  for (double v : a.image.pixels) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  // Noise is seeded from the scene.
  const RenderedSample n1 = render(scene), n2 = render(scene);
  CHECK(n1.image.pixels == n2.image.pixels);
  CHECK(n1.image.pixels != a.image.pixels);

  // Interior pixel of the first building carries its intensity.
  const auto& b = scene.buildings.front();
  bool found = false;
  for (int y = 1; y < 127 && !found; ++y) {
    for (int x = 1; x < 127 && !found; ++x) {
      auto in = [&](int px, int py) { return geom::contains(b.polygon, {px + 0.5, py + 0.5}); };
      if (in(x, y) && in(x - 1, y) && in(x + 1, y) && in(x, y - 1) && in(x, y + 1)) {
        CHECK(a.image.at(x, y) == doctest::Approx(b.intensity));
        found = true;
      }
    }
  }
  CHECK(found);
}

TEST_CASE("dataset write/read roundtrip") {
  const fs::path dir = scratch("roundtrip");
  SceneConfig cfg;
  const auto data = generate_dataset(11, 6, cfg, NoiseConfig{});
  CHECK(generate_dataset(11, 6, cfg, NoiseConfig{})[5].image.pixels == data[5].image.pixels);
  write_dataset(dir, data);
  const auto back = read_dataset(dir);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].scene == data[i].scene);
    REQUIRE(back[i].image.pixels.size() == data[i].image.pixels.size());
    double worst = 0;
    for (std::size_t k = 0; k < data[i].image.pixels.size(); ++k) {
      worst = std::max(worst, std::abs(back[i].image.pixels[k] - data[i].image.pixels[k]));
    }
    CHECK(worst <= 1.0 / 255.0);
  }
  fs::remove_all(dir);
}

TEST_CASE("jsonl parse errors") {
  const Scene scene = sample_scene(1, SceneConfig{}, "x");
  const std::string line = scene_to_jsonl(scene, "x.pgm");
  CHECK(scene_from_jsonl(line).scene == scene);
  try {
    scene_from_jsonl(line.substr(0, line.size() / 2), 7);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 7);
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
  }

  const std::string bad = R"({"id":"b","width":128,"height":128,"seed":0,"image_file":"b.pgm",)"
                          R"("buildings":[{"family":"axis-rect","intensity":0.7,"polygon":[[0,0],[1,1]]}]})";
  CHECK_THROWS_AS(scene_from_jsonl(bad), ValidationError);

  const fs::path dir = scratch("truncated");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "scenes.jsonl");
    f << line << "\n" << line.substr(0, 40) << "\n";
  }
  try {
    read_scenes(dir / "scenes.jsonl");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(read_dataset(scratch("missing")), MissingFile);
  fs::remove_all(dir);
}

TEST_CASE("pgm roundtrip and errors") {
  const fs::path dir = scratch("pgm");
  fs::create_directories(dir);
  Image img{3, 2, {0.0, 0.5, 1.0, 0.25, 0.75, 0.1}};
  write_pgm(dir / "a.pgm", img);
  const Image back = read_pgm(dir / "a.pgm");
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 0.5 / 255.0);
  {
    std::ofstream f(dir / "bad.pgm", std::ios::binary);
    f << "P2\n3 2\n255\n";
  }
  CHECK_THROWS(read_pgm(dir / "bad.pgm"));
  CHECK_THROWS(read_pgm(dir / "none.pgm"));
  fs::remove_all(dir);
}
