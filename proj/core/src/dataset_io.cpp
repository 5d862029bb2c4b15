#include "bisvp/dataset_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <fstream>
#include <sstream>

#include "json_util.hpp"

namespace bisvp::synth {

using nlohmann::json;

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::string bytes(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const double v = std::clamp(image.pixels[i], 0.0, 1.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

namespace {
// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}
}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open image " + path.string());
  if (pgm_token(in) != "P5") throw std::runtime_error(path.string() + ": not a binary PGM (P5)");
  Image img;
  try {
    img.width = std::stoi(pgm_token(in));
    img.height = std::stoi(pgm_token(in));
    if (std::stoi(pgm_token(in)) != 255) throw std::runtime_error("maxval");
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed PGM header (expected maxval 255)");
  }
  if (img.width <= 0 || img.height <= 0) throw std::runtime_error(path.string() + ": bad PGM size");
  std::string bytes(static_cast<std::size_t>(img.width) * img.height, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw std::runtime_error(path.string() + ": truncated PGM");
  img.pixels.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  return img;
}

std::string scene_to_jsonl(const Scene& scene, const std::string& image_file) {
  json buildings = json::array();
  for (const auto& b : scene.buildings) {
    buildings.push_back({{"polygon", detail::polygon_to_json(b.polygon)},
                         {"intensity", b.intensity},
                         {"family", family_name(b.family)}});
  }
  json j = {{"id", scene.id},
            {"width", scene.width},
            {"height", scene.height},
            {"image_file", image_file},
            {"seed", scene.seed},
            {"buildings", std::move(buildings)}};
  return j.dump();
}

SceneRecord scene_from_jsonl(const std::string& line, std::size_t line_number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line_number);
  }
  SceneRecord rec;
  try {
    rec.scene.id = j.at("id").get<std::string>();
    rec.scene.width = j.at("width").get<int>();
    rec.scene.height = j.at("height").get<int>();
    rec.image_file = j.at("image_file").get<std::string>();
    rec.scene.seed = j.value("seed", std::uint64_t{0});
    for (const auto& b : j.at("buildings")) {
      std::optional<geom::Polygon> polygon;
      try {
        polygon = detail::polygon_from_json(b.at("polygon"));
      } catch (const json::exception&) {
        throw;
      } catch (const std::exception& e) {
        throw ValidationError("line " + std::to_string(line_number) + ": invalid polygon: " + e.what());
      }
      const double intensity = b.at("intensity").get<double>();
      const ShapeFamily family =
          b.contains("family") ? family_from_name(b.at("family").get<std::string>()) : ShapeFamily::axis_rect;
      rec.scene.buildings.push_back(BuildingSpec{family, std::move(*polygon), intensity});
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad scene record: ") + e.what(), line_number);
  }
  return rec;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<RenderedSample>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream jsonl(dir / "scenes.jsonl");
  if (!jsonl) throw std::runtime_error("cannot write " + (dir / "scenes.jsonl").string());
  for (const auto& s : samples) {
    const std::string image_file = s.scene.id + ".pgm";
    write_pgm(dir / image_file, s.image);
    jsonl << scene_to_jsonl(s.scene, image_file) << '\n';
  }
}

std::vector<SceneRecord> read_scenes(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw MissingFile("cannot open " + jsonl.string());
  std::vector<SceneRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(scene_from_jsonl(line, number));
  }
  return out;
}

std::vector<RenderedSample> read_dataset(const std::filesystem::path& dir) {
  std::vector<RenderedSample> out;
  for (auto& rec : read_scenes(dir / "scenes.jsonl")) {
    const auto path = dir / rec.image_file;
    if (!std::filesystem::exists(path)) throw MissingFile("missing image file " + path.string());
    Image img = read_pgm(path);
    if (img.width != rec.scene.width || img.height != rec.scene.height) {
      throw ValidationError(path.string() + ": image size does not match scene record");
    }
    out.push_back(RenderedSample{std::move(img), std::move(rec.scene)});
  }
  return out;
}

}  // namespace bisvp::synth
