#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "bisvp/scene.hpp"

namespace bisvp::synth {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary 8-bit PGM (P5, maxval 255). Values are rounded from [0, 1].
void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);

struct SceneRecord {
  Scene scene;
  std::string image_file;
};

std::string scene_to_jsonl(const Scene& scene, const std::string& image_file);
SceneRecord scene_from_jsonl(const std::string& line, std::size_t line_number = 1);

/// Writes `scenes.jsonl` and one PGM per sample into `dir` (created if needed).
void write_dataset(const std::filesystem::path& dir, const std::vector<RenderedSample>& samples);
std::vector<SceneRecord> read_scenes(const std::filesystem::path& jsonl);
std::vector<RenderedSample> read_dataset(const std::filesystem::path& dir);

}  // namespace bisvp::synth
