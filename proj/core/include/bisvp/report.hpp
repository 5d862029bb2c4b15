#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bisvp/metrics.hpp"
#include "bisvp/scene.hpp"

namespace bisvp::eval {

struct MetricsReport {
  double AP = 0.0, AP50 = 0.0, AP75 = 0.0;
  double AR = 0.0, AR50 = 0.0, AR75 = 0.0;
  double F1_75 = 0.0;
  int images = 0;
  int gt_instances = 0;
  int predictions = 0;
  bool oracle_boxes = false;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport make_report(const ApAr& m, int images, int gt_instances, int predictions, bool oracle_boxes);
// Metric fields rounded to 2 decimals, as emitted.
MetricsReport rounded(const MetricsReport& r);

// Computes metrics over the images and fills the counts.
MetricsReport evaluate_instances(const std::vector<ImageInstances>& images, bool oracle_boxes);

std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);
void write_report(const std::filesystem::path& path, const MetricsReport& r);

// Image id -> predictions sorted by descending score.
using PredictionSet = std::map<std::string, std::vector<ScoredPolygon>>;

std::string predictions_to_json(const PredictionSet& preds);
PredictionSet predictions_from_json(const std::string& text);
void write_predictions(const std::filesystem::path& path, const PredictionSet& preds);
PredictionSet read_predictions(const std::filesystem::path& path);

// Copy of `image` with every polygon edge burned in at 1.0.
synth::Image overlay(const synth::Image& image, const std::vector<geom::Polygon>& polygons);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace bisvp::eval
