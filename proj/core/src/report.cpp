#include "bisvp/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "bisvp/raster.hpp"
#include "json_util.hpp"

namespace bisvp::eval {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

const char* const kReportKeys[] = {"AP",     "AP50",         "AP75",        "AR",     "AR50",        "AR75",
                                   "F1_75",  "images",       "gt_instances", "predictions", "oracle_boxes"};

}  // namespace

MetricsReport make_report(const ApAr& m, int images, int gt_instances, int predictions, bool oracle_boxes) {
  MetricsReport r;
  r.AP = m.AP;
  r.AP50 = m.AP50;
  r.AP75 = m.AP75;
  r.AR = m.AR;
  r.AR50 = m.AR50;
  r.AR75 = m.AR75;
  r.F1_75 = f1_from_ap_ar(m.AP75, m.AR75);
  r.images = images;
  r.gt_instances = gt_instances;
  r.predictions = predictions;
  r.oracle_boxes = oracle_boxes;
  return r;
}

MetricsReport rounded(const MetricsReport& r) {
  MetricsReport o = r;
  for (double* v : {&o.AP, &o.AP50, &o.AP75, &o.AR, &o.AR50, &o.AR75, &o.F1_75}) *v = round2(*v);
  return o;
}

MetricsReport evaluate_instances(const std::vector<ImageInstances>& images, bool oracle_boxes) {
  int gts = 0, preds = 0;
  for (const auto& im : images) {
    gts += static_cast<int>(im.ground_truth.size());
    preds += static_cast<int>(im.predictions.size());
  }
  return make_report(compute_ap_ar(images), static_cast<int>(images.size()), gts, preds, oracle_boxes);
}

std::string report_to_json(const MetricsReport& report) {
  const MetricsReport r = rounded(report);
  ordered_json j{{"AP", r.AP},
                 {"AP50", r.AP50},
                 {"AP75", r.AP75},
                 {"AR", r.AR},
                 {"AR50", r.AR50},
                 {"AR75", r.AR75},
                 {"F1_75", r.F1_75},
                 {"images", r.images},
                 {"gt_instances", r.gt_instances},
                 {"predictions", r.predictions},
                 {"oracle_boxes", r.oracle_boxes}};
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  const json j = json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("report must be a JSON object");
  const std::set<std::string> expected(std::begin(kReportKeys), std::end(kReportKeys));
  std::set<std::string> present;
  for (const auto& [key, value] : j.items()) present.insert(key);
  if (present != expected) throw std::invalid_argument("report keys do not match the MetricsReport fields");
  MetricsReport r;
  r.AP = j["AP"].get<double>();
  r.AP50 = j["AP50"].get<double>();
  r.AP75 = j["AP75"].get<double>();
  r.AR = j["AR"].get<double>();
  r.AR50 = j["AR50"].get<double>();
  r.AR75 = j["AR75"].get<double>();
  r.F1_75 = j["F1_75"].get<double>();
  r.images = j["images"].get<int>();
  r.gt_instances = j["gt_instances"].get<int>();
  r.predictions = j["predictions"].get<int>();
  r.oracle_boxes = j["oracle_boxes"].get<bool>();
  return r;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_report(const std::filesystem::path& path, const MetricsReport& r) { write_text(path, report_to_json(r)); }

std::string predictions_to_json(const PredictionSet& preds) {
  ordered_json j = ordered_json::object();
  for (const auto& [id, list] : preds) {
    ordered_json arr = ordered_json::array();
    for (const auto& p : list) arr.push_back(ordered_json{{"polygon", detail::polygon_to_json(p.polygon)}, {"score", p.score}});
    j[id] = arr;
  }
  return j.dump() + "\n";
}

PredictionSet predictions_from_json(const std::string& text) {
  const json j = json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("predictions must be a JSON object keyed by image id");
  PredictionSet out;
  for (const auto& [id, list] : j.items()) {
    if (!list.is_array()) throw std::invalid_argument("predictions for '" + id + "' must be an array");
    auto& dst = out[id];
    for (const auto& item : list) {
      const double score = item.at("score").get<double>();
      if (!(score >= 0.0 && score <= 1.0)) throw std::invalid_argument("prediction score outside [0, 1] in '" + id + "'");
      dst.push_back(ScoredPolygon{detail::polygon_from_json(item.at("polygon")), score});
    }
    std::stable_sort(dst.begin(), dst.end(), [](const ScoredPolygon& a, const ScoredPolygon& b) { return a.score > b.score; });
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, const PredictionSet& preds) {
  write_text(path, predictions_to_json(preds));
}

PredictionSet read_predictions(const std::filesystem::path& path) { return predictions_from_json(read_text(path)); }

synth::Image overlay(const synth::Image& image, const std::vector<geom::Polygon>& polygons) {
  synth::Image out = image;
  for (const auto& poly : polygons) {
    const auto& v = poly.vertices();
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (auto [x, y] : geom::line_pixels(v[i], v[(i + 1) % v.size()])) {
        if (x >= 0 && y >= 0 && x < out.width && y < out.height) out.at(x, y) = 1.0;
      }
    }
  }
  return out;
}

}  // namespace bisvp::eval
