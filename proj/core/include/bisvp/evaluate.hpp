#pragma once

#include <vector>

#include "bisvp/model.hpp"
#include "bisvp/report.hpp"

namespace bisvp::eval {

// Hypotheses of one image as scored polygons, ordered by detection score then sequence confidence.
std::vector<ScoredPolygon> predict_image(const model::BisvpModel& model, const synth::Image& image,
                                         const std::vector<geom::Box>* boxes = nullptr);

// Bounding boxes of the scene's buildings.
std::vector<geom::Box> gt_boxes(const synth::Scene& scene);

struct EvalOutput {
  MetricsReport report;
  PredictionSet predictions;
};

/// Inference over every sample (detector boxes, or ground-truth boxes with
/// `oracle_boxes`) followed by the COCO summary.
EvalOutput evaluate_dataset(const model::BisvpModel& model, const std::vector<synth::RenderedSample>& data,
                            bool oracle_boxes);

/// Mean raster IoU between each ground-truth polygon and the polygon decoded
/// from its own box; rejected instances count as 0.
double mean_oracle_iou(const model::BisvpModel& model, const std::vector<synth::RenderedSample>& data);

}  // namespace bisvp::eval
