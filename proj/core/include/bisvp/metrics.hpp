#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "bisvp/polygon.hpp"

namespace bisvp::eval {

struct ScoredPolygon {
  geom::Polygon polygon;
  double score = 0.0;
};

// Predictions and ground truth of one image.
struct ImageInstances {
  std::string id;
  std::vector<ScoredPolygon> predictions;
  std::vector<geom::Polygon> ground_truth;
};

struct MatchResult {
  std::vector<int> pred_to_gt;  // -1 for a false positive
  std::vector<int> gt_to_pred;  // -1 for an unmatched ground truth
  bool is_tp(std::size_t pred) const { return pred_to_gt[pred] >= 0; }
};

/// Greedy matching: predictions in descending score order (stable) claim
/// the unmatched ground truth with the highest IoU >= iou_thr.
MatchResult match_instances(const std::vector<ScoredPolygon>& preds, const std::vector<geom::Polygon>& gts,
                            double iou_thr);
// Same, from a precomputed [pred][gt] IoU matrix.
MatchResult match_from_iou(const std::vector<std::vector<double>>& iou, const std::vector<double>& scores,
                           double iou_thr);

// Raster IoU at image resolution, skipping pairs with disjoint bounds.
std::vector<std::vector<double>> iou_matrix(const std::vector<ScoredPolygon>& preds,
                                            const std::vector<geom::Polygon>& gts);

// 0.50, 0.55, ..., 0.95, each computed as k/20.
std::array<double, 10> iou_thresholds();

struct ApAr {
  double AP = 0.0, AP50 = 0.0, AP75 = 0.0;
  double AR = 0.0, AR50 = 0.0, AR75 = 0.0;
};

class NoGroundTruth : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Single-category COCO summary in percent: 101-point interpolated AP over
/// the dataset-wide ranking and recall at `max_dets` per image, averaged
/// over the thresholds. Ties in score rank by image order, then by the
/// instance's rank within its image.
ApAr compute_ap_ar(const std::vector<ImageInstances>& images, int max_dets = 100);

/// 101-point interpolated AP for one ranked list of TP flags.
double interpolated_ap(const std::vector<bool>& ranked_tp, std::size_t num_gt);

// Harmonic mean 2ab/(a+b); 0 when a + b == 0.
double f1_from_ap_ar(double ap75, double ar75);

}  // namespace bisvp::eval
