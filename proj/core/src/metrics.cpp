#include "bisvp/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "bisvp/raster.hpp"

namespace bisvp::eval {

namespace {

bool bounds_overlap(const geom::Box& a, const geom::Box& b) {
  return a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
}

std::vector<std::size_t> score_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

std::array<double, 10> iou_thresholds() {
  std::array<double, 10> t{};
  for (int k = 0; k < 10; ++k) t[static_cast<std::size_t>(k)] = (10 + k) / 20.0;
  return t;
}

std::vector<std::vector<double>> iou_matrix(const std::vector<ScoredPolygon>& preds,
                                            const std::vector<geom::Polygon>& gts) {
  std::vector<geom::Box> gt_bounds;
  for (const auto& g : gts) gt_bounds.push_back(g.bounds());
  std::vector<std::vector<double>> m(preds.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const geom::Box pb = preds[i].polygon.bounds();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (bounds_overlap(pb, gt_bounds[j])) m[i][j] = geom::raster_iou(preds[i].polygon, gts[j], 1.0);
    }
  }
  return m;
}

MatchResult match_from_iou(const std::vector<std::vector<double>>& iou, const std::vector<double>& scores,
                           double iou_thr) {
  if (!(iou_thr > 0 && iou_thr < 1)) throw std::invalid_argument("match: iou threshold must be in (0, 1)");
  const std::size_t num_gt = iou.empty() ? 0 : iou.front().size();
  MatchResult r;
  r.pred_to_gt.assign(scores.size(), -1);
  r.gt_to_pred.assign(num_gt, -1);
  for (std::size_t p : score_order(scores)) {
    int best = -1;
    double best_iou = iou_thr;
    for (std::size_t g = 0; g < num_gt; ++g) {
      if (r.gt_to_pred[g] >= 0) continue;
      if (iou[p][g] >= best_iou && (best < 0 || iou[p][g] > best_iou)) {
        best = static_cast<int>(g);
        best_iou = iou[p][g];
      }
    }
    if (best >= 0) {
      r.pred_to_gt[p] = best;
      r.gt_to_pred[static_cast<std::size_t>(best)] = static_cast<int>(p);
    }
  }
  return r;
}

MatchResult match_instances(const std::vector<ScoredPolygon>& preds, const std::vector<geom::Polygon>& gts,
                            double iou_thr) {
  std::vector<double> scores;
  for (const auto& p : preds) scores.push_back(p.score);
  return match_from_iou(iou_matrix(preds, gts), scores, iou_thr);
}

double interpolated_ap(const std::vector<bool>& ranked_tp, std::size_t num_gt) {
  if (num_gt == 0) throw NoGroundTruth("interpolated_ap: no ground truth");
  const std::size_t n = ranked_tp.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += ranked_tp[i];
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

ApAr compute_ap_ar(const std::vector<ImageInstances>& images, int max_dets) {
  std::size_t num_gt = 0;
  for (const auto& im : images) num_gt += im.ground_truth.size();
  if (num_gt == 0) throw NoGroundTruth("compute_ap_ar: dataset has no ground-truth instances");

  struct Ranked {
    double score;
    std::size_t image;
    std::size_t rank;  // within the image
    std::size_t pred;
  };
  std::vector<Ranked> ranked;
  std::vector<std::vector<std::vector<double>>> ious(images.size());
  std::vector<std::vector<double>> kept_scores(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::vector<double> scores;
    for (const auto& p : images[i].predictions) scores.push_back(p.score);
    std::vector<std::size_t> order = score_order(scores);
    if (order.size() > static_cast<std::size_t>(max_dets)) order.resize(static_cast<std::size_t>(max_dets));
    std::vector<ScoredPolygon> kept;
    for (std::size_t k = 0; k < order.size(); ++k) {
      kept.push_back(images[i].predictions[order[k]]);
      kept_scores[i].push_back(scores[order[k]]);
      ranked.push_back(Ranked{scores[order[k]], i, k, k});
    }
    ious[i] = iou_matrix(kept, images[i].ground_truth);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.rank < b.rank;
  });

  const auto thresholds = iou_thresholds();
  std::array<double, 10> ap{}, ar{};
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    std::vector<MatchResult> matches;
    std::size_t matched = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      matches.push_back(match_from_iou(ious[i], kept_scores[i], thresholds[t]));
      for (int g : matches.back().gt_to_pred) matched += g >= 0;
    }
    std::vector<bool> tp;
    tp.reserve(ranked.size());
    for (const Ranked& r : ranked) tp.push_back(matches[r.image].is_tp(r.pred));
    ap[t] = interpolated_ap(tp, num_gt);
    ar[t] = static_cast<double>(matched) / static_cast<double>(num_gt);
  }

  ApAr out;
  out.AP = 100.0 * std::accumulate(ap.begin(), ap.end(), 0.0) / 10.0;
  out.AR = 100.0 * std::accumulate(ar.begin(), ar.end(), 0.0) / 10.0;
  out.AP50 = 100.0 * ap[0];
  out.AP75 = 100.0 * ap[5];
  out.AR50 = 100.0 * ar[0];
  out.AR75 = 100.0 * ar[5];
  return out;
}

double f1_from_ap_ar(double ap75, double ar75) {
  if (ap75 + ar75 == 0.0) return 0.0;
  return 2.0 * ap75 * ar75 / (ap75 + ar75);
}

}  // namespace bisvp::eval
