#include "bisvp/evaluate.hpp"

#include <algorithm>
#include <stdexcept>

#include "bisvp/raster.hpp"

namespace bisvp::eval {

std::vector<geom::Box> gt_boxes(const synth::Scene& scene) {
  std::vector<geom::Box> boxes;
  for (const auto& b : scene.buildings) boxes.push_back(b.polygon.bounds());
  return boxes;
}

std::vector<ScoredPolygon> predict_image(const model::BisvpModel& model, const synth::Image& image,
                                         const std::vector<geom::Box>* boxes) {
  std::vector<model::PolygonHypothesis> hyps = model.infer(image, boxes);
  std::stable_sort(hyps.begin(), hyps.end(), [](const auto& a, const auto& b) {
    if (a.det_score != b.det_score) return a.det_score > b.det_score;
    return a.seq_confidence > b.seq_confidence;
  });
  std::vector<ScoredPolygon> out;
  for (auto& h : hyps) out.push_back(ScoredPolygon{std::move(h.polygon), h.det_score});
  return out;
}

EvalOutput evaluate_dataset(const model::BisvpModel& model, const std::vector<synth::RenderedSample>& data,
                            bool oracle_boxes) {
  if (data.empty()) throw std::invalid_argument("evaluate_dataset: dataset is empty");
  EvalOutput out;
  std::vector<ImageInstances> images;
  for (const auto& sample : data) {
    ImageInstances im;
    im.id = sample.scene.id;
    for (const auto& b : sample.scene.buildings) im.ground_truth.push_back(b.polygon);
    const std::vector<geom::Box> boxes = gt_boxes(sample.scene);
    im.predictions = predict_image(model, sample.image, oracle_boxes ? &boxes : nullptr);
    out.predictions[im.id] = im.predictions;
    images.push_back(std::move(im));
  }
  out.report = evaluate_instances(images, oracle_boxes);
  return out;
}

double mean_oracle_iou(const model::BisvpModel& model, const std::vector<synth::RenderedSample>& data) {
  num::NoGradGuard no_grad;
  double sum = 0.0;
  int count = 0;
  for (const auto& sample : data) {
    const model::FeaturePyramid pyr = model.backbone_fpn(model::BisvpModel::image_tensor(sample.image));
    for (const auto& b : sample.scene.buildings) {
      const geom::Box box = b.polygon.bounds();
      const geom::GridSpec grid = model.grid_for(box);
      const auto hyp = model.decode_bidirectional(model.building_feature(pyr, grid), model::Detection{box, 1.0}, grid);
      if (hyp) sum += geom::raster_iou(hyp->polygon, b.polygon, 1.0);
      ++count;
    }
  }
  return count ? sum / count : 0.0;
}

}  // namespace bisvp::eval
