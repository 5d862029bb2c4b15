#include <algorithm>
#include <cmath>

#include "bisvp/model.hpp"
#include "bisvp/ops.hpp"

namespace bisvp::model {

DetectorOutput BisvpModel::detector_head(const FeaturePyramid& pyramid) const {
  const Tensor& p3 = pyramid.level(3);
  auto conv = [&](const Tensor& x, const std::string& name, int pad) {
    return num::conv2d(x, params_.get(name + ".weight"), params_.get(name + ".bias"), 1, pad);
  };
  const Tensor hidden = num::relu(conv(p3, "det.conv", 1));
  DetectorOutput out;
  out.rows = static_cast<int>(p3.dim(1));
  out.cols = static_cast<int>(p3.dim(2));
  const std::size_t cells = p3.dim(1) * p3.dim(2);
  out.objectness = num::reshape(conv(hidden, "det.cls", 0), {cells});
  out.offsets = num::reshape(conv(hidden, "det.reg", 0), {4, cells});
  return out;
}

std::vector<Detection> BisvpModel::decode_detections(const DetectorOutput& out) const {
  const double stride = FeaturePyramid::stride(3);
  const double limit = cfg_.image_size;
  auto obj = out.objectness.data();
  auto off = out.offsets.data();
  const std::size_t cells = obj.size();
  std::vector<Detection> dets;
  for (std::size_t k = 0; k < cells; ++k) {
    const double score = 1.0 / (1.0 + std::exp(-obj[k]));
    if (score < cfg_.score_threshold) continue;
    const double cx = (static_cast<double>(k % static_cast<std::size_t>(out.cols)) + 0.5) * stride;
    const double cy = (static_cast<double>(k / static_cast<std::size_t>(out.cols)) + 0.5) * stride;
    geom::Box b{cx - stride * off[k], cy - stride * off[cells + k], cx + stride * off[2 * cells + k],
                cy + stride * off[3 * cells + k]};
    b = {std::clamp(b.x0, 0.0, limit), std::clamp(b.y0, 0.0, limit), std::clamp(b.x1, 0.0, limit),
         std::clamp(b.y1, 0.0, limit)};
    if (b.width() < 1.0 || b.height() < 1.0) continue;
    dets.push_back(Detection{b, score});
  }
  return nms(std::move(dets), cfg_.nms_iou);
}

std::vector<Detection> BisvpModel::detect(const FeaturePyramid& pyramid) const {
  num::NoGradGuard no_grad;
  return decode_detections(detector_head(pyramid));
}

}  // namespace bisvp::model
