#include <stdexcept>

#include "bisvp/model.hpp"
#include "bisvp/ops.hpp"

namespace bisvp::model {

FeaturePyramid BisvpModel::backbone_fpn(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) % 64 != 0 || image.dim(2) % 64 != 0 || image.dim(1) == 0 ||
      image.dim(2) == 0) {
    throw std::invalid_argument("backbone_fpn: expects a [3,H,W] image with H and W multiples of 64, got " +
                                num::shape_str(image.shape()));
  }
  auto conv = [&](const Tensor& x, const std::string& name, int stride, int pad) {
    return num::conv2d(x, params_.get(name + ".weight"), params_.get(name + ".bias"), stride, pad);
  };

  // Stem (stride 2) then four stride-2 stages: C2..C5 at strides 4..32.
  Tensor x = num::relu(conv(image, "backbone.stem", 2, 1));
  std::array<Tensor, 4> c;
  for (int i = 0; i < 4; ++i) {
    x = num::relu(conv(x, "backbone.c" + std::to_string(i + 2), 2, 1));
    c[static_cast<std::size_t>(i)] = x;
  }

  std::array<Tensor, 4> merged;
  merged[3] = conv(c[3], "fpn.lateral5", 1, 0);
  for (int i = 2; i >= 0; --i) {
    const auto si = static_cast<std::size_t>(i);
    const Tensor lateral = conv(c[si], "fpn.lateral" + std::to_string(i + 2), 1, 0);
    merged[si] = num::add(lateral, num::resize_nearest(merged[si + 1], lateral.dim(1), lateral.dim(2)));
  }

  FeaturePyramid pyr;
  for (int i = 0; i < 4; ++i) {
    const auto si = static_cast<std::size_t>(i);
    pyr.levels[si] = conv(merged[si], "fpn.smooth" + std::to_string(i + 2), 1, 1);
  }
  pyr.levels[4] = num::avg_pool2d(pyr.levels[3], 2);
  return pyr;
}

}  // namespace bisvp::model
