#include <cmath>

#include "bisvp/model.hpp"
#include "bisvp/ops.hpp"

namespace bisvp::model {

namespace {
std::array<double, 4> region_of(const geom::GridSpec& grid) {
  return {grid.roi.x0, grid.roi.y0, grid.roi.x1, grid.roi.y1};
}
}  // namespace

Tensor BisvpModel::building_queries(const FeaturePyramid& pyramid, const geom::GridSpec& grid) const {
  const auto region = region_of(grid);
  const Tensor crop = num::roi_crop(pyramid.level(2), region, FeaturePyramid::stride(2), cfg_.S);
  const Tensor projected = num::linear(crop, params_.get("csff.query.weight"), params_.get("csff.query.bias"));
  return num::layer_norm(num::add(projected, pe_queries_), params_.get("csff.query_norm.gamma"),
                         params_.get("csff.query_norm.beta"));
}

Tensor BisvpModel::csff_fuse(const Tensor& queries, const FeaturePyramid& pyramid, const geom::GridSpec& grid,
                             CsffTrace* trace) const {
  const auto d = static_cast<std::size_t>(cfg_.d);
  if (queries.rank() != 2 || queries.dim(1) != d) {
    throw num::ShapeError("csff_fuse: queries must be [n, " + std::to_string(d) + "], got " +
                          num::shape_str(queries.shape()));
  }
  const auto region = region_of(grid);
  const auto heads = static_cast<std::size_t>(cfg_.attn_heads);
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto lin = [&](const Tensor& x, const std::string& name) {
    return num::linear(x, params_.get(name + ".weight"), params_.get(name + ".bias"));
  };
  auto norm = [&](const Tensor& x, const std::string& name) {
    return num::layer_norm(x, params_.get(name + ".gamma"), params_.get(name + ".beta"));
  };

  Tensor b = queries;
  // Coarse to fine: P6 first.
  for (int level : {6, 5, 4, 3}) {
    const std::string pre = "csff.p" + std::to_string(level);
    const Tensor kv = num::add(
        num::roi_crop(pyramid.level(level), region, FeaturePyramid::stride(level), cfg_.kv_side), pe_kv_);
    const Tensor q = lin(b, pre + ".wq");
    const Tensor k = num::linear(kv, params_.get(pre + ".wk.weight"), Tensor());
    const Tensor v = lin(kv, pre + ".wv");
    std::vector<Tensor> head_out;
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor qh = heads == 1 ? q : num::slice(q, 1, h * dh, dh);
      const Tensor kh = heads == 1 ? k : num::slice(k, 1, h * dh, dh);
      const Tensor vh = heads == 1 ? v : num::slice(v, 1, h * dh, dh);
      const Tensor attn = num::softmax(num::scale(num::matmul(qh, num::transpose(kh)), inv_sqrt));
      if (trace) trace->attention.push_back(attn);
      head_out.push_back(num::matmul(attn, vh));
    }
    const Tensor mixed = heads == 1 ? head_out[0] : num::concat(head_out, 1);
    b = norm(num::add(b, lin(mixed, pre + ".wo")), pre + ".norm1");
    const Tensor ffn = lin(num::relu(lin(b, pre + ".ffn1")), pre + ".ffn2");
    b = norm(num::add(b, ffn), pre + ".norm2");
  }
  return b;
}

Tensor BisvpModel::building_feature(const FeaturePyramid& pyramid, const geom::GridSpec& grid) const {
  Tensor q = building_queries(pyramid, grid);
  return cfg_.use_csff ? csff_fuse(q, pyramid, grid) : q;
}

Tensor BisvpModel::first_vertex_logits(const Tensor& feature) const {
  const Tensor flat = num::scale(num::reshape(feature, {feature.numel()}), 1.0 / cfg_.S);
  return num::linear(flat, params_.get("fv.weight"), params_.get("fv.bias"));
}

std::vector<double> BisvpModel::predict_first_vertex(const Tensor& feature) const {
  num::NoGradGuard no_grad;
  const Tensor p = num::softmax(first_vertex_logits(feature));
  return {p.data().begin(), p.data().end()};
}

}  // namespace bisvp::model
