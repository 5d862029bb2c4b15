#include "bisvp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bisvp/ops.hpp"

namespace bisvp::model {

using geom::Direction;
using num::ParamGroup;

void ModelConfig::validate() const {
  if (d <= 0 || S <= 0 || G < 2 || lstm_hidden <= 0 || embed_dim <= 0 || attn_heads <= 0 || kv_side <= 0) {
    throw std::invalid_argument("ModelConfig: sizes must be positive (G >= 2)");
  }
  if (max_seq_len <= 3) throw std::invalid_argument("ModelConfig: max_seq_len must exceed 3");
  if (d % 4 != 0) throw std::invalid_argument("ModelConfig: d must be a multiple of 4 for the positional code");
  if (d % attn_heads != 0) throw std::invalid_argument("ModelConfig: d must be divisible by attn_heads");
  if (!(sigma_min > 0)) throw std::invalid_argument("ModelConfig: sigma_min must be > 0");
  if (image_size <= 0 || image_size % 64 != 0) throw std::invalid_argument("ModelConfig: image_size must be a multiple of 64");
  for (int c : backbone_channels)
    if (c <= 0) throw std::invalid_argument("ModelConfig: backbone channels must be positive");
  if (roi_margin < 0 || score_threshold < 0 || score_threshold > 1 || nms_iou <= 0 || nms_iou > 1) {
    throw std::invalid_argument("ModelConfig: roi_margin/score_threshold/nms_iou out of range");
  }
}

Tensor positional_encoding(int side, int d) {
  const int quarter = d / 4;
  std::vector<double> v(static_cast<std::size_t>(side * side * d));
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const double u = (c + 0.5) / side;
      const double w = (r + 0.5) / side;
      double* row = v.data() + static_cast<std::size_t>((r * side + c) * d);
      for (int k = 0; k < quarter; ++k) {
        const double freq = std::numbers::pi * (k + 1);
        row[2 * k] = std::sin(freq * u);
        row[2 * k + 1] = std::cos(freq * u);
        row[d / 2 + 2 * k] = std::sin(freq * w);
        row[d / 2 + 2 * k + 1] = std::cos(freq * w);
      }
    }
  }
  return Tensor::from({static_cast<std::size_t>(side * side), static_cast<std::size_t>(d)}, std::move(v));
}

Tensor gaussian_constrained_softmax(const Tensor& scores, const Tensor& mu, const Tensor& sigma, int side) {
  return num::softmax(num::add(scores, num::gaussian_log_mask(mu, sigma, side)));
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty vector");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                        [&](const Detection& k) { return geom::box_iou(k.box, d.box) > iou; });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

BisvpModel::BisvpModel(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)) {
  cfg_.validate();
  init_params(seed);
  pe_queries_ = positional_encoding(cfg_.S, cfg_.d);
  pe_kv_ = positional_encoding(cfg_.kv_side, cfg_.d);
}

std::vector<Direction> BisvpModel::directions() const {
  if (cfg_.bidirectional) return {Direction::clockwise, Direction::counterclockwise};
  return {Direction::clockwise};
}

std::string BisvpModel::branch_prefix(Direction d) const { return d == Direction::clockwise ? "cw" : "ccw"; }

void BisvpModel::init_params(std::uint64_t seed) {
  Rng rng(seed, 0x1417);
  auto& p = params_;
  const auto d = static_cast<std::size_t>(cfg_.d);
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t k, ParamGroup g) {
    p.add_uniform(name + ".weight", {out, in, k, k}, in * k * k, rng, g);
    p.add_zeros(name + ".bias", {out}, g);
  };
  auto lin = [&](const std::string& name, std::size_t out, std::size_t in, bool bias = true) {
    p.add_uniform(name + ".weight", {out, in}, in, rng);
    if (bias) p.add_zeros(name + ".bias", {out});
  };
  auto lin_zero = [&](const std::string& name, std::size_t out, std::size_t in) {
    p.add_zeros(name + ".weight", {out, in});
    p.add_zeros(name + ".bias", {out});
  };
  auto norm = [&](const std::string& name, std::size_t n) {
    p.add_constant(name + ".gamma", {n}, 1.0);
    p.add_zeros(name + ".beta", {n});
  };

  const auto& ch = cfg_.backbone_channels;
  conv("backbone.stem", static_cast<std::size_t>(ch[0]), 3, 3, ParamGroup::backbone);
  std::size_t prev = static_cast<std::size_t>(ch[0]);
  for (int i = 0; i < 4; ++i) {
    conv("backbone.c" + std::to_string(i + 2), static_cast<std::size_t>(ch[static_cast<std::size_t>(i)]), prev, 3,
         ParamGroup::backbone);
    prev = static_cast<std::size_t>(ch[static_cast<std::size_t>(i)]);
  }
  for (int i = 2; i <= 5; ++i) conv("fpn.lateral" + std::to_string(i), d, static_cast<std::size_t>(ch[static_cast<std::size_t>(i - 2)]), 1, ParamGroup::main);
  for (int i = 2; i <= 5; ++i) conv("fpn.smooth" + std::to_string(i), d, d, 3, ParamGroup::main);

  conv("det.conv", d, d, 3, ParamGroup::main);
  conv("det.cls", 1, d, 1, ParamGroup::main);
  conv("det.reg", 4, d, 1, ParamGroup::main);

  lin("csff.query", d, d);
  norm("csff.query_norm", d);
  if (cfg_.use_csff) {
    for (int level : {6, 5, 4, 3}) {
      const std::string b = "csff.p" + std::to_string(level);
      lin(b + ".wq", d, d);
      lin(b + ".wk", d, d, false);
      lin(b + ".wv", d, d);
      lin_zero(b + ".wo", d, d);
      norm(b + ".norm1", d);
      lin(b + ".ffn1", 2 * d, d);
      lin_zero(b + ".ffn2", d, 2 * d);
      norm(b + ".norm2", d);
    }
  }

  const auto tokens = static_cast<std::size_t>(cfg_.S * cfg_.S);
  const auto G2 = static_cast<std::size_t>(cfg_.G * cfg_.G);
  lin("fv", G2, tokens * d);

  const auto E = static_cast<std::size_t>(cfg_.embed_dim);
  const auto H = static_cast<std::size_t>(cfg_.lstm_hidden);
  for (Direction dir : directions()) {
    const std::string b = branch_prefix(dir);
    p.add_uniform(b + ".embed", {G2 + 2, E}, E, rng);
    num::make_lstm(p, b + ".lstm", d + 3 * E, H, rng);
    lin(b + ".attn.w_h", d, H, false);
    lin(b + ".attn.w_b", d, d, false);
    lin(b + ".attn.v", 1, d, false);
    lin(b + ".attn.mu", 2, H);
    lin(b + ".attn.sigma", 1, H);
    lin(b + ".out", G2 + 1, H + d);
  }
}

Tensor BisvpModel::image_tensor(const synth::Image& image) {
  const std::size_t n = image.pixels.size();
  std::vector<double> v(3 * n);
  for (std::size_t c = 0; c < 3; ++c) std::copy(image.pixels.begin(), image.pixels.end(), v.begin() + static_cast<std::ptrdiff_t>(c * n));
  return Tensor::from({3, static_cast<std::size_t>(image.height), static_cast<std::size_t>(image.width)}, std::move(v));
}

geom::GridSpec BisvpModel::grid_for(const geom::Box& box) const {
  return geom::GridSpec::around(box, cfg_.G, cfg_.roi_margin, cfg_.image_size, cfg_.image_size);
}

std::vector<PolygonHypothesis> BisvpModel::infer(const synth::Image& image, const std::vector<geom::Box>* boxes) const {
  num::NoGradGuard no_grad;
  if (image.width != cfg_.image_size || image.height != cfg_.image_size) {
    throw std::invalid_argument("infer: image must be " + std::to_string(cfg_.image_size) + "x" +
                                std::to_string(cfg_.image_size));
  }
  const FeaturePyramid pyr = backbone_fpn(image_tensor(image));
  std::vector<Detection> dets;
  if (boxes) {
    for (const auto& b : *boxes) dets.push_back(Detection{b, 1.0});
  } else {
    dets = detect(pyr);
  }
  std::vector<PolygonHypothesis> out;
  for (const Detection& det : dets) {
    if (!(det.box.width() > 0) || !(det.box.height() > 0)) continue;
    const geom::GridSpec grid = grid_for(det.box);
    const Tensor feature = building_feature(pyr, grid);
    if (auto hyp = decode_bidirectional(feature, det, grid)) out.push_back(std::move(*hyp));
  }
  return out;
}

}  // namespace bisvp::model
