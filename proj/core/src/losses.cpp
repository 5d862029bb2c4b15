#include "bisvp/losses.hpp"

#include <algorithm>
#include <cmath>

#include "bisvp/ops.hpp"

namespace bisvp::train {

LossBreakdown make_breakdown(double cls, double reg, double ver, double fv) {
  LossBreakdown b;
  b.L_cls = cls;
  b.L_reg = reg;
  b.L_ver = ver;
  b.L_fv = fv;
  b.total = cls + reg + ver + fv;
  return b;
}

LossBreakdown LossTerms::values() const {
  LossBreakdown b;
  b.L_cls = cls.item();
  b.L_reg = reg.item();
  b.L_ver = ver.item();
  b.L_fv = fv.item();
  b.total = total.item();
  return b;
}

SampleTargets make_targets(const synth::Scene& scene, const model::ModelConfig& cfg) {
  SampleTargets t;
  for (const auto& b : scene.buildings) {
    const geom::Box box = b.polygon.bounds();
    t.boxes.push_back(box);
    const geom::GridSpec grid = geom::GridSpec::around(box, cfg.G, cfg.roi_margin, cfg.image_size, cfg.image_size);
    try {
      geom::TokenSequence cw = geom::encode_tokens(b.polygon, grid, geom::Direction::clockwise);
      geom::TokenSequence ccw = geom::reverse_direction(cw);
      if (static_cast<int>(cw.tokens.size()) > cfg.max_seq_len) {
        ++t.degenerate;
        continue;
      }
      t.instances.push_back(InstanceTarget{box, grid, std::move(cw), std::move(ccw)});
    } catch (const geom::DegenerateAfterQuantization&) {
      ++t.degenerate;
    }
  }
  return t;
}

DetectorTargets detector_targets(std::span<const geom::Box> boxes, int rows, int cols, double stride) {
  DetectorTargets t;
  t.objectness.assign(static_cast<std::size_t>(rows * cols), 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double cx = (c + 0.5) * stride;
      const double cy = (r + 0.5) * stride;
      const geom::Box* best = nullptr;
      for (const auto& b : boxes) {
        if (cx < b.x0 || cx > b.x1 || cy < b.y0 || cy > b.y1) continue;
        if (!best || b.area() < best->area()) best = &b;
      }
      if (!best) continue;
      const int k = r * cols + c;
      t.objectness[static_cast<std::size_t>(k)] = 1.0;
      t.positive.push_back(k);
      t.ltrb.insert(t.ltrb.end(), {cx - best->x0, cy - best->y0, best->x1 - cx, best->y1 - cy});
      t.size.insert(t.size.end(), {best->width(), best->height(), best->width(), best->height()});
    }
  }
  return t;
}

Tensor sequence_ce(const Tensor& logits, const geom::TokenSequence& target) {
  if (target.tokens.size() < 2) throw std::invalid_argument("sequence_ce: target needs a first token and EOS");
  const std::span<const int> next(target.tokens.data() + 1, target.tokens.size() - 1);
  if (logits.rank() != 2 || logits.dim(0) != next.size()) {
    throw num::ShapeError("sequence_ce: logits " + num::shape_str(logits.shape()) + " for " +
                          std::to_string(next.size()) + " targets");
  }
  return num::cross_entropy(logits, next);
}

Tensor bidirectional_sequence_loss(const Tensor& logits_cw, const geom::TokenSequence& gt_cw,
                                   const Tensor& logits_ccw, const geom::TokenSequence& gt_ccw) {
  return num::scale(num::add(sequence_ce(logits_cw, gt_cw), sequence_ce(logits_ccw, gt_ccw)), 0.5);
}

namespace {

// Detector BCE and normalized L1 for one image; reg is undefined without positives.
std::pair<Tensor, Tensor> detector_losses(const model::DetectorOutput& out, std::span<const geom::Box> boxes) {
  const double stride = model::FeaturePyramid::stride(3);
  const DetectorTargets t = detector_targets(boxes, out.rows, out.cols, stride);
  Tensor cls = num::bce_with_logits(out.objectness, t.objectness);
  if (t.positive.empty()) return {cls, Tensor()};
  const std::size_t n = t.positive.size();
  const Tensor rows = num::embedding(num::transpose(out.offsets), t.positive);  // [n, 4]
  std::vector<double> inv(t.size.size());
  std::vector<double> target(t.size.size());
  for (std::size_t i = 0; i < inv.size(); ++i) {
    inv[i] = 1.0 / t.size[i];
    target[i] = t.ltrb[i] * inv[i];
  }
  const Tensor pred = num::mul(num::scale(rows, stride), Tensor::from({n, 4}, std::move(inv)));
  return {cls, num::l1_loss(pred, target)};
}

Tensor mean_of(const std::vector<Tensor>& terms) {
  if (terms.empty()) return Tensor::scalar(0.0);
  return num::scale(num::add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

LossTerms compute_losses(const model::BisvpModel& model, std::span<const synth::RenderedSample* const> batch,
                         bool oracle_boxes) {
  if (batch.empty()) throw EmptyBatch("compute_losses: empty batch");
  const model::ModelConfig& cfg = model.config();
  LossTerms terms;
  std::vector<Tensor> cls_terms, reg_terms, ver_terms, fv_terms;

  for (const synth::RenderedSample* sample : batch) {
    const SampleTargets targets = make_targets(sample->scene, cfg);
    terms.degenerate += targets.degenerate;
    const model::FeaturePyramid pyr = model.backbone_fpn(model::BisvpModel::image_tensor(sample->image));

    if (!oracle_boxes) {
      auto [cls, reg] = detector_losses(model.detector_head(pyr), targets.boxes);
      cls_terms.push_back(cls);
      if (reg.defined()) reg_terms.push_back(reg);
    }

    for (const InstanceTarget& inst : targets.instances) {
      const Tensor feature = model.building_feature(pyr, inst.grid);
      const int first = inst.cw.tokens.front();
      const int fv_target[] = {first};
      fv_terms.push_back(num::cross_entropy(model.first_vertex_logits(feature), fv_target));

      const Tensor cw_logits = model.teacher_forced_logits(
          model.begin_branch(geom::Direction::clockwise, feature, first), inst.cw);
      if (cfg.bidirectional) {
        const Tensor ccw_logits = model.teacher_forced_logits(
            model.begin_branch(geom::Direction::counterclockwise, feature, first), inst.ccw);
        ver_terms.push_back(bidirectional_sequence_loss(cw_logits, inst.cw, ccw_logits, inst.ccw));
      } else {
        ver_terms.push_back(sequence_ce(cw_logits, inst.cw));
      }
      ++terms.instances;
    }
  }

  if (terms.instances == 0) terms.warnings.push_back("no positive instances in batch: L_ver and L_fv are 0");
  if (!oracle_boxes && reg_terms.empty()) terms.warnings.push_back("no positive detector cells in batch: L_reg is 0");

  terms.cls = mean_of(cls_terms);
  terms.reg = mean_of(reg_terms);
  terms.ver = mean_of(ver_terms);
  terms.fv = mean_of(fv_terms);
  const Tensor parts[] = {terms.cls, terms.reg, terms.ver, terms.fv};
  terms.total = num::add_n(parts);
  return terms;
}

}  // namespace bisvp::train
