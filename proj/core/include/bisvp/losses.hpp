#pragma once

#include <span>
#include <string>
#include <vector>

#include "bisvp/model.hpp"
#include "bisvp/scene.hpp"

namespace bisvp::train {

using num::Tensor;

struct LossBreakdown {
  double L_cls = 0.0;
  double L_reg = 0.0;
  double L_ver = 0.0;
  double L_fv = 0.0;
  double total = 0.0;
};

// total = L_cls + L_reg + L_ver + L_fv
LossBreakdown make_breakdown(double cls, double reg, double ver, double fv);

// Supervision for one building that survived quantization.
struct InstanceTarget {
  geom::Box box;
  geom::GridSpec grid;
  geom::TokenSequence cw;
  geom::TokenSequence ccw;
};

struct SampleTargets {
  std::vector<geom::Box> boxes;  // every ground-truth building, for the detector
  std::vector<InstanceTarget> instances;
  int degenerate = 0;            // buildings dropped by DegenerateAfterQuantization
};

SampleTargets make_targets(const synth::Scene& scene, const model::ModelConfig& cfg);

/// Per-cell detector targets on a rows x cols grid with the given stride.
/// A cell is positive iff its centre lies inside a box; overlapping boxes
/// resolve to the smallest one.
struct DetectorTargets {
  std::vector<double> objectness;  // 0/1 per cell
  std::vector<int> positive;       // positive cell indices, ascending
  std::vector<double> ltrb;        // [positive.size(), 4] pixel distances to the box sides
  std::vector<double> size;        // [positive.size(), 4] width, height, width, height
};

DetectorTargets detector_targets(std::span<const geom::Box> boxes, int rows, int cols, double stride);

// Mean cross-entropy of the logits rows against target tokens 1..n (EOS included).
Tensor sequence_ce(const Tensor& logits, const geom::TokenSequence& target);

// (CE(pred, gt) + CE(pred_c, gt_c)) / 2
Tensor bidirectional_sequence_loss(const Tensor& logits_cw, const geom::TokenSequence& gt_cw,
                                   const Tensor& logits_ccw, const geom::TokenSequence& gt_ccw);

// Differentiable loss terms for one batch, plus bookkeeping.
struct LossTerms {
  Tensor cls;
  Tensor reg;
  Tensor ver;
  Tensor fv;
  Tensor total;
  int instances = 0;
  int degenerate = 0;
  std::vector<std::string> warnings;

  LossBreakdown values() const;
};

class EmptyBatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Forward pass with teacher forcing over a batch. With `oracle_boxes` the
/// detector is not run and L_cls = L_reg = 0.
LossTerms compute_losses(const model::BisvpModel& model, std::span<const synth::RenderedSample* const> batch,
                         bool oracle_boxes);

}  // namespace bisvp::train
