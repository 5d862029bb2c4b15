#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bisvp/losses.hpp"
#include "bisvp/rng.hpp"
#include "bisvp/sgd.hpp"

namespace bisvp::train {

struct TrainConfig {
  int epochs = 24;
  num::SgdConfig sgd;
  int batch_size = 4;
  bool oracle_boxes = false;
  model::ModelConfig model;
  std::uint64_t seed = 0;

  void validate() const;
};

/// JSON form mirrors the field names above. Missing keys keep their
/// defaults; unknown keys are rejected.
std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text);

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyDataset : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct StepStats {
  LossBreakdown loss;  // before the update
  double grad_norm = 0.0;
  int instances = 0;
  int degenerate = 0;
};

// Everything that evolves during training.
struct TrainState {
  model::BisvpModel model;
  num::SgdState sgd;
  Rng shuffle_rng;
  int epoch = 0;  // completed epochs

  explicit TrainState(const TrainConfig& cfg);
};

/// Forward, backward and one SGD update at `epoch`'s learning rates.
StepStats train_step(model::BisvpModel& model, num::SgdState& sgd, std::span<const synth::RenderedSample* const> batch,
                     const TrainConfig& cfg, int epoch);

struct EpochSummary {
  int epoch = 0;  // 0-based index of the finished epoch
  int steps = 0;
  LossBreakdown mean;
  std::vector<double> step_totals;
  int instances = 0;
  int degenerate = 0;
};

using EpochCallback = std::function<void(const TrainState&, const EpochSummary&)>;
using StepCallback = std::function<void(int epoch, int step, const StepStats&)>;

/// Runs epochs state.epoch .. cfg.epochs-1 with a seeded shuffle per epoch.
/// At each epoch end parameters and momentum are rounded to 32-bit floats
/// (the checkpoint precision) so a resumed run continues bit-identically.
std::vector<EpochSummary> fit(TrainState& state, const std::vector<synth::RenderedSample>& data,
                              const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                              const StepCallback& on_step = {});

// Rounds every parameter and momentum buffer to float precision.
void round_to_float(TrainState& state);

struct TokenAccuracy {
  long correct = 0;
  long total = 0;
  double value() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

// Argmax agreement with the targets: the first vertex, then every teacher-forced
// step of every branch, EOS included.
TokenAccuracy teacher_forced_accuracy(const model::BisvpModel& model, const std::vector<synth::RenderedSample>& data);

}  // namespace bisvp::train
