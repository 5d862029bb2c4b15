#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "bisvp/trainer.hpp"

namespace bisvp::train {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagic : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointInconsistent : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct TensorRecord {
  std::string name;
  num::Shape shape;
  std::vector<float> values;
  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

/// On disk: "BSVP1\n", a one-line JSON manifest, "\n", then the records'
/// little-endian float32 values back to back. Manifest offsets are byte
/// offsets into that payload.
struct Checkpoint {
  TrainConfig config;
  int epoch = 0;
  std::string rng_state;
  std::vector<TensorRecord> params;
  std::vector<TensorRecord> momentum;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg);
// Model with the checkpoint's configuration and parameters.
model::BisvpModel model_from_checkpoint(const Checkpoint& ckpt);
// Full training state for resuming.
TrainState state_from_checkpoint(const Checkpoint& ckpt);

}  // namespace bisvp::train
