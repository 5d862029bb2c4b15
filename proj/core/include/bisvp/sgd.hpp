#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bisvp/nn.hpp"

namespace bisvp::num {

struct SgdConfig {
  double lr_main = 1e-4;
  double lr_backbone = 1e-5;
  double weight_decay = 1e-4;
  std::vector<int> lr_drop_epochs{16, 22};
  double lr_drop_factor = 10.0;
  // Extensions; the defaults reduce to plain SGD with weight decay.
  double momentum = 0.0;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables

  void validate() const;
  // Learning rate of a parameter group at a 0-based epoch.
  double lr(int epoch, ParamGroup group) const;
};

class MissingGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Momentum buffers keyed by parameter name.
struct SgdState {
  std::map<std::string, std::vector<double>> velocity;
};

enum class MissingGradPolicy { error, treat_as_zero };

/// w <- w - lr(epoch, group) * (g + weight_decay * w), then gradients are zeroed.
/// With momentum m > 0 the bracket is first accumulated into a velocity
/// buffer v <- m v + (g + wd w). Frozen (non-trainable) entries are skipped.
/// Returns the global gradient norm before clipping.
double sgd_step(ParamStore& params, const SgdConfig& cfg, int epoch, SgdState* state = nullptr,
                MissingGradPolicy policy = MissingGradPolicy::error);

}  // namespace bisvp::num
