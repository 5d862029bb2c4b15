#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bisvp/model.hpp"
#include "bisvp/rng.hpp"

namespace bisvp::gradcheck {

using num::Tensor;

struct Result {
  std::string component;
  double max_rel_error = 0.0;
  int checked = 0;     // number of finite-difference probes
  int unresolved = 0;  // probes where the difference quotient was not stable in the step
};

// A probe is unresolved, and excluded from the max, when its central
// differences at step and step/2 disagree by more than kOracleTolerance
// (relative), or when one ulp of the loss divided by 2*step exceeds
// kRoundingBudget times the difference quotient.
inline constexpr double kOracleTolerance = 1e-5;
inline constexpr double kRoundingBudget = 5e-5;
inline constexpr double kMaxUnresolvedFraction = 0.1;

inline bool passes(const Result& r, double tolerance = 1e-4) {
  return r.checked > 0 && r.max_rel_error <= tolerance &&
         r.unresolved <= kMaxUnresolvedFraction * r.checked;
}

/// Compares the tape gradient of `loss` with central differences (step
/// `step`) at `per_leaf` randomly chosen entries of each leaf. Relative
/// error is |autodiff - fd| / max(1e-8, |fd|). The stability test on the
/// difference quotient never looks at the tape gradient.
Result check(const std::string& component, std::vector<Tensor> leaves, const std::function<Tensor()>& loss, Rng& rng,
             int per_leaf = 6, double step = 1e-5);

// Toy model dimensions used by the model-level components.
model::ModelConfig toy_config();

// Every registered component except the negative control.
std::vector<std::string> components();

// Linear layer whose backward is deliberately wrong.
inline constexpr const char* kNegativeControl = "corrupted_linear";

/// Runs one registered component. Unknown ids throw std::invalid_argument.
Result run(const std::string& component, std::uint64_t seed);
inline double grad_check(const std::string& component, std::uint64_t seed) { return run(component, seed).max_rel_error; }

}  // namespace bisvp::gradcheck
