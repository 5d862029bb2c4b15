#include "bisvp/sgd.hpp"

#include <cmath>

namespace bisvp::num {

void SgdConfig::validate() const {
  if (!(lr_main > 0) || !(lr_backbone > 0)) throw std::invalid_argument("SgdConfig: learning rates must be > 0");
  if (!(lr_drop_factor > 0)) throw std::invalid_argument("SgdConfig: lr_drop_factor must be > 0");
  if (weight_decay < 0 || momentum < 0 || momentum >= 1 || clip_norm < 0) {
    throw std::invalid_argument("SgdConfig: weight_decay/momentum/clip_norm out of range");
  }
  for (std::size_t i = 1; i < lr_drop_epochs.size(); ++i) {
    if (lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) {
      throw std::invalid_argument("SgdConfig: lr_drop_epochs must be strictly increasing");
    }
  }
}

double SgdConfig::lr(int epoch, ParamGroup group) const {
  double rate = group == ParamGroup::backbone ? lr_backbone : lr_main;
  for (int drop : lr_drop_epochs)
    if (epoch >= drop) rate /= lr_drop_factor;
  return rate;
}

double sgd_step(ParamStore& params, const SgdConfig& cfg, int epoch, SgdState* state, MissingGradPolicy policy) {
  double sq = 0.0;
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    if (!e.tensor.grad_written() && policy == MissingGradPolicy::error) {
      throw MissingGradient("sgd_step: parameter '" + e.name + "' has no gradient");
    }
    for (double g : e.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double clip = (cfg.clip_norm > 0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;

  for (auto& e : params.entries()) {
    if (!e.trainable) {
      e.tensor.zero_grad();
      continue;
    }
    const double rate = cfg.lr(epoch, e.group);
    auto w = e.tensor.mutable_data();
    auto g = e.tensor.grad();
    std::vector<double>* vel = nullptr;
    if (cfg.momentum > 0) {
      if (!state) throw std::invalid_argument("sgd_step: momentum requires an SgdState");
      auto& v = state->velocity[e.name];
      if (v.size() != w.size()) v.assign(w.size(), 0.0);
      vel = &v;
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      double step = g[i] * clip + cfg.weight_decay * w[i];
      if (vel) step = ((*vel)[i] = cfg.momentum * (*vel)[i] + step);
      w[i] -= rate * step;
    }
    e.tensor.zero_grad();
  }
  return norm;
}

}  // namespace bisvp::num
