#include "bisvp/nn.hpp"

#include <cmath>

#include "bisvp/ops.hpp"

namespace bisvp::num {

Tensor& ParamStore::add(const std::string& name, Tensor value, ParamGroup group) {
  if (index_.count(name)) throw DuplicateParameter("parameter '" + name + "' already registered");
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.push_back(ParamEntry{name, std::move(value), group, true});
  return entries_.back().tensor;
}

Tensor& ParamStore::add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng,
                                ParamGroup group) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return add(name, Tensor::from(std::move(shape), std::move(values)), group);
}

Tensor& ParamStore::add_zeros(const std::string& name, Shape shape, ParamGroup group) {
  return add(name, Tensor::zeros(std::move(shape)), group);
}

Tensor& ParamStore::add_constant(const std::string& name, Shape shape, double value, ParamGroup group) {
  return add(name, Tensor::full(std::move(shape), value), group);
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

Tensor& ParamStore::get(const std::string& name) { return entry(name).tensor; }

ParamEntry& ParamStore::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second];
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& e : entries_)
    if (e.name.rfind(prefix, 0) == 0) e.trainable = trainable;
}

LstmParams make_lstm(ParamStore& store, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng) {
  LstmParams p;
  p.input = input;
  p.hidden = hidden;
  p.weight = store.add_uniform(prefix + ".weight", {4 * hidden, input + hidden}, input + hidden, rng);
  p.bias = store.add_zeros(prefix + ".bias", {4 * hidden});
  return p;
}

LstmState lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const LstmParams& params) {
  const std::size_t H = params.hidden;
  if (x.rank() != 1 || x.dim(0) != params.input || h.rank() != 1 || h.dim(0) != H || c.rank() != 1 || c.dim(0) != H) {
    throw ShapeError("lstm_cell: x " + shape_str(x.shape()) + ", h " + shape_str(h.shape()) + ", c " +
                     shape_str(c.shape()) + " vs input " + std::to_string(params.input) + ", hidden " +
                     std::to_string(H));
  }
  const Tensor xh[] = {x, h};
  const Tensor gates = linear(concat(xh, 0), params.weight, params.bias);
  const Tensor i = sigmoid(slice(gates, 0, 0, H));
  const Tensor f = sigmoid(slice(gates, 0, H, H));
  const Tensor g = tanh(slice(gates, 0, 2 * H, H));
  const Tensor o = sigmoid(slice(gates, 0, 3 * H, H));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {std::move(h_next), std::move(c_next)};
}

}  // namespace bisvp::num
