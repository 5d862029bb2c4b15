#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "bisvp/rng.hpp"
#include "bisvp/tensor.hpp"

namespace bisvp::num {

enum class ParamGroup { main, backbone };

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamGroup group = ParamGroup::main;
  bool trainable = true;
};

class DuplicateParameter : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named trainable tensors in insertion order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value, ParamGroup group = ParamGroup::main);
  // Uniform in +-sqrt(1/fan_in).
  Tensor& add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng,
                      ParamGroup group = ParamGroup::main);
  Tensor& add_zeros(const std::string& name, Shape shape, ParamGroup group = ParamGroup::main);
  Tensor& add_constant(const std::string& name, Shape shape, double value, ParamGroup group = ParamGroup::main);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  ParamEntry& entry(const std::string& name);

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;

  void zero_grad();
  // Marks every parameter whose name starts with `prefix` as (non-)trainable.
  void set_trainable(const std::string& prefix, bool trainable);

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Weights of one LSTM cell; gates stacked as [input, forget, candidate, output].
struct LstmParams {
  Tensor weight;  // [4H, in + H]
  Tensor bias;    // [4H]
  std::size_t hidden = 0;
  std::size_t input = 0;
};

LstmParams make_lstm(ParamStore& store, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng);

struct LstmState {
  Tensor h;
  Tensor c;
};

// i,f,o = sigmoid gates, g = tanh candidate, c' = f*c + i*g, h' = o*tanh(c').
LstmState lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const LstmParams& params);

}  // namespace bisvp::num
