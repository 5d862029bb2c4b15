#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bisvp/model.hpp"
#include "bisvp/ops.hpp"

namespace bisvp::model {

using geom::Direction;

BranchContext BisvpModel::begin_branch(Direction direction, const Tensor& feature, int first) const {
  if (first < 0 || first >= cfg_.G * cfg_.G) throw std::out_of_range("begin_branch: first vertex token out of range");
  BranchContext ctx;
  ctx.direction = direction;
  ctx.prefix = branch_prefix(direction);
  if (!params_.contains(ctx.prefix + ".embed")) {
    throw std::invalid_argument("begin_branch: model has no " + ctx.prefix + " branch");
  }
  ctx.feature = feature;
  ctx.projected = num::linear(feature, params_.get(ctx.prefix + ".attn.w_b.weight"), Tensor());
  ctx.pooled = num::mean_axis(feature, 0);
  ctx.first = first;
  return ctx;
}

AttentionParts BisvpModel::attention_parts(const BranchContext& ctx, const Tensor& h) const {
  const std::string& b = ctx.prefix;
  const auto positions = static_cast<std::size_t>(cfg_.S * cfg_.S);
  AttentionParts parts;
  const Tensor hp = num::linear(h, params_.get(b + ".attn.w_h.weight"), Tensor());
  const Tensor e = num::tanh(num::add(ctx.projected, hp));
  parts.scores = num::reshape(num::linear(e, params_.get(b + ".attn.v.weight"), Tensor()), {positions});
  parts.mu = num::scale(num::sigmoid(num::linear(h, params_.get(b + ".attn.mu.weight"), params_.get(b + ".attn.mu.bias"))),
                        static_cast<double>(cfg_.S));
  parts.sigma = num::add(
      num::softplus(num::linear(h, params_.get(b + ".attn.sigma.weight"), params_.get(b + ".attn.sigma.bias"))),
      Tensor::scalar(cfg_.sigma_min));
  return parts;
}

Tensor BisvpModel::gaussian_attention(const BranchContext& ctx, const Tensor& h) const {
  const AttentionParts parts = attention_parts(ctx, h);
  if (!cfg_.gaussian_attention) return num::softmax(parts.scores);
  return gaussian_constrained_softmax(parts.scores, parts.mu, parts.sigma, cfg_.S);
}

DecodeState BisvpModel::initial_state(const BranchContext& ctx) const {
  const auto H = static_cast<std::size_t>(cfg_.lstm_hidden);
  DecodeState s;
  s.h = Tensor::zeros({H});
  s.c = Tensor::zeros({H});
  s.emitted = geom::TokenSequence{ctx.direction, {ctx.first}};
  s.step = 1;
  return s;
}

StepResult BisvpModel::decode_step(const BranchContext& ctx, const DecodeState& state, DecodeMode mode,
                                   int teacher_token) const {
  if (state.step >= cfg_.max_seq_len) {
    throw std::out_of_range("decode_step: step " + std::to_string(state.step) + " reaches max_seq_len " +
                            std::to_string(cfg_.max_seq_len));
  }
  const auto& prefix = state.emitted.tokens;
  if (prefix.empty() || static_cast<int>(prefix.size()) != state.step) {
    throw std::invalid_argument("decode_step: state.step must equal the emitted prefix length");
  }
  const std::string& b = ctx.prefix;
  const auto E = static_cast<std::size_t>(cfg_.embed_dim);
  const auto d = static_cast<std::size_t>(cfg_.d);
  const auto positions = static_cast<std::size_t>(cfg_.S * cfg_.S);

  const int prev1 = prefix.back();
  const int prev2 = prefix.size() >= 2 ? prefix[prefix.size() - 2] : cfg_.start_token();
  const int history[] = {prev2, prev1, prefix.front()};
  const Tensor emb = num::reshape(num::embedding(params_.get(b + ".embed"), history), {3 * E});
  const Tensor x_parts[] = {ctx.pooled, emb};
  const Tensor x = num::concat(x_parts, 0);

  num::LstmParams lstm{params_.get(b + ".lstm.weight"), params_.get(b + ".lstm.bias"),
                       static_cast<std::size_t>(cfg_.lstm_hidden), d + 3 * E};
  const num::LstmState hc = num::lstm_cell(x, state.h, state.c, lstm);

  const Tensor alpha = gaussian_attention(ctx, hc.h);
  const Tensor context = num::reshape(num::matmul(num::reshape(alpha, {1, positions}), ctx.feature), {d});
  const Tensor feat_parts[] = {hc.h, context};
  const Tensor logits = num::linear(num::concat(feat_parts, 0), params_.get(b + ".out.weight"), params_.get(b + ".out.bias"));

  StepResult r;
  auto z = logits.data();
  const double mx = *std::max_element(z.begin(), z.end());
  r.out.dist.resize(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += (r.out.dist[i] = std::exp(z[i] - mx));
  for (double& p : r.out.dist) p /= total;
  r.out.attn.assign(alpha.data().begin(), alpha.data().end());

  int token;
  if (mode == DecodeMode::greedy) {
    token = argmax(r.out.dist);
  } else {
    if (teacher_token < 0 || teacher_token > cfg_.eos()) throw std::out_of_range("decode_step: teacher token out of range");
    token = teacher_token;
  }
  r.next.h = hc.h;
  r.next.c = hc.c;
  r.next.emitted = state.emitted;
  r.next.emitted.tokens.push_back(token);
  r.next.step = state.step + 1;
  r.logits = logits;
  r.alpha = alpha;
  return r;
}

Tensor BisvpModel::teacher_forced_logits(const BranchContext& ctx, const geom::TokenSequence& target) const {
  const auto& t = target.tokens;
  if (t.size() < 2 || t.front() != ctx.first || t.back() != cfg_.eos()) {
    throw std::invalid_argument("teacher_forced_logits: target must start at the branch's first vertex and end with EOS");
  }
  DecodeState state = initial_state(ctx);
  std::vector<Tensor> rows;
  rows.reserve(t.size() - 1);
  const auto V = static_cast<std::size_t>(cfg_.vocab());
  for (std::size_t k = 1; k < t.size(); ++k) {
    StepResult r = decode_step(ctx, state, DecodeMode::teacher_forced, t[k]);
    rows.push_back(num::reshape(r.logits, {1, V}));
    state = std::move(r.next);
  }
  return num::concat(rows, 0);
}

BranchResult BisvpModel::decode_greedy(const BranchContext& ctx, const geom::GridSpec& grid) const {
  num::NoGradGuard no_grad;
  DecodeState state = initial_state(ctx);
  double log_sum = 0.0;
  int steps = 0;
  while (state.step < cfg_.max_seq_len) {
    StepResult r = decode_step(ctx, state, DecodeMode::greedy);
    log_sum += std::log(*std::max_element(r.out.dist.begin(), r.out.dist.end()));
    ++steps;
    state = std::move(r.next);
    if (state.emitted.tokens.back() == cfg_.eos()) break;
  }

  // Collapse repeats, stop at EOS, drop a closing token equal to the first.
  std::vector<int> clean{ctx.first};
  for (std::size_t i = 1; i < state.emitted.tokens.size(); ++i) {
    const int t = state.emitted.tokens[i];
    if (t == cfg_.eos()) break;
    if (t != clean.back()) clean.push_back(t);
  }
  while (clean.size() > 1 && clean.back() == clean.front()) clean.pop_back();
  clean.push_back(cfg_.eos());

  BranchResult res;
  res.tokens = geom::TokenSequence{ctx.direction, std::move(clean)};
  res.seq_confidence = steps > 0 ? std::exp(log_sum / steps) : 0.0;
  try {
    res.polygon = geom::decode_tokens(res.tokens, grid);
  } catch (const geom::EmptyPolygon&) {
  } catch (const geom::NotAPolygon&) {
  }
  return res;
}

std::optional<PolygonHypothesis> BisvpModel::decode_bidirectional(const Tensor& feature, const Detection& det,
                                                                  const geom::GridSpec& grid) const {
  num::NoGradGuard no_grad;
  const int first = argmax(predict_first_vertex(feature));
  std::vector<BranchResult> results;
  for (Direction dir : directions()) results.push_back(decode_greedy(begin_branch(dir, feature, first), grid));
  return merge_branches(results, det.score);
}

std::optional<PolygonHypothesis> merge_branches(std::span<const BranchResult> branches, double det_score) {
  std::optional<PolygonHypothesis> best;
  for (const BranchResult& r : branches) {
    if (!r.polygon) continue;
    if (!best || r.seq_confidence > best->seq_confidence) {
      best = PolygonHypothesis{geom::canonicalize(*r.polygon), r.tokens.direction, r.seq_confidence, det_score};
    }
  }
  return best;
}

}  // namespace bisvp::model
