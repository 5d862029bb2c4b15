#include "bisvp/trainer.hpp"

#include <cmath>
#include <numeric>
#include <set>

#include "bisvp/ops.hpp"
#include "config_json.hpp"

namespace bisvp {

namespace detail {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const char* what, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw std::invalid_argument(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

ordered_json train_config_json(const train::TrainConfig& cfg) {
  const auto& m = cfg.model;
  const auto& s = cfg.sgd;
  ordered_json model{{"d", m.d},
                     {"S", m.S},
                     {"G", m.G},
                     {"lstm_hidden", m.lstm_hidden},
                     {"embed_dim", m.embed_dim},
                     {"max_seq_len", m.max_seq_len},
                     {"attn_heads", m.attn_heads},
                     {"sigma_min", m.sigma_min},
                     {"image_size", m.image_size},
                     {"backbone_channels", m.backbone_channels},
                     {"kv_side", m.kv_side},
                     {"roi_margin", m.roi_margin},
                     {"score_threshold", m.score_threshold},
                     {"nms_iou", m.nms_iou},
                     {"use_csff", m.use_csff},
                     {"bidirectional", m.bidirectional},
                     {"gaussian_attention", m.gaussian_attention}};
  ordered_json sgd{{"lr_main", s.lr_main},
                   {"lr_backbone", s.lr_backbone},
                   {"weight_decay", s.weight_decay},
                   {"lr_drop_epochs", s.lr_drop_epochs},
                   {"lr_drop_factor", s.lr_drop_factor},
                   {"momentum", s.momentum},
                   {"clip_norm", s.clip_norm}};
  return ordered_json{{"epochs", cfg.epochs},         {"batch_size", cfg.batch_size}, {"oracle_boxes", cfg.oracle_boxes},
                      {"seed", cfg.seed},             {"sgd", sgd},                   {"model", model}};
}

train::TrainConfig train_config_from(const json& j) {
  train::TrainConfig cfg;
  check_keys(j, "train config", {"epochs", "batch_size", "oracle_boxes", "seed", "sgd", "model"});
  read(j, "epochs", cfg.epochs);
  read(j, "batch_size", cfg.batch_size);
  read(j, "oracle_boxes", cfg.oracle_boxes);
  read(j, "seed", cfg.seed);
  if (j.contains("sgd")) {
    const json& s = j["sgd"];
    check_keys(s, "sgd", {"lr_main", "lr_backbone", "weight_decay", "lr_drop_epochs", "lr_drop_factor", "momentum",
                          "clip_norm"});
    read(s, "lr_main", cfg.sgd.lr_main);
    read(s, "lr_backbone", cfg.sgd.lr_backbone);
    read(s, "weight_decay", cfg.sgd.weight_decay);
    read(s, "lr_drop_epochs", cfg.sgd.lr_drop_epochs);
    read(s, "lr_drop_factor", cfg.sgd.lr_drop_factor);
    read(s, "momentum", cfg.sgd.momentum);
    read(s, "clip_norm", cfg.sgd.clip_norm);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model", {"d", "S", "G", "lstm_hidden", "embed_dim", "max_seq_len", "attn_heads", "sigma_min",
                            "image_size", "backbone_channels", "kv_side", "roi_margin", "score_threshold", "nms_iou",
                            "use_csff", "bidirectional", "gaussian_attention"});
    auto& c = cfg.model;
    read(m, "d", c.d);
    read(m, "S", c.S);
    read(m, "G", c.G);
    read(m, "lstm_hidden", c.lstm_hidden);
    read(m, "embed_dim", c.embed_dim);
    read(m, "max_seq_len", c.max_seq_len);
    read(m, "attn_heads", c.attn_heads);
    read(m, "sigma_min", c.sigma_min);
    read(m, "image_size", c.image_size);
    read(m, "backbone_channels", c.backbone_channels);
    read(m, "kv_side", c.kv_side);
    read(m, "roi_margin", c.roi_margin);
    read(m, "score_threshold", c.score_threshold);
    read(m, "nms_iou", c.nms_iou);
    read(m, "use_csff", c.use_csff);
    read(m, "bidirectional", c.bidirectional);
    read(m, "gaussian_attention", c.gaussian_attention);
  }
  cfg.validate();
  return cfg;
}

}  // namespace detail

namespace train {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  sgd.validate();
  model.validate();
}

std::string config_to_json(const TrainConfig& cfg) { return detail::train_config_json(cfg).dump(2); }

TrainConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  return detail::train_config_from(j);
}

TrainState::TrainState(const TrainConfig& cfg) : model(cfg.model, cfg.seed), shuffle_rng(cfg.seed, 0x5A0FF1E) {
  if (cfg.oracle_boxes) model.params().set_trainable("det.", false);
}

StepStats train_step(model::BisvpModel& model, num::SgdState& sgd, std::span<const synth::RenderedSample* const> batch,
                     const TrainConfig& cfg, int epoch) {
  LossTerms terms;
  try {
    terms = compute_losses(model, batch, cfg.oracle_boxes);
  } catch (const num::NonFiniteError& e) {
    std::string ids;
    for (const auto* s : batch) ids += (ids.empty() ? "" : ", ") + s->scene.id;
    throw NonFiniteLoss("non-finite value in epoch " + std::to_string(epoch) + " on batch [" + ids + "]: " + e.what());
  }
  StepStats stats;
  stats.loss = terms.values();
  stats.instances = terms.instances;
  stats.degenerate = terms.degenerate;
  if (terms.total.requires_grad()) {
    terms.total.backward();
  }
  stats.grad_norm = num::sgd_step(model.params(), cfg.sgd, epoch, &sgd, num::MissingGradPolicy::treat_as_zero);
  return stats;
}

void round_to_float(TrainState& state) {
  for (auto& e : state.model.params().entries()) {
    for (double& v : e.tensor.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  }
  for (auto& [name, v] : state.sgd.velocity) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  }
}

std::vector<EpochSummary> fit(TrainState& state, const std::vector<synth::RenderedSample>& data,
                              const TrainConfig& cfg, const EpochCallback& on_epoch, const StepCallback& on_step) {
  if (data.empty()) throw EmptyDataset("fit: dataset is empty");
  cfg.validate();
  std::vector<EpochSummary> out;
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[state.shuffle_rng.below(i)]);

    EpochSummary summary;
    summary.epoch = epoch;
    LossBreakdown sum;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::vector<const synth::RenderedSample*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) batch.push_back(&data[order[k]]);
      const StepStats st = train_step(state.model, state.sgd, batch, cfg, epoch);
      if (on_step) on_step(epoch, summary.steps, st);
      ++summary.steps;
      summary.step_totals.push_back(st.loss.total);
      summary.instances += st.instances;
      summary.degenerate += st.degenerate;
      sum.L_cls += st.loss.L_cls;
      sum.L_reg += st.loss.L_reg;
      sum.L_ver += st.loss.L_ver;
      sum.L_fv += st.loss.L_fv;
    }
    const double n = summary.steps;
    summary.mean = make_breakdown(sum.L_cls / n, sum.L_reg / n, sum.L_ver / n, sum.L_fv / n);
    round_to_float(state);
    state.epoch = epoch + 1;
    if (on_epoch) on_epoch(state, summary);
    out.push_back(std::move(summary));
  }
  return out;
}

TokenAccuracy teacher_forced_accuracy(const model::BisvpModel& model, const std::vector<synth::RenderedSample>& data) {
  num::NoGradGuard no_grad;
  TokenAccuracy acc;
  const auto& cfg = model.config();
  for (const auto& sample : data) {
    const SampleTargets targets = make_targets(sample.scene, cfg);
    const model::FeaturePyramid pyr = model.backbone_fpn(model::BisvpModel::image_tensor(sample.image));
    for (const InstanceTarget& inst : targets.instances) {
      const num::Tensor feature = model.building_feature(pyr, inst.grid);
      acc.correct += model::argmax(model.first_vertex_logits(feature).data()) == inst.cw.tokens.front();
      ++acc.total;
      for (geom::Direction dir : model.directions()) {
        const geom::TokenSequence& target = dir == geom::Direction::clockwise ? inst.cw : inst.ccw;
        const num::Tensor logits =
            model.teacher_forced_logits(model.begin_branch(dir, feature, target.tokens.front()), target);
        const std::size_t V = logits.dim(1);
        auto z = logits.data();
        for (std::size_t r = 0; r + 1 < target.tokens.size(); ++r) {
          const int pred = model::argmax(z.subspan(r * V, V));
          acc.correct += pred == target.tokens[r + 1];
          ++acc.total;
        }
      }
    }
  }
  return acc;
}

}  // namespace train
}  // namespace bisvp
