#include <doctest.h>

#include <cmath>
#include <string>

#include "bisvp/checkpoint.hpp"
#include "bisvp/gradcheck.hpp"
#include "bisvp/trainer.hpp"

using namespace bisvp;
using namespace bisvp::train;
using num::Tensor;

namespace {

TrainConfig toy_train_config() {
  TrainConfig cfg;
  cfg.model = gradcheck::toy_config();
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 4;
  cfg.sgd.lr_main = 0.01;
  cfg.sgd.lr_backbone = 0.001;
  cfg.sgd.momentum = 0.9;
  cfg.sgd.clip_norm = 5.0;
  return cfg;
}

std::vector<synth::RenderedSample> toy_data(int count, std::uint64_t seed = 1) {
  synth::SceneConfig sc;
  sc.width = sc.height = 64;
  sc.min_side = 12;
  sc.max_side = 24;
  sc.max_buildings = 2;
  return synth::generate_dataset(seed, count, sc, synth::NoiseConfig{});
}

std::vector<const synth::RenderedSample*> pointers(const std::vector<synth::RenderedSample>& data) {
  std::vector<const synth::RenderedSample*> out;
  for (const auto& s : data) out.push_back(&s);
  return out;
}

std::vector<std::vector<double>> snapshot(const model::BisvpModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& e : m.params().entries()) out.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("sequence cross entropy examples") {
  const geom::TokenSequence cw{geom::Direction::clockwise, {0, 3, 15, 12, 16}};
  const geom::TokenSequence ccw{geom::Direction::counterclockwise, {0, 12, 15, 3, 16}};
  const Tensor uniform = Tensor::zeros({4, 17});
  CHECK(sequence_ce(uniform, cw).item() == doctest::Approx(std::log(17.0)).epsilon(1e-12));
  CHECK(bidirectional_sequence_loss(uniform, cw, uniform, ccw).item() == doctest::Approx(2.833).epsilon(1e-3));

  auto one_hot = [](const geom::TokenSequence& s) {
    Tensor t = Tensor::zeros({4, 17});
    for (std::size_t k = 1; k < s.tokens.size(); ++k) t.mutable_data()[(k - 1) * 17 + s.tokens[k]] = 1000.0;
    return t;
  };
  CHECK(bidirectional_sequence_loss(one_hot(cw), cw, one_hot(ccw), ccw).item() <= 1e-12);

  Tensor a = Tensor::from({4, 17}, std::vector<double>(68, 0.0));
  for (std::size_t i = 0; i < 68; ++i) a.mutable_data()[i] = std::sin(static_cast<double>(i));
  CHECK(bidirectional_sequence_loss(a, cw, uniform, ccw).item() ==
        bidirectional_sequence_loss(uniform, ccw, a, cw).item());
  CHECK_THROWS(sequence_ce(Tensor::zeros({3, 17}), cw));
}

TEST_CASE("loss breakdown additivity") {
  const LossBreakdown b = make_breakdown(0.1, 0.2, 0.3, 0.05);
  CHECK(std::abs(b.total - 0.65) <= 1e-9);
}

TEST_CASE("detector targets") {
  const std::vector<geom::Box> boxes{geom::Box{0, 0, 16, 16}, geom::Box{8, 8, 14, 14}};
  const DetectorTargets t = detector_targets(boxes, 4, 4, 8.0);
  CHECK(t.positive == std::vector<int>{0, 1, 4, 5});
  for (int i = 0; i < 16; ++i) CHECK(t.objectness[static_cast<std::size_t>(i)] == ((i == 0 || i == 1 || i == 4 || i == 5) ? 1.0 : 0.0));
  // Cell 0 centre (4, 4) lies in the big box only.
  CHECK(std::vector<double>(t.ltrb.begin(), t.ltrb.begin() + 4) == std::vector<double>{4, 4, 12, 12});
  // Cell 5 centre (12, 12) lies in both; the smaller box wins.
  CHECK(std::vector<double>(t.ltrb.begin() + 12, t.ltrb.begin() + 16) == std::vector<double>{4, 4, 2, 2});
  CHECK(std::vector<double>(t.size.begin() + 12, t.size.begin() + 16) == std::vector<double>{6, 6, 6, 6});
  CHECK(detector_targets({}, 4, 4, 8.0).positive.empty());
}

TEST_CASE("sample targets share the canonical first vertex") {
  const auto data = toy_data(4);
  const model::ModelConfig cfg = gradcheck::toy_config();
  for (const auto& s : data) {
    const SampleTargets t = make_targets(s.scene, cfg);
    CHECK(t.boxes.size() == s.scene.buildings.size());
    CHECK(t.instances.size() + static_cast<std::size_t>(t.degenerate) == s.scene.buildings.size());
    for (const auto& inst : t.instances) {
      CHECK(inst.cw.tokens.front() == inst.ccw.tokens.front());
      CHECK(geom::reverse_direction(inst.cw) == inst.ccw);
      CHECK(inst.cw.tokens.back() == cfg.eos());
    }
  }
}

TEST_CASE("batch losses") {
  const auto data = toy_data(3);
  const model::BisvpModel m(gradcheck::toy_config(), 2);
  const auto batch = pointers(data);
  const LossBreakdown full = compute_losses(m, batch, false).values();
  CHECK(full.L_cls > 0.0);
  CHECK(full.L_reg >= 0.0);
  CHECK(full.L_ver > 0.0);
  CHECK(full.L_fv > 0.0);
  CHECK(std::abs(full.total - (full.L_cls + full.L_reg + full.L_ver + full.L_fv)) <= 1e-9);

  const LossBreakdown oracle = compute_losses(m, batch, true).values();
  CHECK(oracle.L_cls == 0.0);
  CHECK(oracle.L_reg == 0.0);
  CHECK(oracle.L_ver == full.L_ver);
  CHECK_THROWS_AS(compute_losses(m, {}, true), EmptyBatch);

  synth::RenderedSample empty = data[0];
  empty.scene.buildings.clear();
  const std::vector<const synth::RenderedSample*> none{&empty};
  const LossTerms t = compute_losses(m, none, false);
  CHECK(t.values().L_ver == 0.0);
  CHECK(t.values().L_fv == 0.0);
  CHECK_FALSE(t.warnings.empty());
}

TEST_CASE("training steps are deterministic") {
  const auto data = toy_data(2);
  const auto batch = pointers(data);
  const TrainConfig cfg = toy_train_config();
  auto run = [&] {
    TrainState st(cfg);
    std::vector<double> losses;
    for (int i = 0; i < 3; ++i) losses.push_back(train_step(st.model, st.sgd, batch, cfg, 0).loss.total);
    return losses;
  };
  CHECK(run() == run());
}

TEST_CASE("repeated steps on one batch lower the loss") {
  const auto data = toy_data(2, 9);
  const auto batch = pointers(data);
  TrainConfig cfg = toy_train_config();
  cfg.model.G = 8;
  cfg.oracle_boxes = true;
  cfg.sgd.lr_main = 0.05;
  cfg.sgd.lr_backbone = 0.05;
  TrainState st(cfg);
  const double first = train_step(st.model, st.sgd, batch, cfg, 0).loss.total;
  double last = first;
  for (int i = 1; i < 200; ++i) last = train_step(st.model, st.sgd, batch, cfg, 0).loss.total;
  CHECK(last < first);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto data = toy_data(2);
  TrainConfig cfg = toy_train_config();
  cfg.sgd.lr_main = 0.0;
  cfg.sgd.lr_backbone = 0.0;
  // Run configurations require positive rates; the update rule itself accepts zero.
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  TrainState st(toy_train_config());
  const auto before = snapshot(st.model);
  train_step(st.model, st.sgd, pointers(data), cfg, 0);
  CHECK(snapshot(st.model) == before);
}

TEST_CASE("fit runs the configured epochs") {
  const auto data = toy_data(2);
  TrainConfig cfg;
  cfg.model = gradcheck::toy_config();
  int calls = 0;
  TrainState st(cfg);
  const auto summaries = fit(st, data, cfg, [&](const TrainState& s, const EpochSummary& e) {
    CHECK(e.epoch == calls);
    CHECK(s.epoch == calls + 1);
    ++calls;
  });
  CHECK(calls == 24);
  CHECK(summaries.size() == 24);
  CHECK(st.epoch == 24);
  CHECK_THROWS_AS(fit(st, {}, cfg), EmptyDataset);
}

TEST_CASE("resuming from a checkpoint reproduces the next epoch bit-identically") {
  const auto data = toy_data(4, 3);
  const TrainConfig cfg = toy_train_config();
  TrainState straight(cfg);
  const auto full = fit(straight, data, cfg);

  TrainConfig two = cfg;
  two.epochs = 2;
  TrainState first(two);
  fit(first, data, two);
  const Checkpoint saved = parse_checkpoint(serialize_checkpoint(make_checkpoint(first, two)));
  CHECK(saved.epoch == 2);
  TrainState resumed = state_from_checkpoint(saved);
  const auto rest = fit(resumed, data, cfg);
  REQUIRE(rest.size() == 1);
  CHECK(rest[0].step_totals == full[2].step_totals);
  CHECK(snapshot(resumed.model) == snapshot(straight.model));
}

TEST_CASE("checkpoint roundtrip and errors") {
  const auto data = toy_data(2);
  const TrainConfig cfg = toy_train_config();
  TrainState st(cfg);
  fit(st, data, cfg);
  const Checkpoint ckpt = make_checkpoint(st, cfg);
  const std::string bytes = serialize_checkpoint(ckpt);
  CHECK(bytes.rfind("BSVP1\n", 0) == 0);
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(back.params == ckpt.params);
  CHECK(back.momentum == ckpt.momentum);
  CHECK(back.rng_state == ckpt.rng_state);
  CHECK(serialize_checkpoint(back) == bytes);

  const model::BisvpModel m = model_from_checkpoint(back);
  CHECK(snapshot(m) == snapshot(st.model));

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad), BadMagic);

  std::string edited = bytes;
  const std::string shape = "\"shape\":[4,3,3,3]";
  const auto at = edited.find(shape);
  REQUIRE(at != std::string::npos);
  edited.replace(at, shape.size(), "\"shape\":[4,3,3,2]");
  CHECK_THROWS_AS(parse_checkpoint(edited), CheckpointInconsistent);

  std::string version = bytes;
  const std::string tag = "\"format_version\":1";
  const auto v = version.find(tag);
  REQUIRE(v != std::string::npos);
  version.replace(v, tag.size(), "\"format_version\":2");
  CHECK_THROWS_AS(parse_checkpoint(version), VersionMismatch);

  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 4)), CheckpointInconsistent);

  Checkpoint other = back;
  other.config.model.G = 5;
  CHECK_THROWS_AS(model_from_checkpoint(other), CheckpointInconsistent);
}

TEST_CASE("config json") {
  TrainConfig cfg = toy_train_config();
  cfg.oracle_boxes = true;
  cfg.model.bidirectional = false;
  cfg.sgd.lr_drop_epochs = {2, 5};
  const TrainConfig back = config_from_json(config_to_json(cfg));
  CHECK(config_to_json(back) == config_to_json(cfg));
  CHECK(back.oracle_boxes);
  CHECK_FALSE(back.model.bidirectional);
  CHECK(back.sgd.lr_drop_epochs == std::vector<int>{2, 5});

  const TrainConfig defaults = config_from_json("{}");
  CHECK(defaults.epochs == 24);
  CHECK(defaults.sgd.lr_main == 1e-4);
  CHECK(defaults.model.G == 16);
  CHECK_THROWS_AS(config_from_json(R"({"epoch": 3})"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(R"({"model": {"g": 3}})"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(R"({"epochs": 0})"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(R"({"epochs": "3"})"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json("{"), std::invalid_argument);
}
