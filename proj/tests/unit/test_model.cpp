#include <doctest.h>

#include <cmath>

#include "bisvp/gradcheck.hpp"
#include "bisvp/model.hpp"
#include "bisvp/ops.hpp"
#include "bisvp/scene.hpp"

using namespace bisvp;
using namespace bisvp::model;
using geom::Polygon;
using num::Tensor;

namespace {

synth::Image test_image(int size, std::uint64_t seed) {
  synth::SceneConfig sc;
  sc.width = sc.height = size;
  sc.min_side = size / 8.0;
  sc.max_side = size / 3.0;
  return synth::render(synth::sample_scene(seed, sc)).image;
}

ModelConfig small_config() {
  ModelConfig cfg = gradcheck::toy_config();
  return cfg;
}

void fill(Tensor& t, double value) {
  for (double& v : t.mutable_data()) v = value;
}

}  // namespace

TEST_CASE("pyramid shapes for a 128 image") {
  const BisvpModel m(ModelConfig{}, 0);
  const FeaturePyramid p = m.backbone_fpn(BisvpModel::image_tensor(test_image(128, 1)));
  const std::size_t sides[] = {32, 16, 8, 4, 2};
  for (int level = 2; level <= 6; ++level) {
    const auto& t = p.level(level);
    CHECK(t.shape() == num::Shape{64, sides[level - 2], sides[level - 2]});
  }
}

TEST_CASE("zero image gives an all-zero pyramid") {
  const BisvpModel m(small_config(), 3);
  synth::Image zero{64, 64, std::vector<double>(64 * 64, 0.0)};
  const FeaturePyramid p = m.backbone_fpn(BisvpModel::image_tensor(zero));
  for (const auto& t : p.levels) {
    for (double v : t.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("model-level gradient checks") {
  for (const char* name : {"backbone_fpn", "detector", "csff", "first_vertex", "gaussian_attention", "decoder_step"}) {
    const gradcheck::Result r = gradcheck::run(name, 0);
    INFO(name << " " << r.max_rel_error);
    CHECK(gradcheck::passes(r));
  }
}

TEST_CASE("detector thresholding and NMS") {
  BisvpModel m(small_config(), 1);
  fill(m.params().get("det.cls.bias"), -50.0);
  const FeaturePyramid p = m.backbone_fpn(BisvpModel::image_tensor(test_image(64, 2)));
  CHECK(m.detect(p).empty());

  fill(m.params().get("det.cls.bias"), 50.0);
  fill(m.params().get("det.cls.weight"), 0.0);
  fill(m.params().get("det.reg.weight"), 0.0);
  fill(m.params().get("det.reg.bias"), 1.0);
  // Every cell proposes the same 16x16 box around itself; neighbours overlap at IoU 1/3.
  const auto dets = m.detect(p);
  CHECK(dets.size() == 64);

  const Detection a{geom::Box{0, 0, 10, 10}, 0.9};
  const Detection b{geom::Box{0, 0, 10, 9}, 0.8};
  CHECK(geom::box_iou(a.box, b.box) == doctest::Approx(0.9));
  const auto kept = nms({b, a}, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);
  CHECK(nms({a, Detection{geom::Box{20, 20, 30, 30}, 0.7}}, 0.5).size() == 2);
}

TEST_CASE("roi crop examples") {
  const Tensor constant = Tensor::full({3, 5, 5}, 2.5);
  const std::array<double, 4> region{3.1, 4.7, 17.2, 19.9};
  const Tensor c = num::roi_crop(constant, region, 4.0, 4);
  CHECK(c.shape() == num::Shape{16, 3});
  for (double v : c.data()) CHECK(v == doctest::Approx(2.5));

  std::vector<double> vals(2 * 4 * 4);
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<double>(i) * 0.37 - 3.0;
  const Tensor map = Tensor::from({2, 4, 4}, vals);
  const std::array<double, 4> full{0, 0, 32, 32};
  for (auto mode : {num::Sampling::bilinear, num::Sampling::nearest}) {
    const Tensor id = num::roi_crop(map, full, 8.0, 4, mode);
    for (std::size_t ch = 0; ch < 2; ++ch) {
      for (std::size_t r = 0; r < 16; ++r) CHECK(id.at(r * 2 + ch) == doctest::Approx(map.at(ch * 16 + r)));
    }
  }
}

TEST_CASE("CSFF at initialization is a residual identity") {
  const BisvpModel m(small_config(), 5);
  const FeaturePyramid p = m.backbone_fpn(BisvpModel::image_tensor(test_image(64, 4)));
  const auto grid = geom::GridSpec::around(geom::Box{10, 12, 40, 38}, 4, 0.1, 64, 64);
  const Tensor q = m.building_queries(p, grid);
  CsffTrace trace;
  const Tensor out = m.csff_fuse(q, p, grid, &trace);
  REQUIRE(out.shape() == q.shape());
  // Only the layer-norm epsilon separates the two.
  for (std::size_t i = 0; i < q.numel(); ++i) CHECK(out.at(i) == doctest::Approx(q.at(i)).epsilon(1e-4));

  REQUIRE(trace.attention.size() == 4);
  for (const Tensor& a : trace.attention) {
    const std::size_t cols = a.dim(1);
    for (std::size_t r = 0; r < a.dim(0); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        CHECK(a.at(r * cols + c) >= 0.0);
        s += a.at(r * cols + c);
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("first vertex ties go to the lower index") {
  const std::vector<double> v{0.1, 0.4, 0.2, 0.4};
  CHECK(argmax(v) == 1);
  BisvpModel m(small_config(), 2);
  fill(m.params().get("fv.weight"), 0.0);
  const Tensor feature = Tensor::full({16, 8}, 0.3);
  CHECK(argmax(m.predict_first_vertex(feature)) == 0);
  m.params().get("fv.bias").mutable_data()[5] = 1.0;
  m.params().get("fv.bias").mutable_data()[9] = 1.0;
  const auto dist = m.predict_first_vertex(feature);
  CHECK(dist.size() == 16);
  CHECK(argmax(dist) == 5);
}

TEST_CASE("gaussian constrained softmax limits") {
  const int side = 4;
  std::vector<double> raw(16);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = std::sin(static_cast<double>(i));
  const Tensor scores = Tensor::from({16}, raw);
  const Tensor mu = Tensor::from({2}, {1.3, 2.9});
  const Tensor plain = num::softmax(scores);
  const Tensor wide = gaussian_constrained_softmax(scores, mu, Tensor::from({1}, {1e6}), side);
  for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(wide.at(i) - plain.at(i)) <= 1e-9);

  const Tensor flat = Tensor::zeros({16});
  for (int j = 0; j < 16; ++j) {
    const Tensor centre = Tensor::from({2}, {j % side + 0.5, j / side + 0.5});
    const Tensor a = gaussian_constrained_softmax(flat, centre, Tensor::from({1}, {0.5}), side);
    CHECK(argmax(a.data()) == j);
    double s = 0;
    for (double v : a.data()) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("decoder steps produce distributions and respect max_seq_len") {
  ModelConfig cfg = small_config();
  cfg.max_seq_len = 6;
  BisvpModel m(cfg, 9);
  const Tensor feature = Tensor::full({16, 8}, 0.2);
  const auto grid = geom::GridSpec::around(geom::Box{0, 0, 30, 30}, cfg.G, 0.0, 64, 64);
  for (auto dir : m.directions()) {
    const BranchContext ctx = m.begin_branch(dir, feature, 3);
    DecodeState s = m.initial_state(ctx);
    while (s.step < cfg.max_seq_len) {
      const StepResult r = m.decode_step(ctx, s, DecodeMode::teacher_forced, 5);
      double total = 0, attn = 0;
      for (double p : r.out.dist) total += p;
      for (double a : r.out.attn) attn += a;
      CHECK(r.out.dist.size() == static_cast<std::size_t>(cfg.vocab()));
      CHECK(std::abs(total - 1.0) <= 1e-9);
      CHECK(std::abs(attn - 1.0) <= 1e-6);
      s = r.next;
    }
    CHECK_THROWS_AS(m.decode_step(ctx, s, DecodeMode::greedy), std::out_of_range);
    const BranchResult g = m.decode_greedy(ctx, grid);
    CHECK(g.tokens.tokens.size() <= static_cast<std::size_t>(cfg.max_seq_len) + 1);
    CHECK(g.tokens.tokens.front() == 3);
    CHECK(g.tokens.tokens.back() == cfg.eos());
  }
  CHECK_THROWS_AS(m.begin_branch(geom::Direction::clockwise, feature, cfg.G * cfg.G), std::out_of_range);
}

TEST_CASE("teacher forcing reproduces manual stepping") {
  const BisvpModel m(small_config(), 4);
  const Tensor feature = Tensor::full({16, 8}, -0.1);
  const BranchContext ctx = m.begin_branch(geom::Direction::counterclockwise, feature, 2);
  const geom::TokenSequence target{geom::Direction::counterclockwise, {2, 14, 12, 16}};
  const Tensor logits = m.teacher_forced_logits(ctx, target);
  CHECK(logits.shape() == num::Shape{3, 17});
  DecodeState s = m.initial_state(ctx);
  for (std::size_t k = 1; k < target.tokens.size(); ++k) {
    const StepResult r = m.decode_step(ctx, s, DecodeMode::teacher_forced, target.tokens[k]);
    for (std::size_t v = 0; v < 17; ++v) CHECK(logits.at((k - 1) * 17 + v) == r.logits.at(v));
    s = r.next;
  }
  CHECK_THROWS_AS(m.teacher_forced_logits(ctx, {geom::Direction::counterclockwise, {3, 14, 16}}), std::invalid_argument);
}

TEST_CASE("branch merge rule") {
  const Polygon sq({{0, 0}, {3, 0}, {3, 3}, {0, 3}});
  const Polygon tri({{3, 0}, {3, 3}, {0, 3}});
  BranchResult cw{{geom::Direction::clockwise, {0, 3, 15, 12, 16}}, 0.9, sq};
  BranchResult ccw{{geom::Direction::counterclockwise, {3, 12, 15, 16}}, 0.8, tri};
  std::vector<BranchResult> both{cw, ccw};
  auto h = merge_branches(both, 0.7);
  REQUIRE(h);
  CHECK(h->direction == geom::Direction::clockwise);
  CHECK(h->polygon == sq);
  CHECK(h->seq_confidence == 0.9);
  CHECK(h->det_score == 0.7);

  both[1].seq_confidence = 0.95;
  h = merge_branches(both, 0.7);
  REQUIRE(h);
  CHECK(h->direction == geom::Direction::counterclockwise);
  CHECK(geom::is_canonical(h->polygon));

  both[1].polygon.reset();
  CHECK(merge_branches(both, 0.7)->direction == geom::Direction::clockwise);
  both[0].polygon.reset();
  CHECK_FALSE(merge_branches(both, 0.7));
}

TEST_CASE("both branches emitting EOS at once reject the instance") {
  BisvpModel m(small_config(), 6);
  for (const char* b : {"cw", "ccw"}) {
    fill(m.params().get(std::string(b) + ".out.weight"), 0.0);
    m.params().get(std::string(b) + ".out.bias").mutable_data()[16] = 50.0;
  }
  const Tensor feature = Tensor::full({16, 8}, 0.5);
  const auto grid = geom::GridSpec::around(geom::Box{0, 0, 30, 30}, 4, 0.0, 64, 64);
  CHECK_FALSE(m.decode_bidirectional(feature, Detection{geom::Box{0, 0, 30, 30}, 1.0}, grid));
}

TEST_CASE("inference is deterministic and ablations change the parameter set") {
  const BisvpModel m(small_config(), 8);
  const synth::Image img = test_image(64, 8);
  const std::vector<geom::Box> boxes{geom::Box{5, 5, 30, 28}, geom::Box{34, 30, 60, 60}};
  const auto a = m.infer(img, &boxes);
  const auto b = m.infer(img, &boxes);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].polygon == b[i].polygon);
    CHECK(a[i].seq_confidence == b[i].seq_confidence);
  }

  ModelConfig uni = small_config();
  uni.bidirectional = false;
  uni.use_csff = false;
  const BisvpModel u(uni, 8);
  CHECK(u.directions().size() == 1);
  CHECK_FALSE(u.params().contains("ccw.embed"));
  CHECK_FALSE(u.params().contains("csff.p6.wq.weight"));
  CHECK(u.params().size() < m.params().size());
  CHECK_THROWS_AS(u.begin_branch(geom::Direction::counterclockwise, Tensor::full({16, 8}, 0.0), 0), std::invalid_argument);
}

TEST_CASE("config validation") {
  ModelConfig bad;
  bad.G = 1;
  CHECK_THROWS_AS(BisvpModel(bad, 0), std::invalid_argument);
  bad = ModelConfig{};
  bad.nms_iou = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
