#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include <json.hpp>

#include "bisvp/evaluate.hpp"
#include "bisvp/gradcheck.hpp"
#include "bisvp/metrics.hpp"
#include "bisvp/raster.hpp"
#include "bisvp/report.hpp"
#include "oracles.hpp"

using namespace bisvp;
using namespace bisvp::eval;
using geom::Polygon;

namespace {

Polygon rect(double x0, double y0, double x1, double y1) { return Polygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}); }

const Polygon kGt = rect(0, 0, 10, 10);
const Polygon kPred80 = rect(0, 0, 10, 8);

std::vector<synth::RenderedSample> toy_data(int count) {
  synth::SceneConfig sc;
  sc.width = sc.height = 64;
  sc.min_side = 12;
  sc.max_side = 24;
  sc.max_buildings = 2;
  return synth::generate_dataset(3, count, sc, synth::NoiseConfig{});
}

}  // namespace

TEST_CASE("matching examples") {
  REQUIRE(geom::raster_iou(kPred80, kGt) == doctest::Approx(0.8));
  const std::vector<ScoredPolygon> one{{kPred80, 0.9}};
  CHECK(match_instances(one, {kGt}, 0.75).is_tp(0));
  const MatchResult miss = match_instances(one, {kGt}, 0.85);
  CHECK_FALSE(miss.is_tp(0));
  CHECK(miss.gt_to_pred == std::vector<int>{-1});

  const std::vector<ScoredPolygon> two{{kGt, 0.8}, {kGt, 0.9}};
  const MatchResult m = match_instances(two, {kGt}, 0.5);
  CHECK(m.pred_to_gt == std::vector<int>{-1, 0});
  CHECK(m.gt_to_pred == std::vector<int>{1});

  // The higher-IoU ground truth is claimed.
  const MatchResult best = match_instances({{rect(0, 0, 10, 9), 1.0}}, {kGt, rect(0, 0, 10, 9)}, 0.5);
  CHECK(best.pred_to_gt == std::vector<int>{1});
  CHECK_THROWS_AS(match_instances(one, {kGt}, 1.0), std::invalid_argument);
}

TEST_CASE("IoU thresholds run from 0.50 to 0.95") {
  const auto t = iou_thresholds();
  CHECK(t.front() == 0.5);
  CHECK(t[5] == 0.75);
  CHECK(t.back() == 0.95);
}

TEST_CASE("AP/AR examples") {
  const ApAr r = compute_ap_ar({ImageInstances{"a", {{kPred80, 0.9}}, {kGt}}});
  CHECK(r.AP50 == doctest::Approx(100.0));
  CHECK(r.AP75 == doctest::Approx(100.0));
  CHECK(r.AP == doctest::Approx(70.0));
  CHECK(r.AR == doctest::Approx(70.0));

  const ApAr none = compute_ap_ar({ImageInstances{"a", {}, {kGt}}});
  for (double v : {none.AP, none.AP50, none.AP75, none.AR, none.AR50, none.AR75}) CHECK(v == 0.0);

  const ApAr same = compute_ap_ar({ImageInstances{"a", {{kGt, 0.5}, {rect(20, 20, 30, 40), 0.7}}, {kGt, rect(20, 20, 30, 40)}}});
  for (double v : {same.AP, same.AP50, same.AP75, same.AR, same.AR50, same.AR75}) CHECK(v == doctest::Approx(100.0));

  CHECK_THROWS_AS(compute_ap_ar({ImageInstances{"a", {{kGt, 0.5}}, {}}}), NoGroundTruth);
  CHECK_THROWS_AS(interpolated_ap({true}, 0), NoGroundTruth);
  CHECK(interpolated_ap({true, false, true}, 2) == doctest::Approx((51 + 50 * 2.0 / 3) / 101.0));
}

TEST_CASE("COCO summary agrees with the brute-force evaluator") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const auto images = oracle::random_instances(rng);
    const ApAr got = compute_ap_ar(images);
    const oracle::CocoResult want = oracle::brute_force_coco(images);
    INFO("trial " << trial);
    CHECK(got.AP == doctest::Approx(want.AP).epsilon(1e-9));
    CHECK(got.AP50 == doctest::Approx(want.AP50).epsilon(1e-9));
    CHECK(got.AP75 == doctest::Approx(want.AP75).epsilon(1e-9));
    CHECK(got.AR == doctest::Approx(want.AR).epsilon(1e-9));
    CHECK(got.AR50 == doctest::Approx(want.AR50).epsilon(1e-9));
    CHECK(got.AR75 == doctest::Approx(want.AR75).epsilon(1e-9));
    CHECK(got.AP <= got.AP50 + 1e-12);
    CHECK(got.AR <= got.AR50 + 1e-12);
    for (double v : {got.AP, got.AP50, got.AP75, got.AR, got.AR50, got.AR75}) {
      CHECK(v >= 0.0);
      CHECK(v <= 100.0);
    }
  }
}

TEST_CASE("max detections per image caps recall") {
  ImageInstances im{"a", {}, {}};
  for (int i = 0; i < 4; ++i) {
    const Polygon p = rect(i * 15.0, 0, i * 15.0 + 10, 10);
    im.ground_truth.push_back(p);
    im.predictions.push_back({p, 0.9 - 0.1 * i});
  }
  const std::vector<ImageInstances> images{im};
  CHECK(compute_ap_ar(images, 2).AR == doctest::Approx(50.0));
  CHECK(compute_ap_ar(images, 2).AR == doctest::Approx(oracle::brute_force_coco(images, 2).AR));
}

TEST_CASE("an extra true positive never lowers AR") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto images = oracle::random_instances(rng);
    const double before = compute_ap_ar(images).AR;
    for (auto& im : images) {
      if (im.ground_truth.empty()) continue;
      im.predictions.push_back({im.ground_truth.front(), rng.uniform()});
      break;
    }
    CHECK(compute_ap_ar(images).AR >= before - 1e-12);
  }
}

TEST_CASE("F1 examples") {
  auto r2 = [](double v) { return std::round(v * 100) / 100; };
  CHECK(r2(f1_from_ap_ar(46.4, 60.5)) == doctest::Approx(52.52));
  CHECK(r2(f1_from_ap_ar(62.1, 70.1)) == doctest::Approx(65.86));
  CHECK(r2(f1_from_ap_ar(45.9, 60.9)) == doctest::Approx(52.35));
  CHECK(f1_from_ap_ar(0.0, 37.0) == 0.0);
  CHECK(f1_from_ap_ar(0.0, 0.0) == 0.0);
}

TEST_CASE("report json") {
  const MetricsReport r = make_report(ApAr{70.0, 100.0, 100.0, 70.0, 100.0, 100.0}, 1, 1, 1, true);
  CHECK(r.F1_75 == doctest::Approx(100.0));
  const std::string text = report_to_json(r);
  CHECK(report_from_json(text) == rounded(r));

  const auto j = nlohmann::json::parse(text);
  std::set<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.insert(k);
  CHECK(keys == std::set<std::string>{"AP", "AP50", "AP75", "AR", "AR50", "AR75", "F1_75", "images", "gt_instances",
                                      "predictions", "oracle_boxes"});
  CHECK(j["oracle_boxes"].get<bool>());

  const MetricsReport odd = make_report(ApAr{12.3456, 50, 40, 20, 60, 33.333333}, 2, 3, 4, false);
  CHECK(rounded(odd).AP == 12.35);
  CHECK(rounded(odd).AR75 == 33.33);
  CHECK(report_from_json(report_to_json(odd)) == rounded(odd));

  auto extra = j;
  extra["note"] = 1;
  CHECK_THROWS_AS(report_from_json(extra.dump()), std::invalid_argument);
  auto missing = j;
  missing.erase("AR");
  CHECK_THROWS_AS(report_from_json(missing.dump()), std::invalid_argument);
}

TEST_CASE("prediction json roundtrip") {
  PredictionSet preds;
  preds["b"] = {{kGt, 0.75}, {rect(1.5, 2.25, 8, 9), 0.5}};
  preds["a"] = {};
  const PredictionSet back = predictions_from_json(predictions_to_json(preds));
  REQUIRE(back.size() == 2);
  REQUIRE(back.at("b").size() == 2);
  CHECK(back.at("b")[0].polygon == kGt);
  CHECK(back.at("b")[1].polygon == rect(1.5, 2.25, 8, 9));
  CHECK(back.at("b")[1].score == 0.5);
  CHECK_THROWS(predictions_from_json(R"({"a": [{"polygon": [[0,0],[1,1]], "score": 0.5}]})"));
  CHECK_THROWS(predictions_from_json(R"({"a": [{"polygon": [[0,0],[4,0],[0,4]], "score": 1.5}]})"));
}

TEST_CASE("overlay burns polygon edges at 1.0") {
  const synth::Image blank{32, 32, std::vector<double>(32 * 32, 0.25)};
  const Polygon p = rect(4, 4, 20, 12);
  const synth::Image out = overlay(blank, {p});
  const auto& v = p.vertices();
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (const auto& [x, y] : geom::line_pixels(v[i], v[(i + 1) % v.size()])) CHECK(out.at(x, y) == 1.0);
  }
  CHECK(out.at(10, 8) == 0.25);
  CHECK(out.at(0, 0) == 0.25);
}

TEST_CASE("dataset evaluation") {
  const auto data = toy_data(3);
  const model::BisvpModel m(gradcheck::toy_config(), 1);
  CHECK_THROWS_AS(evaluate_dataset(m, {}, true), std::invalid_argument);

  const EvalOutput a = evaluate_dataset(m, data, true);
  const EvalOutput b = evaluate_dataset(m, data, true);
  CHECK(report_to_json(a.report) == report_to_json(b.report));
  CHECK(a.report.oracle_boxes);
  CHECK(a.report.images == 3);
  int gt = 0;
  for (const auto& s : data) gt += static_cast<int>(s.scene.buildings.size());
  CHECK(a.report.gt_instances == gt);
  CHECK(a.predictions.size() == 3);

  const EvalOutput d = evaluate_dataset(m, data, false);
  CHECK_FALSE(d.report.oracle_boxes);
  for (const auto& [id, list] : a.predictions) {
    for (std::size_t i = 1; i < list.size(); ++i) CHECK(list[i - 1].score >= list[i].score);
  }
  const double iou = mean_oracle_iou(m, data);
  CHECK(iou >= 0.0);
  CHECK(iou <= 1.0);
}
