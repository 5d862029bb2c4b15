#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>

#include "bisvp/checkpoint.hpp"
#include "bisvp/dataset_io.hpp"
#include "bisvp/evaluate.hpp"
#include "bisvp/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace bisvp;

namespace {

int gen_data(const fs::path& out, int count, std::uint64_t seed, int size, int max_buildings, bool noise_free) {
  synth::SceneConfig sc;
  sc.width = sc.height = size;
  sc.max_buildings = max_buildings;
  synth::NoiseConfig noise;
  noise.noise_free = noise_free;
  synth::write_dataset(out, synth::generate_dataset(seed, count, sc, noise));
  std::cerr << "wrote " << count << " scenes to " << out.string() << "\n";
  return 0;
}

fs::path epoch_path(const fs::path& out, int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, ".epoch%02d", epoch);
  fs::path p = out;
  p.replace_filename(out.stem().string() + buf + out.extension().string());
  return p;
}

int run_train(const fs::path& data_dir, const fs::path& out, const fs::path& config_path, bool oracle, bool oracle_set,
          std::optional<std::uint64_t> seed, const fs::path& resume, bool keep_epochs) {
  train::TrainConfig cfg;
  if (!config_path.empty()) cfg = train::config_from_json(eval::read_text(config_path));
  if (oracle_set) cfg.oracle_boxes = oracle;
  if (seed) cfg.seed = *seed;
  cfg.validate();

  const auto data = synth::read_dataset(data_dir);
  std::optional<train::TrainState> state;
  if (!resume.empty()) {
    train::Checkpoint ckpt = train::load_checkpoint(resume);
    if (train::config_to_json(ckpt.config) != train::config_to_json(cfg)) {
      throw std::invalid_argument("--resume: checkpoint configuration differs from the requested one");
    }
    state.emplace(train::state_from_checkpoint(ckpt));
    std::cerr << "resuming after epoch " << state->epoch << "\n";
  } else {
    state.emplace(cfg);
  }

  auto on_epoch = [&](const train::TrainState& s, const train::EpochSummary& e) {
    std::fprintf(stderr, "epoch %2d  steps %d  total %.5f  cls %.5f  reg %.5f  ver %.5f  fv %.5f  lr %.2e\n",
                 e.epoch + 1, e.steps, e.mean.total, e.mean.L_cls, e.mean.L_reg, e.mean.L_ver, e.mean.L_fv,
                 cfg.sgd.lr(e.epoch, num::ParamGroup::main));
    const train::Checkpoint ckpt = train::make_checkpoint(s, cfg);
    train::save_checkpoint(out, ckpt);
    if (keep_epochs) train::save_checkpoint(epoch_path(out, s.epoch), ckpt);
  };
  train::fit(*state, data, cfg, on_epoch);
  return 0;
}

int evaluate(const fs::path& data_dir, const fs::path& ckpt_path, const fs::path& out, bool oracle,
             const fs::path& pred_out) {
  const model::BisvpModel model = train::model_from_checkpoint(train::load_checkpoint(ckpt_path));
  const auto data = synth::read_dataset(data_dir);
  const eval::EvalOutput res = eval::evaluate_dataset(model, data, oracle);
  eval::write_report(out, res.report);
  if (!pred_out.empty()) eval::write_predictions(pred_out, res.predictions);
  std::cout << eval::report_to_json(res.report);
  return 0;
}

int infer(const fs::path& image_path, const fs::path& ckpt_path, const fs::path& out, const fs::path& overlay_path) {
  const model::BisvpModel model = train::model_from_checkpoint(train::load_checkpoint(ckpt_path));
  const synth::Image image = synth::read_pgm(image_path);
  eval::PredictionSet preds;
  preds[image_path.stem().string()] = eval::predict_image(model, image);
  eval::write_predictions(out, preds);
  if (!overlay_path.empty()) {
    std::vector<geom::Polygon> polys;
    for (const auto& p : preds.begin()->second) polys.push_back(p.polygon);
    synth::write_pgm(overlay_path, eval::overlay(image, polys));
  }
  std::cerr << preds.begin()->second.size() << " polygons\n";
  return 0;
}

int metrics(const fs::path& pred_path, const fs::path& gt_path, const fs::path& out) {
  const eval::PredictionSet preds = eval::read_predictions(pred_path);
  std::vector<eval::ImageInstances> images;
  std::set<std::string> known;
  for (const auto& rec : synth::read_scenes(gt_path)) {
    eval::ImageInstances im;
    im.id = rec.scene.id;
    for (const auto& b : rec.scene.buildings) im.ground_truth.push_back(b.polygon);
    if (auto it = preds.find(im.id); it != preds.end()) im.predictions = it->second;
    known.insert(im.id);
    images.push_back(std::move(im));
  }
  for (const auto& [id, list] : preds) {
    if (!known.count(id)) throw std::invalid_argument("predictions for unknown image id '" + id + "'");
  }
  const eval::MetricsReport report = eval::evaluate_instances(images, false);
  eval::write_report(out, report);
  std::cout << eval::report_to_json(report);
  return 0;
}

int grad_check(std::uint64_t seed, const std::string& only) {
  bool ok = true;
  std::vector<std::string> names = only.empty() ? gradcheck::components() : std::vector<std::string>{only};
  for (const auto& name : names) {
    const gradcheck::Result r = gradcheck::run(name, seed);
    const bool pass = gradcheck::passes(r);
    ok = ok && pass;
    std::printf("%-20s max_rel_err %.3e  probes %4d  unresolved %3d  %s\n", name.c_str(), r.max_rel_error, r.checked, r.unresolved, pass ? "PASS" : "FAIL");
  }
  if (only.empty()) {
    const gradcheck::Result r = gradcheck::run(gradcheck::kNegativeControl, seed);
    const bool caught = r.max_rel_error > 1e-2;
    ok = ok && caught;
    std::printf("%-20s max_rel_err %.3e  probes %4d  %s (negative control)\n", r.component.c_str(), r.max_rel_error,
                r.checked, caught ? "DETECTED" : "MISSED");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BiSVP: bidirectional serialized polygon vertex prediction"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_out;
  int count = 0, size = 128, max_buildings = 5;
  std::uint64_t gen_seed = 0;
  bool noise_free = false;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", count, "Number of scenes")->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Dataset seed")->required();
  gen->add_option("--size", size, "Image side in pixels")->check(CLI::PositiveNumber);
  gen->add_option("--max-buildings", max_buildings, "Maximum buildings per scene")->check(CLI::PositiveNumber);
  gen->add_flag("--noise-free", noise_free, "Render without noise");

  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_data, tr_out, tr_config, tr_resume;
  bool tr_oracle = false, keep_epochs = false;
  std::optional<std::uint64_t> tr_seed;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--config", tr_config, "TrainConfig JSON");
  auto* tr_oracle_flag = tr->add_flag("--oracle-boxes", tr_oracle, "Train the decoder on ground-truth boxes only");
  tr->add_option("--seed", tr_seed, "Override the configured seed");
  tr->add_option("--resume", tr_resume, "Continue from a checkpoint");
  tr->add_flag("--keep-epochs", keep_epochs, "Also keep one checkpoint file per epoch");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string ev_data, ev_ckpt, ev_out, ev_pred;
  bool ev_oracle = false;
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--out", ev_out, "Report JSON")->required();
  ev->add_flag("--oracle-boxes", ev_oracle, "Use ground-truth boxes instead of the detector");
  ev->add_option("--predictions", ev_pred, "Also write the predictions JSON");

  auto* inf = app.add_subcommand("infer", "Predict polygons for one image");
  std::string inf_image, inf_ckpt, inf_out, inf_overlay;
  inf->add_option("--image", inf_image, "Input PGM")->required();
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint")->required();
  inf->add_option("--out", inf_out, "Polygons JSON")->required();
  inf->add_option("--overlay", inf_overlay, "Overlay PGM");

  auto* me = app.add_subcommand("metrics", "Score a predictions file against ground truth");
  std::string me_pred, me_gt, me_out;
  me->add_option("--pred", me_pred, "Predictions JSON")->required();
  me->add_option("--gt", me_gt, "scenes.jsonl")->required();
  me->add_option("--out", me_out, "Report JSON")->required();

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  std::uint64_t gc_seed = 0;
  std::string gc_component;
  gc->add_option("--seed", gc_seed, "Seed");
  gc->add_option("--component", gc_component, "Check a single component");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data(gen_out, count, gen_seed, size, max_buildings, noise_free);
    if (*tr) return run_train(tr_data, tr_out, tr_config, tr_oracle, tr_oracle_flag->count() > 0, tr_seed, tr_resume, keep_epochs);
    if (*ev) return evaluate(ev_data, ev_ckpt, ev_out, ev_oracle, ev_pred);
    if (*inf) return infer(inf_image, inf_ckpt, inf_out, inf_overlay);
    if (*me) return metrics(me_pred, me_gt, me_out);
    if (*gc) return grad_check(gc_seed, gc_component);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
