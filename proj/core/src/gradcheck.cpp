#include "bisvp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>

#include "bisvp/losses.hpp"
#include "bisvp/ops.hpp"

namespace bisvp::gradcheck {

namespace ops = bisvp::num;

Result check(const std::string& component, std::vector<Tensor> leaves, const std::function<Tensor()>& loss, Rng& rng,
             int per_leaf, double step) {
  for (Tensor& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (Tensor& t : leaves) {
    if (t.grad_written()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
    t.zero_grad();
  }

  ops::NoGradGuard no_grad;
  Result res;
  res.component = component;
  struct Difference {
    double quotient;
    bool unchanged;  // loss bitwise identical on both sides
  };
  auto central = [&](std::span<double> data, std::size_t idx, double h) {
    const double saved = data[idx];
    data[idx] = saved + h;
    const double plus = loss().item();
    data[idx] = saved - h;
    const double minus = loss().item();
    data[idx] = saved;
    return Difference{(plus - minus) / (2.0 * h), plus == minus};
  };
  const double base = loss().item();
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    const std::size_t n = leaf.numel();
    const std::size_t probes = std::min<std::size_t>(n, static_cast<std::size_t>(per_leaf));
    for (std::size_t k = 0; k < probes; ++k) {
      const std::size_t idx = probes == n ? k : static_cast<std::size_t>(rng.below(n));
      auto data = leaf.mutable_data();
      const Difference full = central(data, idx, step);
      const Difference half = central(data, idx, step / 2);
      const double fd = full.quotient;
      ++res.checked;
      // The oracle itself is unreliable here: a kink within the step, or a
      // gradient below the rounding floor of the difference quotient.
      const bool flat = full.unchanged && half.unchanged;
      const double rounding = std::numeric_limits<double>::epsilon() * std::abs(base) / (2.0 * step);
      const double scale = std::max(1e-8, std::abs(fd));
      if (!flat && (std::abs(fd - half.quotient) > kOracleTolerance * scale || rounding > kRoundingBudget * scale)) {
        ++res.unresolved;
        continue;
      }
      const double err = std::abs(analytic[li][idx] - fd) / std::max(1e-8, std::abs(fd));
      res.max_rel_error = std::max(res.max_rel_error, err);
    }
  }
  return res;
}

model::ModelConfig toy_config() {
  model::ModelConfig cfg;
  cfg.d = 8;
  cfg.S = 4;
  cfg.G = 4;
  cfg.lstm_hidden = 16;
  cfg.embed_dim = 4;
  cfg.max_seq_len = 12;
  cfg.image_size = 64;
  cfg.backbone_channels = {4, 4, 8, 8};
  cfg.kv_side = 4;
  return cfg;
}

namespace {

Tensor random_tensor(num::Shape shape, Rng& rng, double scale = 1.0, double offset = 0.0) {
  std::vector<double> v(num::shape_numel(shape));
  for (double& x : v) x = offset + scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Scalar loss sum(y * w) with fixed random weights, created on first use.
class Projector {
 public:
  explicit Projector(std::uint64_t seed) : rng_(seed, 0x9A0) {}
  Tensor operator()(const Tensor& y) {
    if (y.numel() == 1) return ops::reshape(y, {});
    auto it = weights_.find(slot_);
    if (it == weights_.end()) {
      std::vector<double> w(y.numel());
      const double s = 1.0 / std::sqrt(static_cast<double>(y.numel()));
      for (double& x : w) x = s * rng_.normal();
      it = weights_.emplace(slot_, Tensor::from(y.shape(), std::move(w))).first;
    }
    ++slot_;
    return ops::sum(ops::mul(y, it->second));
  }
  void reset() { slot_ = 0; }

 private:
  Rng rng_;
  std::map<int, Tensor> weights_;
  int slot_ = 0;
};

using Builder = std::function<Result(std::uint64_t)>;

// Single-output check: leaves -> tensor, projected to a scalar.
Result simple(const std::string& name, std::uint64_t seed, std::vector<Tensor> leaves,
              std::function<Tensor(const std::vector<Tensor>&)> f) {
  Rng rng(seed, 0xC4EC);
  auto proj = std::make_shared<Projector>(seed);
  auto loss = [leaves, f, proj]() {
    proj->reset();
    return (*proj)(f(leaves));
  };
  return check(name, leaves, loss, rng);
}

// Model parameters with the given prefixes. All-zero tensors (biases,
// zero-initialized projections) get small random values so every path
// carries gradient.
std::vector<Tensor> model_leaves(model::BisvpModel& m, std::initializer_list<const char*> prefixes, Rng& rng) {
  std::vector<Tensor> out;
  for (auto& e : m.params().entries()) {
    for (const char* p : prefixes) {
      if (e.name.rfind(p, 0) == 0) {
        auto w = e.tensor.mutable_data();
        if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) {
          for (double& v : w) v = 0.1 * rng.normal();
        }
        out.push_back(e.tensor);
        break;
      }
    }
  }
  return out;
}

synth::RenderedSample toy_sample(std::uint64_t seed, const model::ModelConfig& cfg) {
  synth::SceneConfig sc;
  sc.width = sc.height = cfg.image_size;
  sc.max_buildings = 2;
  sc.min_side = 12.0;
  sc.max_side = 24.0;
  for (std::uint64_t s = seed;; ++s) {
    synth::Scene scene = synth::sample_scene(s, sc, "toy");
    if (!train::make_targets(scene, cfg).instances.empty()) return synth::render(scene);
  }
}

geom::GridSpec toy_grid(const model::BisvpModel& m) { return m.grid_for(geom::Box{13.2, 9.7, 41.5, 37.9}); }

std::map<std::string, Builder> registry() {
  std::map<std::string, Builder> r;
  auto add_simple = [&r](const std::string& name, std::function<std::vector<Tensor>(Rng&)> make,
                         std::function<Tensor(const std::vector<Tensor>&)> f) {
    r[name] = [name, make, f](std::uint64_t seed) {
      Rng rng(seed, 0x1EAF);
      return simple(name, seed, make(rng), f);
    };
  };
  using V = std::vector<Tensor>;

  add_simple("add", [](Rng& g) { return V{random_tensor({3, 4}, g), random_tensor({4}, g)}; },
             [](const V& x) { return ops::add(x[0], x[1]); });
  add_simple("sub", [](Rng& g) { return V{random_tensor({3, 4}, g), random_tensor({3, 4}, g)}; },
             [](const V& x) { return ops::sub(x[0], x[1]); });
  add_simple("mul", [](Rng& g) { return V{random_tensor({2, 3, 4}, g), random_tensor({3, 4}, g)}; },
             [](const V& x) { return ops::mul(x[0], x[1]); });
  add_simple("scale", [](Rng& g) { return V{random_tensor({5}, g)}; }, [](const V& x) { return ops::scale(x[0], -2.5); });
  add_simple("add_n", [](Rng& g) { return V{random_tensor({2, 3}, g), random_tensor({2, 3}, g), random_tensor({2, 3}, g)}; },
             [](const V& x) { return ops::add_n(x); });
  add_simple("relu", [](Rng& g) { return V{random_tensor({24}, g)}; }, [](const V& x) { return ops::relu(x[0]); });
  add_simple("sigmoid", [](Rng& g) { return V{random_tensor({12}, g, 2.0)}; }, [](const V& x) { return ops::sigmoid(x[0]); });
  add_simple("tanh", [](Rng& g) { return V{random_tensor({12}, g)}; }, [](const V& x) { return ops::tanh(x[0]); });
  add_simple("exp", [](Rng& g) { return V{random_tensor({12}, g)}; }, [](const V& x) { return ops::exp(x[0]); });
  add_simple("softplus", [](Rng& g) { return V{random_tensor({12}, g, 2.0)}; }, [](const V& x) { return ops::softplus(x[0]); });
  add_simple("matmul", [](Rng& g) { return V{random_tensor({3, 4}, g), random_tensor({4, 5}, g)}; },
             [](const V& x) { return ops::matmul(x[0], x[1]); });
  add_simple("transpose", [](Rng& g) { return V{random_tensor({3, 4}, g)}; }, [](const V& x) { return ops::transpose(x[0]); });
  add_simple("linear", [](Rng& g) { return V{random_tensor({3, 4}, g), random_tensor({5, 4}, g), random_tensor({5}, g)}; },
             [](const V& x) { return ops::linear(x[0], x[1], x[2]); });
  add_simple("linear_vector", [](Rng& g) { return V{random_tensor({4}, g), random_tensor({5, 4}, g)}; },
             [](const V& x) { return ops::linear(x[0], x[1], Tensor()); });
  add_simple("reshape", [](Rng& g) { return V{random_tensor({3, 4}, g)}; },
             [](const V& x) { return ops::tanh(ops::reshape(x[0], {2, 6})); });
  add_simple("concat", [](Rng& g) { return V{random_tensor({2, 3}, g), random_tensor({2, 2}, g)}; },
             [](const V& x) { return ops::concat(x, 1); });
  add_simple("concat_rows", [](Rng& g) { return V{random_tensor({2, 3}, g), random_tensor({1, 3}, g)}; },
             [](const V& x) { return ops::concat(x, 0); });
  add_simple("slice", [](Rng& g) { return V{random_tensor({3, 6}, g)}; }, [](const V& x) { return ops::slice(x[0], 1, 2, 3); });
  add_simple("embedding", [](Rng& g) { return V{random_tensor({6, 3}, g)}; }, [](const V& x) {
    const int ids[] = {1, 4, 1, 5};
    return ops::embedding(x[0], ids);
  });
  add_simple("sum", [](Rng& g) { return V{random_tensor({3, 4}, g)}; }, [](const V& x) { return ops::sum(ops::tanh(x[0])); });
  add_simple("mean", [](Rng& g) { return V{random_tensor({3, 4}, g)}; }, [](const V& x) { return ops::mean(ops::exp(x[0])); });
  add_simple("mean_axis", [](Rng& g) { return V{random_tensor({3, 4}, g)}; },
             [](const V& x) { return ops::mean_axis(x[0], 0); });
  add_simple("mean_axis_last", [](Rng& g) { return V{random_tensor({3, 4}, g)}; },
             [](const V& x) { return ops::mean_axis(x[0], 1); });
  add_simple("softmax", [](Rng& g) { return V{random_tensor({3, 5}, g, 2.0)}; }, [](const V& x) { return ops::softmax(x[0]); });
  add_simple("layer_norm", [](Rng& g) { return V{random_tensor({3, 6}, g, 2.0), random_tensor({6}, g, 0.5, 1.0), random_tensor({6}, g)}; },
             [](const V& x) { return ops::layer_norm(x[0], x[1], x[2]); });
  add_simple("conv2d", [](Rng& g) { return V{random_tensor({2, 7, 7}, g), random_tensor({3, 2, 3, 3}, g), random_tensor({3}, g)}; },
             [](const V& x) { return ops::conv2d(x[0], x[1], x[2], 2, 1); });
  add_simple("conv2d_3x3", [](Rng& g) { return V{random_tensor({3, 3, 3}, g), random_tensor({3, 3, 3, 3}, g), random_tensor({3}, g)}; },
             [](const V& x) { return ops::conv2d(x[0], x[1], x[2], 1, 1); });
  add_simple("avg_pool2d", [](Rng& g) { return V{random_tensor({2, 4, 4}, g)}; }, [](const V& x) { return ops::avg_pool2d(x[0], 2); });
  add_simple("resize_nearest", [](Rng& g) { return V{random_tensor({2, 3, 3}, g)}; },
             [](const V& x) { return ops::resize_nearest(x[0], 5, 6); });
  add_simple("resize_bilinear", [](Rng& g) { return V{random_tensor({2, 3, 4}, g)}; },
             [](const V& x) { return ops::resize_bilinear(x[0], 6, 5); });
  add_simple("roi_crop", [](Rng& g) { return V{random_tensor({3, 8, 8}, g)}; }, [](const V& x) {
    const double region[4] = {5.3, 7.1, 25.2, 30.4};
    return ops::roi_crop(x[0], std::span<const double, 4>(region), 4.0, 4);
  });
  add_simple("roi_crop_nearest", [](Rng& g) { return V{random_tensor({3, 8, 8}, g)}; }, [](const V& x) {
    const double region[4] = {5.3, 7.1, 25.2, 30.4};
    return ops::roi_crop(x[0], std::span<const double, 4>(region), 4.0, 4, ops::Sampling::nearest);
  });
  add_simple("gaussian_log_mask", [](Rng& g) { return V{random_tensor({2}, g, 0.5, 2.0), random_tensor({1}, g, 0.1, 1.2)}; },
             [](const V& x) { return ops::gaussian_log_mask(x[0], x[1], 4); });
  add_simple("cross_entropy", [](Rng& g) { return V{random_tensor({3, 5}, g)}; }, [](const V& x) {
    const int t[] = {2, 0, 4};
    return ops::cross_entropy(x[0], t);
  });
  add_simple("l1_loss", [](Rng& g) { return V{random_tensor({2, 4}, g)}; }, [](const V& x) {
    const double t[] = {0.3, -1.7, 2.2, 0.05, -0.4, 1.1, -2.5, 0.9};
    return ops::l1_loss(x[0], t);
  });
  add_simple("bce_with_logits", [](Rng& g) { return V{random_tensor({6}, g, 2.0)}; }, [](const V& x) {
    const double t[] = {1, 0, 0, 1, 1, 0};
    return ops::bce_with_logits(x[0], t);
  });
  add_simple("lstm_cell", [](Rng& g) {
    return V{random_tensor({5}, g), random_tensor({6}, g), random_tensor({6}, g), random_tensor({24, 11}, g, 0.5),
             random_tensor({24}, g, 0.5)};
  }, [](const V& x) {
    const ops::LstmState s = ops::lstm_cell(x[0], x[1], x[2], ops::LstmParams{x[3], x[4], 6, 5});
    const Tensor parts[] = {s.h, s.c};
    return ops::concat(parts, 0);
  });

  // Model-level components at toy dimensions.
  r["backbone_fpn"] = [](std::uint64_t seed) {
    Rng rng(seed, 0xB0);
    auto m = std::make_shared<model::BisvpModel>(toy_config(), seed);
    std::vector<Tensor> leaves = model_leaves(*m, {"backbone.", "fpn."}, rng);
    const Tensor image = random_tensor({3, 64, 64}, rng, 0.3, 0.4);
    leaves.push_back(image);
    auto proj = std::make_shared<Projector>(seed);
    return check("backbone_fpn", leaves, [m, proj, image] {
      proj->reset();
      const model::FeaturePyramid pyr = m->backbone_fpn(image);
      std::vector<Tensor> terms;
      for (const Tensor& level : pyr.levels) terms.push_back((*proj)(level));
      return ops::add_n(terms);
    }, rng, 4);
  };
  r["detector"] = [](std::uint64_t seed) {
    Rng rng(seed, 0xDE);
    auto m = std::make_shared<model::BisvpModel>(toy_config(), seed);
    std::vector<Tensor> leaves = model_leaves(*m, {"det."}, rng);
    model::FeaturePyramid pyr;
    for (int i = 2; i <= 6; ++i) {
      const auto side = static_cast<std::size_t>(64 >> i);
      pyr.levels[static_cast<std::size_t>(i - 2)] = random_tensor({8, side, side}, rng);
    }
    leaves.push_back(pyr.levels[1]);
    auto boxes = std::make_shared<std::vector<geom::Box>>(std::vector<geom::Box>{{4.0, 6.0, 30.0, 28.0}, {36.0, 30.0, 60.0, 58.0}});
    return check("detector", leaves, [m, pyr, boxes] {
      const model::DetectorOutput out = m->detector_head(pyr);
      const train::DetectorTargets t = train::detector_targets(*boxes, out.rows, out.cols, 8.0);
      std::vector<double> inv(t.size.size()), target(t.size.size());
      for (std::size_t i = 0; i < inv.size(); ++i) {
        inv[i] = 1.0 / t.size[i];
        target[i] = t.ltrb[i] * inv[i];
      }
      const Tensor rows = ops::embedding(ops::transpose(out.offsets), t.positive);
      const Tensor pred = ops::mul(ops::scale(rows, 8.0), Tensor::from({t.positive.size(), 4}, inv));
      return ops::add(ops::bce_with_logits(out.objectness, t.objectness), ops::l1_loss(pred, target));
    }, rng, 6);
  };
  r["csff"] = [](std::uint64_t seed) {
    Rng rng(seed, 0xC5);
    auto m = std::make_shared<model::BisvpModel>(toy_config(), seed);
    std::vector<Tensor> leaves = model_leaves(*m, {"csff."}, rng);
    model::FeaturePyramid pyr;
    for (int i = 2; i <= 6; ++i) {
      const auto side = static_cast<std::size_t>(64 >> i);
      pyr.levels[static_cast<std::size_t>(i - 2)] = random_tensor({8, side, side}, rng);
      leaves.push_back(pyr.levels[static_cast<std::size_t>(i - 2)]);
    }
    const geom::GridSpec grid = toy_grid(*m);
    auto proj = std::make_shared<Projector>(seed);
    return check("csff", leaves, [m, pyr, grid, proj] {
      proj->reset();
      return (*proj)(m->building_feature(pyr, grid));
    }, rng, 6);
  };
  r["first_vertex"] = [](std::uint64_t seed) {
    Rng rng(seed, 0xF1);
    auto m = std::make_shared<model::BisvpModel>(toy_config(), seed);
    std::vector<Tensor> leaves = model_leaves(*m, {"fv."}, rng);
    const Tensor feature = random_tensor({16, 8}, rng);
    leaves.push_back(feature);
    return check("first_vertex", leaves, [m, feature] {
      const int target[] = {5};
      return ops::cross_entropy(m->first_vertex_logits(feature), target);
    }, rng, 6);
  };
  r["gaussian_attention"] = [](std::uint64_t seed) {
    Rng rng(seed, 0x6A);
    auto m = std::make_shared<model::BisvpModel>(toy_config(), seed);
    std::vector<Tensor> leaves = model_leaves(*m, {"cw.attn."}, rng);
    const Tensor feature = random_tensor({16, 8}, rng);
    const Tensor h = random_tensor({16}, rng);
    leaves.push_back(feature);
    leaves.push_back(h);
    auto proj = std::make_shared<Projector>(seed);
    return check("gaussian_attention", leaves, [m, feature, h, proj] {
      proj->reset();
      const model::BranchContext ctx = m->begin_branch(geom::Direction::clockwise, feature, 5);
      return (*proj)(m->gaussian_attention(ctx, h));
    }, rng, 6);
  };
  r["decoder_step"] = [](std::uint64_t seed) {
    Rng rng(seed, 0xD5);
    auto m = std::make_shared<model::BisvpModel>(toy_config(), seed);
    std::vector<Tensor> leaves = model_leaves(*m, {"ccw."}, rng);
    const Tensor feature = random_tensor({16, 8}, rng);
    leaves.push_back(feature);
    auto proj = std::make_shared<Projector>(seed);
    const geom::TokenSequence target{geom::Direction::counterclockwise, {5, 9, 10, 6, 16}};
    return check("decoder_step", leaves, [m, feature, proj, target] {
      proj->reset();
      const model::BranchContext ctx = m->begin_branch(geom::Direction::counterclockwise, feature, 5);
      return (*proj)(m->teacher_forced_logits(ctx, target));
    }, rng, 4);
  };
  r["full_loss"] = [](std::uint64_t seed) {
    Rng rng(seed, 0xF7);
    const model::ModelConfig cfg = toy_config();
    auto m = std::make_shared<model::BisvpModel>(cfg, seed);
    std::vector<Tensor> leaves = model_leaves(*m, {""}, rng);
    auto sample = std::make_shared<synth::RenderedSample>(toy_sample(seed, cfg));
    return check("full_loss", leaves, [m, sample] {
      const synth::RenderedSample* batch[] = {sample.get()};
      return train::compute_losses(*m, batch, false).total;
    }, rng, 3);
  };
  r[kNegativeControl] = [](std::uint64_t seed) {
    Rng rng(seed, 0xBAD);
    const V leaves{random_tensor({4}, rng), random_tensor({3, 4}, rng)};
    auto proj = std::make_shared<Projector>(seed);
    return check(kNegativeControl, leaves, [leaves, proj] {
      proj->reset();
      const Tensor y = ops::linear(leaves[0], leaves[1], Tensor());
      // Identity on the values, but the weight gradient comes back scaled by 1.5.
      std::vector<double> out(y.data().begin(), y.data().end());
      const Tensor w = leaves[1];
      const Tensor x = leaves[0];
      const Tensor corrupted = num::detail::make_result(y.shape(), std::move(out), {x, w}, [x, w](num::detail::Node& self) {
        auto xd = x.data();
        auto wd = w.data();
        double* gx = x.node()->grad_buffer();
        double* gw = w.node()->grad_buffer();
        for (std::size_t o = 0; o < 3; ++o) {
          for (std::size_t i = 0; i < 4; ++i) {
            gx[i] += self.grad[o] * wd[o * 4 + i];
            gw[o * 4 + i] += 1.5 * self.grad[o] * xd[i];
          }
        }
      }, "corrupted_linear");
      return (*proj)(corrupted);
    }, rng, 12);
  };
  return r;
}

}  // namespace

std::vector<std::string> components() {
  std::vector<std::string> out;
  for (const auto& [name, fn] : registry()) {
    if (name != kNegativeControl) out.push_back(name);
  }
  return out;
}

Result run(const std::string& component, std::uint64_t seed) {
  const auto reg = registry();
  const auto it = reg.find(component);
  if (it == reg.end()) throw std::invalid_argument("grad-check: unknown component '" + component + "'");
  return it->second(seed);
}

}  // namespace bisvp::gradcheck
