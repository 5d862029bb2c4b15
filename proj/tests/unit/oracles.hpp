#pragma once

// Reference implementations used as test oracles. They are written from
// first principles and share no code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <tuple>
#include <vector>

#include "bisvp/metrics.hpp"
#include "bisvp/polygon.hpp"
#include "bisvp/raster.hpp"
#include "bisvp/rng.hpp"
#include "bisvp/tensor.hpp"

namespace oracle {

using bisvp::geom::Point;
using bisvp::geom::Polygon;

// Convex polygon: n points at sorted random angles on a random ellipse.
inline Polygon random_convex(bisvp::Rng& rng, double lo, double hi, int min_n = 3, int max_n = 8) {
  const int n = rng.uniform_int(min_n, max_n);
  while (true) {
    std::vector<double> angles(static_cast<std::size_t>(n));
    for (double& a : angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    const double rx = rng.uniform(0.1, 0.5) * (hi - lo);
    const double ry = rng.uniform(0.1, 0.5) * (hi - lo);
    const double cx = rng.uniform(lo + rx, hi - rx);
    const double cy = rng.uniform(lo + ry, hi - ry);
    std::vector<Point> pts;
    for (double a : angles) pts.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    try {
      return Polygon(pts);
    } catch (const bisvp::geom::NotAPolygon&) {
    }
  }
}

// Crossing-number membership test.
inline bool inside(const Polygon& p, Point q) {
  bool in = false;
  const auto& v = p.vertices();
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > q.y) != (v[j].y > q.y)) {
      const double x = v[j].x + (q.y - v[j].y) * (v[i].x - v[j].x) / (v[i].y - v[j].y);
      if (q.x < x) in = !in;
    }
  }
  return in;
}

// IoU estimated from uniform samples over the union bounding box.
inline double monte_carlo_iou(const Polygon& a, const Polygon& b, bisvp::Rng& rng, int samples = 100000) {
  const auto ba = a.bounds();
  const auto bb = b.bounds();
  const double x0 = std::min(ba.x0, bb.x0), y0 = std::min(ba.y0, bb.y0);
  const double x1 = std::max(ba.x1, bb.x1), y1 = std::max(ba.y1, bb.y1);
  long both = 0, either = 0;
  for (int i = 0; i < samples; ++i) {
    const Point q{rng.uniform(x0, x1), rng.uniform(y0, y1)};
    const bool ia = inside(a, q), ib = inside(b, q);
    both += ia && ib;
    either += ia || ib;
  }
  return either ? static_cast<double>(both) / static_cast<double>(either) : 0.0;
}

// Shoelace area with y pointing down; positive for clockwise on screen.
inline double shoelace(const std::vector<Point>& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % v.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return s / 2.0;
}

struct CocoResult {
  double AP = 0, AP50 = 0, AP75 = 0, AR = 0, AR50 = 0, AR75 = 0;
};

/// Brute-force single-class COCO summary: explicit greedy matching per
/// threshold, dataset-wide ranking, and for every recall level the maximum
/// precision over all ranks reaching it.
inline CocoResult brute_force_coco(const std::vector<bisvp::eval::ImageInstances>& images, int max_dets = 100) {
  struct Det {
    double score;
    std::size_t image;
    std::size_t rank;
    bool tp;
  };
  std::size_t num_gt = 0;
  for (const auto& im : images) num_gt += im.ground_truth.size();

  CocoResult out;
  double ap_sum = 0, ar_sum = 0;
  for (int k = 10; k < 20; ++k) {
    const double thr = k / 20.0;
    std::vector<Det> dets;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto& im = images[i];
      std::vector<std::size_t> order(im.predictions.size());
      for (std::size_t p = 0; p < order.size(); ++p) order[p] = p;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return im.predictions[a].score > im.predictions[b].score;
      });
      if (order.size() > static_cast<std::size_t>(max_dets)) order.resize(static_cast<std::size_t>(max_dets));
      std::vector<bool> taken(im.ground_truth.size(), false);
      for (std::size_t r = 0; r < order.size(); ++r) {
        const auto& pred = im.predictions[order[r]];
        int best = -1;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < im.ground_truth.size(); ++g) {
          if (taken[g]) continue;
          const double iou = bisvp::geom::raster_iou(pred.polygon, im.ground_truth[g]);
          if (iou >= thr && iou > best_iou) {
            best_iou = iou;
            best = static_cast<int>(g);
          }
        }
        if (best >= 0) taken[static_cast<std::size_t>(best)] = true;
        dets.push_back({pred.score, i, r, best >= 0});
      }
    }
    std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
      return std::tie(b.score, a.image, a.rank) < std::tie(a.score, b.image, b.rank);
    });
    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t n = 0; n < dets.size(); ++n) {
      tp += dets[n].tp;
      precision.push_back(static_cast<double>(tp) / static_cast<double>(n + 1));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    }
    double ap = 0.0;
    for (int r = 0; r <= 100; ++r) {
      double best = 0.0;
      for (std::size_t n = 0; n < dets.size(); ++n) {
        if (recall[n] >= r / 100.0) best = std::max(best, precision[n]);
      }
      ap += best / 101.0;
    }
    const double ar = static_cast<double>(tp) / static_cast<double>(num_gt);
    ap_sum += ap;
    ar_sum += ar;
    if (k == 10) {
      out.AP50 = 100 * ap;
      out.AR50 = 100 * ar;
    }
    if (k == 15) {
      out.AP75 = 100 * ap;
      out.AR75 = 100 * ar;
    }
  }
  out.AP = 10 * ap_sum;
  out.AR = 10 * ar_sum;
  return out;
}

// Up to 5 images with up to 5 ground-truth instances each; predictions are
// jittered copies, spurious polygons and coarse scores that force ties.
inline std::vector<bisvp::eval::ImageInstances> random_instances(bisvp::Rng& rng) {
  auto shifted = [](const Polygon& p, double dx, double dy) {
    std::vector<Point> v = p.vertices();
    for (auto& q : v) q = {q.x + dx, q.y + dy};
    return Polygon(v);
  };
  auto coarse_score = [&] { return std::round(rng.uniform() * 10) / 10; };
  std::vector<bisvp::eval::ImageInstances> images(static_cast<std::size_t>(rng.uniform_int(1, 5)));
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto& im = images[i];
    im.id = "img" + std::to_string(i);
    const int n_gt = rng.uniform_int(0, 5);
    for (int g = 0; g < n_gt; ++g) im.ground_truth.push_back(random_convex(rng, 0, 64, 3, 6));
    for (const auto& g : im.ground_truth) {
      const int copies = rng.uniform_int(0, 2);
      for (int c = 0; c < copies; ++c) {
        const double s = rng.uniform(0.0, 4.0);
        const double dx = rng.uniform(-s, s);
        const double dy = rng.uniform(-s, s);
        im.predictions.push_back({shifted(g, dx, dy), coarse_score()});
      }
    }
    const int spurious = rng.uniform_int(0, 2);
    for (int k = 0; k < spurious; ++k) {
      Polygon p = random_convex(rng, 0, 64, 3, 6);
      im.predictions.push_back({std::move(p), coarse_score()});
    }
  }
  if (std::all_of(images.begin(), images.end(), [](const auto& im) { return im.ground_truth.empty(); })) {
    images[0].ground_truth.push_back(Polygon({{5, 5}, {20, 5}, {20, 20}, {5, 20}}));
  }
  return images;
}

// Central finite difference of a scalar function of one tensor entry.
inline double central_difference(bisvp::num::Tensor& leaf, std::size_t idx, const std::function<double()>& f,
                                 double h = 1e-5) {
  auto data = leaf.mutable_data();
  const double saved = data[idx];
  data[idx] = saved + h;
  const double plus = f();
  data[idx] = saved - h;
  const double minus = f();
  data[idx] = saved;
  return (plus - minus) / (2.0 * h);
}

}  // namespace oracle
