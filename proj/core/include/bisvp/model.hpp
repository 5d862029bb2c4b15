#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bisvp/nn.hpp"
#include "bisvp/scene.hpp"
#include "bisvp/tokens.hpp"

namespace bisvp::model {

using num::Tensor;

struct ModelConfig {
  int d = 64;              // feature width
  int S = 8;               // ROI token side, B has S*S rows
  int G = 16;              // vertex lattice side
  int lstm_hidden = 128;
  int embed_dim = 32;
  int max_seq_len = 50;
  int attn_heads = 1;
  double sigma_min = 0.5;  // in ROI token cells

  int image_size = 128;
  std::array<int, 4> backbone_channels{16, 32, 64, 128};
  int kv_side = 4;         // per-level key/value crop side in CSFF
  double roi_margin = 0.10;
  double score_threshold = 0.5;
  double nms_iou = 0.5;

  // Ablation switches.
  bool use_csff = true;
  bool bidirectional = true;
  bool gaussian_attention = true;

  void validate() const;
  int vocab() const { return G * G + 1; }
  int eos() const { return G * G; }
  int start_token() const { return G * G + 1; }
};

/// P2..P6 at strides 4, 8, 16, 32, 64, each [d, H/stride, W/stride].
struct FeaturePyramid {
  std::array<Tensor, 5> levels;
  const Tensor& level(int i) const { return levels.at(static_cast<std::size_t>(i - 2)); }
  static double stride(int i) { return static_cast<double>(1 << i); }
};

struct Detection {
  geom::Box box;
  double score = 0.0;
};

struct DetectorOutput {
  Tensor objectness;  // [H3*W3] logits
  Tensor offsets;     // [4, H3*W3] raw (l, t, r, b) in units of the P3 stride
  int rows = 0;
  int cols = 0;
};

struct CsffTrace {
  std::vector<Tensor> attention;  // one [S*S, kv*kv] row-stochastic matrix per level and head
};

struct StepOutput {
  std::vector<double> dist;  // over G*G + 1 classes, EOS last
  std::vector<double> attn;  // over S*S positions
};

struct DecodeState {
  Tensor h;
  Tensor c;
  int step = 0;
  geom::TokenSequence emitted;  // prefix starting with the first vertex
};

enum class DecodeMode { greedy, teacher_forced };

struct StepResult {
  StepOutput out;
  DecodeState next;
  Tensor logits;  // [vocab]
  Tensor alpha;   // [S*S]
};

// Per-instance, per-branch tensors reused across decoder steps.
struct BranchContext {
  geom::Direction direction = geom::Direction::clockwise;
  std::string prefix;
  Tensor feature;    // B, [S*S, d]
  Tensor projected;  // W_B B, [S*S, d]
  Tensor pooled;     // mean over rows of B, [d]
  int first = 0;
};

struct BranchResult {
  geom::TokenSequence tokens;    // cleaned, EOS-terminated
  double seq_confidence = 0.0;   // exp(mean log max-prob) over emitted steps incl. EOS
  std::optional<geom::Polygon> polygon;
};

struct PolygonHypothesis {
  geom::Polygon polygon;
  geom::Direction direction = geom::Direction::clockwise;
  double seq_confidence = 0.0;
  double det_score = 0.0;
};

struct AttentionParts {
  Tensor scores;  // [S*S] additive scores v^T tanh(W_h h + W_B B_j)
  Tensor mu;      // [2] centre in cell units
  Tensor sigma;   // [1] width in cell units
};

/// Softmax over scores restricted by an isotropic Gaussian: equivalent to
/// softmax(scores) * mask renormalized, computed in log space.
Tensor gaussian_constrained_softmax(const Tensor& scores, const Tensor& mu, const Tensor& sigma, int side);

// 2-D sinusoidal code for a side x side grid of cell centres -> [side*side, d].
Tensor positional_encoding(int side, int d);

// Greedy NMS over score-sorted boxes; drops a box when IoU with a kept one exceeds `iou`.
std::vector<Detection> nms(std::vector<Detection> dets, double iou);

/// Picks the branch with the higher sequence confidence (ties keep the
/// earlier one) among those that decoded to a polygon, canonicalized.
/// nullopt when none did.
std::optional<PolygonHypothesis> merge_branches(std::span<const BranchResult> branches, double det_score);

// argmax with ties to the lowest index.
int argmax(std::span<const double> values);

class BisvpModel {
 public:
  BisvpModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  num::ParamStore& params() { return params_; }
  const num::ParamStore& params() const { return params_; }

  // Grayscale image replicated to [3, H, W].
  static Tensor image_tensor(const synth::Image& image);

  FeaturePyramid backbone_fpn(const Tensor& image) const;
  DetectorOutput detector_head(const FeaturePyramid& pyramid) const;
  std::vector<Detection> decode_detections(const DetectorOutput& out) const;
  std::vector<Detection> detect(const FeaturePyramid& pyramid) const;

  geom::GridSpec grid_for(const geom::Box& box) const;
  Tensor building_queries(const FeaturePyramid& pyramid, const geom::GridSpec& grid) const;
  Tensor csff_fuse(const Tensor& queries, const FeaturePyramid& pyramid, const geom::GridSpec& grid,
                   CsffTrace* trace = nullptr) const;
  // Queries followed by CSFF when enabled.
  Tensor building_feature(const FeaturePyramid& pyramid, const geom::GridSpec& grid) const;

  // Linear over flatten(B) / S, so the input keeps the per-row scale of B.
  Tensor first_vertex_logits(const Tensor& feature) const;
  std::vector<double> predict_first_vertex(const Tensor& feature) const;

  BranchContext begin_branch(geom::Direction direction, const Tensor& feature, int first) const;
  AttentionParts attention_parts(const BranchContext& ctx, const Tensor& h) const;
  Tensor gaussian_attention(const BranchContext& ctx, const Tensor& h) const;
  DecodeState initial_state(const BranchContext& ctx) const;
  StepResult decode_step(const BranchContext& ctx, const DecodeState& state, DecodeMode mode,
                         int teacher_token = -1) const;

  // Stacked per-step logits [n+1, vocab] predicting target tokens 1..n and EOS.
  Tensor teacher_forced_logits(const BranchContext& ctx, const geom::TokenSequence& target) const;
  BranchResult decode_greedy(const BranchContext& ctx, const geom::GridSpec& grid) const;

  /// Shared first vertex, independent greedy branches, higher sequence
  /// confidence wins. nullopt when no branch yields a valid polygon.
  std::optional<PolygonHypothesis> decode_bidirectional(const Tensor& feature, const Detection& det,
                                                        const geom::GridSpec& grid) const;

  /// Full inference on one image. When `boxes` is given those boxes are
  /// used (score 1) instead of the detector.
  std::vector<PolygonHypothesis> infer(const synth::Image& image,
                                       const std::vector<geom::Box>* boxes = nullptr) const;

  std::vector<geom::Direction> directions() const;

 private:
  std::string branch_prefix(geom::Direction d) const;
  void init_params(std::uint64_t seed);

  ModelConfig cfg_;
  num::ParamStore params_;
  Tensor pe_queries_;
  Tensor pe_kv_;
};

}  // namespace bisvp::model
