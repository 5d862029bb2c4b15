#pragma once

#include <span>
#include <vector>

#include "bisvp/tensor.hpp"

// Differentiable primitives. Every function records itself on the tape when
// any input requires a gradient and recording is enabled.
//
// Broadcasting is limited to leading-batch broadcast: in `add`/`mul` the
// second operand may have a shape equal to a suffix of the first's shape.
namespace bisvp::num {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_n(std::span<const Tensor> terms);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor softplus(const Tensor& x);

// [n,k] x [k,m] -> [n,m]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x: [in] or [n,in]; weight: [out,in]; bias: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
// Rows `ids` of a [vocab, dim] table -> [ids.size(), dim].
Tensor embedding(const Tensor& table, std::span<const int> ids);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over one axis; the axis is removed from the shape.
Tensor mean_axis(const Tensor& x, std::size_t axis);

// Softmax over the last axis.
Tensor softmax(const Tensor& x);
// Layer normalization over the last axis (epsilon 1e-5). gamma/beta may be
// undefined, in which case no affine transform is applied.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// x: [C,H,W], weight: [O,C,k,k], bias: [O] or undefined -> [O,H',W'].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);
Tensor avg_pool2d(const Tensor& x, int kernel);
Tensor resize_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

enum class Sampling { bilinear, nearest };

/// Samples an out_side x out_side grid at the cell centres of `region`
/// (x0, y0, x1, y1 in image pixels) from a [C,H,W] map with the given
/// stride. Returns [out_side*out_side, C], rows ordered row-major over the
/// sampling grid.
Tensor roi_crop(const Tensor& map, std::span<const double, 4> region, double stride, int out_side,
                Sampling mode = Sampling::bilinear);

/// Log of an isotropic Gaussian mask on a side x side grid of unit cells:
/// -|pos_j - mu|^2 / (2 sigma^2), pos_j = (col + 0.5, row + 0.5).
/// mu: [2] (x, y in cell units), sigma: [1] -> [side*side].
Tensor gaussian_log_mask(const Tensor& mu, const Tensor& sigma, int side);

// Mean cross-entropy from logits. logits: [V] or [n,V]; one target per row.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
// Mean absolute difference against a constant target of the same shape.
Tensor l1_loss(const Tensor& pred, std::span<const double> target);
// Mean binary cross-entropy from logits against constant 0/1 targets.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> target);

}  // namespace bisvp::num
