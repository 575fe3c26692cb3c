#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qcomp/tensor/tensor.hpp"

/// Value-level tensor math. None of these functions record gradients; the
/// differentiable counterparts in `qcomp::ad` are built on top of them.
namespace qcomp::ops {

enum class Extremum { kMin, kMax };

struct ExtremaResult {
  Tensor values;
  std::vector<std::size_t> indices;
};

Tensor matmul(const Tensor& a, const Tensor& b);
/// a × bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// aᵀ × b
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise binary ops broadcast a row [1×c], a column [r×1] or a single
// element against a 2-D operand. Rank-1 operands behave as one row.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Throws NumericError when any divisor is zero.
Tensor div(const Tensor& a, const Tensor& b);
/// Result shape of broadcasting a against b; throws DimensionError.
Shape broadcast_shape(const Shape& a, const Shape& b);
/// Sums `grad` (of broadcast shape) back down to `target` shape.
Tensor reduce_to_shape(const Tensor& grad, const Shape& target);

Tensor scale(const Tensor& a, double factor);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
/// Throws NumericError on non-positive input.
Tensor log(const Tensor& a);
/// log(1 + exp(x)), evaluated without overflow.
Tensor softplus(const Tensor& a);

Tensor softmax_axis(const Tensor& x, std::size_t axis);
Tensor log_softmax_axis(const Tensor& x, std::size_t axis);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);
Tensor concat_axis(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

/// Extremum along `axis`; ties resolve to the lowest index.
ExtremaResult reduce_extrema_axis(const Tensor& x, std::size_t axis, Extremum mode);

double sum(const Tensor& x);
double mean(const Tensor& x);

/// Row-wise normalization followed by an elementwise gain and bias of length cols.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// x Wᵀ + b with W of shape [out×in] and b of length out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Mean of the rows of x sharing a segment id; `ids` has one entry per row.
/// Every segment in [0, count) must be non-empty.
Tensor segment_mean(const Tensor& x, std::span<const std::size_t> ids, std::size_t count);

}  // namespace qcomp::ops
