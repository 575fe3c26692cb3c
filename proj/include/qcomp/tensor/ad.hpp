#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qcomp/tensor/graph.hpp"
#include "qcomp/tensor/ops.hpp"

/// Differentiable operations on graph nodes. All operands of one call must
/// belong to the same graph; results are recorded in it.
namespace qcomp::ad {

Var matmul(Var a, Var b);
/// a × bᵀ
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);

Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var square(Var a);

Var softmax_axis(Var x, std::size_t axis);
Var log_softmax_axis(Var x, std::size_t axis);

Var gather_rows(Var x, std::vector<std::size_t> idx);
Var concat_axis(Var a, Var b, std::size_t axis);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
/// Picks x(r, cols[r]) for every row: result shape [rows].
Var pick_per_row(Var x, std::vector<std::size_t> cols);
/// The single row r of a matrix as shape [1×cols].
Var row(Var x, std::size_t r);

/// Values of the extremum along `axis`; the gradient routes to the selected
/// (first-occurrence) element. Indices are returned through `indices` if given.
Var reduce_extrema_axis(Var x, std::size_t axis, ops::Extremum mode, std::vector<std::size_t>* indices = nullptr);

Var sum(Var x);
Var mean(Var x);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// x Wᵀ + b
Var linear(Var x, Var weight, Var bias);

Var segment_mean(Var x, std::vector<std::size_t> ids, std::size_t count);

}  // namespace qcomp::ad
