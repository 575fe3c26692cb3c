#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "qcomp/tensor/graph.hpp"
#include "qcomp/tensor/parameters.hpp"

namespace qcomp {

struct GradCheckResult {
  /// max over elements of |analytic − numeric| / max(1, |analytic|)
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  std::size_t elements_checked = 0;
};

/// Scalar function of graph inputs; must return a single-element node.
using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

/// Compares reverse-mode gradients of `f` at `point` with central differences
/// (f(x+ε) − f(x−ε)) / 2ε evaluated one element at a time.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& point, double eps = 1e-5);

/// Same check over the parameters of a model; `f` builds the loss from a
/// binding of `params`. Parameters are perturbed in place and restored.
/// When `subset` is non-empty only those parameter indices are probed.
using ModelLossFn = std::function<Var(ParameterBinding&)>;
GradCheckResult grad_check(ParameterSet& params, const ModelLossFn& f, double eps = 1e-5,
                           std::span<const std::size_t> subset = {});

}  // namespace qcomp
