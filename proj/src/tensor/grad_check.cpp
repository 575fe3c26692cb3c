#include "qcomp/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace qcomp {
namespace {

void note(GradCheckResult& res, double analytic, double numeric, std::size_t input, std::size_t element) {
  const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
  ++res.elements_checked;
  if (err > res.max_rel_error || !std::isfinite(err)) {
    res.max_rel_error = std::isfinite(err) ? err : INFINITY;
    res.worst_input = input;
    res.worst_element = element;
  }
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& point, double eps) {
  auto evaluate = [&](const std::vector<Tensor>& at, std::vector<Tensor>* grads) {
    Graph g;
    std::vector<Var> inputs;
    inputs.reserve(at.size());
    for (const auto& t : at) inputs.push_back(g.variable(t));
    Var out = f(g, inputs);
    const double v = g.value(out).item();
    if (grads) {
      g.backward(out);
      for (const auto& in : inputs) grads->push_back(g.grad(in));
    }
    return v;
  };

  std::vector<Tensor> analytic;
  evaluate(point, &analytic);

  GradCheckResult res;
  std::vector<Tensor> probe = point;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (std::size_t k = 0; k < probe[i].size(); ++k) {
      const double orig = probe[i][k];
      probe[i][k] = orig + eps;
      const double up = evaluate(probe, nullptr);
      probe[i][k] = orig - eps;
      const double down = evaluate(probe, nullptr);
      probe[i][k] = orig;
      note(res, analytic[i][k], (up - down) / (2.0 * eps), i, k);
    }
  }
  return res;
}

GradCheckResult grad_check(ParameterSet& params, const ModelLossFn& f, double eps,
                           std::span<const std::size_t> subset) {
  auto evaluate = [&](GradientSet* grads) {
    Graph g;
    ParameterBinding bind(g, params);
    Var out = f(bind);
    const double v = g.value(out).item();
    if (grads) {
      g.backward(out);
      *grads = bind.gradients();
    }
    return v;
  };

  GradientSet analytic;
  evaluate(&analytic);

  std::vector<std::size_t> indices(subset.begin(), subset.end());
  if (indices.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) indices.push_back(i);
  }

  GradCheckResult res;
  for (std::size_t i : indices) {
    Tensor& value = params.value(i);
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double orig = value[k];
      value[k] = orig + eps;
      const double up = evaluate(nullptr);
      value[k] = orig - eps;
      const double down = evaluate(nullptr);
      value[k] = orig;
      note(res, analytic[i][k], (up - down) / (2.0 * eps), i, k);
    }
  }
  return res;
}

}  // namespace qcomp
