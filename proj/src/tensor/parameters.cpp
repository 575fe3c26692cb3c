#include "qcomp/tensor/parameters.hpp"

#include "qcomp/errors.hpp"

namespace qcomp {

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter name " + name);
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

bool ParameterSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParameterSet::index(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + std::string(name));
  return it->second;
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

bool ParameterSet::all_finite() const {
  for (const auto& v : values_) {
    if (!v.all_finite()) return false;
  }
  return true;
}

GradientSet zero_gradients(const ParameterSet& params) {
  GradientSet g;
  g.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) g.emplace_back(params.value(i).shape());
  return g;
}

void accumulate(GradientSet& dst, const GradientSet& src) {
  if (dst.size() != src.size()) throw DimensionError("gradient set size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].size() != src[i].size()) throw DimensionError("gradient shape mismatch");
    for (std::size_t k = 0; k < dst[i].size(); ++k) dst[i][k] += src[i][k];
  }
}

ParameterBinding::ParameterBinding(Graph& graph, const ParameterSet& params)
    : graph_(&graph), params_(&params), bound_(params.size()) {}

Var ParameterBinding::operator()(std::size_t index) {
  if (index >= bound_.size()) throw IndexError("parameter index out of range");
  if (!bound_[index]) bound_[index] = graph_->variable(params_->value(index));
  return *bound_[index];
}

GradientSet ParameterBinding::gradients() const {
  GradientSet g;
  g.reserve(bound_.size());
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (bound_[i]) {
      g.push_back(graph_->grad(*bound_[i]));
    } else {
      g.emplace_back(params_->value(i).shape());
    }
  }
  return g;
}

}  // namespace qcomp
