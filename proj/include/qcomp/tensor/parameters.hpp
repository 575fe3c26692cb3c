#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qcomp/tensor/graph.hpp"

namespace qcomp {

/// Ordered collection of named trainable tensors. Insertion order is the
/// canonical order for serialization and optimizer state.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return values_.size(); }
  bool contains(std::string_view name) const;
  /// Throws ContractError for unknown names.
  std::size_t index(std::string_view name) const;

  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  Tensor& value(std::string_view name) { return values_[index(name)]; }
  const Tensor& value(std::string_view name) const { return values_[index(name)]; }

  std::size_t total_elements() const;
  bool all_finite() const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Gradients aligned index-for-index with a ParameterSet.
using GradientSet = std::vector<Tensor>;

GradientSet zero_gradients(const ParameterSet& params);
/// dst += src, elementwise per parameter.
void accumulate(GradientSet& dst, const GradientSet& src);

/// Binds parameters of a set as gradient-recording leaves of one graph, each
/// on first use.
class ParameterBinding {
 public:
  ParameterBinding(Graph& graph, const ParameterSet& params);

  Var operator()(std::size_t index);
  Var operator()(std::string_view name) { return (*this)(params_->index(name)); }

  Graph& graph() { return *graph_; }
  const ParameterSet& parameters() const { return *params_; }

  /// Gradients after `graph().backward(...)`; zeros for parameters that were
  /// never bound or are unreachable from the loss.
  GradientSet gradients() const;

 private:
  Graph* graph_;
  const ParameterSet* params_;
  std::vector<std::optional<Var>> bound_;
};

}  // namespace qcomp
