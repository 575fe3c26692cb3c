#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "qcomp/tensor/ad.hpp"
#include "qcomp/tensor/parameters.hpp"

/// Small layer building blocks over ParameterSet slots.
namespace qcomp::nn {

using Rng = std::mt19937_64;

struct LinearRef {
  std::size_t weight = 0;  // [out×in]
  std::size_t bias = 0;    // [out]
};

struct LayerNormRef {
  std::size_t gain = 0;
  std::size_t bias = 0;
};

/// linear → relu → linear
struct MlpRef {
  LinearRef first;
  LinearRef second;
};

/// Query/key/value/output projections of one multi-head attention block.
struct AttentionRef {
  LinearRef query;
  LinearRef key;
  LinearRef value;
  LinearRef output;
};

/// Uniform(−1/√in, 1/√in) weights and zero bias.
LinearRef add_linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
LayerNormRef add_layer_norm(ParameterSet& params, const std::string& prefix, std::size_t dim);
MlpRef add_mlp(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
               Rng& rng);

/// Four dim→dim projections named prefix.{q,k,v,o}.
AttentionRef add_attention(ParameterSet& params, const std::string& prefix, std::size_t dim, Rng& rng);

Var apply(ParameterBinding& bind, const LinearRef& layer, Var x);
Var apply(ParameterBinding& bind, const LayerNormRef& norm, Var x);
Var apply(ParameterBinding& bind, const MlpRef& mlp, Var x);

/// Maps one head's scaled logits (vq·vkᵀ/√d) to its attention weights.
using AttentionWeightFn = std::function<Var(std::size_t head, Var logits, Var vq, Var vk)>;

struct AttentionResult {
  Var out;                   // [rows(q)×dim] after the output projection
  std::vector<Var> weights;  // per head [rows(q)×rows(kv)]
};

/// Multi-head attention of `q` over `kv`; only the weighting of the logits
/// varies between callers.
AttentionResult multi_head_attention(ParameterBinding& bind, const AttentionRef& ref, Var q, Var kv, std::size_t heads,
                                     std::size_t head_dim, const AttentionWeightFn& weigh);

/// Normal(0, stddev) tensor.
Tensor normal(Shape shape, double stddev, Rng& rng);

/// Column block h of width `head_dim`.
Var head_slice(Var x, std::size_t head, std::size_t head_dim);
/// Concatenates per-head blocks back along columns.
Var merge_heads(const std::vector<Var>& heads);

}  // namespace qcomp::nn
