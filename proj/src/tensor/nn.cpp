#include "qcomp/tensor/nn.hpp"

#include <cmath>

#include "qcomp/errors.hpp"

namespace qcomp::nn {

LinearRef add_linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w({out, in});
  for (double& v : w.values()) v = dist(rng);
  LinearRef ref;
  ref.weight = params.add(prefix + ".weight", std::move(w));
  ref.bias = params.add(prefix + ".bias", Tensor({out}));
  return ref;
}

LayerNormRef add_layer_norm(ParameterSet& params, const std::string& prefix, std::size_t dim) {
  LayerNormRef ref;
  ref.gain = params.add(prefix + ".gain", Tensor({dim}, 1.0));
  ref.bias = params.add(prefix + ".bias", Tensor({dim}));
  return ref;
}

MlpRef add_mlp(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
               Rng& rng) {
  MlpRef ref;
  ref.first = add_linear(params, prefix + ".fc1", in, hidden, rng);
  ref.second = add_linear(params, prefix + ".fc2", hidden, out, rng);
  return ref;
}

AttentionRef add_attention(ParameterSet& params, const std::string& prefix, std::size_t dim, Rng& rng) {
  AttentionRef ref;
  ref.query = add_linear(params, prefix + ".q", dim, dim, rng);
  ref.key = add_linear(params, prefix + ".k", dim, dim, rng);
  ref.value = add_linear(params, prefix + ".v", dim, dim, rng);
  ref.output = add_linear(params, prefix + ".o", dim, dim, rng);
  return ref;
}

Var apply(ParameterBinding& bind, const LinearRef& layer, Var x) {
  return ad::linear(x, bind(layer.weight), bind(layer.bias));
}

Var apply(ParameterBinding& bind, const LayerNormRef& norm, Var x) {
  return ad::layer_norm(x, bind(norm.gain), bind(norm.bias));
}

Var apply(ParameterBinding& bind, const MlpRef& mlp, Var x) {
  return apply(bind, mlp.second, ad::relu(apply(bind, mlp.first, x)));
}

AttentionResult multi_head_attention(ParameterBinding& bind, const AttentionRef& ref, Var q, Var kv, std::size_t heads,
                                     std::size_t head_dim, const AttentionWeightFn& weigh) {
  if (heads == 0 || head_dim == 0) throw ContractError("attention needs at least one head of positive width");
  if (kv.rows() == 0) throw ContractError("attention over an empty key set");
  const Var vq = apply(bind, ref.query, q);
  const Var vk = apply(bind, ref.key, kv);
  const Var vv = apply(bind, ref.value, kv);
  if (vq.cols() != heads * head_dim) throw DimensionError("attention width must equal heads × head_dim");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
  AttentionResult result;
  std::vector<Var> mixed;
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = head_slice(vq, h, head_dim);
    const Var kh = head_slice(vk, h, head_dim);
    const Var logits = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_d);
    const Var w = weigh(h, logits, qh, kh);
    result.weights.push_back(w);
    mixed.push_back(ad::matmul(w, head_slice(vv, h, head_dim)));
  }
  result.out = apply(bind, ref.output, merge_heads(mixed));
  return result;
}

Tensor normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Var head_slice(Var x, std::size_t head, std::size_t head_dim) {
  return ad::slice_cols(x, head * head_dim, (head + 1) * head_dim);
}

Var merge_heads(const std::vector<Var>& heads) {
  if (heads.empty()) throw ContractError("merge_heads needs at least one head");
  Var out = heads.front();
  for (std::size_t h = 1; h < heads.size(); ++h) out = ad::concat_axis(out, heads[h], 1);
  return out;
}

}  // namespace qcomp::nn
