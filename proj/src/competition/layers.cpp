#include <cmath>
#include <string>

#include "qcomp/competition/competition.hpp"
#include "qcomp/errors.hpp"
#include "qcomp/tensor/ops.hpp"

namespace qcomp::competition {

namespace {

FusionRef add_fusion(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                     FusionShape shape, nn::Rng& rng) {
  FusionRef ref;
  ref.two_layer = shape == FusionShape::kMlp;
  if (ref.two_layer) {
    ref.first = nn::add_linear(params, prefix + ".fc1", in, out, rng);
    ref.second = nn::add_linear(params, prefix + ".fc2", out, out, rng);
  } else {
    ref.first = nn::add_linear(params, prefix + ".fc1", in, out, rng);
  }
  return ref;
}

}  // namespace

CompetitionLayerRef add_competition_layer(ParameterSet& params, const std::string& prefix, std::size_t queries,
                                          std::size_t dim, std::size_t heads, std::size_t head_dim,
                                          const CompetitionConfig& cfg, nn::Rng& rng) {
  validate(cfg);
  CompetitionLayerRef ref;
  ref.leader = params.add(prefix + ".qcl.leader", nn::normal({queries, dim}, 0.02, rng));
  ref.laggard = params.add(prefix + ".qcl.laggard", nn::normal({queries, dim}, 0.02, rng));
  ref.fuse = add_fusion(params, prefix + ".qcl.fuse", 2 * dim, dim, cfg.fusion, rng);
  ref.update = add_fusion(params, prefix + ".qcl.update", 2 * dim, dim, cfg.fusion, rng);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto y = static_cast<std::size_t>(cfg.table_size);
    ref.tables.push_back(params.add(prefix + ".rre.table.h" + std::to_string(h), nn::normal({y, head_dim}, 0.02, rng)));
  }
  return ref;
}

Var apply(ParameterBinding& bind, const FusionRef& fusion, Var x) {
  const Var h = nn::apply(bind, fusion.first, x);
  return fusion.two_layer ? nn::apply(bind, fusion.second, ad::relu(h)) : h;
}

Var qcl_update(ParameterBinding& bind, const CompetitionLayerRef& ref, Var q, const std::vector<std::size_t>& leader,
               const std::vector<std::size_t>& laggard) {
  if (leader.size() != q.rows() || laggard.size() != q.rows()) {
    throw DimensionError("qcl_update: one leader and one laggard index per query required");
  }
  const Var e_le = ad::gather_rows(bind(ref.leader), leader);
  const Var e_la = ad::gather_rows(bind(ref.laggard), laggard);
  const Var e_fuse = apply(bind, ref.fuse, ad::concat_axis(e_la, e_le, 1));
  return apply(bind, ref.update, ad::concat_axis(q, e_fuse, 1));
}

Var relationship_bias(Var table, const IntMatrix& r_hat, Var vq, Var vk) {
  Graph& g = *table.graph;
  const Tensor& t = table.value();
  const std::size_t y = t.rows();
  const std::size_t n = vq.rows();
  if (t.rank() != 2 || vq.cols() != t.cols() || vk.cols() != t.cols() || vk.rows() != n) {
    throw DimensionError("relationship_bias: table, query and key widths must agree");
  }
  if (r_hat.rows != n || r_hat.cols != n) throw DimensionError("relationship_bias: index matrix must be [N' x N']");
  for (int idx : r_hat.data) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= y) throw ContractError("relationship table index out of range");
  }
  // a(i, y) = T_y · vq_i and b(j, y) = T_y · vk_j, so bias(i, j) = a(i, r) + b(j, r).
  const Tensor a = ops::matmul_nt(vq.value(), t);
  const Tensor b = ops::matmul_nt(vk.value(), t);
  Tensor bias({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto r = static_cast<std::size_t>(r_hat(i, j));
      bias(i, j) = a(i, r) + b(j, r);
    }
  }
  const std::size_t pt = table.id, pq = vq.id, pk = vk.id;
  return g.record("relationship_bias", std::move(bias), {table, vq, vk},
                  [pt, pq, pk, r_hat, n, y](Graph& gr, std::size_t self) {
                    const Tensor& up = gr.upstream(self);
                    Tensor ga({n, y});
                    Tensor gb({n, y});
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < n; ++j) {
                        const auto r = static_cast<std::size_t>(r_hat(i, j));
                        ga(i, r) += up(i, j);
                        gb(j, r) += up(i, j);
                      }
                    }
                    const Tensor& tv = gr.value(pt);
                    if (gr.requires_grad(pq)) gr.accumulate(pq, ops::matmul(ga, tv));
                    if (gr.requires_grad(pk)) gr.accumulate(pk, ops::matmul(gb, tv));
                    if (gr.requires_grad(pt)) {
                      gr.accumulate(pt, ops::add(ops::matmul_tn(ga, gr.value(pq)), ops::matmul_tn(gb, gr.value(pk))));
                    }
                  });
}

Tensor rank_normalize(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("rank_normalize expects a matrix");
  const ops::ExtremaResult lo = ops::reduce_extrema_axis(x, 0, ops::Extremum::kMin);
  const ops::ExtremaResult hi = ops::reduce_extrema_axis(x, 0, ops::Extremum::kMax);
  Tensor norm(x.shape());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    const double mn = lo.values[c];
    const double range = hi.values[c] - mn;
    for (std::size_t i = 0; i < x.rows(); ++i) norm(i, c) = range > 0.0 ? (x(i, c) - mn) / range : 1.0;
  }
  return norm;
}

Var rank_modulate(Var x) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw DimensionError("rank_modulate expects a matrix");
  const std::size_t n = xv.rows();
  const std::size_t m = xv.cols();
  const ops::ExtremaResult lo = ops::reduce_extrema_axis(xv, 0, ops::Extremum::kMin);
  const ops::ExtremaResult hi = ops::reduce_extrema_axis(xv, 0, ops::Extremum::kMax);
  const Tensor out = ops::mul(xv, rank_normalize(xv));
  const std::size_t px = x.id;
  return g.record("rank_modulate", out, {x},
                  [px, n, m, argmin = lo.indices, argmax = hi.indices, mins = lo.values, maxs = hi.values](
                      Graph& gr, std::size_t self) {
                    const Tensor& up = gr.upstream(self);
                    const Tensor& xv = gr.value(px);
                    Tensor& dst = gr.grad_buffer(px);
                    for (std::size_t c = 0; c < m; ++c) {
                      const double mn = mins[c];
                      const double mx = maxs[c];
                      const double range = mx - mn;
                      if (!(range > 0.0)) {
                        for (std::size_t i = 0; i < n; ++i) dst(i, c) += up(i, c);
                        continue;
                      }
                      const double r2 = range * range;
                      double to_min = 0.0;
                      double to_max = 0.0;
                      for (std::size_t i = 0; i < n; ++i) {
                        const double xi = xv(i, c);
                        const double gi = up(i, c);
                        dst(i, c) += gi * (2.0 * xi - mn) / range;
                        to_min += gi * xi * (xi - mx) / r2;
                        to_max -= gi * xi * (xi - mn) / r2;
                      }
                      dst(argmin[c], c) += to_min;
                      dst(argmax[c], c) += to_max;
                    }
                  });
}

Var rank_attention_weights(Var x) { return ad::softmax_axis(rank_modulate(x), 1); }

nn::AttentionResult rank_cross_attention(ParameterBinding& bind, const nn::AttentionRef& ref, Var q, Var f,
                                         std::size_t heads, std::size_t head_dim) {
  return nn::multi_head_attention(bind, ref, q, f, heads, head_dim,
                                  [](std::size_t, Var logits, Var, Var) { return rank_attention_weights(logits); });
}

}  // namespace qcomp::competition
