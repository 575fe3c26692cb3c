#include "qcomp/decoder/decoder.hpp"

#include <cmath>
#include <string>

#include "qcomp/errors.hpp"
#include "qcomp/tensor/ops.hpp"

namespace qcomp::decoder {

void validate(const DecoderConfig& cfg) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("decoder." + field + ": " + why);
  };
  if (cfg.layers < 2) fail("layers", "must be at least 2");
  if (cfg.queries < 1) fail("queries", "must be at least 1");
  if (cfg.heads < 1) fail("heads", "must be at least 1");
  if (cfg.head_dim < 1) fail("head_dim", "must be at least 1");
  if (cfg.dim != cfg.heads * cfg.head_dim) fail("dim", "must equal heads x head_dim");
  if (cfg.classes < 1) fail("classes", "must be at least 1");
  if (cfg.point_dim < 1) fail("point_dim", "must be at least 1");
  if (cfg.ffn_hidden < 1) fail("ffn_hidden", "must be at least 1");
  if (!(cfg.mask_threshold > 0.0 && cfg.mask_threshold < 1.0)) fail("mask_threshold", "must lie in (0, 1)");
}

Model init_model(const DecoderConfig& cfg, const competition::CompetitionConfig& comp, std::uint64_t seed) {
  validate(cfg);
  competition::validate(comp);
  Model m{cfg, comp, {}, {}};
  nn::Rng rng(seed);
  ParameterSet& p = m.params;
  ModelRef& r = m.ref;
  r.enc1 = nn::add_linear(p, "encoder.fc1", 9, cfg.point_dim, rng);
  r.enc2 = nn::add_linear(p, "encoder.fc2", cfg.point_dim, cfg.point_dim, rng);
  r.enc3 = nn::add_linear(p, "encoder.fc3", cfg.point_dim, cfg.point_dim, rng);
  r.feature_proj = nn::add_linear(p, "features.proj", cfg.point_dim, cfg.dim, rng);
  r.feature_norm = nn::add_layer_norm(p, "features.norm", cfg.dim);
  r.queries = p.add("queries", nn::normal({cfg.queries, cfg.dim}, 0.02, rng));
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    LayerRef layer;
    layer.self_norm = nn::add_layer_norm(p, prefix + ".self_norm", cfg.dim);
    layer.self_attn = nn::add_attention(p, prefix + ".self_attn", cfg.dim, rng);
    layer.cross_norm = nn::add_layer_norm(p, prefix + ".cross_norm", cfg.dim);
    layer.cross_attn = nn::add_attention(p, prefix + ".cross_attn", cfg.dim, rng);
    layer.ffn_norm = nn::add_layer_norm(p, prefix + ".ffn_norm", cfg.dim);
    layer.ffn = nn::add_mlp(p, prefix + ".ffn", cfg.dim, cfg.ffn_hidden, cfg.dim, rng);
    if (l >= 2) {
      layer.competition =
          competition::add_competition_layer(p, prefix, cfg.queries, cfg.dim, cfg.heads, cfg.head_dim, comp, rng);
    }
    r.layers.push_back(std::move(layer));
  }
  r.head_norm = nn::add_layer_norm(p, "head.norm", cfg.dim);
  r.cls = nn::add_linear(p, "head.cls", cfg.dim, cfg.classes + 1, rng);
  r.iou = nn::add_linear(p, "head.iou", cfg.dim, 1, rng);
  r.mask = nn::add_mlp(p, "head.mask", cfg.dim, cfg.dim, cfg.dim, rng);
  return m;
}

void check_invariants(const LayerPrediction& p) {
  const std::size_t n = p.p_cls.rows();
  if (p.s_iou.size() != n || p.mask_logits.rows() != n) throw ContractError("layer prediction: query counts differ");
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < p.p_cls.cols(); ++c) s += p.p_cls(i, c);
    if (!(std::abs(s - 1.0) <= 1e-6)) throw ContractError("layer prediction: class probabilities do not sum to 1");
    if (!(p.s_iou[i] >= 0.0 && p.s_iou[i] <= 1.0)) throw ContractError("layer prediction: IoU score outside [0, 1]");
  }
  if (!p.p_cls.all_finite() || !p.mask_logits.all_finite()) throw ContractError("layer prediction: non-finite value");
}

LayerPrediction LayerOutput::values() const {
  const Tensor& s = s_iou.value();
  return {p_cls.value(), s.reshaped({s.size()}), mask_logits.value()};
}

Var extract_point_features(ParameterBinding& bind, const ModelRef& ref, Var points) {
  const Tensor& pts = points.value();
  if (pts.rank() != 2 || pts.cols() != 6) throw DimensionError("point features expect [N x 6] points");
  const std::size_t n = pts.rows();
  double centroid[3] = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 3; ++k) centroid[k] += pts(i, k);
  }
  for (double& c : centroid) c /= static_cast<double>(std::max<std::size_t>(n, 1));
  Tensor centered({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 3; ++k) centered(i, k) = pts(i, k) - centroid[k];
  }
  const Var input = ad::concat_axis(points, bind.graph().constant(std::move(centered)), 1);
  const Var h1 = ad::relu(nn::apply(bind, ref.enc1, input));
  const Var h2 = ad::relu(nn::apply(bind, ref.enc2, h1));
  return nn::apply(bind, ref.enc3, h2);
}

Var scene_features(ParameterBinding& bind, const ModelRef& ref, const scene::Scene& s) {
  const Var per_point = extract_point_features(bind, ref, bind.graph().constant(s.points));
  const Var pooled = ad::segment_mean(per_point, s.superpoint_id, s.superpoint_count);
  return nn::apply(bind, ref.feature_norm, nn::apply(bind, ref.feature_proj, pooled));
}

nn::AttentionResult self_attention(ParameterBinding& bind, const nn::AttentionRef& ref, Var q, std::size_t heads,
                                   std::size_t head_dim, const BiasFn& bias) {
  return nn::multi_head_attention(bind, ref, q, q, heads, head_dim,
                                  [&bias](std::size_t h, Var logits, Var vq, Var vk) {
                                    if (!bias) return ad::softmax_axis(logits, 1);
                                    const Var b = bias(h, vq, vk);
                                    if (b.value().shape() != logits.value().shape()) {
                                      throw DimensionError("self-attention bias must be [N' x N'] per head");
                                    }
                                    return ad::softmax_axis(ad::add(logits, b), 1);
                                  });
}

nn::AttentionResult cross_attention_standard(ParameterBinding& bind, const nn::AttentionRef& ref, Var q, Var f,
                                             std::size_t heads, std::size_t head_dim) {
  return nn::multi_head_attention(bind, ref, q, f, heads, head_dim,
                                  [](std::size_t, Var logits, Var, Var) { return ad::softmax_axis(logits, 1); });
}

HeadOutput prediction_head(ParameterBinding& bind, const ModelRef& ref, Var q, Var f) {
  const Var qn = nn::apply(bind, ref.head_norm, q);
  const Var logits = nn::apply(bind, ref.cls, qn);
  HeadOutput out;
  out.p_cls = ad::softmax_axis(logits, 1);
  out.log_p_cls = ad::log_softmax_axis(logits, 1);
  out.s_iou = ad::sigmoid(nn::apply(bind, ref.iou, qn));
  out.mask_logits = ad::matmul_nt(nn::apply(bind, ref.mask, qn), f);
  return out;
}

DecoderOutput decoder_forward(ParameterBinding& bind, const Model& model, Var f, const Toggles& toggles) {
  const DecoderConfig& cfg = model.cfg;
  if (f.value().rank() != 2 || f.cols() != cfg.dim) throw DimensionError("decoder features must be [M x D]");
  if (f.rows() == 0) throw ContractError("decoder needs at least one superpoint");
  DecoderOutput out;
  out.features = f;
  Var q = bind(model.ref.queries);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerRef& layer = model.ref.layers[l];
    const bool competing = l > 0 && toggles.any();
    LayerOutput lo;
    if (competing && (toggles.qcl || toggles.rre)) {
      const LayerPrediction prev = out.layers.back().values();
      lo.state = competition::compute_state(prev.p_cls, prev.s_iou, prev.mask_logits, cfg.mask_threshold, model.comp);
    }
    if (competing && toggles.qcl) {
      q = competition::qcl_update(bind, *layer.competition, q, lo.state->leader, lo.state->laggard);
      lo.qcl_queries = q;
    }
    BiasFn bias;
    if (competing && toggles.rre) {
      const auto& tables = layer.competition->tables;
      const IntMatrix& r_hat = lo.state->r_hat;
      bias = [&bind, &tables, &r_hat](std::size_t h, Var vq, Var vk) {
        return competition::relationship_bias(bind(tables[h]), r_hat, vq, vk);
      };
    }
    q = ad::add(q, self_attention(bind, layer.self_attn, nn::apply(bind, layer.self_norm, q), cfg.heads,
                                  cfg.head_dim, bias)
                       .out);
    const Var qn = nn::apply(bind, layer.cross_norm, q);
    const nn::AttentionResult cross =
        competing && toggles.rca
            ? competition::rank_cross_attention(bind, layer.cross_attn, qn, f, cfg.heads, cfg.head_dim)
            : cross_attention_standard(bind, layer.cross_attn, qn, f, cfg.heads, cfg.head_dim);
    q = ad::add(q, cross.out);
    q = ad::add(q, nn::apply(bind, layer.ffn, nn::apply(bind, layer.ffn_norm, q)));
    const HeadOutput head = prediction_head(bind, model.ref, q, f);
    lo.p_cls = head.p_cls;
    lo.log_p_cls = head.log_p_cls;
    lo.s_iou = head.s_iou;
    lo.mask_logits = head.mask_logits;
    out.layers.push_back(std::move(lo));
  }
  out.queries = q;
  return out;
}

DecoderOutput forward_scene(ParameterBinding& bind, const Model& model, const scene::Scene& s, const Toggles& toggles) {
  return decoder_forward(bind, model, scene_features(bind, model.ref, s), toggles);
}

}  // namespace qcomp::decoder
