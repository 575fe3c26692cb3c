#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "qcomp/competition/competition.hpp"
#include "qcomp/scene/scene.hpp"
#include "qcomp/tensor/nn.hpp"
#include "qcomp/tensor/parameters.hpp"

namespace qcomp::decoder {

struct DecoderConfig {
  std::size_t layers = 6;         // L
  std::size_t queries = 32;       // N'
  std::size_t dim = 32;           // D
  std::size_t heads = 4;
  std::size_t head_dim = 8;       // d; D = heads × d
  std::size_t classes = 3;        // C' object classes; one no-object class is implicit
  std::size_t point_dim = 32;     // C, per-point encoder width
  std::size_t ffn_hidden = 64;
  double mask_threshold = 0.5;
};

/// Throws ConfigError naming the offending field.
void validate(const DecoderConfig& cfg);

/// Which competition mechanisms run in layers 2..L. All off is the baseline.
struct Toggles {
  bool qcl = false;
  bool rre = false;
  bool rca = false;

  static Toggles baseline() { return {}; }
  static Toggles full() { return {true, true, true}; }
  bool any() const { return qcl || rre || rca; }
  friend bool operator==(const Toggles&, const Toggles&) = default;
};

struct LayerRef {
  nn::LayerNormRef self_norm;
  nn::AttentionRef self_attn;
  nn::LayerNormRef cross_norm;
  nn::AttentionRef cross_attn;
  nn::LayerNormRef ffn_norm;
  nn::MlpRef ffn;
  std::optional<competition::CompetitionLayerRef> competition;  // layers 2..L
};

struct ModelRef {
  nn::LinearRef enc1, enc2, enc3;  // 9 → C → C → C
  nn::LinearRef feature_proj;      // C → D
  nn::LayerNormRef feature_norm;
  std::size_t queries = 0;         // Q⁰ [N'×D]
  std::vector<LayerRef> layers;
  nn::LayerNormRef head_norm;
  nn::LinearRef cls;               // D → C'+1
  nn::LinearRef iou;               // D → 1
  nn::MlpRef mask;                 // D → D → D
};

/// Parameters plus the slot layout that gives them meaning. The layout, the
/// parameter names and the initial values are a function of (cfg, comp, seed);
/// competition parameters exist regardless of which toggles a run uses.
struct Model {
  DecoderConfig cfg;
  competition::CompetitionConfig comp;
  ParameterSet params;
  ModelRef ref;
};

Model init_model(const DecoderConfig& cfg, const competition::CompetitionConfig& comp, std::uint64_t seed);

/// Predictions of one layer as plain values.
struct LayerPrediction {
  Tensor p_cls;        // [N'×(C'+1)], rows sum to 1; last column is no-object
  Tensor s_iou;        // [N'] in [0,1]
  Tensor mask_logits;  // [N'×M]
};

/// Throws ContractError on a violated LayerPrediction invariant.
void check_invariants(const LayerPrediction& p);

struct LayerOutput {
  Var p_cls;
  Var log_p_cls;
  Var s_iou;         // [N'×1]
  Var mask_logits;
  std::optional<Var> qcl_queries;  // Q̂ when QCL ran in this layer
  std::optional<competition::CompetitionState> state;  // from the previous layer, when used

  LayerPrediction values() const;
};

struct DecoderOutput {
  std::vector<LayerOutput> layers;  // length L
  Var queries;                      // after the last layer
  Var features;                     // F [M×D]
};

/// Per-point MLP over (xyz, rgb, xyz − centroid): [N×6] → [N×C].
Var extract_point_features(ParameterBinding& bind, const ModelRef& ref, Var points);

/// Superpoint features F = LN(proj(segment_mean(point features))).
Var scene_features(ParameterBinding& bind, const ModelRef& ref, const scene::Scene& s);

/// Weighting of one head's self-attention logits: softmax(logits + bias(h)).
using BiasFn = std::function<Var(std::size_t head, Var vq, Var vk)>;

/// Multi-head self-attention over `q` (already normalized), with an optional
/// additive per-head logit bias. Returns the attention update before the residual.
nn::AttentionResult self_attention(ParameterBinding& bind, const nn::AttentionRef& ref, Var q, std::size_t heads,
                                   std::size_t head_dim, const BiasFn& bias = {});

/// Standard softmax cross attention from `q` to `f`, before the residual.
nn::AttentionResult cross_attention_standard(ParameterBinding& bind, const nn::AttentionRef& ref, Var q, Var f,
                                             std::size_t heads, std::size_t head_dim);

struct HeadOutput {
  Var p_cls;
  Var log_p_cls;
  Var s_iou;
  Var mask_logits;
};
HeadOutput prediction_head(ParameterBinding& bind, const ModelRef& ref, Var q, Var f);

/// All L layers over features `f`. Layer 1 never uses the competition path.
DecoderOutput decoder_forward(ParameterBinding& bind, const Model& model, Var f, const Toggles& toggles);

/// scene_features followed by decoder_forward.
DecoderOutput forward_scene(ParameterBinding& bind, const Model& model, const scene::Scene& s, const Toggles& toggles);

}  // namespace qcomp::decoder
