#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "qcomp/tensor/ad.hpp"
#include "qcomp/tensor/nn.hpp"
#include "qcomp/tensor/parameters.hpp"

namespace qcomp::competition {

enum class FusionShape {
  kLinear,  // one linear map
  kMlp,     // linear → relu → linear, hidden width = output width
};

struct CompetitionConfig {
  double quant_step = 0.1;  // v
  int table_size = 24;      // Y, even
  FusionShape fusion = FusionShape::kLinear;  // kMlp trains markedly slower with QCL at toy scale
};

/// Throws ConfigError naming the offending field.
void validate(const CompetitionConfig& cfg);

/// Discrete side information derived from one layer's predictions. Every field
/// is a plain value: nothing here carries a gradient.
struct CompetitionState {
  Tensor k;                            // [N']
  Tensor c_score;                      // [N'×N'], antisymmetric
  IntMatrix c_rank;                    // ±1, +1 on the diagonal
  Tensor c_iou;                        // [N'×N'], symmetric, unit diagonal
  std::vector<std::size_t> strongest;  // B
  std::vector<int> c_cq;               // ±1
  std::vector<std::size_t> leader;     // {leader[i], laggard[i]} = {i, B[i]}
  std::vector<std::size_t> laggard;
  Tensor r_state;                      // [N'×N'] in [−1, 1]
  IntMatrix r_hat;                     // [N'×N'] in [0, Y)
};

/// k_i = max_c object_probs(i, c) · s_iou_i. The no-object column must already
/// be removed by the caller.
Tensor competition_score(const Tensor& object_probs, const Tensor& s_iou);

struct PairwiseRank {
  Tensor score;   // k_i − k_j
  IntMatrix rank; // +1 where score ≥ 0, else −1
};
PairwiseRank pairwise_rank(const Tensor& k);

/// IoU of the masks binarized at sigmoid(logit) ≥ threshold. Two empty masks
/// have IoU 0; the diagonal is 1 regardless.
Tensor pairwise_mask_iou(const Tensor& mask_logits, double threshold);

/// B[i] = argmax over j ≠ i of c_iou(i, j), lowest j on ties. A single query
/// is its own competitor, which leaves QCL without effect.
std::vector<std::size_t> strongest_competitor(const Tensor& c_iou);

struct LeaderLaggard {
  std::vector<int> c_cq;
  std::vector<std::size_t> leader;
  std::vector<std::size_t> laggard;
};
LeaderLaggard leader_laggard_lists(const std::vector<std::size_t>& strongest, const IntMatrix& c_rank);

Tensor relative_state(const IntMatrix& c_rank, const Tensor& c_iou);

/// clamp(floor(r / v) + Y/2, 0, Y − 1).
IntMatrix quantize_state(const Tensor& r_state, double v, int y);

/// Full state from one layer's predictions. `p_cls` holds C' object columns
/// followed by the no-object column.
CompetitionState compute_state(const Tensor& p_cls, const Tensor& s_iou, const Tensor& mask_logits,
                               double mask_threshold, const CompetitionConfig& cfg);

/// Throws ContractError describing the first violated invariant.
void check_invariants(const CompetitionState& s, int table_size);

/// A fusion map of either FusionShape.
struct FusionRef {
  nn::LinearRef first;
  nn::LinearRef second;
  bool two_layer = false;
};

struct CompetitionLayerRef {
  std::size_t leader = 0;   // E_Le [N'×D]
  std::size_t laggard = 0;  // E_La [N'×D]
  FusionRef fuse;           // 2D → D over (E_La ‖ E_Le)
  FusionRef update;         // 2D → D over (Q ‖ E_fuse)
  std::vector<std::size_t> tables;  // one [Y×d] table per head
};

/// Parameters named prefix.{qcl.leader, qcl.laggard, qcl.fuse.*, qcl.update.*, rre.table.h<h>}.
CompetitionLayerRef add_competition_layer(ParameterSet& params, const std::string& prefix, std::size_t queries,
                                          std::size_t dim, std::size_t heads, std::size_t head_dim,
                                          const CompetitionConfig& cfg, nn::Rng& rng);

Var apply(ParameterBinding& bind, const FusionRef& fusion, Var x);

/// Q̂ = update(Q ‖ fuse(E_La[laggard] ‖ E_Le[leader])).
Var qcl_update(ParameterBinding& bind, const CompetitionLayerRef& ref, Var q, const std::vector<std::size_t>& leader,
               const std::vector<std::size_t>& laggard);

/// bias(i, j) = T[r_hat(i,j)]·vq_i + T[r_hat(i,j)]·vk_j for one head.
/// Throws ContractError for a table index outside [0, Y).
Var relationship_bias(Var table, const IntMatrix& r_hat, Var vq, Var vk);

/// X_norm = (X − min) / (max − min) over the query axis of each column; 1 where max = min.
Tensor rank_normalize(const Tensor& x);

/// X ⊙ X_norm with X_norm = (X − min) / (max − min) over the query axis of each
/// column. A column with max = min has X_norm = 1.
Var rank_modulate(Var x);

/// softmax over columns of rank_modulate(x).
Var rank_attention_weights(Var x);

/// Multi-head cross attention from queries to features with rank-modulated
/// logits, before any residual. For a single query the result equals softmax
/// attention bit for bit.
nn::AttentionResult rank_cross_attention(ParameterBinding& bind, const nn::AttentionRef& ref, Var q, Var f,
                                         std::size_t heads, std::size_t head_dim);

}  // namespace qcomp::competition
