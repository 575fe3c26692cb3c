#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "qcomp/competition/competition.hpp"
#include "qcomp/errors.hpp"
#include "qcomp/tensor/ops.hpp"

namespace qcomp::competition {

void validate(const CompetitionConfig& cfg) {
  if (!(cfg.quant_step > 0.0) || !std::isfinite(cfg.quant_step)) {
    throw ConfigError("competition.quant_step: must be positive");
  }
  if (cfg.table_size < 2 || cfg.table_size % 2 != 0) {
    throw ConfigError("competition.table_size: must be an even integer >= 2");
  }
}

Tensor competition_score(const Tensor& object_probs, const Tensor& s_iou) {
  if (object_probs.rank() != 2 || object_probs.cols() == 0) {
    throw DimensionError("competition_score expects [N' x C'] object probabilities");
  }
  const std::size_t n = object_probs.rows();
  if (s_iou.size() != n) throw DimensionError("competition_score: one IoU score per query required");
  Tensor k({n});
  for (std::size_t i = 0; i < n; ++i) {
    double best = object_probs(i, 0);
    for (std::size_t c = 1; c < object_probs.cols(); ++c) best = std::max(best, object_probs(i, c));
    k[i] = best * s_iou[i];
  }
  return k;
}

PairwiseRank pairwise_rank(const Tensor& k) {
  const std::size_t n = k.size();
  PairwiseRank out{Tensor({n, n}), IntMatrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double s = k[i] - k[j];
      out.score(i, j) = s;
      out.rank(i, j) = s >= 0.0 ? 1 : -1;
    }
  }
  return out;
}

Tensor pairwise_mask_iou(const Tensor& mask_logits, double threshold) {
  if (mask_logits.rank() != 2) throw DimensionError("pairwise_mask_iou expects [N' x M] logits");
  const std::size_t n = mask_logits.rows();
  const std::size_t m = mask_logits.cols();
  std::vector<std::uint8_t> bin(n * m);
  std::vector<std::size_t> area(n, 0);
  const Tensor prob = ops::sigmoid(mask_logits);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < m; ++c) {
      bin[i * m + c] = prob(i, c) >= threshold ? 1 : 0;
      area[i] += bin[i * m + c];
    }
  }
  Tensor iou({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    iou(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      std::size_t inter = 0;
      const std::uint8_t* a = bin.data() + i * m;
      const std::uint8_t* b = bin.data() + j * m;
      for (std::size_t c = 0; c < m; ++c) inter += a[c] & b[c];
      const std::size_t uni = area[i] + area[j] - inter;
      const double v = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
      iou(i, j) = v;
      iou(j, i) = v;
    }
  }
  return iou;
}

std::vector<std::size_t> strongest_competitor(const Tensor& c_iou) {
  if (c_iou.rank() != 2 || c_iou.rows() != c_iou.cols()) throw DimensionError("strongest_competitor expects a square matrix");
  const std::size_t n = c_iou.rows();
  std::vector<std::size_t> b(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    bool found = false;
    double best = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (!found || c_iou(i, j) > best) {
        best = c_iou(i, j);
        b[i] = j;
        found = true;
      }
    }
    if (!found) b[i] = i;
  }
  return b;
}

LeaderLaggard leader_laggard_lists(const std::vector<std::size_t>& strongest, const IntMatrix& c_rank) {
  const std::size_t n = strongest.size();
  if (c_rank.rows != n || c_rank.cols != n) throw DimensionError("leader_laggard_lists: rank matrix must be [N' x N']");
  LeaderLaggard out;
  out.c_cq.resize(n);
  out.leader.resize(n);
  out.laggard.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (strongest[i] >= n) throw IndexError("competitor index out of range");
    out.c_cq[i] = c_rank(i, strongest[i]);
    const bool leads = out.c_cq[i] > 0;
    out.leader[i] = leads ? i : strongest[i];
    out.laggard[i] = leads ? strongest[i] : i;
  }
  return out;
}

Tensor relative_state(const IntMatrix& c_rank, const Tensor& c_iou) {
  if (c_iou.rank() != 2 || c_rank.rows != c_iou.rows() || c_rank.cols != c_iou.cols()) {
    throw DimensionError("relative_state: shape mismatch");
  }
  Tensor r(c_iou.shape());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<double>(c_rank.data[i]) * c_iou[i];
  return r;
}

IntMatrix quantize_state(const Tensor& r_state, double v, int y) {
  if (!(v > 0.0)) throw ContractError("quantization step must be positive");
  if (y < 2 || y % 2 != 0) throw ContractError("table size must be even and >= 2");
  IntMatrix out(r_state.rows(), r_state.cols());
  for (std::size_t i = 0; i < r_state.size(); ++i) {
    const double raw = std::floor(r_state[i] / v) + static_cast<double>(y / 2);
    const double clamped = std::clamp(raw, 0.0, static_cast<double>(y - 1));
    out.data[i] = static_cast<int>(clamped);
  }
  return out;
}

CompetitionState compute_state(const Tensor& p_cls, const Tensor& s_iou, const Tensor& mask_logits,
                               double mask_threshold, const CompetitionConfig& cfg) {
  if (p_cls.rank() != 2 || p_cls.cols() < 2) throw DimensionError("compute_state expects [N' x (C'+1)] probabilities");
  CompetitionState s;
  s.k = competition_score(ops::slice_cols(p_cls, 0, p_cls.cols() - 1), s_iou);
  PairwiseRank pr = pairwise_rank(s.k);
  s.c_score = std::move(pr.score);
  s.c_rank = std::move(pr.rank);
  s.c_iou = pairwise_mask_iou(mask_logits, mask_threshold);
  s.strongest = strongest_competitor(s.c_iou);
  LeaderLaggard ll = leader_laggard_lists(s.strongest, s.c_rank);
  s.c_cq = std::move(ll.c_cq);
  s.leader = std::move(ll.leader);
  s.laggard = std::move(ll.laggard);
  s.r_state = relative_state(s.c_rank, s.c_iou);
  s.r_hat = quantize_state(s.r_state, cfg.quant_step, cfg.table_size);
  return s;
}

void check_invariants(const CompetitionState& s, int table_size) {
  const std::size_t n = s.k.size();
  auto fail = [](const std::string& what) { throw ContractError("competition state: " + what); };
  if (s.c_score.rows() != n || s.c_iou.rows() != n || s.c_rank.rows != n || s.r_hat.rows != n ||
      s.strongest.size() != n || s.leader.size() != n || s.laggard.size() != n) {
    fail("inconsistent sizes");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (s.c_rank(i, i) != 1) fail("rank diagonal must be +1");
    if (s.c_iou(i, i) != 1.0) fail("IoU diagonal must be 1");
    for (std::size_t j = 0; j < n; ++j) {
      if (s.c_score(i, j) != -s.c_score(j, i)) fail("score matrix is not antisymmetric");
      if (s.c_iou(i, j) != s.c_iou(j, i)) fail("IoU matrix is not symmetric");
      if (s.c_iou(i, j) < 0.0 || s.c_iou(i, j) > 1.0) fail("IoU outside [0, 1]");
      if (s.r_hat(i, j) < 0 || s.r_hat(i, j) >= table_size) fail("table index outside [0, Y)");
    }
    const std::size_t b = s.strongest[i];
    const bool pair_ok = (s.leader[i] == i && s.laggard[i] == b) || (s.leader[i] == b && s.laggard[i] == i);
    if (!pair_ok) fail("leader/laggard pair differs from {i, B[i]} at " + std::to_string(i));
  }
}

}  // namespace qcomp::competition
