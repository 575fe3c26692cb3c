#include <cmath>
#include <limits>
#include <string>

#include "qcomp/errors.hpp"
#include "qcomp/tensor/ops.hpp"
#include "qcomp/training/training.hpp"

namespace qcomp::training {

void validate(const LossWeights& w) {
  auto check = [](double v, const char* field) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string("loss.") + field + ": must be a non-negative number");
  };
  check(w.cls, "cls");
  check(w.bce, "bce");
  check(w.dice, "dice");
  check(w.iou, "iou");
  check(w.no_object, "no_object");
  if (w.cls == 0.0 && w.bce == 0.0 && w.dice == 0.0 && w.iou == 0.0) {
    throw ConfigError("loss.cls: the loss weights cannot all be zero");
  }
}

namespace {

Tensor mask_tensor(const scene::BinaryMasks& m) {
  Tensor t({m.rows, m.cols});
  for (std::size_t i = 0; i < m.bits.size(); ++i) t[i] = m.bits[i];
  return t;
}

}  // namespace

Tensor match_cost(const decoder::LayerPrediction& pred, const scene::BinaryMasks& gt_masks,
                  const std::vector<int>& gt_semantic, const LossWeights& w) {
  const std::size_t n = pred.p_cls.rows();
  const std::size_t g = gt_masks.rows;
  const std::size_t m = pred.mask_logits.cols();
  if (g == 0) throw ContractError("match_cost needs at least one ground-truth instance");
  if (gt_masks.cols != m || gt_semantic.size() != g) throw DimensionError("match_cost: ground truth does not match masks");
  const Tensor targets = mask_tensor(gt_masks);
  const Tensor& x = pred.mask_logits;
  const Tensor prob = ops::sigmoid(x);
  // meanBCE(i, g) = mean softplus(x_i) − (x_i · t_g) / M
  const Tensor xt = ops::matmul_nt(x, targets);
  const Tensor pt = ops::matmul_nt(prob, targets);
  std::vector<double> softplus_mean(n, 0.0), prob_sum(n, 0.0), target_sum(g, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sp = 0.0, ps = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const double v = x(i, c);
      sp += v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
      ps += prob(i, c);
    }
    softplus_mean[i] = sp / static_cast<double>(m);
    prob_sum[i] = ps;
  }
  for (std::size_t k = 0; k < g; ++k) target_sum[k] = static_cast<double>(gt_masks.count(k));
  Tensor cost({n, g});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < g; ++k) {
      const auto cls = static_cast<std::size_t>(gt_semantic[k]);
      if (cls + 1 >= pred.p_cls.cols()) throw IndexError("ground-truth class outside the classifier range");
      const double bce = softplus_mean[i] - xt(i, k) / static_cast<double>(m);
      const double dice = 1.0 - (2.0 * pt(i, k) + 1.0) / (prob_sum[i] + target_sum[k] + 1.0);
      cost(i, k) = -w.cls * pred.p_cls(i, cls) + w.bce * bce + w.dice * dice;
    }
  }
  return cost;
}

MatchResult hungarian(const Tensor& cost) {
  if (cost.rank() != 2) throw DimensionError("hungarian expects a cost matrix");
  if (!cost.all_finite()) throw NumericError("hungarian needs finite costs");
  const std::size_t rows = cost.rows(), cols = cost.cols();
  MatchResult result;
  if (rows == 0 || cols == 0) {
    for (std::size_t i = 0; i < rows; ++i) result.unmatched.push_back(i);
    return result;
  }
  // Solve with the shorter side as rows (n ≤ m).
  const bool flip = rows > cols;
  const std::size_t n = flip ? cols : rows;
  const std::size_t m = flip ? rows : cols;
  auto a = [&](std::size_t i, std::size_t j) { return flip ? cost(j - 1, i - 1) : cost(i - 1, j - 1); };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  // p[j] = short-side row assigned to long-side column j.
  std::vector<std::size_t> col_of_row(rows, cols);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    if (flip) {
      col_of_row[j - 1] = p[j] - 1;
    } else {
      col_of_row[p[j] - 1] = j - 1;
    }
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (col_of_row[i] < cols) {
      result.pairs.emplace_back(i, col_of_row[i]);
    } else {
      result.unmatched.push_back(i);
    }
  }
  return result;
}

double mask_iou(const Tensor& mask_logits, std::size_t i, const scene::BinaryMasks& gt, std::size_t g,
                double threshold) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t c = 0; c < gt.cols; ++c) {
    const bool p = 1.0 / (1.0 + std::exp(-mask_logits(i, c))) >= threshold;
    const bool t = gt(g, c);
    inter += p && t;
    uni += p || t;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

LossTerms layer_loss(const decoder::LayerOutput& out, const scene::Scene& s, const MatchResult& match,
                     const LossWeights& w, double mask_threshold) {
  Graph& graph = *out.p_cls.graph;
  const std::size_t n = out.p_cls.rows();
  const std::size_t no_object = out.p_cls.cols() - 1;
  const std::size_t m = s.superpoint_count;

  // Weighted cross-entropy: Σ w_i·(−log p_i[target_i]) / Σ w_i.
  std::vector<std::size_t> target(n, no_object);
  Tensor class_weight({n}, w.no_object);
  for (const auto& [q, g] : match.pairs) {
    target[q] = static_cast<std::size_t>(s.gt_semantic[g]);
    class_weight[q] = 1.0;
  }
  double weight_sum = 0.0;
  for (double cw : class_weight.values()) weight_sum += cw;
  const Var picked = ad::pick_per_row(out.log_p_cls, target);
  Var ce = ad::scale(ad::sum(ad::mul(picked, graph.constant(class_weight))), weight_sum > 0.0 ? -1.0 / weight_sum : 0.0);

  LossTerms terms;
  Var total = ad::scale(ce, w.cls);
  terms.cls = total.value()[0];
  if (!match.pairs.empty()) {
    const std::size_t k = match.pairs.size();
    std::vector<std::size_t> queries;
    Tensor t({k, m});
    Tensor iou_target({k, 1});
    const Tensor& logits = out.mask_logits.value();
    for (std::size_t r = 0; r < k; ++r) {
      const auto [q, g] = match.pairs[r];
      queries.push_back(q);
      for (std::size_t c = 0; c < m; ++c) t(r, c) = s.gt_masks(g, c);
      iou_target(r, 0) = mask_iou(logits, q, s.gt_masks, g, mask_threshold);
    }
    const Var x = ad::gather_rows(out.mask_logits, queries);
    const Var tv = graph.constant(t);
    const double inv_km = 1.0 / static_cast<double>(k * m);
    // BCE with logits: softplus(x) − t·x.
    const Var bce = ad::scale(ad::sum(ad::sub(ad::softplus(x), ad::mul(tv, x))), inv_km);
    const Var prob = ad::sigmoid(x);
    const Var ones = graph.constant(Tensor({m, 1}, 1.0));
    const Var inter = ad::matmul(ad::mul(prob, tv), ones);
    const Var denom = ad::add(ad::add_scalar(ad::matmul(prob, ones), 1.0), graph.constant(ops::matmul(t, ones.value())));
    const Var dice = ad::scale(ad::sum(ad::add_scalar(ad::scale(ad::div(ad::add_scalar(ad::scale(inter, 2.0), 1.0), denom), -1.0), 1.0)),
                               1.0 / static_cast<double>(k));
    const Var mask_term = ad::add(ad::scale(bce, w.bce), ad::scale(dice, w.dice));
    const Var s_iou = ad::gather_rows(out.s_iou, queries);
    const Var mse = ad::scale(ad::sum(ad::square(ad::sub(s_iou, graph.constant(iou_target)))), 1.0 / static_cast<double>(k));
    const Var iou_term = ad::scale(mse, w.iou);
    terms.mask = mask_term.value()[0];
    terms.iou = iou_term.value()[0];
    total = ad::add(ad::add(total, mask_term), iou_term);
  }
  terms.total = total;
  return terms;
}

SceneLoss scene_loss(const decoder::DecoderOutput& out, const scene::Scene& s, const LossWeights& w,
                     double mask_threshold, bool deep_supervision) {
  if (out.layers.empty()) throw ContractError("scene_loss needs at least one layer");
  SceneLoss loss;
  const std::size_t first = deep_supervision ? 0 : out.layers.size() - 1;
  for (std::size_t l = first; l < out.layers.size(); ++l) {
    const decoder::LayerOutput& lo = out.layers[l];
    const MatchResult match = hungarian(match_cost(lo.values(), s.gt_masks, s.gt_semantic, w));
    const LossTerms t = layer_loss(lo, s, match, w, mask_threshold);
    loss.total = l == first ? t.total : ad::add(loss.total, t.total);
    loss.cls += t.cls;
    loss.mask += t.mask;
    loss.iou += t.iou;
  }
  return loss;
}

}  // namespace qcomp::training
