#include "qcomp/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "qcomp/errors.hpp"
#include "qcomp/training/training.hpp"

namespace qcomp::eval {

double mask_iou(const std::vector<std::uint8_t>& a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw DimensionError("mask_iou: masks cover different superpoint counts");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<double> average_precision(const std::vector<SceneResult>& scenes, int cls, double tau) {
  struct Ranked {
    double confidence;
    std::size_t scene;
    std::size_t pred;
  };
  std::vector<Ranked> ranked;
  std::size_t gt_count = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (int c : scenes[s].gt_semantic) gt_count += c == cls;
    for (std::size_t p = 0; p < scenes[s].preds.size(); ++p) {
      const InstancePrediction& pred = scenes[s].preds[p];
      if (pred.cls != cls) continue;
      if (!std::isfinite(pred.confidence)) throw NumericError("average_precision: non-finite confidence");
      ranked.push_back({pred.confidence, s, p});
    }
  }
  if (gt_count == 0) return std::nullopt;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });
  std::vector<std::vector<char>> claimed(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) claimed[s].assign(scenes[s].gt_semantic.size(), 0);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    const SceneResult& sr = scenes[ranked[k].scene];
    const InstancePrediction& pred = sr.preds[ranked[k].pred];
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < sr.gt_semantic.size(); ++g) {
      if (sr.gt_semantic[g] != cls || claimed[ranked[k].scene][g]) continue;
      const double iou = mask_iou(pred.mask, sr.gt_masks.row(g));
      if (iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best >= tau) {
      claimed[ranked[k].scene][best_g] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gt_count));
  }
  // Precision envelope from the right, then area over recall steps.
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < recall.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(static_cast<double>(50 + 5 * i) / 100.0);
  return t;
}

namespace {

double mean_present(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : v) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

}  // namespace

APResult map_suite(const std::vector<SceneResult>& scenes, std::size_t classes) {
  APResult r;
  r.thresholds = coco_thresholds();
  r.ap.assign(classes, {});
  for (std::size_t c = 0; c < classes; ++c) {
    for (double t : r.thresholds) r.ap[c].push_back(average_precision(scenes, static_cast<int>(c), t));
    r.ap25.push_back(average_precision(scenes, static_cast<int>(c), 0.25));
    r.class_map.push_back(r.ap[c][0] ? std::optional<double>(mean_present(r.ap[c])) : std::nullopt);
  }
  r.map = mean_present(r.class_map);
  std::vector<std::optional<double>> at50;
  for (std::size_t c = 0; c < classes; ++c) at50.push_back(r.ap[c][0]);
  r.map50 = mean_present(at50);
  r.map25 = mean_present(r.ap25);
  return r;
}

namespace {

std::size_t best_object_class(const Tensor& p_cls, std::size_t q) {
  std::size_t best = 0;
  for (std::size_t c = 1; c + 1 < p_cls.cols(); ++c) {
    if (p_cls(q, c) > p_cls(q, best)) best = c;
  }
  return best;
}

std::vector<std::uint8_t> binarize(const Tensor& logits, std::size_t q, double threshold) {
  std::vector<std::uint8_t> m(logits.cols());
  for (std::size_t c = 0; c < logits.cols(); ++c) m[c] = 1.0 / (1.0 + std::exp(-logits(q, c))) >= threshold;
  return m;
}

}  // namespace

std::vector<InstancePrediction> instances_from(const decoder::LayerPrediction& p, double mask_threshold) {
  std::vector<InstancePrediction> out;
  for (std::size_t q = 0; q < p.p_cls.rows(); ++q) {
    InstancePrediction inst;
    inst.mask = binarize(p.mask_logits, q, mask_threshold);
    if (std::none_of(inst.mask.begin(), inst.mask.end(), [](std::uint8_t b) { return b != 0; })) continue;
    const std::size_t c = best_object_class(p.p_cls, q);
    inst.cls = static_cast<int>(c);
    inst.confidence = p.p_cls(q, c) * p.s_iou[q];
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<SceneLayers> layer_predictions(const decoder::Model& model, const std::vector<scene::Scene>& scenes,
                                           const decoder::Toggles& toggles) {
  std::vector<SceneLayers> out;
  for (const scene::Scene& s : scenes) {
    Graph graph;
    ParameterBinding bind(graph, model.params);
    const decoder::DecoderOutput d = decoder::forward_scene(bind, model, s, toggles);
    SceneLayers sl{{}, s.gt_masks, s.gt_semantic};
    for (const decoder::LayerOutput& lo : d.layers) sl.layers.push_back(lo.values());
    out.push_back(std::move(sl));
  }
  return out;
}

std::vector<SceneResult> predict(const decoder::Model& model, const std::vector<scene::Scene>& scenes,
                                 const decoder::Toggles& toggles) {
  std::vector<SceneResult> out;
  for (SceneLayers& sl : layer_predictions(model, scenes, toggles)) {
    out.push_back({instances_from(sl.layers.back(), model.cfg.mask_threshold), std::move(sl.gt_masks),
                   std::move(sl.gt_semantic)});
  }
  return out;
}

CompetitionStats competing_query_stats(const std::vector<SceneLayers>& scenes, const std::vector<double>& taus,
                                       double mask_threshold) {
  std::size_t layers = scenes.empty() ? 0 : scenes.front().layers.size();
  for (const SceneLayers& s : scenes) {
    if (s.layers.size() != layers) throw ContractError("competing_query_stats: scenes disagree on layer count");
  }
  CompetitionStats stats(layers, std::vector<double>(taus.size(), 0.0));
  std::size_t instances = 0;
  for (const SceneLayers& s : scenes) instances += s.gt_masks.rows;
  if (instances == 0) return stats;
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<std::size_t> total(taus.size(), 0);
    for (const SceneLayers& s : scenes) {
      const Tensor& logits = s.layers[l].mask_logits;
      std::vector<std::vector<std::uint8_t>> masks;
      for (std::size_t q = 0; q < logits.rows(); ++q) masks.push_back(binarize(logits, q, mask_threshold));
      for (std::size_t g = 0; g < s.gt_masks.rows; ++g) {
        std::vector<double> ious;
        for (const auto& m : masks) ious.push_back(mask_iou(m, s.gt_masks.row(g)));
        for (std::size_t t = 0; t < taus.size(); ++t) {
          const auto above = static_cast<std::size_t>(
              std::count_if(ious.begin(), ious.end(), [&](double v) { return v > taus[t]; }));
          total[t] += above > 0 ? above - 1 : 0;
        }
      }
    }
    for (std::size_t t = 0; t < taus.size(); ++t) {
      stats[l][t] = static_cast<double>(total[t]) / static_cast<double>(instances);
    }
  }
  return stats;
}

CdfSeries score_cdf(std::vector<double> values) {
  if (values.empty()) throw ContractError("score_cdf needs at least one value");
  std::sort(values.begin(), values.end());
  CdfSeries cdf;
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i + 1 < values.size() && values[i + 1] == values[i]) continue;
    cdf.values.push_back(values[i]);
    cdf.fractions.push_back(static_cast<double>(i + 1) / n);
  }
  return cdf;
}

ScorePopulations score_populations(const std::vector<SceneLayers>& scenes) {
  ScorePopulations pop;
  const training::LossWeights w;
  for (const SceneLayers& s : scenes) {
    if (s.layers.empty()) throw ContractError("score_populations: scene without layers");
    const decoder::LayerPrediction& p = s.layers.back();
    std::vector<char> matched(p.p_cls.rows(), 0);
    if (s.gt_masks.rows > 0) {
      for (const auto& [q, g] : training::hungarian(training::match_cost(p, s.gt_masks, s.gt_semantic, w)).pairs) {
        matched[q] = 1;
      }
    }
    for (std::size_t q = 0; q < p.p_cls.rows(); ++q) {
      const double cls_score = p.p_cls(q, best_object_class(p.p_cls, q));
      (matched[q] ? pop.matched_cls : pop.unmatched_cls).push_back(cls_score);
      (matched[q] ? pop.matched_iou : pop.unmatched_iou).push_back(p.s_iou[q]);
    }
  }
  return pop;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string competition_stats_csv(const CompetitionStats& stats, const std::vector<double>& taus,
                                  const std::string& config_hash) {
  std::ostringstream os;
  os << std::setprecision(17) << "schema,config_hash,layer,tau,avg_competitors\n";
  for (std::size_t l = 0; l < stats.size(); ++l) {
    for (std::size_t t = 0; t < taus.size(); ++t) {
      os << kStatsSchema << ',' << config_hash << ',' << l + 1 << ',' << taus[t] << ',' << stats[l][t] << '\n';
    }
  }
  return os.str();
}

std::string cdf_csv(const std::vector<std::pair<std::string, CdfSeries>>& series, const std::string& config_hash) {
  std::ostringstream os;
  os << std::setprecision(17) << "schema,config_hash,population,value,cum_fraction\n";
  for (const auto& [name, cdf] : series) {
    for (std::size_t i = 0; i < cdf.values.size(); ++i) {
      os << kCdfSchema << ',' << config_hash << ',' << name << ',' << cdf.values[i] << ',' << cdf.fractions[i] << '\n';
    }
  }
  return os.str();
}

}  // namespace qcomp::eval
