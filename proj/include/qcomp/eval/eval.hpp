#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qcomp/decoder/decoder.hpp"
#include "qcomp/scene/scene.hpp"

namespace qcomp::eval {

/// One ranked instance hypothesis over the superpoints of a scene.
struct InstancePrediction {
  std::vector<std::uint8_t> mask;  // M entries
  int cls = 0;
  double confidence = 0.0;
};

struct SceneResult {
  std::vector<InstancePrediction> preds;
  scene::BinaryMasks gt_masks;
  std::vector<int> gt_semantic;
};

/// |a ∧ b| / |a ∨ b| over superpoints; 0 when both are empty.
double mask_iou(const std::vector<std::uint8_t>& a, std::span<const std::uint8_t> b);

/// Class-`cls` AP at IoU threshold `tau` over all scenes: greedy matching in
/// descending confidence (ties broken by scene, then prediction order), a
/// prediction is a TP iff its best unclaimed same-class gt has IoU ≥ tau; area
/// under the all-point interpolated PR curve. nullopt when the class has no gt.
std::optional<double> average_precision(const std::vector<SceneResult>& scenes, int cls, double tau);

/// 0.50, 0.55, ..., 0.95.
std::vector<double> coco_thresholds();

struct APResult {
  std::vector<double> thresholds;                       // coco_thresholds()
  std::vector<std::vector<std::optional<double>>> ap;   // [class][threshold]
  std::vector<std::optional<double>> ap25;              // [class]
  std::vector<std::optional<double>> class_map;         // mean over thresholds, per class
  double map = 0.0;
  double map50 = 0.0;
  double map25 = 0.0;
};

/// Means skip classes without ground truth; all zeros when no class has any.
APResult map_suite(const std::vector<SceneResult>& scenes, std::size_t classes);

/// Confidence = max object-class probability × S_IoU; class = that argmax;
/// mask = sigmoid(logit) ≥ threshold. Queries with empty masks are dropped.
std::vector<InstancePrediction> instances_from(const decoder::LayerPrediction& p, double mask_threshold);

/// Final-layer predictions of the model on each scene.
std::vector<SceneResult> predict(const decoder::Model& model, const std::vector<scene::Scene>& scenes,
                                 const decoder::Toggles& toggles);

/// stats[l][t]: mean over gt instances of max(0, #{queries q : IoU(q, g) > tau_t} − 1)
/// using binarized layer-l masks.
using CompetitionStats = std::vector<std::vector<double>>;

struct SceneLayers {
  std::vector<decoder::LayerPrediction> layers;
  scene::BinaryMasks gt_masks;
  std::vector<int> gt_semantic;
};

CompetitionStats competing_query_stats(const std::vector<SceneLayers>& scenes, const std::vector<double>& taus,
                                       double mask_threshold);

struct CdfSeries {
  std::vector<double> values;     // distinct, ascending
  std::vector<double> fractions;  // P(X ≤ value), non-decreasing, last = 1
};

/// Throws ContractError on empty input.
CdfSeries score_cdf(std::vector<double> values);

/// Final-layer query scores split by Hungarian matching against the gt.
struct ScorePopulations {
  std::vector<double> matched_cls, unmatched_cls;  // max object-class probability
  std::vector<double> matched_iou, unmatched_iou;  // S_IoU
};

ScorePopulations score_populations(const std::vector<SceneLayers>& scenes);

std::vector<SceneLayers> layer_predictions(const decoder::Model& model, const std::vector<scene::Scene>& scenes,
                                           const decoder::Toggles& toggles);

double mean(const std::vector<double>& v);

inline constexpr const char* kStatsSchema = "qcomp.competition_stats.v1";
inline constexpr const char* kCdfSchema = "qcomp.score_cdf.v1";

/// Rows: schema,config_hash,layer,tau,avg_competitors (layer is 1-based).
std::string competition_stats_csv(const CompetitionStats& stats, const std::vector<double>& taus,
                                  const std::string& config_hash);

/// Rows: schema,config_hash,population,value,cum_fraction.
std::string cdf_csv(const std::vector<std::pair<std::string, CdfSeries>>& series, const std::string& config_hash);

}  // namespace qcomp::eval
