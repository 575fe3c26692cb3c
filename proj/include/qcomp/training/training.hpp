#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "qcomp/decoder/decoder.hpp"
#include "qcomp/scene/scene.hpp"

namespace qcomp::training {

struct LossWeights {
  double cls = 0.5;
  double bce = 1.0;
  double dice = 1.0;
  double iou = 0.5;
  double no_object = 0.1;  // class weight of the no-object target in the CE term
};

/// Throws ConfigError naming the offending field.
void validate(const LossWeights& w);

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query, gt), ascending by query
  std::vector<std::size_t> unmatched;                      // ascending
};

/// cost(i, g) = λ_cls·(−P[i][class_g]) + λ_bce·meanBCE(mask_i, gt_g) + λ_dice·softdice(mask_i, gt_g).
Tensor match_cost(const decoder::LayerPrediction& pred, const scene::BinaryMasks& gt_masks,
                  const std::vector<int>& gt_semantic, const LossWeights& w);

/// Minimum-cost injective assignment of min(n, m) pairs.
MatchResult hungarian(const Tensor& cost);

struct LossTerms {
  Var total;
  double cls = 0.0;   // weighted CE, already multiplied by λ_cls
  double mask = 0.0;  // λ_bce·BCE + λ_dice·dice
  double iou = 0.0;   // λ_iou·MSE
};

/// Set-prediction loss of one layer against the scene's ground truth.
LossTerms layer_loss(const decoder::LayerOutput& out, const scene::Scene& s, const MatchResult& match,
                     const LossWeights& w, double mask_threshold);

/// Binarized-mask IoU of query row `i` against gt row `g`.
double mask_iou(const Tensor& mask_logits, std::size_t i, const scene::BinaryMasks& gt, std::size_t g,
                double threshold);

struct SceneLoss {
  Var total;
  double cls = 0.0;
  double mask = 0.0;
  double iou = 0.0;
};

/// Matches every supervised layer and sums its losses (deep supervision), or
/// the last layer only.
SceneLoss scene_loss(const decoder::DecoderOutput& out, const scene::Scene& s, const LossWeights& w,
                     double mask_threshold, bool deep_supervision);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adaptive moments with decoupled weight decay.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

AdamState adam_init(const ParameterSet& params);
void adam_step(ParameterSet& params, const GradientSet& grads, AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 4;
  AdamConfig adam;
  std::uint64_t seed = 0;
  decoder::Toggles toggles;
  bool deep_supervision = true;
  LossWeights loss;
  std::size_t eval_every = 10;  // epochs between validation hooks; 0 disables
};

/// Throws ConfigError naming the offending field.
void validate(const TrainConfig& cfg);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double loss_total = 0.0;
  double loss_cls = 0.0;
  double loss_mask = 0.0;
  double loss_iou = 0.0;
  std::optional<double> map50_val;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

/// Everything a run needs to continue exactly where it stopped.
struct TrainState {
  decoder::Model model;
  AdamState adam;
  std::size_t epochs_done = 0;
  std::vector<EpochMetrics> log;
};

TrainState initial_state(decoder::Model model);

/// Called after epochs that are multiples of eval_every, and after the last epoch;
/// returns the validation mAP50 to record.
using EvalHook = std::function<std::optional<double>(const decoder::Model&, std::size_t epoch)>;
/// Called after each epoch's metrics are final; return false to stop early.
using EpochHook = std::function<bool(const TrainState&)>;

/// Scene visiting order of an epoch; a function of (seed, epoch) only.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t scene_count);

/// Runs epochs epochs_done+1 .. cfg.epochs. Throws DivergenceError on a non-finite loss.
void train(TrainState& state, const std::vector<scene::Scene>& scenes, const TrainConfig& cfg,
           const EvalHook& eval = {}, const EpochHook& on_epoch = {});

}  // namespace qcomp::training
