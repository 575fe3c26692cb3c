#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "qcomp/errors.hpp"
#include "qcomp/training/training.hpp"

namespace qcomp::training {

void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("train." + field + ": " + why); };
  if (cfg.epochs < 1) fail("epochs", "must be positive");
  if (cfg.batch_size < 1) fail("batch_size", "must be positive");
  if (!(cfg.adam.lr >= 0.0) || !std::isfinite(cfg.adam.lr)) fail("lr", "must be a non-negative number");
  if (!(cfg.adam.beta1 >= 0.0 && cfg.adam.beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
  if (!(cfg.adam.beta2 >= 0.0 && cfg.adam.beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
  if (!(cfg.adam.eps > 0.0)) fail("eps", "must be positive");
  if (!(cfg.adam.weight_decay >= 0.0) || !std::isfinite(cfg.adam.weight_decay)) {
    fail("weight_decay", "must be a non-negative number");
  }
  validate(cfg.loss);
}

AdamState adam_init(const ParameterSet& params) {
  AdamState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.emplace_back(params.value(i).shape());
    s.v.emplace_back(params.value(i).shape());
  }
  return s;
}

void adam_step(ParameterSet& params, const GradientSet& grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and moment counts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = params.value(p);
    const Tensor& g = grads[p];
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    if (g.shape() != w.shape()) throw DimensionError("adam_step: gradient shape differs for " + params.name(p));
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
      w[i] -= cfg.lr * (update + cfg.weight_decay * w[i]);
    }
  }
}

TrainState initial_state(decoder::Model model) {
  TrainState s{std::move(model), {}, 0, {}};
  s.adam = adam_init(s.model.params);
  return s;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t scene_count) {
  std::vector<std::size_t> order(scene_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x7a11u};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void train(TrainState& state, const std::vector<scene::Scene>& scenes, const TrainConfig& cfg, const EvalHook& eval,
           const EpochHook& on_epoch) {
  validate(cfg);
  if (scenes.empty()) throw ContractError("train needs at least one scene");
  decoder::Model& model = state.model;
  for (std::size_t epoch = state.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(cfg.seed, epoch, scenes.size());
    EpochMetrics metrics;
    metrics.epoch = epoch;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      GradientSet grads = zero_gradients(model.params);
      for (std::size_t k = begin; k < end; ++k) {
        const scene::Scene& s = scenes[order[k]];
        Graph graph;
        ParameterBinding bind(graph, model.params);
        const decoder::DecoderOutput out = decoder::forward_scene(bind, model, s, cfg.toggles);
        const SceneLoss loss =
            scene_loss(out, s, cfg.loss, model.cfg.mask_threshold, cfg.deep_supervision);
        const double total = loss.total.value()[0];
        if (!std::isfinite(total)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << ", scene seed " << s.seed << " (cls " << loss.cls
              << ", mask " << loss.mask << ", iou " << loss.iou << ")";
          throw DivergenceError(msg.str());
        }
        graph.backward(loss.total);
        accumulate(grads, bind.gradients());
        metrics.loss_total += total;
        metrics.loss_cls += loss.cls;
        metrics.loss_mask += loss.mask;
        metrics.loss_iou += loss.iou;
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (Tensor& g : grads) {
        for (double& x : g.values()) x *= inv;
      }
      adam_step(model.params, grads, state.adam, cfg.adam);
      if (!model.params.all_finite()) {
        throw DivergenceError("non-finite parameters after the optimizer step of epoch " + std::to_string(epoch));
      }
    }
    const double n = static_cast<double>(scenes.size());
    metrics.loss_total /= n;
    metrics.loss_cls /= n;
    metrics.loss_mask /= n;
    metrics.loss_iou /= n;
    if (eval && cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      metrics.map50_val = eval(model, epoch);
    }
    state.log.push_back(metrics);
    state.epochs_done = epoch;
    if (on_epoch && !on_epoch(state)) break;
  }
}

}  // namespace qcomp::training
