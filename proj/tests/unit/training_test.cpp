#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>

#include "qcomp/errors.hpp"
#include "qcomp/tensor/grad_check.hpp"
#include "qcomp/training/checkpoint.hpp"
#include "qcomp/training/training.hpp"
#include "test_util.hpp"

namespace qcomp::training {
namespace {

using qcomp::testing::random_tensor;

Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
  Tensor t({r, c});
  std::copy(v.begin(), v.end(), t.values().begin());
  return t;
}

scene::BinaryMasks masks(std::size_t r, std::size_t c, std::vector<int> bits) {
  scene::BinaryMasks m(r, c);
  for (std::size_t i = 0; i < bits.size(); ++i) m.bits[i] = static_cast<std::uint8_t>(bits[i]);
  return m;
}

double assignment_total(const Tensor& cost, const MatchResult& m) {
  double total = 0.0;
  for (const auto& [q, g] : m.pairs) total += cost(q, g);
  return total;
}

// Exhaustive optimum over injective assignments of min(n, m) pairs, summed by ascending row.
double brute_force_total(const Tensor& cost) {
  const std::size_t n = cost.rows(), m = cost.cols();
  double best = std::numeric_limits<double>::infinity();
  if (n <= m) {
    std::vector<std::size_t> cols(m);
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    do {
      double t = 0.0;
      for (std::size_t i = 0; i < n; ++i) t += cost(i, cols[i]);
      best = std::min(best, t);
    } while (std::next_permutation(cols.begin(), cols.end()));
  } else {
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    do {
      // rows[j] is matched to column j; accumulate in ascending row order.
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (std::size_t j = 0; j < m; ++j) pairs.emplace_back(rows[j], j);
      std::sort(pairs.begin(), pairs.end());
      double t = 0.0;
      for (const auto& [i, j] : pairs) t += cost(i, j);
      best = std::min(best, t);
    } while (std::next_permutation(rows.begin(), rows.end()));
  }
  return best;
}

void expect_valid_match(const MatchResult& r, std::size_t n, std::size_t m) {
  EXPECT_EQ(r.pairs.size(), std::min(n, m));
  EXPECT_EQ(r.pairs.size() + r.unmatched.size(), n);
  std::vector<char> row_used(n, 0), col_used(m, 0);
  for (std::size_t k = 0; k < r.pairs.size(); ++k) {
    const auto [q, g] = r.pairs[k];
    ASSERT_LT(q, n);
    ASSERT_LT(g, m);
    EXPECT_FALSE(row_used[q]);
    EXPECT_FALSE(col_used[g]);
    row_used[q] = col_used[g] = 1;
    if (k > 0) {
      EXPECT_LT(r.pairs[k - 1].first, q);
    }
  }
  for (std::size_t q : r.unmatched) EXPECT_FALSE(row_used[q]);
  EXPECT_TRUE(std::is_sorted(r.unmatched.begin(), r.unmatched.end()));
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(validate(w));
  w.dice = -1.0;
  try {
    validate(w);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("loss.dice"), std::string::npos);
  }
  EXPECT_THROW(validate(LossWeights{0.0, 0.0, 0.0, 0.0, 0.1}), ConfigError);
}

TEST(MatchCost, TwoByTwoFixture) {
  decoder::LayerPrediction pred{matrix(2, 3, {0.7, 0.2, 0.1, 0.1, 0.3, 0.6}), Tensor({2}, 0.5),
                                matrix(2, 3, {2.0, -1.0, 0.5, -0.5, 1.5, -2.0})};
  const Tensor c = match_cost(pred, masks(2, 3, {1, 0, 1, 0, 1, 0}), {0, 1}, LossWeights{});
  EXPECT_NEAR(c(0, 0), 0.1152026000722543, 1e-9);
  EXPECT_NEAR(c(0, 1), 1.9637334180791914, 1e-9);
  EXPECT_NEAR(c(1, 0), 2.0887429907881323, 1e-9);
  EXPECT_NEAR(c(1, 1), 0.32239247301128526, 1e-9);
}

TEST(MatchCost, SaturatedPerfectPredictionApproachesMinusClassWeight) {
  decoder::LayerPrediction pred{matrix(1, 3, {1.0, 0.0, 0.0}), Tensor({1}, 1.0),
                                matrix(1, 4, {50.0, -50.0, 50.0, -50.0})};
  const Tensor c = match_cost(pred, masks(1, 4, {1, 0, 1, 0}), {0}, LossWeights{});
  EXPECT_NEAR(c(0, 0), -0.5, 1e-9);
}

TEST(MatchCost, UniformPredictionIsSymmetricAcrossEqualSizedTargets) {
  decoder::LayerPrediction pred{Tensor({2, 4}, 0.25), Tensor({2}, 0.5), Tensor({2, 4})};
  const Tensor c = match_cost(pred, masks(3, 4, {1, 1, 0, 0, 0, 0, 1, 1, 0, 1, 1, 0}), {0, 2, 1}, LossWeights{});
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(c(i, 0), c(i, 1));
    EXPECT_EQ(c(i, 0), c(i, 2));
  }
}

TEST(MatchCost, RejectsEmptyGroundTruth) {
  decoder::LayerPrediction pred{Tensor({1, 2}, 0.5), Tensor({1}, 0.5), Tensor({1, 3})};
  EXPECT_THROW(match_cost(pred, scene::BinaryMasks(0, 3), {}, LossWeights{}), ContractError);
}

TEST(Hungarian, DiagonalExample) {
  const Tensor c = matrix(2, 2, {1, 2, 2, 1});
  const MatchResult r = hungarian(c);
  ASSERT_EQ(r.pairs.size(), 2u);
  EXPECT_EQ(r.pairs[0], std::make_pair(std::size_t{0}, std::size_t{0}));
  EXPECT_EQ(r.pairs[1], std::make_pair(std::size_t{1}, std::size_t{1}));
  EXPECT_EQ(assignment_total(c, r), 2.0);
}

TEST(Hungarian, ThreeByThreeExample) {
  const Tensor c = matrix(3, 3, {4, 1, 3, 2, 0, 5, 3, 2, 2});
  const MatchResult r = hungarian(c);
  const std::vector<std::pair<std::size_t, std::size_t>> expected{{0, 1}, {1, 0}, {2, 2}};
  EXPECT_EQ(r.pairs, expected);
  EXPECT_EQ(assignment_total(c, r), 5.0);
  EXPECT_TRUE(r.unmatched.empty());
}

TEST(Hungarian, RectangularLeavesExtraQueriesUnmatched) {
  const Tensor c = matrix(3, 1, {5, 1, 3});
  const MatchResult r = hungarian(c);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0], std::make_pair(std::size_t{1}, std::size_t{0}));
  EXPECT_EQ(r.unmatched, (std::vector<std::size_t>{0, 2}));
}

TEST(Hungarian, MatchesExhaustiveOracleOnRandomMatrices) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = dim(rng), m = dim(rng);
    const Tensor c = random_tensor({n, m}, rng, -3.0, 3.0);
    const MatchResult r = hungarian(c);
    expect_valid_match(r, n, m);
    EXPECT_EQ(assignment_total(c, r), brute_force_total(c)) << n << "x" << m << " trial " << trial;
    if (n == m) {
      double identity = 0.0;
      for (std::size_t i = 0; i < n; ++i) identity += c(i, i);
      EXPECT_LE(assignment_total(c, r), identity + 1e-12);
    }
  }
}

TEST(Hungarian, RejectsNonFiniteCost) {
  Tensor c = matrix(2, 2, {1, 2, 3, 4});
  c(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(hungarian(c), NumericError);
}

struct LossFixture {
  Graph graph;
  decoder::LayerOutput out;
  scene::Scene scene;
};

void fill_fixture(LossFixture& f, const Tensor& cls_logits, const Tensor& mask_logits, const Tensor& iou) {
  const Var logits = f.graph.variable(cls_logits);
  f.out.p_cls = ad::softmax_axis(logits, 1);
  f.out.log_p_cls = ad::log_softmax_axis(logits, 1);
  f.out.mask_logits = f.graph.variable(mask_logits);
  f.out.s_iou = f.graph.variable(iou);
}

TEST(LayerLoss, HandFixture) {
  LossFixture f;
  fill_fixture(f, matrix(2, 3, {1.0, -0.5, 0.2, 0.1, 0.4, -0.3}), matrix(2, 3, {1.2, 0.3, -0.8, 0.0, 0.0, 0.0}),
               matrix(2, 1, {0.6, 0.2}));
  f.scene.superpoint_count = 3;
  f.scene.gt_semantic = {1};
  f.scene.gt_masks = masks(1, 3, {1, 0, 1});
  MatchResult match{{{0, 0}}, {1}};
  const LossTerms t = layer_loss(f.out, f.scene, match, LossWeights{}, 0.5);
  EXPECT_NEAR(t.cls, 0.9840121264040768, 1e-9);
  EXPECT_NEAR(t.mask, 1.0844031263486917, 1e-9);
  EXPECT_NEAR(t.iou, 0.035555555555555556, 1e-9);
  EXPECT_NEAR(t.total.value()[0], 2.103970808308324, 1e-9);
}

TEST(LayerLoss, PerfectSaturatedPredictionNearZero) {
  LossFixture f;
  fill_fixture(f, matrix(2, 3, {60.0, 0.0, 0.0, 0.0, 0.0, 60.0}), matrix(2, 3, {60.0, -60.0, 60.0, 0.0, 0.0, 0.0}),
               matrix(2, 1, {1.0, 0.3}));
  f.scene.superpoint_count = 3;
  f.scene.gt_semantic = {0};
  f.scene.gt_masks = masks(1, 3, {1, 0, 1});
  const LossTerms t = layer_loss(f.out, f.scene, MatchResult{{{0, 0}}, {1}}, LossWeights{}, 0.5);
  EXPECT_NEAR(t.cls, 0.0, 1e-20);
  EXPECT_NEAR(t.mask, 0.0, 1e-20);
  EXPECT_EQ(t.iou, 0.0);
}

TEST(LayerLoss, UnmatchedQueryWithCertainNoObjectAddsNothing) {
  LossFixture f;
  fill_fixture(f, matrix(1, 3, {0.0, 0.0, 80.0}), matrix(1, 2, {0.0, 0.0}), matrix(1, 1, {0.5}));
  f.scene.superpoint_count = 2;
  f.scene.gt_semantic = {0};
  f.scene.gt_masks = masks(1, 2, {1, 0});
  const LossTerms t = layer_loss(f.out, f.scene, MatchResult{{}, {0}}, LossWeights{}, 0.5);
  EXPECT_NEAR(t.total.value()[0], 0.0, 1e-30);
}

TEST(LayerLoss, NonNegativeOnRandomInputs) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    LossFixture f;
    fill_fixture(f, random_tensor({5, 4}, rng, -4, 4), random_tensor({5, 7}, rng, -4, 4),
                 random_tensor({5, 1}, rng, 0, 1));
    f.scene.superpoint_count = 7;
    f.scene.gt_semantic = {0, 2};
    f.scene.gt_masks = masks(2, 7, {1, 1, 0, 0, 0, 0, 1, 0, 0, 1, 1, 1, 0, 0});
    const MatchResult m = hungarian(match_cost(f.out.values(), f.scene.gt_masks, f.scene.gt_semantic, LossWeights{}));
    const LossTerms t = layer_loss(f.out, f.scene, m, LossWeights{}, 0.5);
    EXPECT_GE(t.cls, 0.0);
    EXPECT_GE(t.mask, 0.0);
    EXPECT_GE(t.iou, 0.0);
    EXPECT_GE(t.total.value()[0], 0.0);
  }
}

decoder::DecoderConfig small_decoder() {
  decoder::DecoderConfig cfg;
  cfg.layers = 2;
  cfg.queries = 6;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.point_dim = 8;
  cfg.ffn_hidden = 16;
  return cfg;
}

std::vector<scene::Scene> small_scenes(std::size_t count, std::uint64_t seed) {
  scene::SceneConfig cfg;
  cfg.instances_min = 3;
  cfg.instances_max = 4;
  cfg.points_min = 30;
  cfg.points_max = 40;
  cfg.background_points = 30;
  cfg.voxel_size = 0.25;
  std::vector<scene::Scene> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(scene::generate_scene(cfg, seed + i).scene);
  return out;
}

TrainConfig small_train(std::size_t epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 2;
  cfg.seed = seed;
  cfg.toggles = decoder::Toggles::full();
  cfg.adam.lr = 3e-3;
  return cfg;
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(validate(cfg));
  cfg.epochs = 0;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.adam.lr = -1.0;
  try {
    validate(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.lr"), std::string::npos);
  }
}

TEST(SceneLoss, GradientsMatchFiniteDifferences) {
  decoder::Model m = decoder::init_model(small_decoder(), {}, 3);
  const std::vector<scene::Scene> scenes = small_scenes(1, 40);
  const LossWeights w;
  const ModelLossFn f = [&](ParameterBinding& bind) {
    const decoder::DecoderOutput out = decoder::forward_scene(bind, m, scenes[0], decoder::Toggles::full());
    return scene_loss(out, scenes[0], w, 0.5, true).total;
  };
  std::vector<std::size_t> subset;
  for (const char* name : {"head.cls.weight", "head.mask.fc2.weight", "layer2.qcl.leader", "layer2.rre.table.h0",
                           "layer2.cross_attn.q.weight", "queries"}) {
    subset.push_back(m.params.index(name));
  }
  const GradCheckResult r = grad_check(m.params, f, 1e-6, subset);
  EXPECT_GT(r.elements_checked, 200u);
  EXPECT_LE(r.max_rel_error, 1e-4) << m.params.name(r.worst_input) << "[" << r.worst_element << "]";
}

TEST(EpochOrder, PermutationDependingOnSeedAndEpoch) {
  const auto a = epoch_order(1, 1, 20);
  std::vector<std::size_t> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(a, epoch_order(1, 1, 20));
  EXPECT_NE(a, epoch_order(1, 2, 20));
  EXPECT_NE(a, epoch_order(2, 1, 20));
}

TEST(Train, LossDecreasesOnFixedBatchForThreeSeeds) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    TrainState state = initial_state(decoder::init_model(small_decoder(), {}, seed));
    const std::vector<scene::Scene> scenes = small_scenes(1, 100 + seed);
    TrainConfig cfg = small_train(11, seed);
    cfg.batch_size = 1;
    train(state, scenes, cfg);
    // Epoch e reports the loss before its step, so 11 epochs cover 10 steps.
    ASSERT_EQ(state.log.size(), 11u);
    for (std::size_t e = 1; e < state.log.size(); ++e) {
      EXPECT_LT(state.log[e].loss_total, state.log[e - 1].loss_total) << "seed " << seed << " epoch " << e + 1;
    }
  }
}

TEST(Train, SameSeedIsBitwiseIdentical) {
  const std::vector<scene::Scene> scenes = small_scenes(3, 7);
  const TrainConfig cfg = small_train(3, 9);
  TrainState a = initial_state(decoder::init_model(small_decoder(), {}, 9));
  TrainState b = initial_state(decoder::init_model(small_decoder(), {}, 9));
  train(a, scenes, cfg);
  train(b, scenes, cfg);
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.adam, b.adam);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const std::vector<scene::Scene> scenes = small_scenes(2, 11);
  TrainConfig cfg = small_train(2, 1);
  cfg.adam.lr = 0.0;
  const decoder::Model init = decoder::init_model(small_decoder(), {}, 1);
  TrainState state = initial_state(init);
  train(state, scenes, cfg);
  EXPECT_EQ(state.model.params, init.params);
  EXPECT_EQ(state.adam.step, 2u);
}

TEST(Train, NonFiniteLossAborts) {
  std::vector<scene::Scene> scenes = small_scenes(1, 13);
  scenes[0].points(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainState state = initial_state(decoder::init_model(small_decoder(), {}, 1));
  try {
    train(state, scenes, small_train(1, 1));
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Train, EvalHookAndEarlyStop) {
  const std::vector<scene::Scene> scenes = small_scenes(2, 17);
  TrainConfig cfg = small_train(5, 2);
  cfg.eval_every = 2;
  std::vector<std::size_t> evaluated;
  TrainState state = initial_state(decoder::init_model(small_decoder(), {}, 2));
  train(
      state, scenes, cfg,
      [&](const decoder::Model&, std::size_t epoch) {
        evaluated.push_back(epoch);
        return std::optional<double>(0.25);
      },
      [](const TrainState& s) { return s.epochs_done < 4; });
  EXPECT_EQ(evaluated, (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(state.epochs_done, 4u);
  EXPECT_FALSE(state.log[0].map50_val.has_value());
  EXPECT_EQ(state.log[1].map50_val, 0.25);
}

TEST(Checkpoint, ResumeReproducesUninterruptedRun) {
  const std::vector<scene::Scene> scenes = small_scenes(3, 21);
  const TrainConfig cfg = small_train(4, 5);
  const decoder::Model init = decoder::init_model(small_decoder(), {}, 5);
  TrainState full = initial_state(init);
  train(full, scenes, cfg);

  TrainConfig first = cfg;
  first.epochs = 2;
  TrainState part = initial_state(init);
  train(part, scenes, first);
  const auto path = std::filesystem::temp_directory_path() / "qcomp_resume_test.json";
  save_checkpoint(part, "abc123", path);
  TrainState resumed = load_checkpoint(path, decoder::init_model(small_decoder(), {}, 99), "abc123");
  EXPECT_EQ(resumed.model.params, part.model.params);
  EXPECT_EQ(resumed.adam, part.adam);
  EXPECT_EQ(resumed.log, part.log);
  train(resumed, scenes, cfg);
  EXPECT_EQ(resumed.log, full.log);
  EXPECT_EQ(resumed.model.params, full.model.params);

  EXPECT_THROW(load_checkpoint(path, init, "other"), CheckpointError);
  decoder::DecoderConfig wider = small_decoder();
  wider.ffn_hidden = 12;
  EXPECT_THROW(load_checkpoint(path, decoder::init_model(wider, {}, 5), "abc123"), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, MetricsJsonOmitsAbsentValidation) {
  EpochMetrics m{3, 1.5, 0.5, 0.75, 0.25, std::nullopt};
  EXPECT_EQ(metrics_json(m), R"({"epoch":3,"loss_cls":0.5,"loss_iou":0.25,"loss_mask":0.75,"loss_total":1.5})");
  m.map50_val = 0.5;
  EXPECT_NE(metrics_json(m).find("\"map50_val\":0.5"), std::string::npos);
}

}  // namespace
}  // namespace qcomp::training
