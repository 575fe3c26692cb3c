#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "qcomp/decoder/decoder.hpp"
#include "qcomp/errors.hpp"
#include "qcomp/tensor/grad_check.hpp"
#include "qcomp/tensor/ops.hpp"
#include "test_util.hpp"

namespace qcomp::decoder {
namespace {

using qcomp::testing::random_tensor;
using qcomp::testing::weighted_sum;

DecoderConfig toy_config() {
  DecoderConfig cfg;
  cfg.layers = 2;
  cfg.queries = 4;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.classes = 3;
  cfg.point_dim = 8;
  cfg.ffn_hidden = 8;
  return cfg;
}

scene::Scene tiny_scene(std::mt19937_64& rng, std::size_t points, std::size_t pools) {
  scene::Scene s;
  s.points = random_tensor({points, 6}, rng, 0.0, 1.0);
  for (std::size_t i = 0; i < points; ++i) s.superpoint_id.push_back(i % pools);
  s.superpoint_count = pools;
  s.gt_semantic = {0};
  s.gt_masks = scene::BinaryMasks(1, pools);
  s.gt_masks.set(0, 0, true);
  return s;
}

void zero_all(ParameterSet& params) {
  for (std::size_t i = 0; i < params.size(); ++i) params.value(i) = Tensor(params.value(i).shape());
}

TEST(DecoderConfig, Validation) {
  DecoderConfig cfg = toy_config();
  cfg.layers = 1;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = toy_config();
  cfg.dim = 9;
  try {
    validate(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.dim"), std::string::npos);
  }
  cfg = toy_config();
  cfg.queries = 0;
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(InitModel, DeterministicAndCompetitionParametersAlwaysPresent) {
  const Model a = init_model(toy_config(), {}, 3);
  const Model b = init_model(toy_config(), {}, 3);
  EXPECT_EQ(a.params, b.params);
  EXPECT_FALSE(a.params == init_model(toy_config(), {}, 4).params);
  EXPECT_TRUE(a.params.contains("layer2.qcl.leader"));
  EXPECT_TRUE(a.params.contains("layer2.rre.table.h1"));
  EXPECT_FALSE(a.params.contains("layer1.qcl.leader"));
  EXPECT_TRUE(a.params.all_finite());
}

TEST(PointFeatures, ZeroWeightsShapeAndPermutation) {
  std::mt19937_64 rng(1);
  DecoderConfig cfg = toy_config();
  cfg.point_dim = 32;
  Model m = init_model(cfg, {}, 1);
  const Tensor pts = random_tensor({500, 6}, rng);
  {
    Graph g;
    ParameterBinding bind(g, m.params);
    const Tensor out = extract_point_features(bind, m.ref, g.constant(pts)).value();
    EXPECT_EQ(out.shape(), (Shape{500, 32}));
    std::vector<std::size_t> perm(500);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor permuted = extract_point_features(bind, m.ref, g.constant(ops::gather_rows(pts, perm))).value();
    const Tensor expect = ops::gather_rows(out, perm);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(permuted[i], expect[i], 1e-12);
  }
  zero_all(m.params);
  Graph g;
  ParameterBinding bind(g, m.params);
  EXPECT_EQ(extract_point_features(bind, m.ref, g.constant(pts)).value(), Tensor({500, 32}));
}

TEST(SelfAttention, ZeroBiasSingleQueryAndMaskedLimit) {
  std::mt19937_64 rng(2);
  ParameterSet params;
  const nn::AttentionRef ref = nn::add_attention(params, "sa", 8, rng);
  Graph g;
  ParameterBinding bind(g, params);
  const Var q = g.constant(random_tensor({5, 8}, rng));
  const auto plain = self_attention(bind, ref, q, 2, 4);
  const auto zero = self_attention(bind, ref, q, 2, 4,
                                   [&g](std::size_t, Var, Var) { return g.constant(Tensor({5, 5})); });
  EXPECT_EQ(plain.out.value(), zero.out.value());

  Tensor mask({5, 5}, -1e30);
  for (std::size_t i = 0; i < 5; ++i) mask(i, i) = 0.0;
  const auto masked = self_attention(bind, ref, q, 2, 4, [&g, &mask](std::size_t, Var, Var) { return g.constant(mask); });
  for (const Var& w : masked.weights) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(w.value()(i, j), i == j ? 1.0 : 0.0, 1e-9);
    }
  }

  const Var one = g.constant(random_tensor({1, 8}, rng));
  const auto single = self_attention(bind, ref, one, 2, 4);
  for (const Var& w : single.weights) EXPECT_EQ(w.value(), Tensor::matrix({{1.0}}));
  const Tensor expect = nn::apply(bind, ref.output, nn::apply(bind, ref.value, one)).value();
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(single.out.value()(0, c), expect(0, c), 1e-12);

  EXPECT_THROW(self_attention(bind, ref, q, 2, 4, [&g](std::size_t, Var, Var) { return g.constant(Tensor({5, 4})); }),
               DimensionError);
}

TEST(CrossAttention, Examples) {
  std::mt19937_64 rng(3);
  ParameterSet params;
  const nn::AttentionRef unit = nn::add_attention(params, "x1", 1, rng);
  const nn::AttentionRef wide = nn::add_attention(params, "x8", 8, rng);
  Graph g;
  ParameterBinding bind(g, params);
  const auto sym = cross_attention_standard(bind, unit, g.constant(Tensor::matrix({{0}})),
                                            g.constant(Tensor::matrix({{1}, {1}})), 1, 1);
  EXPECT_DOUBLE_EQ(sym.weights[0].value()(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(sym.weights[0].value()(0, 1), 0.5);

  const auto one = cross_attention_standard(bind, wide, g.constant(random_tensor({3, 8}, rng)),
                                            g.constant(random_tensor({1, 8}, rng)), 2, 4);
  for (const Var& w : one.weights) EXPECT_EQ(w.value(), Tensor::matrix({{1}, {1}, {1}}));

  const auto rnd = cross_attention_standard(bind, wide, g.constant(random_tensor({4, 8}, rng, -3, 3)),
                                            g.constant(random_tensor({6, 8}, rng, -3, 3)), 2, 4);
  for (const Var& w : rnd.weights) {
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) s += w.value()(i, j);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
  EXPECT_THROW(cross_attention_standard(bind, wide, g.constant(random_tensor({4, 8}, rng)), g.constant(Tensor({0, 8})),
                                        2, 4),
               ContractError);
}

TEST(PredictionHead, ZeroWeightsAndShapes) {
  std::mt19937_64 rng(4);
  Model m = init_model(toy_config(), {}, 4);
  Graph g;
  ParameterBinding bind(g, m.params);
  const Var q = g.constant(random_tensor({4, 8}, rng));
  const Var f = g.constant(random_tensor({6, 8}, rng));
  const HeadOutput h = prediction_head(bind, m.ref, q, f);
  EXPECT_EQ(h.p_cls.value().shape(), (Shape{4, 4}));
  EXPECT_EQ(h.s_iou.value().shape(), (Shape{4, 1}));
  EXPECT_EQ(h.mask_logits.value().shape(), (Shape{4, 6}));

  zero_all(m.params);
  Graph g0;
  ParameterBinding zero(g0, m.params);
  const HeadOutput z = prediction_head(zero, m.ref, g0.constant(q.value()), g0.constant(f.value()));
  for (double v : z.p_cls.value().values()) EXPECT_DOUBLE_EQ(v, 0.25);
  for (double v : z.s_iou.value().values()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(DecoderForward, LengthAndLayerOneIndependentOfMode) {
  std::mt19937_64 rng(5);
  DecoderConfig cfg = toy_config();
  cfg.layers = 3;
  const Model m = init_model(cfg, {}, 5);
  const scene::Scene s = tiny_scene(rng, 24, 6);
  Graph g;
  ParameterBinding bind(g, m.params);
  const DecoderOutput base = forward_scene(bind, m, s, Toggles::baseline());
  const DecoderOutput comp = forward_scene(bind, m, s, Toggles::full());
  ASSERT_EQ(base.layers.size(), 3u);
  ASSERT_EQ(comp.layers.size(), 3u);
  EXPECT_EQ(base.layers[0].p_cls.value(), comp.layers[0].p_cls.value());
  EXPECT_EQ(base.layers[0].mask_logits.value(), comp.layers[0].mask_logits.value());
  EXPECT_EQ(base.layers[0].s_iou.value(), comp.layers[0].s_iou.value());
  EXPECT_FALSE(comp.layers[0].state.has_value());
  EXPECT_TRUE(comp.layers[1].state.has_value());
  EXPECT_TRUE(comp.layers[1].qcl_queries.has_value());
  EXPECT_FALSE(base.layers[1].state.has_value());
  EXPECT_NE(base.layers[2].p_cls.value(), comp.layers[2].p_cls.value());
}

TEST(DecoderForward, FiniteAndValidOver100Seeds) {
  DecoderConfig cfg = toy_config();
  cfg.layers = 3;
  cfg.queries = 6;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Model m = init_model(cfg, {}, seed);
    const scene::Scene s = tiny_scene(rng, 40, 10);
    Graph g;
    ParameterBinding bind(g, m.params);
    const Toggles t = seed % 2 == 0 ? Toggles::full() : Toggles::baseline();
    const DecoderOutput out = forward_scene(bind, m, s, t);
    for (const LayerOutput& lo : out.layers) {
      const LayerPrediction p = lo.values();
      ASSERT_NO_THROW(check_invariants(p)) << seed;
      if (lo.state) {
        ASSERT_NO_THROW(competition::check_invariants(*lo.state, m.comp.table_size)) << seed;
      }
    }
  }
}

TEST(DecoderForward, PermutingQueriesPermutesBaselinePredictions) {
  std::mt19937_64 rng(6);
  const Model m = init_model(toy_config(), {}, 6);
  Model permuted = m;
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  permuted.params.value(m.ref.queries) = ops::gather_rows(m.params.value(m.ref.queries), perm);
  const scene::Scene s = tiny_scene(rng, 24, 6);
  Graph g;
  ParameterBinding a(g, m.params), b(g, permuted.params);
  const DecoderOutput oa = forward_scene(a, m, s, Toggles::baseline());
  const DecoderOutput ob = forward_scene(b, permuted, s, Toggles::baseline());
  for (std::size_t l = 0; l < 2; ++l) {
    const Tensor pa = ops::gather_rows(oa.layers[l].p_cls.value(), perm);
    const Tensor pb = ob.layers[l].p_cls.value();
    const Tensor ma = ops::gather_rows(oa.layers[l].mask_logits.value(), perm);
    const Tensor mb = ob.layers[l].mask_logits.value();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1e-12);
    for (std::size_t i = 0; i < ma.size(); ++i) EXPECT_NEAR(ma[i], mb[i], 1e-12);
  }
}

TEST(DecoderForward, CompetitorStepPassesGradCheck) {
  std::mt19937_64 rng(7);
  Model m = init_model(toy_config(), {}, 7);
  const scene::Scene s = tiny_scene(rng, 18, 6);
  Tensor w_cls = random_tensor({4, 4}, rng), w_iou = random_tensor({4, 1}, rng), w_mask = random_tensor({4, 6}, rng);
  const ModelLossFn loss = [&](ParameterBinding& bind) {
    const DecoderOutput out = forward_scene(bind, m, s, Toggles::full());
    Var total = bind.graph().constant(Tensor::scalar(0.0));
    for (const LayerOutput& lo : out.layers) {
      total = ad::add(total, weighted_sum(lo.log_p_cls, w_cls));
      total = ad::add(total, weighted_sum(lo.s_iou, w_iou));
      total = ad::add(total, weighted_sum(lo.mask_logits, w_mask));
    }
    return total;
  };
  const GradCheckResult r = grad_check(m.params, loss);
  EXPECT_GT(r.elements_checked, 1000u);
  EXPECT_LE(r.max_rel_error, 1e-4) << m.params.name(r.worst_input) << "[" << r.worst_element << "]";
}

TEST(DecoderForward, CompetitionStateIsDetachedFromPredictions) {
  std::mt19937_64 rng(8);
  const Model m = init_model(toy_config(), {}, 8);
  const scene::Scene s = tiny_scene(rng, 24, 6);
  Graph g;
  ParameterBinding bind(g, m.params);
  const DecoderOutput out = forward_scene(bind, m, s, Toggles::full());
  ASSERT_TRUE(out.layers[1].qcl_queries.has_value());
  g.backward(ad::sum(*out.layers[1].qcl_queries));
  const GradientSet grads = bind.gradients();
  for (const std::string name : {"head.cls.weight", "head.iou.weight", "head.mask.fc1.weight"}) {
    for (double v : grads[m.params.index(name)].values()) ASSERT_EQ(v, 0.0) << name;
  }
  bool leader_touched = false;
  for (double v : grads[m.params.index("layer2.qcl.leader")].values()) leader_touched = leader_touched || v != 0.0;
  EXPECT_TRUE(leader_touched);
}

}  // namespace
}  // namespace qcomp::decoder
