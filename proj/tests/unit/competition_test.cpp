#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "qcomp/competition/competition.hpp"
#include "qcomp/errors.hpp"
#include "qcomp/tensor/grad_check.hpp"
#include "qcomp/tensor/ops.hpp"
#include "test_util.hpp"

namespace qcomp::competition {
namespace {

using qcomp::testing::random_tensor;
using qcomp::testing::weighted_sum;

// Symmetric, unit diagonal; coarse values make ties common.
Tensor random_iou(std::size_t n, std::mt19937_64& rng, bool coarse) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor m({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    m(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = u(rng);
      if (coarse) v = std::floor(v * 4.0) / 4.0;
      m(i, j) = m(j, i) = v;
    }
  }
  return m;
}

Tensor random_k(std::size_t n, std::mt19937_64& rng, bool coarse) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor k({n});
  for (double& v : k.values()) v = coarse ? std::floor(u(rng) * 3.0) / 3.0 : u(rng);
  return k;
}

TEST(CompetitionScore, Examples) {
  EXPECT_DOUBLE_EQ(competition_score(Tensor::matrix({{0.2, 0.8}}), Tensor::vector({0.5}))[0], 0.4);
  EXPECT_DOUBLE_EQ(competition_score(Tensor::matrix({{0.2, 0.8}}), Tensor::vector({0.0}))[0], 0.0);
  EXPECT_DOUBLE_EQ(competition_score(Tensor::matrix({{0.25, 0.25, 0.25, 0.25}}), Tensor::vector({1.0}))[0], 0.25);
}

TEST(CompetitionScore, StateDropsTheNoObjectColumn) {
  // Object columns [0.2, 0.7], no-object 0.1: k = 0.7 · 0.5.
  const CompetitionState s = compute_state(Tensor::matrix({{0.2, 0.7, 0.1}, {0.1, 0.1, 0.8}}), Tensor::vector({0.5, 1.0}),
                                           Tensor::matrix({{1, -1}, {-1, 1}}), 0.5, CompetitionConfig{});
  EXPECT_DOUBLE_EQ(s.k[0], 0.35);
  EXPECT_DOUBLE_EQ(s.k[1], 0.1);
}

TEST(PairwiseRank, Examples) {
  const PairwiseRank tie = pairwise_rank(Tensor::vector({0.4, 0.4}));
  for (int v : tie.rank.data) EXPECT_EQ(v, 1);
  const PairwiseRank split = pairwise_rank(Tensor::vector({0.9, 0.1}));
  EXPECT_EQ(split.rank(0, 1), 1);
  EXPECT_EQ(split.rank(1, 0), -1);
  EXPECT_DOUBLE_EQ(split.score(0, 1), 0.8);
}

TEST(PairwiseRank, AntisymmetricScoresAndPositiveDiagonal) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 32;
    const PairwiseRank r = pairwise_rank(random_k(n, rng, trial % 2 == 0));
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(r.rank(i, i), 1);
      for (std::size_t j = 0; j < n; ++j) {
        ASSERT_EQ(r.score(i, j), -r.score(j, i));
        ASSERT_EQ(r.rank(i, j), r.score(i, j) >= 0.0 ? 1 : -1);
      }
    }
  }
}

TEST(PairwiseMaskIou, Examples) {
  const Tensor same = pairwise_mask_iou(Tensor::matrix({{3, -3, 3}, {3, -3, 3}}), 0.5);
  EXPECT_EQ(same, Tensor::matrix({{1, 1}, {1, 1}}));
  const Tensor disjoint = pairwise_mask_iou(Tensor::matrix({{3, -3}, {-3, 3}}), 0.5);
  EXPECT_EQ(disjoint(0, 1), 0.0);
  // {0,1,2} vs {1,2,3}: 2 / 4.
  const Tensor overlap = pairwise_mask_iou(Tensor::matrix({{5, 5, 5, -5}, {-5, 5, 5, 5}}), 0.5);
  EXPECT_DOUBLE_EQ(overlap(0, 1), 0.5);
  const Tensor empty = pairwise_mask_iou(Tensor::matrix({{-5, -5}, {-5, -5}}), 0.5);
  EXPECT_EQ(empty, Tensor::matrix({{1, 0}, {0, 1}}));
  // sigmoid(0) = 0.5 sits on the threshold and counts as foreground.
  EXPECT_DOUBLE_EQ(pairwise_mask_iou(Tensor::matrix({{0.0, -1}, {0.0, 1}}), 0.5)(0, 1), 0.5);
}

TEST(StrongestCompetitor, Examples) {
  EXPECT_EQ(strongest_competitor(Tensor::matrix({{1, 0.3, 0.7}, {0.3, 1, 0.1}, {0.7, 0.1, 1}})),
            (std::vector<std::size_t>{2, 0, 0}));
  EXPECT_EQ(strongest_competitor(Tensor::identity(4)), (std::vector<std::size_t>{1, 0, 0, 0}));
  EXPECT_EQ(strongest_competitor(Tensor::matrix({{1}})), (std::vector<std::size_t>{0}));
}

TEST(StrongestCompetitor, MatchesExhaustiveScanOn1000Instances) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial) % 31;
    const Tensor iou = random_iou(n, rng, trial % 3 == 0);
    const auto b = strongest_competitor(iou);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<double, std::size_t>> cands;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) cands.emplace_back(-iou(i, j), j);
      }
      std::sort(cands.begin(), cands.end());
      ASSERT_EQ(b[i], cands.front().second) << "trial " << trial << " row " << i;
    }
  }
}

TEST(LeaderLaggard, Examples) {
  const PairwiseRank r = pairwise_rank(Tensor::vector({0.9, 0.1}));
  const LeaderLaggard ll = leader_laggard_lists({1, 0}, r.rank);
  EXPECT_EQ(ll.leader, (std::vector<std::size_t>{0, 0}));
  EXPECT_EQ(ll.laggard, (std::vector<std::size_t>{1, 1}));
  EXPECT_EQ(ll.c_cq, (std::vector<int>{1, -1}));

  const PairwiseRank tied = pairwise_rank(Tensor::vector({0.3, 0.3, 0.3}));
  const std::vector<std::size_t> b{2, 0, 0};
  const LeaderLaggard all = leader_laggard_lists(b, tied.rank);
  EXPECT_EQ(all.leader, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(all.laggard, b);
}

TEST(LeaderLaggard, MatchesPerElementOracleOn1000Instances) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial) % 32;
    const Tensor k = random_k(n, rng, trial % 2 == 1);
    const auto b = strongest_competitor(random_iou(n, rng, trial % 3 == 0));
    const LeaderLaggard ll = leader_laggard_lists(b, pairwise_rank(k).rank);
    for (std::size_t i = 0; i < n; ++i) {
      const bool i_leads = k[i] - k[b[i]] >= 0.0;
      ASSERT_EQ(ll.c_cq[i], i_leads ? 1 : -1);
      ASSERT_EQ(ll.leader[i], i_leads ? i : b[i]);
      ASSERT_EQ(ll.laggard[i], i_leads ? b[i] : i);
      ASSERT_EQ(ll.leader[i] == i, k[i] >= k[b[i]]);
    }
  }
}

TEST(RelativeState, Examples) {
  IntMatrix pos(1, 1, 1), neg(1, 1, -1);
  EXPECT_DOUBLE_EQ(relative_state(pos, Tensor::matrix({{0.7}}))(0, 0), 0.7);
  EXPECT_DOUBLE_EQ(relative_state(neg, Tensor::matrix({{1.0}}))(0, 0), -1.0);
  EXPECT_EQ(relative_state(neg, Tensor::matrix({{0.0}}))(0, 0), 0.0);
}

TEST(QuantizeState, Examples) {
  EXPECT_EQ(quantize_state(Tensor::matrix({{0.0}}), 0.1, 24)(0, 0), 12);
  EXPECT_EQ(quantize_state(Tensor::matrix({{-1.0}}), 0.1, 24)(0, 0), 2);
  EXPECT_EQ(quantize_state(Tensor::matrix({{1.0}}), 0.1, 24)(0, 0), 22);
  const IntMatrix clamped = quantize_state(Tensor::matrix({{50.0, -50.0}}), 0.1, 24);
  EXPECT_EQ(clamped.data, (std::vector<int>{23, 0}));
}

TEST(QuantizeState, SweepStaysInsideTable) {
  Tensor r({1, 10001});
  for (std::size_t i = 0; i <= 10000; ++i) r(0, i) = -1.0 + 2.0 * static_cast<double>(i) / 10000.0;
  const IntMatrix q = quantize_state(r, 0.1, 24);
  for (int v : q.data) {
    ASSERT_GE(v, 2);
    ASSERT_LE(v, 22);
  }
  EXPECT_EQ(q.data.front(), 2);
  EXPECT_EQ(q.data.back(), 22);
  std::mt19937_64 rng(8);
  const IntMatrix rnd = quantize_state(random_tensor({50, 50}, rng), 0.1, 24);
  for (int v : rnd.data) {
    ASSERT_GE(v, 0);
    ASSERT_LT(v, 24);
  }
}

TEST(CompetitionState, InvariantsHoldOnRandomPredictions) {
  std::mt19937_64 rng(99);
  CompetitionConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + trial % 32, m = 1 + trial % 17, c = 2 + trial % 4;
    const Tensor p = ops::softmax_axis(random_tensor({n, c}, rng, -3, 3), 1);
    const Tensor s = ops::sigmoid(random_tensor({n}, rng, -3, 3));
    const CompetitionState st = compute_state(p, s, random_tensor({n, m}, rng, -2, 2), 0.5, cfg);
    EXPECT_NO_THROW(check_invariants(st, cfg.table_size));
  }
}

TEST(CompetitionConfig, Validation) {
  CompetitionConfig cfg;
  cfg.table_size = 7;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = CompetitionConfig{};
  cfg.quant_step = 0.0;
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(RelationshipBias, Examples) {
  Graph g;
  IntMatrix idx(2, 2, 3);
  const Var zero = relationship_bias(g.constant(Tensor({24, 2})), idx, g.constant(Tensor::matrix({{1, 2}, {3, 4}})),
                                     g.constant(Tensor::matrix({{5, 6}, {7, 8}})));
  EXPECT_EQ(zero.value(), Tensor({2, 2}));

  Tensor table({24, 1});
  table(5, 0) = 2.0;
  const Var b = relationship_bias(g.constant(table), IntMatrix(1, 1, 5), g.constant(Tensor::matrix({{0.5}})),
                                  g.constant(Tensor::matrix({{1.5}})));
  EXPECT_DOUBLE_EQ(b.value()(0, 0), 4.0);

  EXPECT_THROW(relationship_bias(g.constant(table), IntMatrix(1, 1, 24), g.constant(Tensor::matrix({{0.5}})),
                                 g.constant(Tensor::matrix({{1.5}}))),
               ContractError);
}

TEST(RelationshipBias, MatchesPerPairLookup) {
  std::mt19937_64 rng(5);
  Graph g;
  const Tensor t = random_tensor({24, 3}, rng), vq = random_tensor({5, 3}, rng), vk = random_tensor({5, 3}, rng);
  IntMatrix idx(5, 5);
  std::uniform_int_distribution<int> pick(0, 23);
  for (int& v : idx.data) v = pick(rng);
  const Tensor out = relationship_bias(g.constant(t), idx, g.constant(vq), g.constant(vk)).value();
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double expect = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double w = t(static_cast<std::size_t>(idx(i, j)), c);
        expect += w * vq(i, c) + w * vk(j, c);
      }
      EXPECT_NEAR(out(i, j), expect, 1e-12);
    }
  }
}

TEST(RelationshipBias, GradientMatchesFiniteDifferencesAndSkipsUnusedRows) {
  std::mt19937_64 rng(6);
  IntMatrix idx(4, 4);
  for (std::size_t i = 0; i < 16; ++i) idx.data[i] = static_cast<int>(2 + (i * 7) % 5);  // rows 2..6 only
  const Tensor w = random_tensor({4, 4}, rng);
  const ScalarFn f = [&](Graph&, std::span<const Var> in) {
    return weighted_sum(relationship_bias(in[0], idx, in[1], in[2]), w);
  };
  const std::vector<Tensor> point{random_tensor({24, 3}, rng), random_tensor({4, 3}, rng), random_tensor({4, 3}, rng)};
  EXPECT_LE(grad_check(f, point).max_rel_error, 1e-6);

  Graph g;
  const Var t = g.variable(point[0]);
  g.backward(f(g, std::vector<Var>{t, g.variable(point[1]), g.variable(point[2])}));
  const Tensor gt = g.grad(t);
  for (std::size_t r = 0; r < 24; ++r) {
    const bool used = r >= 2 && r <= 6;
    if (used) continue;
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(gt(r, c), 0.0) << r;
  }
}

TEST(RankModulate, WorkedExample) {
  Graph g;
  // X = Q Fᵀ with Q = [[1],[3]], F = [[2],[-1]], no scaling.
  const Var x = ad::matmul_nt(g.constant(Tensor::matrix({{1}, {3}})), g.constant(Tensor::matrix({{2}, {-1}})));
  EXPECT_EQ(x.value(), Tensor::matrix({{2, -1}, {6, -3}}));
  EXPECT_EQ(rank_modulate(x).value(), Tensor::matrix({{0, -1}, {6, 0}}));
  const Tensor z = rank_attention_weights(x).value();
  // Frozen from an independent double-precision evaluation of softmax([0,-1]) and softmax([6,0]).
  EXPECT_NEAR(z(0, 0), 0.7310585786300049, 1e-12);
  EXPECT_NEAR(z(0, 1), 0.2689414213699951, 1e-12);
  EXPECT_NEAR(z(1, 0), 0.9975273768433653, 1e-12);
  EXPECT_NEAR(z(1, 1), 0.0024726231566347, 1e-12);
}

TEST(RankModulate, SingleQueryAndConstantColumnsReduceToSoftmax) {
  std::mt19937_64 rng(12);
  Graph g;
  const Var one = g.constant(random_tensor({1, 9}, rng, -4, 4));
  EXPECT_EQ(rank_modulate(one).value(), one.value());
  EXPECT_EQ(rank_attention_weights(one).value(), ad::softmax_axis(one, 1).value());
  const Var flat = g.constant(Tensor::matrix({{2, 1}, {2, 5}}));
  const Tensor mod = rank_modulate(flat).value();
  EXPECT_EQ(mod(0, 0), 2.0);
  EXPECT_EQ(mod(1, 0), 2.0);
}

TEST(RankModulate, ColumnExtremaProperties) {
  std::mt19937_64 rng(13);
  Graph g;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 20, m = 1 + trial % 13;
    const Tensor x = random_tensor({n, m}, rng, -5, 5);
    const Tensor mod = rank_modulate(g.constant(x)).value();
    const auto hi = ops::reduce_extrema_axis(x, 0, ops::Extremum::kMax);
    const auto lo = ops::reduce_extrema_axis(x, 0, ops::Extremum::kMin);
    for (std::size_t c = 0; c < m; ++c) {
      const double range = hi.values[c] - lo.values[c];
      ASSERT_GT(range, 0.0);
      EXPECT_EQ(mod(hi.indices[c], c), x(hi.indices[c], c));
      EXPECT_EQ(mod(lo.indices[c], c), 0.0);
      EXPECT_EQ((x(hi.indices[c], c) - lo.values[c]) / range, 1.0);
      double best = -1e300;
      std::size_t arg = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double norm = (x(i, c) - lo.values[c]) / range;
        EXPECT_GE(norm, 0.0);
        EXPECT_LE(norm, 1.0);
        if (norm > best) {
          best = norm;
          arg = i;
        }
      }
      EXPECT_EQ(arg, hi.indices[c]);
    }
    const Tensor z = rank_attention_weights(g.constant(x)).value();
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < m; ++c) s += z(i, c);
      ASSERT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(RankModulate, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + trial % 5, m = 1 + trial % 4;
    const Tensor w = random_tensor({n, m}, rng);
    const ScalarFn f = [&](Graph&, std::span<const Var> in) { return weighted_sum(rank_attention_weights(in[0]), w); };
    EXPECT_LE(grad_check(f, {random_tensor({n, m}, rng, -2, 2)}).max_rel_error, 1e-6) << trial;
  }
}

TEST(RankCrossAttention, SingleQueryEqualsSoftmaxAttentionBitwise) {
  std::mt19937_64 rng(21);
  ParameterSet params;
  const nn::AttentionRef ref = nn::add_attention(params, "xattn", 8, rng);
  Graph g;
  ParameterBinding bind(g, params);
  const Var q = g.constant(random_tensor({1, 8}, rng));
  const Var f = g.constant(random_tensor({6, 8}, rng));
  const auto rank = rank_cross_attention(bind, ref, q, f, 2, 4);
  const auto plain = nn::multi_head_attention(bind, ref, q, f, 2, 4,
                                              [](std::size_t, Var logits, Var, Var) { return ad::softmax_axis(logits, 1); });
  EXPECT_EQ(rank.out.value(), plain.out.value());
  ASSERT_EQ(rank.weights.size(), 2u);
  EXPECT_EQ(rank.weights[1].value(), plain.weights[1].value());
}

TEST(Qcl, ZeroWeightsGiveZeroQueries) {
  std::mt19937_64 rng(31);
  ParameterSet params;
  CompetitionConfig cfg;
  const auto ref = add_competition_layer(params, "layer2", 3, 4, 2, 2, cfg, rng);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.name(i).find("qcl.update") != std::string::npos) params.value(i) = Tensor(params.value(i).shape());
  }
  Graph g;
  ParameterBinding bind(g, params);
  const Var out = qcl_update(bind, ref, g.constant(random_tensor({3, 4}, rng)), {0, 0, 1}, {1, 2, 2});
  EXPECT_EQ(out.value(), Tensor({3, 4}));
}

TEST(Qcl, SelectingProjectionIsIdentity) {
  std::mt19937_64 rng(32);
  ParameterSet params;
  CompetitionConfig cfg;
  cfg.fusion = FusionShape::kLinear;
  const std::size_t d = 4;
  const auto ref = add_competition_layer(params, "layer2", 3, d, 2, 2, cfg, rng);
  Tensor select({d, 2 * d});
  for (std::size_t i = 0; i < d; ++i) select(i, i) = 1.0;
  params.value(ref.update.first.weight) = select;
  Graph g;
  ParameterBinding bind(g, params);
  const Tensor q = random_tensor({3, d}, rng);
  EXPECT_EQ(qcl_update(bind, ref, g.constant(q), {0, 1, 1}, {2, 0, 2}).value(), q);
}

TEST(Qcl, GradientReachesOnlyGatheredEmbeddingRows) {
  std::mt19937_64 rng(33);
  ParameterSet params;
  CompetitionConfig cfg;
  const auto ref = add_competition_layer(params, "layer2", 5, 4, 2, 2, cfg, rng);
  const Tensor q = random_tensor({5, 4}, rng);
  const Tensor w = random_tensor({5, 4}, rng);
  const std::vector<std::size_t> leader{0, 0, 2, 3, 3}, laggard{1, 4, 1, 1, 4};
  const ModelLossFn f = [&](ParameterBinding& bind) {
    return weighted_sum(qcl_update(bind, ref, bind.graph().constant(q), leader, laggard), w);
  };
  EXPECT_LE(grad_check(params, f).max_rel_error, 1e-6);

  Graph g;
  ParameterBinding bind(g, params);
  g.backward(f(bind));
  const GradientSet grads = bind.gradients();
  auto row_zero = [](const Tensor& t, std::size_t r) {
    for (std::size_t c = 0; c < t.cols(); ++c) {
      if (t(r, c) != 0.0) return false;
    }
    return true;
  };
  for (std::size_t r = 0; r < 5; ++r) {
    const bool le_used = std::find(leader.begin(), leader.end(), r) != leader.end();
    const bool la_used = std::find(laggard.begin(), laggard.end(), r) != laggard.end();
    EXPECT_EQ(row_zero(grads[ref.leader], r), !le_used) << r;
    EXPECT_EQ(row_zero(grads[ref.laggard], r), !la_used) << r;
  }
}

TEST(CompetitionLayer, ParameterNamesAndShapes) {
  std::mt19937_64 rng(40);
  ParameterSet params;
  const auto ref = add_competition_layer(params, "layer3", 6, 8, 2, 4, CompetitionConfig{}, rng);
  EXPECT_EQ(params.value("layer3.qcl.leader").shape(), (Shape{6, 8}));
  EXPECT_EQ(params.value("layer3.rre.table.h1").shape(), (Shape{24, 4}));
  EXPECT_EQ(params.value("layer3.qcl.fuse.fc1.weight").shape(), (Shape{8, 16}));
  EXPECT_FALSE(params.contains("layer3.qcl.fuse.fc2.weight"));
  EXPECT_FALSE(ref.update.two_layer);
  EXPECT_EQ(ref.tables.size(), 2u);
}

TEST(CompetitionLayer, MlpFusionHasTwoLayers) {
  std::mt19937_64 rng(41);
  ParameterSet params;
  CompetitionConfig cfg;
  cfg.fusion = FusionShape::kMlp;
  const auto ref = add_competition_layer(params, "layer2", 6, 8, 2, 4, cfg, rng);
  EXPECT_EQ(params.value("layer2.qcl.update.fc1.weight").shape(), (Shape{8, 16}));
  EXPECT_EQ(params.value("layer2.qcl.update.fc2.weight").shape(), (Shape{8, 8}));
  EXPECT_TRUE(ref.update.two_layer);
}

}  // namespace
}  // namespace qcomp::competition
