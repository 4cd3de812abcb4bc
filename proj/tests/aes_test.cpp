#include <gtest/gtest.h>

#include "aesmpfp/priority.hpp"
#include "aesmpfp/sumtree.hpp"
#include "oracles.hpp"

using namespace aesmpfp;

namespace {

FeaturePoint random_point(RngStream& rng, size_t map_dim, size_t vec_dim) {
  FeaturePoint p;
  p.map.resize(map_dim);
  p.vec.resize(vec_dim);
  for (double& v : p.map) v = rng.uniform01() < 0.3 ? 1.0 : 0.0;
  for (double& v : p.vec) v = rng.uniform(-2.0, 2.0);
  return p;
}

oracle::Point to_oracle(const FeaturePoint& p) { return {p.map, p.vec}; }

}  // namespace

TEST(FeatureDistance, IdenticalPointsAreAtZero) {
  RngStream rng(1);
  FeaturePoint a = random_point(rng, 12, 5);
  EXPECT_DOUBLE_EQ(feature_distance(a, a, 1.0), 0.0);
}

TEST(FeatureDistance, SingleCellMapDifferenceIsItsL1) {
  FeaturePoint a{{0, 0, 0, 0}, {1, 1}};
  FeaturePoint b{{0, 1, 0, 0}, {1, 1}};
  EXPECT_DOUBLE_EQ(feature_distance(a, b, 1.0), 1.0);
}

TEST(FeatureDistance, AntiparallelVectorsContributeTwoLambda) {
  FeaturePoint a{{0.5, 0.5}, {1, 0}};
  FeaturePoint b{{0.5, 0.5}, {-1, 0}};
  EXPECT_DOUBLE_EQ(feature_distance(a, b, 2.0), 4.0);
}

TEST(FeatureDistance, SymmetricAndNonNegative) {
  RngStream rng(2);
  for (int t = 0; t < 50; ++t) {
    FeaturePoint a = random_point(rng, 8, 4), b = random_point(rng, 8, 4);
    const double dab = feature_distance(a, b, 1.0);
    EXPECT_DOUBLE_EQ(dab, feature_distance(b, a, 1.0));
    EXPECT_GE(dab, 0.0);
  }
}

TEST(FeatureDistance, ZeroNormVectorThrows) {
  FeaturePoint a{{0}, {0, 0}};
  FeaturePoint b{{0}, {1, 0}};
  EXPECT_THROW(feature_distance(a, b, 1.0), ZeroVector);
  EXPECT_THROW(feature_distance(b, a, 1.0), ZeroVector);
  // The documented convention used inside lof_scores instead:
  EXPECT_DOUBLE_EQ(feature_distance_conv(a, b, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(feature_distance_conv(a, a, 1.0), 0.0);
}

TEST(Lof, IdenticalPointsScoreExactlyOne) {
  FeaturePoint p{{0.3, 0.7}, {1.0, -1.0}};
  std::vector<FeaturePoint> pts(8, p);
  for (size_t k : {1ul, 3ul, 5ul}) {
    std::vector<double> scores = lof_scores(pts, k, 1.0);
    for (double s : scores) EXPECT_DOUBLE_EQ(s, 1.0);
  }
}

TEST(Lof, LatticeWithFarOutlier) {
  // 20 points evenly spaced along the L1 map axis plus one far outlier.
  // Identical state vectors keep the cosine term out of the picture.
  std::vector<FeaturePoint> pts;
  for (int i = 0; i < 20; ++i)
    pts.push_back({{0.1 * i}, {1.0, 0.0}});
  pts.push_back({{10.0}, {1.0, 0.0}});
  std::vector<double> scores = lof_scores(pts, 3, 1.0);
  EXPECT_GT(scores.back(), 10.0);
  for (size_t i = 0; i + 1 < scores.size(); ++i)
    EXPECT_LT(scores[i], scores.back()) << "lattice point " << i;
  for (size_t i = 4; i < 16; ++i)
    EXPECT_NEAR(scores[i], 1.0, 0.1) << "interior point " << i;
}

TEST(Lof, MatchesNaiveOracleOnRandomSets) {
  RngStream rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const size_t n = 8 + rng.uniform_index(57);  // 8..64
    std::vector<FeaturePoint> pts;
    std::vector<oracle::Point> opts;
    for (size_t i = 0; i < n; ++i) {
      pts.push_back(random_point(rng, 10, 6));
      opts.push_back(to_oracle(pts.back()));
    }
    for (size_t k : {3ul, 5ul, 10ul}) {
      if (n <= k) continue;
      for (double lambda : {0.5, 1.0, 2.0}) {
        std::vector<double> got = lof_scores(pts, k, lambda);
        std::vector<double> want = oracle::lof(opts, k, lambda);
        ASSERT_EQ(got.size(), want.size());
        for (size_t i = 0; i < n; ++i) {
          const double rel = std::abs(got[i] - want[i]) / std::max(1.0, std::abs(want[i]));
          EXPECT_LT(rel, 1e-9) << "n=" << n << " k=" << k << " i=" << i;
          EXPECT_GT(got[i], 0.0);
        }
      }
    }
  }
}

TEST(Lof, RejectsTooFewPoints) {
  std::vector<FeaturePoint> pts(4, FeaturePoint{{}, {1.0}});
  EXPECT_THROW(lof_scores(pts, 4, 1.0), Error);
  EXPECT_THROW(lof_scores(pts, 0, 1.0), Error);
}

TEST(Priority, HingeAtLofOneGivesExactZero) {
  RngStream rng(4);
  PriorityWeights w;
  for (int t = 0; t < 10000; ++t) {
    PrioritySignals s;
    s.p_ice = rng.uniform(0.0, 1.0);
    s.p_tc = rng.uniform(0.0, 3.0);
    s.ik_flag = false;
    s.p_per = 0.0;
    w.w1 = rng.uniform(0.0, 2.0);
    w.w2 = rng.uniform(0.0, 2.0);
    w.w3 = rng.uniform(0.0, 2.0);
    EXPECT_EQ(total_priority(s, w), 0.0);
  }
}

TEST(Priority, SpecifiedArithmeticExamples) {
  PriorityWeights w{1, 1, 1};
  PrioritySignals a{1.0, 1.0, false, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(total_priority(a, w), 0.0);
  PrioritySignals b{1.5, 1.0, true, 0.2, 0.0};
  EXPECT_DOUBLE_EQ(total_priority(b, w), 1.7);
}

TEST(Priority, MonotoneInEachSignal) {
  RngStream rng(5);
  for (int t = 0; t < 2000; ++t) {
    PriorityWeights w{rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0),
                      rng.uniform(0.1, 2.0)};
    PrioritySignals s;
    s.p_ice = rng.uniform(0.0, 3.0);
    s.p_tc = rng.uniform(0.0, 2.0);
    s.ik_flag = rng.uniform01() < 0.5;
    s.p_per = rng.uniform(0.0, 1.0);
    const double base = total_priority(s, w);

    PrioritySignals up = s;
    up.p_ice += rng.uniform(0.0, 1.0);
    EXPECT_GE(total_priority(up, w), base);
    up = s;
    up.p_per += rng.uniform(0.0, 1.0);
    EXPECT_GE(total_priority(up, w), base);
    up = s;
    up.ik_flag = true;
    EXPECT_GE(total_priority(up, w), base);
  }
}

TEST(Priority, ComputePrioritiesNormalizesByRunningMax) {
  std::vector<FeaturePoint> obs(4, FeaturePoint{{}, {1.0, 0.5}});
  std::vector<bool> ik(4, false);
  std::vector<double> losses{2.0, 1.0, 4.0, 0.0};
  // k >= n so p_ice falls back to 1 and only the p_per channel is active.
  auto sig = compute_priorities(obs, ik, losses, {0, 0, 1}, 10, 1.0, 1.0);
  ASSERT_EQ(sig.size(), 4u);
  EXPECT_DOUBLE_EQ(sig[0].p_per, 1.0);
  EXPECT_DOUBLE_EQ(sig[1].p_per, 0.5);
  EXPECT_DOUBLE_EQ(sig[2].p_per, 1.0);
  EXPECT_DOUBLE_EQ(sig[3].p_per, 0.0);
  EXPECT_DOUBLE_EQ(sig[2].p_total, 1.0);
}

TEST(Priority, PureModelErrorWeightsMatchPrefixMaxOracle) {
  RngStream rng(6);
  const size_t n = 30;
  std::vector<FeaturePoint> obs;
  std::vector<bool> ik;
  std::vector<double> losses;
  for (size_t i = 0; i < n; ++i) {
    obs.push_back(random_point(rng, 6, 4));
    ik.push_back(rng.uniform01() < 0.3);
    losses.push_back(i < 3 ? 0.0 : rng.uniform(0.0, 5.0));
  }
  auto sig = compute_priorities(obs, ik, losses, {0, 0, 1}, 5, 1.0, 1.0);
  double prefix_max = 0.0;
  for (size_t i = 0; i < n; ++i) {
    prefix_max = std::max(prefix_max, losses[i]);
    const double want = prefix_max == 0.0 ? 0.0 : losses[i] / prefix_max;
    EXPECT_DOUBLE_EQ(sig[i].p_per, want) << "transition " << i;
    EXPECT_DOUBLE_EQ(sig[i].p_total, want) << "transition " << i;
    EXPECT_LE(sig[i].p_per, 1.0);
  }
}

TEST(Priority, ZeroNormObservationsUseConventionNotThrow) {
  std::vector<FeaturePoint> obs(6, FeaturePoint{{0.0}, {0.0, 0.0}});
  obs[3].vec = {1.0, 0.0};
  std::vector<bool> ik(6, false);
  std::vector<double> losses(6, 0.0);
  EXPECT_NO_THROW(compute_priorities(obs, ik, losses, {1, 1, 1}, 2, 1.0, 1.0));
}

TEST(Fragments, UniformPrioritiesTileFromTheStart) {
  std::vector<PrioritySignals> sig(40);
  for (auto& s : sig) s.p_total = 0.5;
  auto frags = extract_fragments(sig, 16, 8);
  ASSERT_EQ(frags.size(), 2u);  // floor(40 / 16)
  EXPECT_EQ(frags[0].start, 0u);
  EXPECT_EQ(frags[1].start, 16u);
  for (const Fragment& f : frags) EXPECT_EQ(f.length, 16u);
}

TEST(Fragments, SpikeIsCapturedByEarliestMaximalWindow) {
  std::vector<PrioritySignals> sig(80);
  sig[40].p_total = 3.0;
  auto frags = extract_fragments(sig, 16, 1);
  ASSERT_EQ(frags.size(), 1u);
  EXPECT_LE(frags[0].start, 40u);
  EXPECT_GT(frags[0].start + frags[0].length, 40u);
  // Earliest window covering the spike: start = 40 - 15 = 25.
  EXPECT_EQ(frags[0].start, 25u);
  EXPECT_DOUBLE_EQ(frags[0].total_priority, 3.0);
}

TEST(Fragments, ShortEpisodeStoredWhole) {
  std::vector<PrioritySignals> sig(5);
  for (size_t i = 0; i < 5; ++i) sig[i].p_total = static_cast<double>(i);
  auto frags = extract_fragments(sig, 16, 4);
  ASSERT_EQ(frags.size(), 1u);
  EXPECT_EQ(frags[0].start, 0u);
  EXPECT_EQ(frags[0].length, 5u);
  EXPECT_DOUBLE_EQ(frags[0].total_priority, 10.0);
}

TEST(Fragments, MatchesExhaustiveOracleAndNeverOverlaps) {
  RngStream rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t n = 1 + rng.uniform_index(120);
    const size_t W = 1 + rng.uniform_index(20);
    const size_t maxf = 1 + rng.uniform_index(5);
    std::vector<PrioritySignals> sig(n);
    std::vector<double> raw(n);
    for (size_t i = 0; i < n; ++i) {
      // Mix of ties and distinct values to exercise tie-breaking.
      raw[i] = rng.uniform01() < 0.3 ? 1.0 : rng.uniform(0.0, 2.0);
      sig[i].p_total = raw[i];
    }
    auto got = extract_fragments(sig, W, maxf);
    auto want = oracle::best_windows(raw, W, maxf);
    ASSERT_EQ(got.size(), want.size()) << "n=" << n << " W=" << W;
    std::vector<bool> seen(n, false);
    for (size_t f = 0; f < got.size(); ++f) {
      EXPECT_EQ(got[f].start, want[f].start);
      EXPECT_EQ(got[f].length, want[f].length);
      EXPECT_DOUBLE_EQ(got[f].total_priority, want[f].score);
      ASSERT_LE(got[f].start + got[f].length, n);
      for (size_t i = got[f].start; i < got[f].start + got[f].length; ++i) {
        EXPECT_FALSE(seen[i]) << "overlap at " << i;
        seen[i] = true;
      }
    }
  }
}

TEST(SumTree, HandTracedPrefixDescent) {
  SumTree tree(4);
  for (uint64_t h = 0; h < 4; ++h) tree.insert(h, static_cast<double>(h + 1));
  EXPECT_DOUBLE_EQ(tree.total(), 10.0);
  // Cumulative leaf bounds: [0,1) [1,3) [3,6) [6,10).
  EXPECT_EQ(tree.sample(5.5).slot, 2u);
  EXPECT_DOUBLE_EQ(tree.sample(5.5).priority, 3.0);
  EXPECT_EQ(tree.sample(0.0).slot, 0u);
  EXPECT_EQ(tree.sample(1.0).slot, 1u);
  EXPECT_EQ(tree.sample(9.999).slot, 3u);
}

TEST(SumTree, UpdateRepairsAncestorSums) {
  SumTree tree(4);
  for (uint64_t h = 0; h < 4; ++h) tree.insert(h, static_cast<double>(h + 1));
  tree.update(0, 10.0);
  EXPECT_DOUBLE_EQ(tree.total(), 19.0);
  EXPECT_DOUBLE_EQ(tree.max_child_sum_error(), 0.0);
}

TEST(SumTree, RingOverwriteSemantics) {
  SumTree tree(4);
  for (uint64_t h = 0; h < 6; ++h) tree.insert(100 + h, 1.0);
  EXPECT_EQ(tree.size(), 4u);
  EXPECT_EQ(tree.write_cursor(), 2u);
  EXPECT_EQ(tree.handle_at(0), 104u);  // fifth insert wrapped to slot 0
  EXPECT_EQ(tree.handle_at(1), 105u);
  EXPECT_EQ(tree.handle_at(2), 102u);
  EXPECT_DOUBLE_EQ(tree.total(), 4.0);
}

TEST(SumTree, ErrorsOnBadUse) {
  EXPECT_THROW(SumTree(3), ConfigError);
  EXPECT_THROW(SumTree(0), ConfigError);
  SumTree tree(4);
  EXPECT_THROW(tree.sample(0.0), EmptyTree);
  EXPECT_THROW(tree.update(1, 1.0), Error);
  tree.insert(1, 1.0);
  EXPECT_THROW(tree.insert(2, -0.5), Error);
  EXPECT_THROW(tree.insert(2, std::nan("")), Error);
}

TEST(SumTree, ConsistentAfterManyRandomOperations) {
  RngStream rng(8);
  SumTree tree(256);
  for (int op = 0; op < 10000; ++op) {
    if (tree.size() > 0 && rng.uniform01() < 0.5) {
      const size_t slot = rng.uniform_index(tree.size());
      tree.update(slot, rng.uniform(0.0, 5.0));
    } else {
      tree.insert(op, rng.uniform(0.0, 5.0));
    }
  }
  EXPECT_LE(tree.max_child_sum_error(), 1e-6);
  double leaf_sum = 0.0;
  for (size_t s = 0; s < tree.capacity(); ++s) leaf_sum += tree.priority_at(s);
  EXPECT_NEAR(tree.total(), leaf_sum, 1e-9);
}

TEST(SumTree, SamplingFrequenciesAreProportional) {
  RngStream rng(9);
  SumTree tree(8);
  std::vector<double> prios{0.5, 2.0, 1.0, 4.0, 0.25, 1.25, 3.0, 0.0};
  for (size_t i = 0; i < prios.size(); ++i) tree.insert(i, prios[i]);
  const int draws = 100000;
  std::vector<int> counts(8, 0);
  for (int d = 0; d < draws; ++d)
    ++counts[tree.sample(rng.uniform01() * tree.total()).slot];
  for (size_t i = 0; i < prios.size(); ++i) {
    const double p = prios[i] / tree.total();
    const double sigma = std::sqrt(p * (1.0 - p) * draws);
    EXPECT_NEAR(counts[i], p * draws, 3.0 * sigma + 1e-9) << "leaf " << i;
  }
}
