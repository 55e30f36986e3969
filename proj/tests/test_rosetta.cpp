#include <gtest/gtest.h>

#include <algorithm>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "vtcd/rosetta.hpp"

using namespace vtcd;

namespace {

Grid cells_on(std::int64_t n, std::initializer_list<std::pair<int, int>> ranges) {
  Grid g(n, 0);
  for (auto [lo, hi] : ranges)
    for (int i = lo; i <= hi; ++i) g[i] = 1;
  return g;
}

Concept line_concept(const std::string& model, int index, const Grid& g) {
  Concept c;
  c.id = {SiteId::residual(model, 1), index};
  c.support.push_back(encode_rle("clip", {1, 1, static_cast<std::int64_t>(g.size())}, g));
  return c;
}

ModelConcepts line_model(const std::string& id, const std::vector<Grid>& grids) {
  ModelConcepts m;
  m.model_id = id;
  m.video_ids = {"clip"};
  m.grid = {1, 1, static_cast<std::int64_t>(grids[0].size())};
  for (std::size_t i = 0; i < grids.size(); ++i) {
    m.concepts.push_back(line_concept(id, static_cast<int>(i), grids[i]));
    m.importance.push_back(1.0);
  }
  return m;
}

std::set<vtcd::oracle::Tuple> as_tuples(const std::vector<RosettaTuple>& tuples) {
  std::set<vtcd::oracle::Tuple> out;
  for (const auto& t : tuples) out.insert({t.models, t.concepts, t.r_score});
  return out;
}

}  // namespace

TEST(MiningParams, Ranges) {
  MiningParams p;
  EXPECT_DOUBLE_EQ(p.epsilon, 0.15);
  EXPECT_DOUBLE_EQ(p.delta, 0.15);
  EXPECT_NO_THROW(p.validate());
  p.epsilon = 0.0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.delta = 1.0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(RScore, SmallCases) {
  const Dims3 d{1, 1, 12};
  const auto a = encode_rle("v", d, cells_on(12, {{0, 7}}));
  const auto b = encode_rle("v", d, cells_on(12, {{6, 9}}));
  const std::vector<std::vector<BinaryMask>> ab{{a}, {b}};
  EXPECT_DOUBLE_EQ(r_score(ab, d), 0.2);
  const std::vector<std::vector<BinaryMask>> same{{a}, {a}};
  EXPECT_DOUBLE_EQ(r_score(same, d), 1.0);
  const auto c = encode_rle("v", d, cells_on(12, {{10, 11}}));
  const std::vector<std::vector<BinaryMask>> disjoint{{a}, {c}};
  EXPECT_DOUBLE_EQ(r_score(disjoint, d), 0.0);
  const std::vector<std::vector<BinaryMask>> empty{{empty_mask("v", d)}, {empty_mask("v", d)}};
  EXPECT_DOUBLE_EQ(r_score(empty, d), 0.0);
  const std::vector<std::vector<BinaryMask>> other_video{{a}, {encode_rle("w", d, cells_on(12, {{6, 9}}))}};
  EXPECT_THROW(r_score(other_video, d), Error);
}

TEST(RScore, SymmetricAndConcatenatedOverVideos) {
  const Dims3 d{1, 2, 2};
  // Video 1: 1 of 2 shared; video 2: 1 of 4 shared; pooled 2/6.
  const std::vector<BinaryMask> x{encode_rle("a", d, Grid{1, 1, 0, 0}), encode_rle("b", d, Grid{1, 1, 1, 0})};
  const std::vector<BinaryMask> y{encode_rle("a", d, Grid{1, 0, 0, 0}), encode_rle("b", d, Grid{0, 0, 1, 1})};
  const std::vector<std::vector<BinaryMask>> xy{x, y}, yx{y, x};
  EXPECT_DOUBLE_EQ(r_score(xy, d), 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(r_score(yx, d), r_score(xy, d));
}

TEST(Resample, NearestCellCentres) {
  const Dims3 from{1, 1, 4}, to{1, 1, 2};
  EXPECT_EQ(resample_nearest(Grid{1, 0, 0, 0}, from, to), (Grid{0, 0}));
  EXPECT_EQ(resample_nearest(Grid{0, 1, 0, 1}, from, to), (Grid{1, 1}));
  const Grid g{1, 0, 1, 1, 0, 1};
  EXPECT_EQ(resample_nearest(g, {1, 2, 3}, {1, 2, 3}), g);
  const std::vector<Dims3> grids{{4, 8, 8}, {2, 16, 4}};
  EXPECT_EQ(coarsest_common_grid(grids), (Dims3{2, 8, 4}));
}

TEST(TopEpsilon, TiesKept) {
  const std::vector<double> imp{0.9, 0.5, 0.5, 0.1};
  EXPECT_EQ(top_epsilon(imp, 0.5), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(top_epsilon(imp, 0.01), (std::vector<int>{0}));
  EXPECT_EQ(top_epsilon(imp, 1.0), (std::vector<int>{0, 1, 2, 3}));
  const std::vector<double> twenty(20, 0.0);
  EXPECT_EQ(top_epsilon(twenty, 0.15).size(), 20u);
}

TEST(Mine, IdenticalSingleConcepts) {
  const auto g = cells_on(10, {{2, 5}});
  const std::vector<ModelConcepts> models{line_model("a", {g}), line_model("b", {g})};
  const auto out = mine(models, {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].d(), 2);
  EXPECT_DOUBLE_EQ(out[0].r_score, 1.0);
}

TEST(Mine, ThreePairsNoTriple) {
  const int n = 40;
  // Pair scores by cell count: 4/8, 2/5 and 3/10, all other pairs disjoint.
  const auto a1 = cells_on(n, {{0, 5}}), b1 = cells_on(n, {{2, 7}});
  const auto a2 = cells_on(n, {{10, 13}}), c1 = cells_on(n, {{12, 14}});
  const auto b2 = cells_on(n, {{20, 26}}), c2 = cells_on(n, {{24, 29}});
  const std::vector<ModelConcepts> models{line_model("a", {a1, a2}), line_model("b", {b1, b2}),
                                          line_model("c", {c1, c2})};
  MiningParams p;
  p.epsilon = 1.0;
  const auto out = mine(models, p);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0], (RosettaTuple{{0, 1}, {0, 0}, 0.5}));
  EXPECT_EQ(out[1], (RosettaTuple{{0, 2}, {1, 0}, 0.4}));
  EXPECT_EQ(out[2], (RosettaTuple{{1, 2}, {1, 1}, 0.3}));
  EXPECT_EQ(as_tuples(out), vtcd::oracle::rosetta_bruteforce(models, 1.0, 0.15));
}

TEST(Mine, MatchesBruteForceOnRandomModels) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto models = vtcd::testing::random_models(4, 20, {4, 8, 8}, 3, seed);
    for (double delta : {0.05, 0.15, 0.3}) {
      MiningParams p;
      p.epsilon = 0.3;
      p.delta = delta;
      const auto out = mine(models, p);
      EXPECT_EQ(as_tuples(out), vtcd::oracle::rosetta_bruteforce(models, p.epsilon, p.delta))
          << "seed " << seed << " delta " << delta;
      for (std::size_t i = 1; i < out.size(); ++i) {
        EXPECT_GE(out[i - 1].d(), out[i].d());
        if (out[i - 1].d() == out[i].d()) EXPECT_GE(out[i - 1].r_score, out[i].r_score);
      }
      for (const auto& t : out)
        EXPECT_NEAR(t.r_score, vtcd::oracle::rosetta_r(models, t.models, t.concepts), 1e-12);
    }
  }
}

TEST(Mine, MixedGridsMatchBruteForce) {
  auto models = vtcd::testing::random_models(2, 10, {4, 8, 8}, 2, 5);
  auto coarse = vtcd::testing::random_models(2, 10, {2, 4, 8}, 2, 6);
  for (auto& m : coarse) {
    m.model_id += "_coarse";
    models.push_back(m);
  }
  MiningParams p;
  p.epsilon = 0.5;
  p.delta = 0.05;
  EXPECT_EQ(as_tuples(mine(models, p)), vtcd::oracle::rosetta_bruteforce(models, p.epsilon, p.delta));
}

TEST(Mine, MonotoneUnderExtension) {
  const auto models = vtcd::testing::random_models(5, 6, {2, 4, 4}, 2, 8);
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> ms{0, 1, 2, 3, 4};
    for (int i = 4; i > 0; --i) std::swap(ms[i], ms[rng.below(i + 1)]);
    const int d = 2 + static_cast<int>(rng.below(3));
    std::vector<int> base_m(ms.begin(), ms.begin() + d);
    std::vector<int> cs;
    for (int i = 0; i < d + 1; ++i) cs.push_back(static_cast<int>(rng.below(6)));
    std::vector<int> base_c(cs.begin(), cs.begin() + d);
    std::vector<int> ext_m(ms.begin(), ms.begin() + d + 1);
    std::vector<std::vector<BinaryMask>> base, ext;
    for (int i = 0; i < d; ++i) base.push_back(models[base_m[i]].concepts[base_c[i]].support);
    ext = base;
    ext.push_back(models[ext_m[d]].concepts[cs[d]].support);
    EXPECT_LE(r_score(ext, {2, 4, 4}), r_score(base, {2, 4, 4}) + 1e-15);
  }
}

TEST(Mine, JsonShape) {
  const auto g = cells_on(10, {{2, 5}});
  const std::vector<ModelConcepts> models{line_model("a", {g}), line_model("b", {g})};
  const auto out = mine(models, {});
  const Json j = tuples_to_json(out, models);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0].at("d"), 2);
  EXPECT_EQ(j[0].at("models"), (Json{"a", "b"}));
  EXPECT_DOUBLE_EQ(j[0].at("r_score").get<double>(), 1.0);
  EXPECT_EQ(j[0].at("concept_ids").size(), 2u);
}

TEST(Mine, NeedsTwoModels) {
  const auto g = cells_on(10, {{2, 5}});
  const std::vector<ModelConcepts> one{line_model("a", {g})};
  EXPECT_THROW(mine(one, {}), Error);
}
