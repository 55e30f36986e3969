#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "vtcd/importance.hpp"

using namespace vtcd;
using vtcd::testing::planted_fixture;

namespace {

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<std::pair<std::string, TaskTarget>> pairs(const std::vector<VideoTarget>& targets) {
  std::vector<std::pair<std::string, TaskTarget>> out;
  for (const auto& t : targets) out.emplace_back(t.video_id, t.target);
  return out;
}

Concept empty_concept(const SiteId& site, int index, const std::vector<std::string>& ids, const Dims3& grid) {
  Concept c;
  c.id = {site, index};
  for (const auto& id : ids) c.support.push_back(empty_mask(id, grid));
  return c;
}

}  // namespace

TEST(SamplingPlan, Validation) {
  SamplingPlan plan;
  EXPECT_EQ(plan.k, 4000);
  EXPECT_DOUBLE_EQ(plan.fraction, 0.5);
  EXPECT_NO_THROW(plan.validate());
  plan.fraction = 1.0;
  EXPECT_THROW(plan.validate(), Error);
  plan.fraction = 0.0;
  EXPECT_THROW(plan.validate(), Error);
  plan = {};
  plan.k = 0;
  EXPECT_THROW(plan.validate(), Error);
  plan = {};
  plan.fraction = 0.1;
  EXPECT_EQ(plan.draws(25), 2);
  EXPECT_THROW(plan.draws(5), Error);
  plan.fraction = 0.3;
  EXPECT_EQ(plan.draws(10), 3);
}

TEST(Occlusion, ExactCoverScoresFullMetric) {
  auto f = planted_fixture({1.0}, 3);
  const auto r = occlusion_importance(f.concepts, *f.backend, f.targets);
  EXPECT_DOUBLE_EQ(r.baseline_metric, 1.0);
  EXPECT_DOUBLE_EQ(r.scores[0], 1.0);
  for (std::size_t i = 1; i < r.scores.size(); ++i) EXPECT_DOUBLE_EQ(r.scores[i], 0.0);
  EXPECT_EQ(r.units[0], f.concepts[0].id.str());
}

TEST(Occlusion, HalvesScoreHalfAndEmptySupportZero) {
  auto f = planted_fixture({0.5, 0.5}, 2);
  std::vector<std::string> ids{"vid0", "vid1", "vid2"};
  f.concepts.push_back(empty_concept(f.backend->read_site(), 4, ids, f.backend->grid()));
  const auto r = occlusion_importance(f.concepts, *f.backend, f.targets);
  // Independent recount of the masked halves.
  const Grid region = decode_rle(f.backend->region());
  for (int c = 0; c < 2; ++c) {
    double expected = 0.0;
    for (const auto& t : f.targets)
      expected += 1.0 - vtcd::oracle::planted_recount(region, f.videos->at(t.video_id),
                                                      decode_rle(f.concepts[c].support_for(t.video_id, f.backend->grid())));
    expected /= double(f.targets.size());
    EXPECT_DOUBLE_EQ(r.scores[c], expected);
    EXPECT_DOUBLE_EQ(r.scores[c], 0.5);
  }
  EXPECT_DOUBLE_EQ(r.scores.back(), 0.0);
}

TEST(Cris, PlantedArgmaxAcrossSeeds) {
  auto f = planted_fixture({1.0}, 7);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SamplingPlan plan;
    plan.k = 500;
    plan.seed = seed;
    const auto r = cris(f.concepts, *f.backend, f.targets, plan);
    EXPECT_EQ(argmax(r.scores), 0) << "seed " << seed;
  }
}

TEST(Cris, NullModelScoresZero) {
  auto f = planted_fixture({0.5, 0.5}, 4);
  // Concepts at a site the oracle never reads.
  for (auto& c : f.concepts) c.id.site = SiteId::residual("planted", 1);
  SamplingPlan plan;
  plan.k = 200;
  const auto r = cris(f.concepts, *f.backend, f.targets, plan);
  for (double s : r.scores) EXPECT_NEAR(s, 0.0, 1e-9);
}

TEST(Cris, InclusionCountsAndDeterminism) {
  auto f = planted_fixture({0.5, 0.3, 0.2}, 5);
  SamplingPlan plan;
  plan.k = 300;
  plan.fraction = 0.4;
  plan.seed = 17;
  const auto a = cris(f.concepts, *f.backend, f.targets, plan);
  RunOptions threaded;
  threaded.jobs = 4;
  const auto b = cris(f.concepts, *f.backend, f.targets, plan, threaded);
  EXPECT_EQ(a.scores, b.scores);
  const auto total = std::accumulate(a.inclusion_counts.begin(), a.inclusion_counts.end(), std::int64_t{0});
  EXPECT_EQ(total, std::int64_t(plan.k) * plan.draws(8));
  EXPECT_EQ(a.k_used, 300);

  // Per-inclusion estimator rescales each score by K / count.
  plan.estimator = ImportanceEstimator::kPerInclusion;
  const auto c = cris(f.concepts, *f.backend, f.targets, plan);
  for (std::size_t i = 0; i < c.scores.size(); ++i)
    EXPECT_NEAR(c.scores[i], a.scores[i] * plan.k / double(a.inclusion_counts[i]), 1e-12);
}

TEST(Cris, SamplesAreDistinctDraws) {
  for (std::uint64_t k = 0; k < 50; ++k) {
    auto s = cris_sample(3, k, 10, 5);
    ASSERT_EQ(s.size(), 5u);
    std::sort(s.begin(), s.end());
    EXPECT_EQ(std::unique(s.begin(), s.end()), s.end());
    EXPECT_GE(s.front(), 0);
    EXPECT_LT(s.back(), 10);
  }
  EXPECT_EQ(cris_sample(3, 4, 10, 5), cris_sample(3, 4, 10, 5));
}

TEST(Cris, ScoresMatchHandAccumulation) {
  auto f = planted_fixture({0.5, 0.3, 0.2}, 2);
  SamplingPlan plan;
  plan.k = 40;
  plan.seed = 2;
  const auto r = cris(f.concepts, *f.backend, f.targets, plan);
  const Grid region = decode_rle(f.backend->region());
  const int q = static_cast<int>(f.concepts.size());
  std::vector<double> sums(q, 0.0);
  for (int k = 0; k < plan.k; ++k) {
    const auto sample = cris_sample(plan.seed, k, q, plan.draws(q));
    double drop = 0.0;
    for (const auto& t : f.targets) {
      Grid masked(region.size(), 0);
      for (int i : sample) union_into(masked, decode_rle(f.concepts[i].support_for(t.video_id, f.backend->grid())));
      drop += 1.0 - vtcd::oracle::planted_recount(region, f.videos->at(t.video_id), masked);
    }
    drop /= double(f.targets.size());
    for (int i : sample) sums[i] += drop;
  }
  for (int i = 0; i < q; ++i) EXPECT_NEAR(r.scores[i], sums[i] / plan.k, 1e-12);
}

TEST(Cris, CheckpointResume) {
  const auto dir = vtcd::testing::temp_dir("checkpoint");
  auto f = planted_fixture({0.5, 0.3, 0.2}, 5);
  SamplingPlan plan;
  plan.k = 250;
  plan.seed = 9;
  const auto fresh = cris(f.concepts, *f.backend, f.targets, plan);

  RunOptions opts;
  opts.checkpoint = dir / "cp.json";
  const auto with_cp = cris(f.concepts, *f.backend, f.targets, plan, opts);
  EXPECT_EQ(with_cp.scores, fresh.scores);
  Json cp = read_json_file(opts.checkpoint);
  EXPECT_EQ(cp.at("done").get<int>(), 250);

  // Cut the checkpoint back to 100 samples and resume.
  auto drops = cp.at("drops").get<std::vector<double>>();
  drops.resize(100);
  cp["drops"] = drops;
  cp["done"] = 100;
  write_json_file(cp, opts.checkpoint);
  EXPECT_EQ(cris(f.concepts, *f.backend, f.targets, plan, opts).scores, fresh.scores);

  // A resumed run really uses the saved drops.
  drops[0] += 1.0;
  cp["drops"] = drops;
  write_json_file(cp, opts.checkpoint);
  const auto tampered = cris(f.concepts, *f.backend, f.targets, plan, opts);
  EXPECT_NE(tampered.scores, fresh.scores);

  // A checkpoint from another seed is ignored.
  plan.seed = 10;
  const auto other = cris(f.concepts, *f.backend, f.targets, plan);
  EXPECT_EQ(cris(f.concepts, *f.backend, f.targets, plan, opts).scores, other.scores);
}

TEST(Cris, OrderingFollowsCoveredShare) {
  auto f = planted_fixture({0.5, 0.3, 0.2}, 5);
  SamplingPlan plan;
  plan.k = 2000;
  plan.seed = 1;
  const auto r = cris(f.concepts, *f.backend, f.targets, plan);
  const auto order = r.ranking();
  EXPECT_EQ(std::vector<int>(order.begin(), order.begin() + 3), (std::vector<int>{0, 1, 2}));
  const auto exhaustive = vtcd::oracle::exhaustive_marginals(*f.backend, f.concepts, pairs(f.targets));
  EXPECT_GE(vtcd::oracle::spearman(r.scores, exhaustive), 0.8);
}

TEST(Cris, AgreesWithOcclusionOnLinearOracle) {
  auto f = planted_fixture({0.6, 0.4}, 3);
  SamplingPlan plan;
  plan.k = 500;
  EXPECT_EQ(argmax(cris(f.concepts, *f.backend, f.targets, plan).scores),
            argmax(occlusion_importance(f.concepts, *f.backend, f.targets).scores));
}

TEST(Cris, RejectsForeignSites) {
  auto f = planted_fixture({1.0}, 1);
  f.concepts[0].id.site = SiteId::residual("other", 2);
  SamplingPlan plan;
  plan.k = 10;
  EXPECT_THROW(cris(f.concepts, *f.backend, f.targets, plan), Error);
}

TEST(Heads, DependencyHeadRanksFirst) {
  auto f = vtcd::testing::dependency_head_fixture();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SamplingPlan plan;
    plan.k = 200;
    plan.seed = seed;
    plan.unit = ImportanceUnit::kHead;
    const auto r = head_importance(*f.backend, f.targets, plan);
    ASSERT_EQ(r.units.size(), 8u);
    EXPECT_EQ(r.units[argmax(r.scores)], "L1_H0") << "seed " << seed;
  }
}

TEST(Heads, DecorativeHeadsRankLastAndDoNothing) {
  auto f = vtcd::testing::decorative_heads_fixture();
  SamplingPlan plan;
  plan.k = 1000;
  plan.seed = 3;
  plan.unit = ImportanceUnit::kHead;
  const auto r = head_importance(*f.backend, f.targets, plan);
  const auto order = r.ranking();
  std::set<std::string> bottom;
  for (std::size_t i = order.size() - f.decorative.size(); i < order.size(); ++i) bottom.insert(r.units[order[i]]);
  EXPECT_EQ(bottom, std::set<std::string>(f.decorative.begin(), f.decorative.end()));

  // Masking a decorative head alone leaves every output untouched.
  for (const auto& unit : backend_heads(*f.backend)) {
    if (std::find(f.decorative.begin(), f.decorative.end(), unit.name()) == f.decorative.end()) continue;
    for (const auto& t : f.targets) {
      std::vector<SiteMask> masks;
      for (const auto& s : unit.sites) masks.push_back({s, full_mask(t.video_id, f.backend->grid())});
      EXPECT_EQ(f.backend->forward(t.video_id, masks).logits, f.backend->forward(t.video_id, {}).logits);
    }
  }
}

TEST(Heads, FractionOneRejected) {
  auto f = vtcd::testing::dependency_head_fixture();
  SamplingPlan plan;
  plan.fraction = 1.0;
  plan.k = 10;
  EXPECT_THROW(head_importance(*f.backend, f.targets, plan), Error);
}

TEST(Heads, BackendHeadsGroupFacets) {
  auto f = vtcd::testing::decorative_heads_fixture();
  const auto heads = backend_heads(*f.backend);
  ASSERT_EQ(heads.size(), 12u);
  EXPECT_EQ(heads[0].name(), "L1_H0");
  for (const auto& h : heads) EXPECT_EQ(h.sites.size(), 3u);
}

TEST(PerLayer, ClosedForms) {
  ImportanceReport r;
  r.scores = {4.0, 3.0, 2.0, 1.0};
  r.units = {"a", "b", "c", "d"};
  std::vector<Concept> concepts(4);
  for (int i = 0; i < 4; ++i) concepts[i].id = {SiteId::residual("m", i < 2 ? 1 : 2), i};
  const auto layers = per_layer_importance(r, concepts);
  ASSERT_EQ(layers.size(), 2u);
  EXPECT_NEAR(layers[0].score, (1.0 + 2.0 / 3.0) / 2.0, 1e-12);
  EXPECT_NEAR(layers[1].score, (1.0 / 3.0) / 2.0, 1e-12);

  for (auto& c : concepts) c.id.site = SiteId::residual("m", 5);
  const auto one = per_layer_importance(r, concepts);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_NEAR(one[0].score, 0.5, 1e-12);
}

TEST(PerLayer, PlantedLayerScoresHighest) {
  auto f = planted_fixture({0.5, 0.3, 0.2}, 6);
  for (std::size_t i = 3; i < f.concepts.size(); ++i) f.concepts[i].id.site = SiteId::residual("planted", i % 2 ? 1 : 3);
  SamplingPlan plan;
  plan.k = 500;
  const auto r = cris(f.concepts, *f.backend, f.targets, plan);
  const auto layers = per_layer_importance(r, f.concepts);
  ASSERT_EQ(layers.size(), 3u);
  EXPECT_GT(layers[1].score, layers[0].score);
  EXPECT_GT(layers[1].score, layers[2].score);
}

TEST(Report, JsonRoundTrip) {
  auto f = planted_fixture({1.0}, 2);
  SamplingPlan plan;
  plan.k = 20;
  const auto r = cris(f.concepts, *f.backend, f.targets, plan);
  const Json j = report_to_json(r);
  EXPECT_TRUE(j.contains("units"));
  EXPECT_TRUE(j.contains("K"));
  EXPECT_TRUE(j.contains("baseline_metric"));
  const auto back = report_from_json(j);
  EXPECT_EQ(back.scores, r.scores);
  EXPECT_EQ(back.units, r.units);
  EXPECT_EQ(back.k_used, r.k_used);
}
