#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "vtcd/tubelets.hpp"

using namespace vtcd;

namespace {

void expect_partition(const Dims3& d, const std::vector<BinaryMask>& masks) {
  Grid cover(d.cells(), 0);
  for (const auto& m : masks) {
    const Grid g = decode_rle(m);
    ASSERT_GT(count_cells(g), 0);
    ASSERT_TRUE(is_six_connected(d, g));
    for (std::size_t i = 0; i < g.size(); ++i) {
      ASSERT_FALSE(g[i] && cover[i]) << "masks overlap";
      cover[i] |= g[i];
    }
  }
  ASSERT_EQ(count_cells(cover), d.cells());
}

double best_iou(const std::vector<BinaryMask>& masks, const Grid& truth) {
  double best = 0.0;
  for (const auto& m : masks) best = std::max(best, grid_iou(decode_rle(m), truth));
  return best;
}

}  // namespace

TEST(Slic, ParamsValidate) {
  SlicParams p;
  EXPECT_NO_THROW(p.validate());
  p.compactness = 0.0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.min_size_fraction = 1.0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.n_segments = 0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(Slic, TooManySegmentsRejected) {
  Rng rng(1);
  auto v = vtcd::testing::random_volume(rng, 2, {1, 2, 2});
  SlicParams p;
  p.n_segments = 5;
  EXPECT_THROW(slic_segment(v, p), Error);
}

TEST(Slic, SeedGridCounts) {
  EXPECT_EQ(seed_grid_counts({8, 8, 8}, 8), (std::array<std::int64_t, 3>{2, 2, 2}));
  EXPECT_EQ(seed_grid_counts({4, 4, 8}, 2), (std::array<std::int64_t, 3>{1, 1, 2}));
  const auto c = seed_grid_counts({4, 8, 8}, 12);
  EXPECT_LE(c[0] * c[1] * c[2], 12);
  EXPECT_EQ(seed_grid_counts({1, 1, 1}, 1), (std::array<std::int64_t, 3>{1, 1, 1}));
}

TEST(Slic, ConstantVolumeGivesRegularBlocks) {
  const Dims3 d{8, 8, 8};
  FeatureVolume v("v", SiteId::residual("m", 1), 3, d);
  std::fill(v.data.begin(), v.data.end(), 1.0f);
  SlicParams p;
  p.n_segments = 8;
  p.compactness = 10.0;
  const auto masks = slic_segment(v, p);
  ASSERT_EQ(masks.size(), 8u);
  expect_partition(d, masks);
  for (const auto& m : masks) {
    EXPECT_EQ(m.count(), 64);
    // Each mask is a 4×4×4 axis-aligned block.
    const Grid g = decode_rle(m);
    std::int64_t lo[3] = {8, 8, 8}, hi[3] = {-1, -1, -1};
    for (std::int64_t t = 0; t < 8; ++t)
      for (std::int64_t h = 0; h < 8; ++h)
        for (std::int64_t w = 0; w < 8; ++w)
          if (g[d.index(t, h, w)]) {
            const std::int64_t c[3] = {t, h, w};
            for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], c[a]), hi[a] = std::max(hi[a], c[a]);
          }
    for (int a = 0; a < 3; ++a) {
      EXPECT_EQ(hi[a] - lo[a], 3);
      EXPECT_EQ(lo[a] % 4, 0);
    }
  }
}

TEST(Slic, SingleSegmentCoversEverything) {
  Rng rng(2);
  auto v = vtcd::testing::random_volume(rng, 4, {3, 4, 5});
  SlicParams p;
  p.n_segments = 1;
  const auto masks = slic_segment(v, p);
  ASSERT_EQ(masks.size(), 1u);
  EXPECT_EQ(masks[0].count(), 60);
}

TEST(Slic, TwoRegionsRecoveredAndAgreeWithTwoMeans) {
  const Dims3 d{4, 4, 8};
  const auto v = vtcd::testing::two_region_volume(d, 3);
  SlicParams p;
  p.n_segments = 2;
  p.compactness = 0.01;
  const auto masks = slic_segment(v, p);
  expect_partition(d, masks);
  Grid left(d.cells(), 0), right(d.cells(), 0);
  for (std::int64_t i = 0; i < d.cells(); ++i) (i % d.w < d.w / 2 ? left : right)[i] = 1;
  EXPECT_GE(best_iou(masks, left), 0.9);
  EXPECT_GE(best_iou(masks, right), 0.9);

  const auto labels = vtcd::oracle::two_means(vtcd::oracle::slic_space(v, p.compactness, p.n_segments));
  Grid zero(d.cells(), 0);
  for (std::int64_t i = 0; i < d.cells(); ++i) zero[i] = labels[i] == 0;
  Grid one(d.cells());
  for (std::int64_t i = 0; i < d.cells(); ++i) one[i] = 1 - zero[i];
  EXPECT_GE(best_iou(masks, zero), 0.9);
  EXPECT_GE(best_iou(masks, one), 0.9);
}

TEST(Slic, RandomVolumesArePartitions) {
  Rng rng(99);
  for (int i = 0; i < 60; ++i) {
    const Dims3 d{1 + std::int64_t(rng.below(4)), 1 + std::int64_t(rng.below(8)), 1 + std::int64_t(rng.below(8))};
    auto v = vtcd::testing::random_volume(rng, 1 + rng.below(16), d);
    SlicParams p;
    p.n_segments = 1 + static_cast<int>(rng.below(std::min<std::int64_t>(12, d.cells())));
    p.compactness = rng.uniform(0.01, 2.0);
    const auto masks = slic_segment(v, p);
    expect_partition(d, masks);
    EXPECT_LE(static_cast<int>(masks.size()), p.n_segments);
  }
}

TEST(Slic, Deterministic) {
  Rng rng(4);
  auto v = vtcd::testing::random_volume(rng, 5, {2, 6, 6});
  SlicParams p;
  EXPECT_EQ(slic_segment(v, p), slic_segment(v, p));
}

TEST(Slic, HugeCompactnessIsPureSeedGrid) {
  Rng rng(6);
  const Dims3 d{4, 4, 4};
  auto v = vtcd::testing::random_volume(rng, 3, d);
  // Same gradient ordering (so the same seeds), very different features.
  FeatureVolume other = v;
  for (auto& x : other.data) x = -2.0f * x;
  SlicParams p;
  p.n_segments = 8;
  p.compactness = 1e6;
  EXPECT_EQ(slic_segment(v, p), slic_segment(other, p));
}

TEST(Slic, ChannelPermutationPermutesFeatures) {
  Rng rng(8);
  const Dims3 d{2, 5, 5};
  auto v = vtcd::testing::random_volume(rng, 3, d);
  FeatureVolume perm = v;
  const int order[3] = {2, 0, 1};
  for (int c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < d.cells(); ++i) perm.at(c, i) = v.at(order[c], i);
  SlicParams p;
  p.n_segments = 6;
  const auto a = extract_tubelets(v, p);
  const auto b = extract_tubelets(perm, p);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].mask, b[i].mask);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(b[i].feature[c], a[i].feature[order[c]], 1e-9);
  }
}

TEST(Tubelets, FeatureIsMeanOverSupport) {
  Rng rng(12);
  const Dims3 d{3, 4, 4};
  auto v = vtcd::testing::random_volume(rng, 4, d);
  const auto tubes = extract_tubelets(v, {});
  std::int64_t total = 0;
  std::int64_t previous_first = -1;
  for (const auto& t : tubes) {
    const Grid g = decode_rle(t.mask);
    EXPECT_EQ(t.size, count_cells(g));
    total += t.size;
    const auto first = std::find(g.begin(), g.end(), 1) - g.begin();
    EXPECT_GT(first, previous_first);
    previous_first = first;
    for (int c = 0; c < 4; ++c) {
      double s = 0.0;
      for (std::int64_t i = 0; i < d.cells(); ++i)
        if (g[i]) s += v.data[c * d.cells() + i];
      EXPECT_LT(std::abs(s / t.size - t.feature[c]), 1e-5);
    }
  }
  EXPECT_EQ(total, d.cells());
}

TEST(Tubelets, ConstantAndSingleCell) {
  FeatureVolume v("v", SiteId::residual("m", 1), 3, {2, 4, 4});
  std::fill(v.data.begin(), v.data.end(), 3.5f);
  for (const auto& t : extract_tubelets(v, {}))
    for (double f : t.feature) EXPECT_DOUBLE_EQ(f, 3.5);

  FeatureVolume one("v", SiteId::residual("m", 1), 3, {1, 1, 1});
  one.data = {1.0f, -2.0f, 0.25f};
  SlicParams p;
  p.n_segments = 1;
  const auto tubes = extract_tubelets(one, p);
  ASSERT_EQ(tubes.size(), 1u);
  EXPECT_EQ(tubes[0].feature, (std::vector<double>{1.0, -2.0, 0.25}));
}

TEST(Tubelets, TwoRegionFeatures) {
  const Dims3 d{4, 4, 8};
  const auto v = vtcd::testing::two_region_volume(d, 2);
  SlicParams p;
  p.n_segments = 2;
  p.compactness = 0.01;
  const auto tubes = extract_tubelets(v, p);
  ASSERT_EQ(tubes.size(), 2u);
  std::vector<double> ch0{tubes[0].feature[0], tubes[1].feature[0]};
  std::sort(ch0.begin(), ch0.end());
  EXPECT_NEAR(ch0[0], 0.0, 1e-4);
  EXPECT_NEAR(ch0[1], 10.0, 1e-4);
}

TEST(Connectivity, Components) {
  const Dims3 d{1, 3, 3};
  const std::vector<int> labels{0, 1, 0, 1, 1, 1, 0, 1, 0};
  int n = 0;
  const auto comp = connected_components(d, labels, &n);
  EXPECT_EQ(n, 5);
  EXPECT_EQ(comp[0], 0);
  EXPECT_EQ(comp[1], 1);
  EXPECT_EQ(comp[4], 1);
  EXPECT_FALSE(is_six_connected(d, Grid{1, 0, 1, 0, 0, 0, 0, 0, 0}));
  EXPECT_TRUE(is_six_connected(d, Grid{1, 1, 1, 0, 0, 1, 0, 0, 1}));
}
