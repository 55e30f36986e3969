#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vtcd/tensor_store.hpp"

namespace vtcd {

struct SlicParams {
  int n_segments = 12;
  // Per-model; 0.1 for the toy transformer.
  double compactness = 0.1;
  int max_iters = 10;
  double min_size_fraction = 0.05;

  void validate() const;
};

// A connected spatiotemporal region of one video's feature grid and its
// average-pooled channel vector.
struct Tubelet {
  std::string video_id;
  SiteId site;
  BinaryMask mask;
  std::vector<double> feature;
  std::int64_t size = 0;
};

// Seeds per axis (t, h, w) for a regular grid holding at most n_segments
// seeds; maximizes the seed count, then prefers the most isotropic spacing.
std::array<std::int64_t, 3> seed_grid_counts(const Dims3& dims, int n_segments);

// Squared-difference feature gradient used to nudge seeds off edges.
std::vector<double> feature_gradient(const FeatureVolume& volume);

// Raw SLIC labels (one per cell) before connectivity enforcement.
std::vector<int> slic_labels(const FeatureVolume& volume, const SlicParams& params);

// Labels 6-connected components of equal-label cells; returns component id
// per cell, numbered in order of first appearance in (t,h,w) scan order.
std::vector<int> connected_components(const Dims3& dims, std::span<const int> labels, int* n_components = nullptr);

bool is_six_connected(const Dims3& dims, std::span<const std::uint8_t> grid);

// Exact partition of the grid into 6-connected masks, ordered by first cell.
std::vector<BinaryMask> slic_segment(const FeatureVolume& volume, const SlicParams& params);

// Average-pools the volume over the mask support.
Tubelet pool_tubelet(const FeatureVolume& volume, const BinaryMask& mask);

std::vector<Tubelet> extract_tubelets(const FeatureVolume& volume, const SlicParams& params);

}  // namespace vtcd
