#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vtcd/concepts.hpp"
#include "vtcd/json_io.hpp"

namespace vtcd {

struct MiningParams {
  double epsilon = 0.15;
  double delta = 0.15;

  void validate() const;
};

// One model's concepts, the videos they were discovered on, and their
// importance scores (index-aligned with `concepts`).
struct ModelConcepts {
  std::string model_id;
  std::vector<std::string> video_ids;
  Dims3 grid;
  std::vector<Concept> concepts;
  std::vector<double> importance;
};

struct RosettaTuple {
  std::vector<int> models;    // increasing model indices
  std::vector<int> concepts;  // concept index within each model
  double r_score = 0.0;

  int d() const { return static_cast<int>(models.size()); }
  bool operator==(const RosettaTuple&) const = default;
};

// Per-axis minimum of the given grids.
Dims3 coarsest_common_grid(std::span<const Dims3> grids);

// Nearest-neighbour resampling; target cell i samples source cell
// ⌊(i + ½)·src/dst⌋ on each axis.
Grid resample_nearest(std::span<const std::uint8_t> grid, const Dims3& from, const Dims3& to);

// |∩| / |∪| over all videos' cells. supports[i][v] is concept i's mask for
// video v; every concept must list the same videos in the same order.
double r_score(std::span<const std::vector<BinaryMask>> supports, const Dims3& common_grid);

// Indices of the top-ε concepts by importance (ties at the cut kept).
std::vector<int> top_epsilon(std::span<const double> importance, double epsilon);

// Progressive mining: ε filter, then for d = 2..D keep only concepts that
// appear in a d-tuple with R > δ. Sorted by d desc, R desc.
std::vector<RosettaTuple> mine(std::span<const ModelConcepts> models, const MiningParams& params);

// Packed concatenation of a concept's supports over `videos`, resampled to
// `grid`.
std::vector<std::uint64_t> packed_support(const Concept& concept_entry, std::span<const std::string> videos,
                                          const Dims3& source_grid, const Dims3& grid);

Json tuples_to_json(std::span<const RosettaTuple> tuples, std::span<const ModelConcepts> models);

}  // namespace vtcd
