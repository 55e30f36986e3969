#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vtcd/backend.hpp"
#include "vtcd/concepts.hpp"
#include "vtcd/importance.hpp"
#include "vtcd/random.hpp"
#include "vtcd/rosetta.hpp"

namespace vtcd::testing {

FeatureVolume random_volume(Rng& rng, std::int64_t c, const Dims3& d, const std::string& video = "v0");

// Channel 0 is `lo` for w < W/2 and `hi` elsewhere; other channels zero.
FeatureVolume two_region_volume(const Dims3& d, std::int64_t channels, double lo = 0.0, double hi = 10.0,
                                const std::string& video = "v0");

Grid random_grid(Rng& rng, std::int64_t cells, double p);

// The planted oracle with region values 1.0 and concepts that tile the grid.
struct PlantedFixture {
  std::shared_ptr<VideoStore> videos;
  std::unique_ptr<PlantedOracle> backend;
  std::vector<Concept> concepts;
  std::vector<VideoTarget> targets;
  std::vector<double> covered;  // share of the region each concept covers
};

// Region of `region_cells` cells on a 2×4×4 grid; concept i takes the share
// `proportions[i]` of the region, and `n_null` concepts split the rest.
PlantedFixture planted_fixture(const std::vector<double>& proportions, int n_null, int n_videos = 3,
                               std::uint64_t seed = 0);

struct HeadFixture {
  std::shared_ptr<VideoStore> videos;
  std::unique_ptr<ToyTransformer> backend;
  std::vector<VideoTarget> targets;
  std::vector<std::string> decorative;
  std::vector<std::string> weak;
};

// Toy transformer with 3 layers × 4 heads: four heads have a zeroed output
// projection, two weak heads lower logit 0 by about 0.01 and the rest by about
// 0.03 (averaged over random head subsets).
HeadFixture decorative_heads_fixture(std::uint64_t seed = 11);

// Toy transformer whose class logits depend on the output of head L1_H0.
HeadFixture dependency_head_fixture(std::uint64_t seed = 5);

// Regression targets pinned to the unmasked prediction (every mask can only
// lower the metric).
std::vector<VideoTarget> pinned_regression_targets(const NativeBackend& backend, const std::vector<std::string>& ids);

std::shared_ptr<VideoStore> random_videos(const ToyConfig& config, int n, std::uint64_t seed);

// Random supports on a grid, one concept list per model.
std::vector<ModelConcepts> random_models(int n_models, int n_concepts, const Dims3& grid, int n_videos,
                                         std::uint64_t seed);

// Fresh (emptied) unless `clear` is false.
std::filesystem::path temp_dir(const std::string& name, bool clear = true);

}  // namespace vtcd::testing

namespace vtcd::testing {

struct Workspace {
  std::filesystem::path root;
  std::filesystem::path manifest;
  std::filesystem::path weights;  // toy backend
  std::filesystem::path fixture;  // planted backend
};

// Toy weights plus a manifest listing only input volumes.
Workspace write_toy_workspace(const std::filesystem::path& dir, const ToyConfig& config, int n_videos,
                              std::uint64_t seed, const std::string& model_id = "toy");

// Planted oracle inputs; the manifest also lists the read-site volumes.
Workspace write_planted_workspace(const std::filesystem::path& dir, const PlantedFixture& fixture);

// Writes each model as a concept store plus an importance report.
// Returns "STORE:REPORT" arguments for `vtcd rosetta --model`.
std::vector<std::string> write_rosetta_models(const std::filesystem::path& dir, const std::vector<ModelConcepts>& models);

}  // namespace vtcd::testing
