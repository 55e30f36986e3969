#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vtcd/backend.hpp"
#include "vtcd/concepts.hpp"

namespace vtcd {

enum class ImportanceUnit { kConcept, kHead };

// How a unit's accumulated drop is averaged: over all K samples (the
// defining estimator), or over the samples that actually contained it.
enum class ImportanceEstimator { kPerSample, kPerInclusion };

struct SamplingPlan {
  int k = 4000;
  double fraction = 0.5;
  std::uint64_t seed = 0;
  ImportanceUnit unit = ImportanceUnit::kConcept;
  ImportanceEstimator estimator = ImportanceEstimator::kPerSample;

  void validate() const;
  // ⌊fraction × units⌋, rejected when it is 0.
  int draws(int units) const;
};

struct VideoTarget {
  std::string video_id;
  TaskTarget target;
};

struct ImportanceReport {
  std::vector<std::string> units;
  std::vector<double> scores;
  double baseline_metric = 0.0;
  int k_used = 0;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::string method;
  std::vector<std::int64_t> inclusion_counts;

  // Indices sorted by descending score, ties by index.
  std::vector<int> ranking() const;
};

Json report_to_json(const ImportanceReport& report);
ImportanceReport report_from_json(const Json& j);

struct RunOptions {
  int jobs = 1;
  // When set, sampling state is saved every `checkpoint_every` samples and a
  // matching checkpoint is resumed.
  std::filesystem::path checkpoint;
  int checkpoint_every = 100;
};

// Single-concept masking: Q+1 forwards per video.
ImportanceReport occlusion_importance(std::span<const Concept> concepts, const ModelBackend& backend,
                                      std::span<const VideoTarget> videos, const RunOptions& options = {});

ImportanceReport cris(std::span<const Concept> concepts, const ModelBackend& backend,
                      std::span<const VideoTarget> videos, const SamplingPlan& plan, const RunOptions& options = {});

struct HeadUnit {
  int layer = 1;
  int head = 0;
  std::vector<SiteId> sites;
  std::string name() const { return "L" + std::to_string(layer) + "_H" + std::to_string(head); }
};

std::vector<HeadUnit> backend_heads(const ModelBackend& backend);

ImportanceReport head_importance(const ModelBackend& backend, std::span<const VideoTarget> videos,
                                 const SamplingPlan& plan, const RunOptions& options = {});

// The concept indices drawn for sample `index`.
std::vector<int> cris_sample(std::uint64_t seed, std::uint64_t index, int units, int draws);

struct LayerImportance {
  int layer = 0;
  double score = 0.0;
  int concepts = 0;
};

// Mean normalized rank 1 − (rank−1)/(Q−1) of each layer's concepts; report
// units are matched to `concepts` by position.
std::vector<LayerImportance> per_layer_importance(const ImportanceReport& report, std::span<const Concept> concepts);

}  // namespace vtcd
