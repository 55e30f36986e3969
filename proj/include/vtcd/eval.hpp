#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vtcd/backend.hpp"
#include "vtcd/concepts.hpp"
#include "vtcd/importance.hpp"

namespace vtcd {

enum class CurveDirection { kPositive, kNegative, kRandom };

const char* curve_direction_name(CurveDirection direction);

struct CurvePoint {
  double fraction = 0.0;
  double metric = 0.0;
};

struct AttributionCurve {
  CurveDirection direction = CurveDirection::kPositive;
  std::vector<CurvePoint> points;
  double auc = 0.0;
};

struct CurveSet {
  AttributionCurve positive;
  AttributionCurve negative;
  AttributionCurve random;
};

struct CurveOptions {
  int steps = 12;
  int random_orders = 5;
  std::uint64_t seed = 0;
  int jobs = 1;
};

double trapezoid_auc(std::span<const CurvePoint> points);

// Masks the support of every concept in `removed` at its own site.
MaskRequest concept_mask_request(std::span<const Concept> concepts, std::span<const int> removed,
                                 const VideoTarget& video, const Dims3& grid);

// Mean metric over videos with the given concepts removed.
double masked_metric(std::span<const Concept> concepts, std::span<const int> removed, const ModelBackend& backend,
                     std::span<const VideoTarget> videos);

// Cumulative removal at `steps` evenly spaced fractions in [0, 1]; fraction f
// removes round(f·Q) concepts.
CurveSet attribution_curves(std::span<const Concept> concepts, const ImportanceReport& report,
                            const ModelBackend& backend, std::span<const VideoTarget> videos,
                            const CurveOptions& options = {});

void write_curve_csv(const AttributionCurve& curve, const std::filesystem::path& path);

struct GroundTruthMatch {
  std::string category;
  int concept_index = -1;
  double miou = 0.0;
};

// For each category the concept with the best mean IoU over videos. Videos
// where both masks are empty are skipped. Masks must share the concept grid.
// groundtruth: category -> one mask per video.
std::vector<GroundTruthMatch> concept_gt_miou(std::span<const Concept> concepts, const Dims3& grid,
                                              const std::map<std::string, std::vector<BinaryMask>>& groundtruth);

// Concept whose frame-0 support best overlaps `query` (a one-frame mask).
// Ties prefer the larger total support, then the lower index. nullopt when no
// concept touches the query.
std::optional<int> select_best_concepts(std::span<const Concept> concepts, const std::string& video_id,
                                        const Dims3& grid, const BinaryMask& query);

struct PrunePlan {
  std::vector<std::string> ranking;  // head names, most important first
  std::vector<double> scores;        // aligned with ranking
  double keep_fraction = 1.0;
  std::vector<std::string> dropped;
};

// Drops the round((1 − keep)·H) lowest-scoring heads.
PrunePlan prune_plan(const ImportanceReport& head_report, double keep_fraction);

Json prune_plan_to_json(const PrunePlan& plan);

// A backend whose pruned sites are always fully masked.
class PrunedBackend : public ModelBackend {
 public:
  PrunedBackend(const ModelBackend& inner, std::vector<SiteId> pruned_sites);
  PrunedBackend(const ModelBackend& inner, const PrunePlan& plan);

  std::string model_id() const override { return inner_.model_id(); }
  std::vector<SiteId> list_sites() const override { return inner_.list_sites(); }
  Dims3 grid() const override { return inner_.grid(); }
  double evaluate(const MaskRequest& request) const override;

  const std::vector<SiteId>& pruned_sites() const { return pruned_; }

 private:
  const ModelBackend& inner_;
  std::vector<SiteId> pruned_;
};

struct PruneEvaluation {
  double before = 0.0;
  double after = 0.0;
};

PruneEvaluation evaluate_pruning(const ModelBackend& backend, const PrunePlan& plan,
                                 std::span<const VideoTarget> videos);

// Axis-aligned random boxes pooled like tubelets; each axis spans between
// ceil(E/8) and floor(E/2) cells (at least 1).
std::vector<Tubelet> random_crop_baseline(std::span<const FeatureVolume> volumes, int n_crops, std::uint64_t seed);

// Frame `t` of channel 0 as a grey heatmap with the mask blended in red.
void write_overlay_ppm(const FeatureVolume& volume, const BinaryMask& mask, std::int64_t t,
                       const std::filesystem::path& path, int scale = 8);

}  // namespace vtcd
