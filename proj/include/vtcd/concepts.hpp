#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vtcd/tensor_store.hpp"
#include "vtcd/tubelets.hpp"

namespace vtcd {

struct CnmfOptions {
  int max_iters = 500;
  // Relative objective change that ends the iteration.
  double tol = 1e-5;
  std::uint64_t seed = 0;
  int kmeans_iters = 10;
  int kmeans_restarts = 10;
  double smoothing = 0.2;
  double denominator_floor = 1e-9;
  // Called after every update (G already renormalized) with the iteration
  // number, combination weights, assignments and objective.
  std::function<void(int, const Eigen::MatrixXd&, const Eigen::MatrixXd&, double)> observer;
};

// Factorization T ≈ A · (Gᵀ T). Rows of T are data points (tubelets); each
// centroid is a convex combination of rows, so T may hold negative values.
struct CnmfResult {
  Eigen::MatrixXd weights;      // G, M × Q, columns sum to 1
  Eigen::MatrixXd assignments;  // A, M × Q, non-negative
  Eigen::MatrixXd centroids;    // Gᵀ T, Q × C
  std::vector<double> objective_trace;
  int iterations = 0;

  double objective() const { return objective_trace.empty() ? 0.0 : objective_trace.back(); }
};

double cnmf_objective(const Eigen::MatrixXd& data, const Eigen::MatrixXd& weights, const Eigen::MatrixXd& assignments);

// Seeded k-means++ with restarts, run on the rows in a canonical
// (lexicographic) order so the result does not depend on row order.
std::vector<int> kmeans_labels(const Eigen::MatrixXd& data, int k, std::uint64_t seed, int iters, int restarts);

CnmfResult cnmf(const Eigen::MatrixXd& data, int q, const CnmfOptions& options = {});

// argmax per row, ties to the lowest column.
std::vector<int> hard_assignment(const Eigen::MatrixXd& assignments);

// Mean silhouette with Euclidean distance. Singletons score 0; fewer than two
// non-empty clusters gives 0.
double mean_silhouette(const Eigen::MatrixXd& data, std::span<const int> labels);

struct ClusterCountSelection {
  int q = 2;
  bool degenerate = false;
  std::vector<double> silhouettes;  // index i ↔ q_min + i
};

inline constexpr double kSilhouetteThreshold = 0.9;

ClusterCountSelection select_cluster_count(const Eigen::MatrixXd& data, int q_min, int q_max,
                                           const CnmfOptions& options = {});

struct ConceptSet {
  SiteId site;
  int q = 0;
  Eigen::MatrixXd centroids;
  Eigen::MatrixXd weights;
  Eigen::MatrixXd assignments;
  std::vector<int> hard_assignment;
  std::vector<std::vector<int>> members;
  double objective = 0.0;
  bool degenerate = false;
  std::vector<double> silhouettes;  // index i ↔ q_min + i
};

struct ConceptId {
  SiteId site;
  int index = 0;

  auto operator<=>(const ConceptId&) const = default;
  bool operator==(const ConceptId&) const = default;
  std::string str() const { return site.tag() + "#" + std::to_string(index); }
};

// A cluster of tubelets; support holds the union of member masks per video.
struct Concept {
  ConceptId id;
  std::vector<double> centroid;
  std::vector<BinaryMask> support;

  // Empty mask when the concept has no member in that video.
  BinaryMask support_for(const std::string& video_id, const Dims3& dims) const;
  std::int64_t support_size() const;
};

struct ConceptDiscovery {
  ConceptSet set;
  std::vector<Concept> concepts;
};

struct QRange {
  int min = 2;
  int max = 10;
};

Eigen::MatrixXd tubelet_matrix(std::span<const Tubelet> tubelets);

ConceptDiscovery build_concepts(std::span<const Tubelet> tubelets, const SiteId& site, QRange q_range = {},
                                const CnmfOptions& options = {});

}  // namespace vtcd
