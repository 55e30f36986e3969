#include "vtcd/concepts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "vtcd/random.hpp"

namespace vtcd {

using Eigen::MatrixXd;

namespace {

// Row order that depends only on row values.
std::vector<int> canonical_order(const MatrixXd& data) {
  std::vector<int> order(data.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      if (data(a, c) < data(b, c)) return true;
      if (data(a, c) > data(b, c)) return false;
    }
    return false;
  });
  return order;
}

MatrixXd permute_rows(const MatrixXd& m, std::span<const int> order) {
  MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < order.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(order[i]);
  return out;
}

std::vector<int> lloyd(const MatrixXd& data, MatrixXd centers, int iters, double* inertia) {
  const Eigen::Index m = data.rows();
  const Eigen::Index k = centers.rows();
  std::vector<int> labels(m, 0);
  for (int it = 0; it <= iters; ++it) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < k; ++c) {
        const double d = (data.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      labels[i] = best;
      total += best_d;
    }
    *inertia = total;
    if (it == iters) break;
    MatrixXd sums = MatrixXd::Zero(k, data.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < m; ++i) {
      sums.row(labels[i]) += data.row(i);
      ++counts[labels[i]];
    }
    for (Eigen::Index c = 0; c < k; ++c)
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
  }
  return labels;
}

// min_a ½aᵀHa − fᵀa subject to a ≥ 0 (Lawson–Hanson active set on the
// normal equations).
Eigen::VectorXd nnls_normal(const MatrixXd& hess, const Eigen::VectorXd& lin) {
  const Eigen::Index q = lin.size();
  Eigen::VectorXd a = Eigen::VectorXd::Zero(q);
  std::vector<bool> passive(q, false);
  const double tol = 1e-12 * std::max(1.0, lin.cwiseAbs().maxCoeff());
  for (int outer = 0; outer < 3 * q + 3; ++outer) {
    const Eigen::VectorXd grad = lin - hess * a;
    Eigen::Index enter = -1;
    for (Eigen::Index j = 0; j < q; ++j)
      if (!passive[j] && grad(j) > tol && (enter < 0 || grad(j) > grad(enter))) enter = j;
    if (enter < 0) break;
    passive[enter] = true;
    for (int inner = 0; inner < 3 * q + 3; ++inner) {
      std::vector<Eigen::Index> idx;
      for (Eigen::Index j = 0; j < q; ++j)
        if (passive[j]) idx.push_back(j);
      MatrixXd sub(idx.size(), idx.size());
      Eigen::VectorXd rhs(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        rhs(r) = lin(idx[r]);
        for (std::size_t c = 0; c < idx.size(); ++c) sub(r, c) = hess(idx[r], idx[c]);
      }
      const Eigen::VectorXd z = sub.completeOrthogonalDecomposition().solve(rhs);
      if (z.minCoeff() > 0.0) {
        a.setZero();
        for (std::size_t r = 0; r < idx.size(); ++r) a(idx[r]) = z(r);
        break;
      }
      double alpha = 1.0;
      for (std::size_t r = 0; r < idx.size(); ++r)
        if (z(r) <= 0.0) alpha = std::min(alpha, a(idx[r]) / (a(idx[r]) - z(r)));
      for (std::size_t r = 0; r < idx.size(); ++r) {
        a(idx[r]) += alpha * (z(r) - a(idx[r]));
        if (a(idx[r]) <= 1e-15) {
          a(idx[r]) = 0.0;
          passive[idx[r]] = false;
        }
      }
    }
  }
  return a;
}

}  // namespace

std::vector<int> kmeans_labels(const MatrixXd& data, int k, std::uint64_t seed, int iters, int restarts) {
  const auto order = canonical_order(data);
  const MatrixXd sorted = permute_rows(data, order);
  const int m = static_cast<int>(sorted.rows());

  std::vector<int> best_labels;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(restarts, 1); ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    MatrixXd centers(k, sorted.cols());
    std::vector<double> d2(m, std::numeric_limits<double>::infinity());
    int pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
    for (int c = 0; c < k; ++c) {
      centers.row(c) = sorted.row(pick);
      double total = 0.0;
      for (int i = 0; i < m; ++i) {
        d2[i] = std::min(d2[i], (sorted.row(i) - centers.row(c)).squaredNorm());
        total += d2[i];
      }
      if (c + 1 == k) break;
      if (total <= 0.0) {
        pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
        continue;
      }
      double target = rng.uniform() * total;
      pick = m - 1;
      for (int i = 0; i < m; ++i) {
        target -= d2[i];
        if (target < 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    double inertia = 0.0;
    auto labels = lloyd(sorted, centers, iters, &inertia);
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_labels = std::move(labels);
    }
  }

  std::vector<int> out(m);
  for (int i = 0; i < m; ++i) out[order[i]] = best_labels[i];
  return out;
}

double cnmf_objective(const MatrixXd& data, const MatrixXd& weights, const MatrixXd& assignments) {
  return (data - assignments * (weights.transpose() * data)).squaredNorm();
}

CnmfResult cnmf(const MatrixXd& input, int q, const CnmfOptions& options) {
  const Eigen::Index m = input.rows();
  if (q < 1) throw Error(ErrorCode::kInvalidArgument, "cluster count must be >= 1");
  if (q > m) throw Error(ErrorCode::kInvalidArgument, "cluster count exceeds number of rows");
  if (!input.allFinite()) throw Error(ErrorCode::kNonFiniteData, "CNMF input holds NaN/Inf");

  // Work in canonical row order so the outcome is permutation-equivariant.
  const auto order = canonical_order(input);
  const MatrixXd data = permute_rows(input, order);

  const auto labels = kmeans_labels(data, q, options.seed, options.kmeans_iters, options.kmeans_restarts);
  MatrixXd weights = MatrixXd::Zero(m, q);
  MatrixXd assign = MatrixXd::Constant(m, q, options.smoothing);
  for (Eigen::Index i = 0; i < m; ++i) {
    weights(i, labels[i]) = 1.0;
    assign(i, labels[i]) += 1.0;
  }
  for (int c = 0; c < q; ++c) {
    const double s = weights.col(c).sum();
    if (s > 0.0)
      weights.col(c) /= s;
    else
      weights.col(c).setConstant(1.0 / double(m));
  }

  const MatrixXd gram = data * data.transpose();
  const MatrixXd gram_pos = (gram.cwiseAbs() + gram) / 2.0;
  const MatrixXd gram_neg = (gram.cwiseAbs() - gram) / 2.0;
  const double floor = options.denominator_floor;
  const double scale = data.squaredNorm();

  CnmfResult result;
  double prev = cnmf_objective(data, weights, assign);
  result.objective_trace.push_back(prev);

  for (int iter = 1; iter <= options.max_iters; ++iter) {
    {
      const MatrixXd centroids = weights.transpose() * data;
      const MatrixXd hess = centroids * centroids.transpose();
      for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::VectorXd lin = centroids * data.row(i).transpose();
        const Eigen::VectorXd fit = nnls_normal(hess, lin);
        const Eigen::VectorXd cur = assign.row(i).transpose();
        // Keep the current row unless the solve strictly improves it.
        if (fit.dot(hess * fit) - 2.0 * fit.dot(lin) < cur.dot(hess * cur) - 2.0 * cur.dot(lin))
          assign.row(i) = fit.transpose();
      }
    }
    {
      const MatrixXd at_a = assign.transpose() * assign;
      const MatrixXd num = gram_pos * assign + gram_neg * weights * at_a;
      const MatrixXd den = (gram_neg * assign + gram_pos * weights * at_a).cwiseMax(floor);
      const MatrixXd updated = weights.cwiseProduct(num.cwiseQuotient(den).cwiseSqrt());
      // An unused concept (zero assignment column) keeps its weights.
      for (int c = 0; c < q; ++c)
        if (updated.col(c).sum() > 0.0) weights.col(c) = updated.col(c);
    }
    // Column-sum-1 renormalization; the reconstruction A·Gᵀ is unchanged.
    for (int c = 0; c < q; ++c) {
      const double s = weights.col(c).sum();
      if (s > 0.0) {
        weights.col(c) /= s;
        assign.col(c) *= s;
      }
    }

    const double obj = cnmf_objective(data, weights, assign);
    result.objective_trace.push_back(obj);
    result.iterations = iter;
    if (options.observer) {
      // Report in caller row order.
      MatrixXd w(m, q), a(m, q);
      for (Eigen::Index i = 0; i < m; ++i) {
        w.row(order[i]) = weights.row(i);
        a.row(order[i]) = assign.row(i);
      }
      options.observer(iter, w, a, obj);
    }
    const double rel = std::abs(prev - obj) / std::max(prev, std::numeric_limits<double>::min());
    prev = obj;
    if (rel < options.tol || obj <= 1e-24 * (1.0 + scale)) break;
  }

  result.weights.resize(m, q);
  result.assignments.resize(m, q);
  for (Eigen::Index i = 0; i < m; ++i) {
    result.weights.row(order[i]) = weights.row(i);
    result.assignments.row(order[i]) = assign.row(i);
  }
  result.centroids = result.weights.transpose() * input;
  return result;
}

std::vector<int> hard_assignment(const MatrixXd& assignments) {
  std::vector<int> out(assignments.rows(), 0);
  for (Eigen::Index i = 0; i < assignments.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < assignments.cols(); ++c)
      if (assignments(i, c) > assignments(i, best)) best = static_cast<int>(c);
    out[i] = best;
  }
  return out;
}

double mean_silhouette(const MatrixXd& data, std::span<const int> labels) {
  const Eigen::Index m = data.rows();
  if (m == 0) return 0.0;
  std::map<int, int> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) return 0.0;

  MatrixXd dist(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) dist(i, j) = (data.row(i) - data.row(j)).norm();

  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (sizes[labels[i]] == 1) continue;
    std::map<int, double> sum_to;
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) sum_to[labels[j]] += dist(i, j);
    const double a = sum_to[labels[i]] / double(sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, size] : sizes)
      if (label != labels[i]) b = std::min(b, sum_to[label] / double(size));
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / double(m);
}

ClusterCountSelection select_cluster_count(const MatrixXd& data, int q_min, int q_max, const CnmfOptions& options) {
  if (q_min < 2) throw Error(ErrorCode::kInvalidArgument, "q_min must be >= 2");
  if (q_max < q_min) throw Error(ErrorCode::kInvalidArgument, "q_max must be >= q_min");
  if (q_max > data.rows()) throw Error(ErrorCode::kInvalidArgument, "q_max exceeds number of tubelets");

  ClusterCountSelection sel;
  bool all_identical = true;
  for (Eigen::Index i = 1; i < data.rows() && all_identical; ++i)
    all_identical = (data.row(i) == data.row(0));
  if (all_identical) {
    sel.q = q_min;
    sel.degenerate = true;
    return sel;
  }

  for (int q = q_min; q <= q_max; ++q) {
    const auto res = cnmf(data, q, options);
    const auto labels = hard_assignment(res.assignments);
    sel.silhouettes.push_back(mean_silhouette(data, labels));
  }
  const double best = *std::max_element(sel.silhouettes.begin(), sel.silhouettes.end());
  sel.q = q_min + static_cast<int>(std::max_element(sel.silhouettes.begin(), sel.silhouettes.end()) -
                                   sel.silhouettes.begin());
  if (best > 0.0) {
    for (std::size_t i = 0; i < sel.silhouettes.size(); ++i)
      if (sel.silhouettes[i] >= kSilhouetteThreshold * best) {
        sel.q = q_min + static_cast<int>(i);
        break;
      }
  }
  return sel;
}

BinaryMask Concept::support_for(const std::string& video_id, const Dims3& dims) const {
  for (const auto& mask : support)
    if (mask.video_id == video_id) return mask;
  return empty_mask(video_id, dims);
}

std::int64_t Concept::support_size() const {
  std::int64_t n = 0;
  for (const auto& mask : support) n += mask.count();
  return n;
}

MatrixXd tubelet_matrix(std::span<const Tubelet> tubelets) {
  if (tubelets.empty()) return MatrixXd(0, 0);
  const auto c = static_cast<Eigen::Index>(tubelets.front().feature.size());
  MatrixXd t(static_cast<Eigen::Index>(tubelets.size()), c);
  for (std::size_t i = 0; i < tubelets.size(); ++i) {
    if (static_cast<Eigen::Index>(tubelets[i].feature.size()) != c)
      throw Error(ErrorCode::kInvalidArgument, "tubelet feature lengths differ");
    for (Eigen::Index j = 0; j < c; ++j) t(static_cast<Eigen::Index>(i), j) = tubelets[i].feature[j];
  }
  return t;
}

ConceptDiscovery build_concepts(std::span<const Tubelet> tubelets, const SiteId& site, QRange q_range,
                                const CnmfOptions& options) {
  for (const auto& t : tubelets)
    if (!(t.site == site)) throw Error(ErrorCode::kInvalidArgument, "tubelet from a different site");
  const int m = static_cast<int>(tubelets.size());
  if (m < 2 || m < q_range.min)
    throw Error(ErrorCode::kInvalidArgument, "need at least q_min (" + std::to_string(q_range.min) +
                                                 ") tubelets, got " + std::to_string(m));
  const MatrixXd data = tubelet_matrix(tubelets);
  const auto selection = select_cluster_count(data, q_range.min, std::min(q_range.max, m), options);
  const auto res = cnmf(data, selection.q, options);
  const auto hard = hard_assignment(res.assignments);

  // Drop concepts without members.
  std::vector<int> keep;
  for (int c = 0; c < selection.q; ++c)
    if (std::find(hard.begin(), hard.end(), c) != hard.end()) keep.push_back(c);
  std::vector<int> remap(selection.q, -1);
  for (std::size_t i = 0; i < keep.size(); ++i) remap[keep[i]] = static_cast<int>(i);

  ConceptDiscovery out;
  ConceptSet& set = out.set;
  set.site = site;
  set.q = static_cast<int>(keep.size());
  set.degenerate = selection.degenerate;
  set.silhouettes = selection.silhouettes;
  set.weights.resize(m, set.q);
  set.assignments.resize(m, set.q);
  set.centroids.resize(set.q, data.cols());
  for (int i = 0; i < set.q; ++i) {
    set.weights.col(i) = res.weights.col(keep[i]);
    set.assignments.col(i) = res.assignments.col(keep[i]);
    set.centroids.row(i) = res.centroids.row(keep[i]);
  }
  set.hard_assignment.resize(m);
  set.members.assign(set.q, {});
  for (int i = 0; i < m; ++i) {
    set.hard_assignment[i] = remap[hard[i]];
    set.members[set.hard_assignment[i]].push_back(i);
  }
  set.objective = cnmf_objective(data, set.weights, set.assignments);

  for (int c = 0; c < set.q; ++c) {
    Concept entry;
    entry.id = ConceptId{site, c};
    entry.centroid.resize(data.cols());
    for (Eigen::Index j = 0; j < data.cols(); ++j) entry.centroid[j] = set.centroids(c, j);
    // Union of member masks per video, videos in first-seen order.
    std::vector<std::string> videos;
    std::map<std::string, Grid> grids;
    std::map<std::string, Dims3> dims;
    for (int idx : set.members[c]) {
      const auto& t = tubelets[idx];
      auto [it, inserted] = grids.try_emplace(t.video_id, Grid(static_cast<std::size_t>(t.mask.dims.cells()), 0));
      if (inserted) {
        videos.push_back(t.video_id);
        dims[t.video_id] = t.mask.dims;
      }
      union_into(it->second, decode_rle(t.mask));
    }
    for (const auto& v : videos) entry.support.push_back(encode_rle(v, dims[v], grids[v]));
    out.concepts.push_back(std::move(entry));
  }
  return out;
}

}  // namespace vtcd
