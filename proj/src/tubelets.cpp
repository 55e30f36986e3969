#include "vtcd/tubelets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace vtcd {

void SlicParams::validate() const {
  if (n_segments < 1) throw Error(ErrorCode::kInvalidArgument, "n_segments must be >= 1");
  if (!(compactness > 0.0) || !std::isfinite(compactness))
    throw Error(ErrorCode::kInvalidArgument, "compactness must be > 0");
  if (max_iters < 1) throw Error(ErrorCode::kInvalidArgument, "max_iters must be >= 1");
  if (!(min_size_fraction > 0.0 && min_size_fraction < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "min_size_fraction must lie in (0,1)");
}

namespace {

struct Coord {
  std::int64_t t, h, w;
};

Coord coord_of(const Dims3& d, std::int64_t cell) {
  return {cell / (d.h * d.w), (cell / d.w) % d.h, cell % d.w};
}

template <typename F>
void for_each_face_neighbor(const Dims3& d, std::int64_t cell, F&& f) {
  const Coord c = coord_of(d, cell);
  if (c.t > 0) f(cell - d.h * d.w);
  if (c.t + 1 < d.t) f(cell + d.h * d.w);
  if (c.h > 0) f(cell - d.w);
  if (c.h + 1 < d.h) f(cell + d.w);
  if (c.w > 0) f(cell - 1);
  if (c.w + 1 < d.w) f(cell + 1);
}

}  // namespace

std::array<std::int64_t, 3> seed_grid_counts(const Dims3& dims, int n_segments) {
  std::array<std::int64_t, 3> best{1, 1, 1};
  std::int64_t best_product = 0;
  double best_ratio = std::numeric_limits<double>::infinity();
  const std::int64_t n = n_segments;
  for (std::int64_t kt = 1; kt <= std::min(dims.t, n); ++kt)
    for (std::int64_t kh = 1; kh <= std::min(dims.h, n / kt); ++kh)
      for (std::int64_t kw = 1; kw <= std::min(dims.w, n / (kt * kh)); ++kw) {
        const std::int64_t product = kt * kh * kw;
        const double st = double(dims.t) / kt, sh = double(dims.h) / kh, sw = double(dims.w) / kw;
        const double ratio = std::max({st, sh, sw}) / std::min({st, sh, sw});
        if (product > best_product || (product == best_product && ratio < best_ratio - 1e-12)) {
          best = {kt, kh, kw};
          best_product = product;
          best_ratio = ratio;
        }
      }
  return best;
}

std::vector<double> feature_gradient(const FeatureVolume& volume) {
  const Dims3& d = volume.dims;
  const std::int64_t n = d.cells();
  std::vector<double> grad(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t cell = 0; cell < n; ++cell) {
    const Coord c = coord_of(d, cell);
    const std::int64_t lo[3] = {std::max<std::int64_t>(c.t - 1, 0), std::max<std::int64_t>(c.h - 1, 0),
                                std::max<std::int64_t>(c.w - 1, 0)};
    const std::int64_t hi[3] = {std::min(c.t + 1, d.t - 1), std::min(c.h + 1, d.h - 1), std::min(c.w + 1, d.w - 1)};
    const std::int64_t pairs[3][2] = {{d.index(lo[0], c.h, c.w), d.index(hi[0], c.h, c.w)},
                                      {d.index(c.t, lo[1], c.w), d.index(c.t, hi[1], c.w)},
                                      {d.index(c.t, c.h, lo[2]), d.index(c.t, c.h, hi[2])}};
    double g = 0.0;
    for (const auto& p : pairs)
      for (std::int64_t ch = 0; ch < volume.channels; ++ch) {
        const double diff = double(volume.at(ch, p[1])) - double(volume.at(ch, p[0]));
        g += diff * diff;
      }
    grad[cell] = g;
  }
  return grad;
}

std::vector<int> slic_labels(const FeatureVolume& volume, const SlicParams& params) {
  params.validate();
  volume.validate();
  const Dims3& d = volume.dims;
  const std::int64_t n_cells = d.cells();
  if (params.n_segments > n_cells)
    throw Error(ErrorCode::kInvalidArgument, "n_segments (" + std::to_string(params.n_segments) +
                                                 ") exceeds cell count (" + std::to_string(n_cells) + ")");
  const std::int64_t channels = volume.channels;
  const double step = std::cbrt(double(n_cells) / params.n_segments);
  const double spatial_weight = params.compactness * params.compactness / (step * step);

  // Regular seed grid, each seed nudged to the lowest-gradient cell nearby.
  const auto counts = seed_grid_counts(d, params.n_segments);
  const auto grad = feature_gradient(volume);
  // Center layout: [features..., t, h, w]. A seed that stays put keeps the
  // exact center of its grid cell.
  const std::size_t stride = static_cast<std::size_t>(channels) + 3;
  std::vector<double> centers;
  for (std::int64_t i = 0; i < counts[0]; ++i)
    for (std::int64_t j = 0; j < counts[1]; ++j)
      for (std::int64_t k = 0; k < counts[2]; ++k) {
        const double pos[3] = {(i + 0.5) * d.t / counts[0] - 0.5, (j + 0.5) * d.h / counts[1] - 0.5,
                               (k + 0.5) * d.w / counts[2] - 0.5};
        const std::int64_t t = std::llround(std::floor(pos[0] + 0.5)), h = std::llround(std::floor(pos[1] + 0.5)),
                           w = std::llround(std::floor(pos[2] + 0.5));
        std::int64_t best = d.index(t, h, w);
        for (std::int64_t dt = -1; dt <= 1; ++dt)
          for (std::int64_t dh = -1; dh <= 1; ++dh)
            for (std::int64_t dw = -1; dw <= 1; ++dw) {
              const std::int64_t tt = t + dt, hh = h + dh, ww = w + dw;
              if (tt < 0 || hh < 0 || ww < 0 || tt >= d.t || hh >= d.h || ww >= d.w) continue;
              const std::int64_t cand = d.index(tt, hh, ww);
              if (grad[cand] < grad[best]) best = cand;
            }
        for (std::int64_t ch = 0; ch < channels; ++ch) centers.push_back(volume.at(ch, best));
        if (best == d.index(t, h, w)) {
          centers.insert(centers.end(), pos, pos + 3);
        } else {
          const Coord c = coord_of(d, best);
          centers.insert(centers.end(), {double(c.t), double(c.h), double(c.w)});
        }
      }
  const std::size_t k_centers = centers.size() / stride;

  std::vector<int> labels(static_cast<std::size_t>(n_cells), -1);
  std::vector<double> sums(k_centers * stride);
  std::vector<std::int64_t> sizes(k_centers);
  for (int iter = 0; iter < params.max_iters; ++iter) {
    bool changed = false;
    for (std::int64_t cell = 0; cell < n_cells; ++cell) {
      const Coord c = coord_of(d, cell);
      int best = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < k_centers; ++k) {
        const double* center = &centers[k * stride];
        double feat = 0.0;
        for (std::int64_t ch = 0; ch < channels; ++ch) {
          const double diff = double(volume.at(ch, cell)) - center[ch];
          feat += diff * diff;
        }
        const double dt = c.t - center[channels], dh = c.h - center[channels + 1], dw = c.w - center[channels + 2];
        const double dist = feat / double(channels) + spatial_weight * (dt * dt + dh * dh + dw * dw);
        if (dist < best_dist) {
          best_dist = dist;
          best = static_cast<int>(k);
        }
      }
      if (labels[cell] != best) {
        labels[cell] = best;
        changed = true;
      }
    }
    if (!changed) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(sizes.begin(), sizes.end(), 0);
    for (std::int64_t cell = 0; cell < n_cells; ++cell) {
      const std::size_t k = static_cast<std::size_t>(labels[cell]);
      const Coord c = coord_of(d, cell);
      for (std::int64_t ch = 0; ch < channels; ++ch) sums[k * stride + ch] += volume.at(ch, cell);
      sums[k * stride + channels] += double(c.t);
      sums[k * stride + channels + 1] += double(c.h);
      sums[k * stride + channels + 2] += double(c.w);
      ++sizes[k];
    }
    for (std::size_t k = 0; k < k_centers; ++k) {
      if (sizes[k] == 0) continue;
      for (std::size_t j = 0; j < stride; ++j) centers[k * stride + j] = sums[k * stride + j] / double(sizes[k]);
    }
  }
  return labels;
}

std::vector<int> connected_components(const Dims3& dims, std::span<const int> labels, int* n_components) {
  const std::int64_t n = dims.cells();
  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  int next = 0;
  std::vector<std::int64_t> stack;
  for (std::int64_t start = 0; start < n; ++start) {
    if (comp[start] >= 0) continue;
    comp[start] = next;
    stack.assign(1, start);
    while (!stack.empty()) {
      const std::int64_t cell = stack.back();
      stack.pop_back();
      for_each_face_neighbor(dims, cell, [&](std::int64_t nb) {
        if (comp[nb] < 0 && labels[nb] == labels[cell]) {
          comp[nb] = next;
          stack.push_back(nb);
        }
      });
    }
    ++next;
  }
  if (n_components) *n_components = next;
  return comp;
}

bool is_six_connected(const Dims3& dims, std::span<const std::uint8_t> grid) {
  std::vector<int> labels(grid.size());
  std::int64_t first = -1;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    labels[i] = grid[i] ? 1 : 0;
    if (grid[i] && first < 0) first = static_cast<std::int64_t>(i);
  }
  if (first < 0) return false;
  const auto comp = connected_components(dims, labels);
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (grid[i] && comp[i] != comp[first]) return false;
  return true;
}

namespace {

// Repeatedly folds the smallest offending component into its largest
// face-adjacent neighbour. A component offends when it is below the size
// floor, or while there are more components than requested segments.
std::vector<int> enforce_connectivity(const Dims3& dims, std::vector<int> labels, double size_floor,
                                      int max_components) {
  for (;;) {
    int n_comp = 0;
    auto comp = connected_components(dims, labels, &n_comp);
    if (n_comp <= 1) return comp;
    std::vector<std::int64_t> size(n_comp, 0);
    for (int c : comp) ++size[c];

    // Smallest component; ties resolved by first appearance.
    int victim = 0;
    for (int c = 1; c < n_comp; ++c)
      if (size[c] < size[victim]) victim = c;
    const bool too_small = double(size[victim]) < size_floor;
    if (!too_small && n_comp <= max_components) return comp;

    int target = -1;
    for (std::int64_t cell = 0; cell < dims.cells(); ++cell) {
      if (comp[cell] != victim) continue;
      for_each_face_neighbor(dims, cell, [&](std::int64_t nb) {
        const int c = comp[nb];
        if (c == victim) return;
        if (target < 0 || size[c] > size[target] || (size[c] == size[target] && c < target)) target = c;
      });
    }
    // Connected grid: a component that is not the whole grid has a neighbour.
    std::int64_t target_cell = 0;
    while (comp[target_cell] != target) ++target_cell;
    const int target_label = labels[target_cell];
    for (std::int64_t cell = 0; cell < dims.cells(); ++cell)
      if (comp[cell] == victim) labels[cell] = target_label;
    // Distinct components may share a raw label; give every component its own
    // label so later merges cannot accidentally fuse non-adjacent parts.
    int n_after = 0;
    auto relabeled = connected_components(dims, labels, &n_after);
    labels.assign(relabeled.begin(), relabeled.end());
  }
}

}  // namespace

std::vector<BinaryMask> slic_segment(const FeatureVolume& volume, const SlicParams& params) {
  auto labels = slic_labels(volume, params);
  const Dims3& d = volume.dims;
  // Start from per-component labels so fragments of one SLIC label are
  // handled independently.
  auto comp = connected_components(d, labels);
  const double floor = params.min_size_fraction * double(d.cells()) / params.n_segments;
  comp = enforce_connectivity(d, std::move(comp), floor, params.n_segments);

  const int n_comp = comp.empty() ? 0 : *std::max_element(comp.begin(), comp.end()) + 1;
  std::vector<BinaryMask> masks;
  masks.reserve(n_comp);
  Grid grid(static_cast<std::size_t>(d.cells()));
  for (int c = 0; c < n_comp; ++c) {
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = comp[i] == c ? 1 : 0;
    masks.push_back(encode_rle(volume.video_id, d, grid));
  }
  return masks;
}

Tubelet pool_tubelet(const FeatureVolume& volume, const BinaryMask& mask) {
  if (!(mask.dims == volume.dims)) throw Error(ErrorCode::kInvalidArgument, "mask dims differ from volume dims");
  const Grid grid = decode_rle(mask);
  Tubelet tubelet{volume.video_id, volume.site, mask, std::vector<double>(volume.channels, 0.0), 0};
  for (std::int64_t cell = 0; cell < volume.dims.cells(); ++cell) {
    if (!grid[cell]) continue;
    ++tubelet.size;
    for (std::int64_t ch = 0; ch < volume.channels; ++ch) tubelet.feature[ch] += volume.at(ch, cell);
  }
  if (tubelet.size == 0) throw Error(ErrorCode::kInvalidArgument, "cannot pool over an empty mask");
  for (double& v : tubelet.feature) v /= double(tubelet.size);
  return tubelet;
}

std::vector<Tubelet> extract_tubelets(const FeatureVolume& volume, const SlicParams& params) {
  std::vector<Tubelet> out;
  for (const auto& mask : slic_segment(volume, params)) out.push_back(pool_tubelet(volume, mask));
  return out;
}

}  // namespace vtcd
