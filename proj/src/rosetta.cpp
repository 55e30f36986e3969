#include "vtcd/rosetta.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

namespace vtcd {

void MiningParams::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "epsilon must lie in (0,1]");
  if (!(delta >= 0.0 && delta < 1.0)) throw Error(ErrorCode::kInvalidArgument, "delta must lie in [0,1)");
}

Dims3 coarsest_common_grid(std::span<const Dims3> grids) {
  if (grids.empty()) throw Error(ErrorCode::kInvalidArgument, "no grids given");
  Dims3 out = grids.front();
  for (const auto& g : grids) {
    out.t = std::min(out.t, g.t);
    out.h = std::min(out.h, g.h);
    out.w = std::min(out.w, g.w);
  }
  return out;
}

Grid resample_nearest(std::span<const std::uint8_t> grid, const Dims3& from, const Dims3& to) {
  if (static_cast<std::int64_t>(grid.size()) != from.cells())
    throw Error(ErrorCode::kInvalidArgument, "grid size does not match source dims");
  if (from == to) return Grid(grid.begin(), grid.end());
  auto src = [](std::int64_t i, std::int64_t s, std::int64_t d) {
    return std::min<std::int64_t>(static_cast<std::int64_t>((double(i) + 0.5) * double(s) / double(d)), s - 1);
  };
  Grid out(static_cast<std::size_t>(to.cells()));
  for (std::int64_t t = 0; t < to.t; ++t)
    for (std::int64_t h = 0; h < to.h; ++h)
      for (std::int64_t w = 0; w < to.w; ++w)
        out[to.index(t, h, w)] = grid[from.index(src(t, from.t, to.t), src(h, from.h, to.h), src(w, from.w, to.w))];
  return out;
}

double r_score(std::span<const std::vector<BinaryMask>> supports, const Dims3& common_grid) {
  if (supports.size() < 2) throw Error(ErrorCode::kInvalidArgument, "R-score needs at least two concepts");
  const std::size_t n_videos = supports.front().size();
  for (const auto& s : supports) {
    if (s.size() != n_videos) throw Error(ErrorCode::kInvalidArgument, "video sets differ");
    for (std::size_t v = 0; v < n_videos; ++v)
      if (s[v].video_id != supports.front()[v].video_id) throw Error(ErrorCode::kInvalidArgument, "video sets differ");
  }
  std::int64_t inter = 0, uni = 0;
  for (std::size_t v = 0; v < n_videos; ++v) {
    Grid all_and(static_cast<std::size_t>(common_grid.cells()), 1);
    Grid any_or(static_cast<std::size_t>(common_grid.cells()), 0);
    for (const auto& s : supports) {
      const Grid g = resample_nearest(decode_rle(s[v]), s[v].dims, common_grid);
      for (std::size_t i = 0; i < g.size(); ++i) {
        all_and[i] = all_and[i] && g[i];
        any_or[i] = any_or[i] || g[i];
      }
    }
    inter += count_cells(all_and);
    uni += count_cells(any_or);
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

std::vector<int> top_epsilon(std::span<const double> importance, double epsilon) {
  const int n = static_cast<int>(importance.size());
  if (n == 0) return {};
  const int keep = std::clamp(static_cast<int>(std::ceil(epsilon * n - 1e-9)), 1, n);
  std::vector<double> sorted(importance.begin(), importance.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double cut = sorted[keep - 1];
  std::vector<int> out;
  for (int i = 0; i < n; ++i)
    if (importance[i] >= cut) out.push_back(i);
  return out;
}

std::vector<std::uint64_t> packed_support(const Concept& concept_entry, std::span<const std::string> videos,
                                          const Dims3& source_grid, const Dims3& grid) {
  const std::size_t cells = static_cast<std::size_t>(grid.cells());
  std::vector<std::uint64_t> bits((cells * videos.size() + 63) / 64, 0);
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const BinaryMask m = concept_entry.support_for(videos[v], source_grid);
    const Grid g = resample_nearest(decode_rle(m), m.dims, grid);
    for (std::size_t i = 0; i < cells; ++i)
      if (g[i]) {
        const std::size_t bit = v * cells + i;
        bits[bit / 64] |= std::uint64_t{1} << (bit % 64);
      }
  }
  return bits;
}

namespace {

double packed_r(std::span<const std::vector<std::uint64_t>* const> members) {
  std::int64_t inter = 0, uni = 0;
  const std::size_t words = members.front()->size();
  for (std::size_t w = 0; w < words; ++w) {
    std::uint64_t a = ~std::uint64_t{0}, o = 0;
    for (const auto* m : members) {
      a &= (*m)[w];
      o |= (*m)[w];
    }
    inter += std::popcount(a);
    uni += std::popcount(o);
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

// Calls fn(models) for every increasing d-combination of [0, n).
void for_each_combination(int n, int d, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  if (d > n) return;
  for (;;) {
    fn(idx);
    int i = d - 1;
    while (i >= 0 && idx[i] == n - d + i) --i;
    if (i < 0) return;
    ++idx[i];
    for (int j = i + 1; j < d; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace

std::vector<RosettaTuple> mine(std::span<const ModelConcepts> models, const MiningParams& params) {
  params.validate();
  const int n_models = static_cast<int>(models.size());
  if (n_models < 2) throw Error(ErrorCode::kInvalidArgument, "mining needs at least two models");
  for (const auto& m : models) {
    if (m.video_ids != models.front().video_ids) throw Error(ErrorCode::kInvalidArgument, "video sets differ");
    if (m.importance.size() != m.concepts.size())
      throw Error(ErrorCode::kInvalidArgument, "model " + m.model_id + " lacks importance for some concepts");
  }

  std::vector<Dims3> grids;
  for (const auto& m : models) grids.push_back(m.grid);
  const Dims3 common = coarsest_common_grid(grids);
  const auto& videos = models.front().video_ids;

  std::vector<std::vector<int>> survivors(n_models);
  std::vector<std::vector<std::vector<std::uint64_t>>> packed(n_models);
  for (int j = 0; j < n_models; ++j) {
    survivors[j] = top_epsilon(models[j].importance, params.epsilon);
    packed[j].resize(models[j].concepts.size());
    for (int c : survivors[j]) packed[j][c] = packed_support(models[j].concepts[c], videos, models[j].grid, common);
  }

  std::vector<RosettaTuple> out;
  for (int d = 2; d <= n_models; ++d) {
    std::vector<std::set<int>> next(n_models);
    for_each_combination(n_models, d, [&](const std::vector<int>& combo) {
      for (int m : combo)
        if (survivors[m].empty()) return;
      std::vector<std::size_t> pos(d, 0);
      std::vector<const std::vector<std::uint64_t>*> members(d);
      for (;;) {
        for (int i = 0; i < d; ++i) members[i] = &packed[combo[i]][survivors[combo[i]][pos[i]]];
        const double r = packed_r(members);
        if (r > params.delta) {
          RosettaTuple t;
          t.models = combo;
          for (int i = 0; i < d; ++i) {
            const int c = survivors[combo[i]][pos[i]];
            t.concepts.push_back(c);
            next[combo[i]].insert(c);
          }
          t.r_score = r;
          out.push_back(std::move(t));
        }
        int i = d - 1;
        while (i >= 0 && ++pos[i] == survivors[combo[i]].size()) pos[i--] = 0;
        if (i < 0) break;
      }
    });
    int alive_models = 0;
    for (int j = 0; j < n_models; ++j) {
      survivors[j].assign(next[j].begin(), next[j].end());
      alive_models += survivors[j].empty() ? 0 : 1;
    }
    if (alive_models < d + 1) break;
  }

  std::sort(out.begin(), out.end(), [](const RosettaTuple& a, const RosettaTuple& b) {
    if (a.d() != b.d()) return a.d() > b.d();
    if (a.r_score != b.r_score) return a.r_score > b.r_score;
    if (a.models != b.models) return a.models < b.models;
    return a.concepts < b.concepts;
  });
  return out;
}

Json tuples_to_json(std::span<const RosettaTuple> tuples, std::span<const ModelConcepts> models) {
  Json arr = Json::array();
  for (const auto& t : tuples) {
    Json model_ids = Json::array(), concept_ids = Json::array();
    for (int i = 0; i < t.d(); ++i) {
      model_ids.push_back(models[t.models[i]].model_id);
      concept_ids.push_back(models[t.models[i]].concepts[t.concepts[i]].id.str());
    }
    arr.push_back({{"models", model_ids}, {"concept_ids", concept_ids}, {"d", t.d()}, {"r_score", t.r_score}});
  }
  return arr;
}

}  // namespace vtcd
