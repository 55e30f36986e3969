#include "vtcd/importance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "parallel.hpp"
#include "vtcd/random.hpp"

namespace vtcd {

void SamplingPlan::validate() const {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "K must be >= 1");
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(ErrorCode::kInvalidArgument, "fraction must lie in (0,1)");
}

int SamplingPlan::draws(int units) const {
  validate();
  const int n = static_cast<int>(std::floor(fraction * units + 1e-9));
  if (n < 1)
    throw Error(ErrorCode::kInvalidArgument,
                "fraction " + std::to_string(fraction) + " masks no unit out of " + std::to_string(units));
  return n;
}

std::vector<int> ImportanceReport::ranking() const {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

Json report_to_json(const ImportanceReport& r) {
  return Json{{"units", r.units},
              {"scores", r.scores},
              {"K", r.k_used},
              {"fraction", r.fraction},
              {"seed", r.seed},
              {"baseline_metric", r.baseline_metric},
              {"method", r.method},
              {"inclusion_counts", r.inclusion_counts}};
}

ImportanceReport report_from_json(const Json& j) {
  ImportanceReport r;
  r.units = j.at("units").get<std::vector<std::string>>();
  r.scores = j.at("scores").get<std::vector<double>>();
  r.k_used = j.value("K", 0);
  r.fraction = j.value("fraction", 0.0);
  r.seed = j.value("seed", std::uint64_t{0});
  r.baseline_metric = j.value("baseline_metric", 0.0);
  r.method = j.value("method", std::string{});
  if (j.contains("inclusion_counts")) r.inclusion_counts = j.at("inclusion_counts").get<std::vector<std::int64_t>>();
  if (r.units.size() != r.scores.size()) throw Error(ErrorCode::kInvalidArgument, "report units and scores differ in length");
  return r;
}

namespace {

// A maskable unit: for each site it touches, one grid per video.
struct UnitMask {
  std::string name;
  std::vector<std::pair<SiteId, std::vector<Grid>>> parts;
};

class MaskingEngine {
 public:
  MaskingEngine(const ModelBackend& backend, std::span<const VideoTarget> videos, std::vector<UnitMask> units, int jobs)
      : backend_(backend), videos_(videos), units_(std::move(units)), jobs_(jobs) {
    if (videos_.empty()) throw Error(ErrorCode::kInvalidArgument, "importance needs at least one video");
    base_.resize(videos_.size());
    detail::parallel_for(0, static_cast<std::int64_t>(videos_.size()), jobs_, [&](std::int64_t v) {
      base_[v] = backend_.evaluate(MaskRequest{videos_[v].video_id, {}, videos_[v].target});
    });
  }

  double baseline() const {
    double s = 0.0;
    for (double b : base_) s += b;
    return s / double(base_.size());
  }

  const std::vector<UnitMask>& units() const { return units_; }

  MaskRequest request(std::span<const int> included, std::size_t video) const {
    std::map<SiteId, Grid> merged;
    for (int u : included)
      for (const auto& [site, grids] : units_[u].parts) {
        auto [it, inserted] = merged.try_emplace(site, grids[video]);
        if (!inserted) union_into(it->second, grids[video]);
      }
    MaskRequest req{videos_[video].video_id, {}, videos_[video].target};
    const Dims3 grid = backend_.grid();
    for (auto& [site, g] : merged) req.masks.push_back({site, encode_rle(videos_[video].video_id, grid, g)});
    return req;
  }

  // Mean over videos of (unmasked metric − masked metric).
  double drop(std::span<const int> included) const {
    double total = 0.0;
    for (std::size_t v = 0; v < videos_.size(); ++v) total += base_[v] - backend_.evaluate(request(included, v));
    return total / double(videos_.size());
  }

  int jobs() const { return jobs_; }

 private:
  const ModelBackend& backend_;
  std::span<const VideoTarget> videos_;
  std::vector<UnitMask> units_;
  int jobs_;
  std::vector<double> base_;
};

std::vector<UnitMask> concept_units(std::span<const Concept> concepts, const ModelBackend& backend,
                                    std::span<const VideoTarget> videos) {
  const auto sites = backend.list_sites();
  const Dims3 grid = backend.grid();
  std::vector<UnitMask> units;
  for (const auto& c : concepts) {
    if (std::find(sites.begin(), sites.end(), c.id.site) == sites.end())
      throw Error(ErrorCode::kInvalidArgument, "concept " + c.id.str() + " lives at a site the backend cannot mask");
    UnitMask u{c.id.str(), {}};
    std::vector<Grid> grids;
    for (const auto& v : videos) {
      const BinaryMask m = c.support_for(v.video_id, grid);
      if (!(m.dims == grid)) throw Error(ErrorCode::kInvalidArgument, "concept support grid differs from backend grid");
      grids.push_back(decode_rle(m));
    }
    u.parts.emplace_back(c.id.site, std::move(grids));
    units.push_back(std::move(u));
  }
  return units;
}

std::vector<UnitMask> head_units(const ModelBackend& backend, std::span<const VideoTarget> videos) {
  const Grid full(static_cast<std::size_t>(backend.grid().cells()), 1);
  std::vector<UnitMask> units;
  for (const auto& h : backend_heads(backend)) {
    UnitMask u{h.name(), {}};
    for (const auto& s : h.sites) u.parts.emplace_back(s, std::vector<Grid>(videos.size(), full));
    units.push_back(std::move(u));
  }
  if (units.empty()) throw Error(ErrorCode::kInvalidArgument, "backend exposes no attention-head sites");
  return units;
}

Json checkpoint_json(const SamplingPlan& plan, int units, std::span<const double> drops, std::int64_t done) {
  return Json{{"seed", plan.seed},
              {"K", plan.k},
              {"fraction", plan.fraction},
              {"units", units},
              {"done", done},
              {"drops", std::vector<double>(drops.begin(), drops.begin() + done)}};
}

ImportanceReport run_sampling(const MaskingEngine& engine, const SamplingPlan& plan, const RunOptions& options,
                              const char* method) {
  const int n_units = static_cast<int>(engine.units().size());
  const int draws = plan.draws(n_units);
  std::vector<double> drops(static_cast<std::size_t>(plan.k), 0.0);
  std::int64_t done = 0;

  if (!options.checkpoint.empty() && std::filesystem::exists(options.checkpoint)) {
    const Json cp = read_json_file(options.checkpoint);
    if (cp.value("seed", std::uint64_t{0}) == plan.seed && cp.value("K", 0) == plan.k &&
        cp.value("fraction", -1.0) == plan.fraction && cp.value("units", -1) == n_units) {
      const auto saved = cp.at("drops").get<std::vector<double>>();
      done = std::min<std::int64_t>(cp.value("done", std::int64_t{0}), static_cast<std::int64_t>(saved.size()));
      std::copy(saved.begin(), saved.begin() + done, drops.begin());
    }
  }

  const std::int64_t chunk = options.checkpoint.empty() ? plan.k : std::max(options.checkpoint_every, 1);
  while (done < plan.k) {
    const std::int64_t end = std::min<std::int64_t>(done + chunk, plan.k);
    detail::parallel_for(done, end, engine.jobs(), [&](std::int64_t k) {
      const auto sample = cris_sample(plan.seed, static_cast<std::uint64_t>(k), n_units, draws);
      drops[k] = engine.drop(sample);
    });
    done = end;
    if (!options.checkpoint.empty()) write_json_file(checkpoint_json(plan, n_units, drops, done), options.checkpoint);
  }

  // Sequential accumulation keeps scores independent of execution order.
  ImportanceReport report;
  report.method = method;
  report.k_used = plan.k;
  report.fraction = plan.fraction;
  report.seed = plan.seed;
  report.baseline_metric = engine.baseline();
  std::vector<double> sums(n_units, 0.0);
  report.inclusion_counts.assign(n_units, 0);
  for (int k = 0; k < plan.k; ++k)
    for (int u : cris_sample(plan.seed, static_cast<std::uint64_t>(k), n_units, draws)) {
      sums[u] += drops[k];
      ++report.inclusion_counts[u];
    }
  for (int u = 0; u < n_units; ++u) {
    report.units.push_back(engine.units()[u].name);
    double denom = double(plan.k);
    if (plan.estimator == ImportanceEstimator::kPerInclusion) denom = double(std::max<std::int64_t>(report.inclusion_counts[u], 1));
    report.scores.push_back(sums[u] / denom);
  }
  return report;
}

}  // namespace

std::vector<int> cris_sample(std::uint64_t seed, std::uint64_t index, int units, int draws) {
  Rng rng(derive_seed(seed, index));
  return rng.sample_without_replacement(units, draws);
}

std::vector<HeadUnit> backend_heads(const ModelBackend& backend) {
  std::map<std::pair<int, int>, HeadUnit> heads;
  for (const auto& s : backend.list_sites()) {
    if (!s.head) continue;
    auto& h = heads[{s.layer, *s.head}];
    h.layer = s.layer;
    h.head = *s.head;
    h.sites.push_back(s);
  }
  std::vector<HeadUnit> out;
  for (auto& [_, h] : heads) out.push_back(std::move(h));
  return out;
}

ImportanceReport occlusion_importance(std::span<const Concept> concepts, const ModelBackend& backend,
                                      std::span<const VideoTarget> videos, const RunOptions& options) {
  MaskingEngine engine(backend, videos, concept_units(concepts, backend, videos), options.jobs);
  const int n = static_cast<int>(concepts.size());
  ImportanceReport report;
  report.method = "occlusion";
  report.baseline_metric = engine.baseline();
  report.scores.assign(n, 0.0);
  report.inclusion_counts.assign(n, 1);
  detail::parallel_for(0, n, options.jobs, [&](std::int64_t i) {
    const int unit = static_cast<int>(i);
    report.scores[i] = engine.drop(std::span<const int>(&unit, 1));
  });
  for (const auto& u : engine.units()) report.units.push_back(u.name);
  report.k_used = n;
  return report;
}

ImportanceReport cris(std::span<const Concept> concepts, const ModelBackend& backend,
                      std::span<const VideoTarget> videos, const SamplingPlan& plan, const RunOptions& options) {
  plan.validate();
  if (concepts.empty()) throw Error(ErrorCode::kInvalidArgument, "no concepts to rank");
  MaskingEngine engine(backend, videos, concept_units(concepts, backend, videos), options.jobs);
  return run_sampling(engine, plan, options, "cris");
}

ImportanceReport head_importance(const ModelBackend& backend, std::span<const VideoTarget> videos,
                                 const SamplingPlan& plan, const RunOptions& options) {
  plan.validate();
  MaskingEngine engine(backend, videos, head_units(backend, videos), options.jobs);
  return run_sampling(engine, plan, options, "cris_heads");
}

std::vector<LayerImportance> per_layer_importance(const ImportanceReport& report, std::span<const Concept> concepts) {
  if (report.scores.size() != concepts.size())
    throw Error(ErrorCode::kInvalidArgument, "report does not cover the given concepts");
  const int q = static_cast<int>(concepts.size());
  const auto order = report.ranking();
  std::map<int, std::pair<double, int>> acc;
  for (int r = 0; r < q; ++r) {
    const double normalized = q > 1 ? 1.0 - double(r) / double(q - 1) : 1.0;
    auto& a = acc[concepts[order[r]].id.site.layer];
    a.first += normalized;
    a.second += 1;
  }
  std::vector<LayerImportance> out;
  for (const auto& [layer, a] : acc) out.push_back({layer, a.first / a.second, a.second});
  return out;
}

}  // namespace vtcd
