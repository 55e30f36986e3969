#include "vtcd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "parallel.hpp"
#include "vtcd/random.hpp"

namespace vtcd {

const char* curve_direction_name(CurveDirection direction) {
  switch (direction) {
    case CurveDirection::kPositive: return "positive";
    case CurveDirection::kNegative: return "negative";
    case CurveDirection::kRandom: return "random";
  }
  return "?";
}

double trapezoid_auc(std::span<const CurvePoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += 0.5 * (points[i].metric + points[i - 1].metric) * (points[i].fraction - points[i - 1].fraction);
  return area;
}

MaskRequest concept_mask_request(std::span<const Concept> concepts, std::span<const int> removed,
                                 const VideoTarget& video, const Dims3& grid) {
  std::map<SiteId, Grid> merged;
  for (int i : removed) {
    const Concept& c = concepts[i];
    const BinaryMask m = c.support_for(video.video_id, grid);
    if (!(m.dims == grid)) throw Error(ErrorCode::kInvalidArgument, "concept " + c.id.str() + " is not on the backend grid");
    Grid g = decode_rle(m);
    auto [it, inserted] = merged.try_emplace(c.id.site, g);
    if (!inserted) union_into(it->second, g);
  }
  MaskRequest req{video.video_id, {}, video.target};
  for (auto& [site, g] : merged) req.masks.push_back({site, encode_rle(video.video_id, grid, g)});
  return req;
}

double masked_metric(std::span<const Concept> concepts, std::span<const int> removed, const ModelBackend& backend,
                     std::span<const VideoTarget> videos) {
  if (videos.empty()) throw Error(ErrorCode::kInvalidArgument, "no videos to evaluate");
  const Dims3 grid = backend.grid();
  double total = 0.0;
  for (const auto& v : videos) total += backend.evaluate(concept_mask_request(concepts, removed, v, grid));
  return total / double(videos.size());
}

namespace {

std::vector<CurvePoint> curve_points(std::span<const Concept> concepts, std::span<const int> order,
                                     const ModelBackend& backend, std::span<const VideoTarget> videos, int steps) {
  const int q = static_cast<int>(order.size());
  std::vector<CurvePoint> points;
  for (int s = 0; s < steps; ++s) {
    const double f = double(s) / double(steps - 1);
    const int n = static_cast<int>(std::llround(f * q));
    points.push_back({f, masked_metric(concepts, order.first(n), backend, videos)});
  }
  return points;
}

}  // namespace

CurveSet attribution_curves(std::span<const Concept> concepts, const ImportanceReport& report,
                            const ModelBackend& backend, std::span<const VideoTarget> videos,
                            const CurveOptions& options) {
  if (report.scores.size() != concepts.size())
    throw Error(ErrorCode::kInvalidArgument, "importance report does not cover the concepts");
  if (options.steps < 2) throw Error(ErrorCode::kInvalidArgument, "a curve needs at least 2 steps");
  if (options.random_orders < 1) throw Error(ErrorCode::kInvalidArgument, "random curve needs at least one order");

  const std::vector<int> positive = report.ranking();
  const std::vector<int> negative(positive.rbegin(), positive.rend());
  const int q = static_cast<int>(concepts.size());

  CurveSet out;
  out.positive.direction = CurveDirection::kPositive;
  out.negative.direction = CurveDirection::kNegative;
  out.random.direction = CurveDirection::kRandom;

  // Directions and random orders are independent jobs; each curve is sequential.
  const int jobs_total = 2 + options.random_orders;
  std::vector<std::vector<CurvePoint>> results(jobs_total);
  detail::parallel_for(0, jobs_total, options.jobs, [&](std::int64_t j) {
    if (j == 0) {
      results[j] = curve_points(concepts, positive, backend, videos, options.steps);
    } else if (j == 1) {
      results[j] = curve_points(concepts, negative, backend, videos, options.steps);
    } else {
      std::vector<int> order(q);
      std::iota(order.begin(), order.end(), 0);
      Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(j - 2)));
      for (int i = q - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
      results[j] = curve_points(concepts, order, backend, videos, options.steps);
    }
  });

  out.positive.points = std::move(results[0]);
  out.negative.points = std::move(results[1]);
  out.random.points = results[2];
  for (int j = 3; j < jobs_total; ++j)
    for (int s = 0; s < options.steps; ++s) out.random.points[s].metric += results[j][s].metric;
  for (auto& p : out.random.points) p.metric /= double(options.random_orders);

  for (auto* c : {&out.positive, &out.negative, &out.random}) c->auc = trapezoid_auc(c->points);
  return out;
}

void write_curve_csv(const AttributionCurve& curve, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  os.precision(17);
  os << "fraction,metric\n";
  for (const auto& p : curve.points) os << p.fraction << ',' << p.metric << '\n';
  if (!os) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

std::vector<GroundTruthMatch> concept_gt_miou(std::span<const Concept> concepts, const Dims3& grid,
                                              const std::map<std::string, std::vector<BinaryMask>>& groundtruth) {
  std::vector<GroundTruthMatch> out;
  for (const auto& [category, masks] : groundtruth) {
    GroundTruthMatch best{category, -1, 0.0};
    for (const auto& m : masks)
      if (!(m.dims == grid))
        throw Error(ErrorCode::kInvalidArgument, "groundtruth for " + category + " is not on the concept grid");
    for (int c = 0; c < static_cast<int>(concepts.size()); ++c) {
      double sum = 0.0;
      int counted = 0;
      for (const auto& m : masks) {
        const BinaryMask s = concepts[c].support_for(m.video_id, grid);
        if (!(s.dims == grid)) throw Error(ErrorCode::kInvalidArgument, "concept support is not on the given grid");
        const Grid a = decode_rle(s), b = decode_rle(m);
        if (union_count(a, b) == 0) continue;
        sum += grid_iou(a, b);
        ++counted;
      }
      const double miou = counted ? sum / counted : 0.0;
      if (best.concept_index < 0 || miou > best.miou) best = {category, c, miou};
    }
    out.push_back(best);
  }
  return out;
}

std::optional<int> select_best_concepts(std::span<const Concept> concepts, const std::string& video_id,
                                        const Dims3& grid, const BinaryMask& query) {
  const Dims3 frame{1, grid.h, grid.w};
  if (!(query.dims == frame)) throw Error(ErrorCode::kInvalidArgument, "query mask must cover exactly frame 0");
  const Grid q = decode_rle(query);
  const auto frame_cells = static_cast<std::size_t>(frame.cells());
  std::optional<int> best;
  double best_iou = 0.0;
  std::int64_t best_size = 0;
  for (int c = 0; c < static_cast<int>(concepts.size()); ++c) {
    const BinaryMask s = concepts[c].support_for(video_id, grid);
    if (!(s.dims == grid)) throw Error(ErrorCode::kInvalidArgument, "concept support is not on the given grid");
    const Grid full = decode_rle(s);
    const std::span<const std::uint8_t> first(full.data(), frame_cells);
    if (intersection_count(first, q) == 0) continue;
    const double iou = grid_iou(first, q);
    const std::int64_t size = concepts[c].support_size();
    if (!best || iou > best_iou || (iou == best_iou && size > best_size)) {
      best = c;
      best_iou = iou;
      best_size = size;
    }
  }
  return best;
}

PrunePlan prune_plan(const ImportanceReport& head_report, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw Error(ErrorCode::kInvalidArgument, "keep_fraction must lie in (0,1]");
  PrunePlan plan;
  plan.keep_fraction = keep_fraction;
  const auto order = head_report.ranking();
  for (int i : order) {
    plan.ranking.push_back(head_report.units[i]);
    plan.scores.push_back(head_report.scores[i]);
  }
  const int h = static_cast<int>(order.size());
  const int n_drop = static_cast<int>(std::llround((1.0 - keep_fraction) * h));
  for (int i = h - n_drop; i < h; ++i) plan.dropped.push_back(plan.ranking[i]);
  return plan;
}

Json prune_plan_to_json(const PrunePlan& plan) {
  return Json{{"ranking", plan.ranking}, {"scores", plan.scores}, {"keep_fraction", plan.keep_fraction},
              {"dropped", plan.dropped}};
}

PrunedBackend::PrunedBackend(const ModelBackend& inner, std::vector<SiteId> pruned_sites)
    : inner_(inner), pruned_(std::move(pruned_sites)) {
  const auto sites = inner_.list_sites();
  for (const auto& s : pruned_)
    if (std::find(sites.begin(), sites.end(), s) == sites.end())
      throw Error(ErrorCode::kInvalidArgument, "cannot prune unknown site " + s.tag());
}

namespace {

std::vector<SiteId> plan_sites(const ModelBackend& backend, const PrunePlan& plan) {
  std::vector<SiteId> sites;
  const auto heads = backend_heads(backend);
  for (const auto& name : plan.dropped) {
    auto it = std::find_if(heads.begin(), heads.end(), [&](const HeadUnit& h) { return h.name() == name; });
    if (it == heads.end()) throw Error(ErrorCode::kInvalidArgument, "backend has no head " + name);
    sites.insert(sites.end(), it->sites.begin(), it->sites.end());
  }
  return sites;
}

}  // namespace

PrunedBackend::PrunedBackend(const ModelBackend& inner, const PrunePlan& plan)
    : PrunedBackend(inner, plan_sites(inner, plan)) {}

double PrunedBackend::evaluate(const MaskRequest& request) const {
  MaskRequest req = request;
  const Dims3 grid = inner_.grid();
  for (const auto& s : pruned_) {
    auto it = std::find_if(req.masks.begin(), req.masks.end(), [&](const SiteMask& m) { return m.site == s; });
    if (it != req.masks.end())
      it->mask = full_mask(request.video_id, grid);
    else
      req.masks.push_back({s, full_mask(request.video_id, grid)});
  }
  return inner_.evaluate(req);
}

PruneEvaluation evaluate_pruning(const ModelBackend& backend, const PrunePlan& plan,
                                 std::span<const VideoTarget> videos) {
  if (videos.empty()) throw Error(ErrorCode::kInvalidArgument, "no videos to evaluate");
  const PrunedBackend pruned(backend, plan);
  PruneEvaluation e;
  for (const auto& v : videos) {
    const MaskRequest req{v.video_id, {}, v.target};
    e.before += backend.evaluate(req);
    e.after += pruned.evaluate(req);
  }
  e.before /= double(videos.size());
  e.after /= double(videos.size());
  return e;
}

std::vector<Tubelet> random_crop_baseline(std::span<const FeatureVolume> volumes, int n_crops, std::uint64_t seed) {
  if (n_crops < 1) throw Error(ErrorCode::kInvalidArgument, "n_crops must be >= 1");
  std::vector<Tubelet> out;
  for (std::size_t v = 0; v < volumes.size(); ++v) {
    const auto& vol = volumes[v];
    const Dims3 d = vol.dims;
    Rng rng(derive_seed(seed, v));
    auto axis = [&](std::int64_t extent, std::int64_t& start, std::int64_t& size) {
      const std::int64_t hi = std::max<std::int64_t>(1, extent / 2);
      const std::int64_t lo = std::min(hi, (extent + 7) / 8);
      size = lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
      start = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(extent - size + 1)));
    };
    for (int c = 0; c < n_crops; ++c) {
      std::int64_t t0, nt, h0, nh, w0, nw;
      axis(d.t, t0, nt);
      axis(d.h, h0, nh);
      axis(d.w, w0, nw);
      Grid g(static_cast<std::size_t>(d.cells()), 0);
      for (std::int64_t t = t0; t < t0 + nt; ++t)
        for (std::int64_t h = h0; h < h0 + nh; ++h)
          for (std::int64_t w = w0; w < w0 + nw; ++w) g[d.index(t, h, w)] = 1;
      out.push_back(pool_tubelet(vol, encode_rle(vol.video_id, d, g)));
    }
  }
  return out;
}

void write_overlay_ppm(const FeatureVolume& volume, const BinaryMask& mask, std::int64_t t,
                       const std::filesystem::path& path, int scale) {
  const Dims3 d = volume.dims;
  if (!(mask.dims == d)) throw Error(ErrorCode::kInvalidArgument, "overlay mask is not on the volume grid");
  if (t < 0 || t >= d.t) throw Error(ErrorCode::kInvalidArgument, "frame index out of range");
  if (scale < 1) throw Error(ErrorCode::kInvalidArgument, "scale must be >= 1");
  const Grid g = decode_rle(mask);
  float lo = volume.at(0, d.index(t, 0, 0)), hi = lo;
  for (std::int64_t i = 0; i < d.h * d.w; ++i) {
    lo = std::min(lo, volume.at(0, d.index(t, 0, 0) + i));
    hi = std::max(hi, volume.at(0, d.index(t, 0, 0) + i));
  }
  const double span = hi > lo ? double(hi - lo) : 1.0;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  os << "P6\n" << d.w * scale << ' ' << d.h * scale << "\n255\n";
  for (std::int64_t y = 0; y < d.h * scale; ++y)
    for (std::int64_t x = 0; x < d.w * scale; ++x) {
      const std::int64_t cell = d.index(t, y / scale, x / scale);
      const double grey = 255.0 * (volume.at(0, cell) - lo) / span;
      double r = grey, gr = grey, b = grey;
      if (g[cell]) {
        r = 0.5 * grey + 0.5 * 255.0;
        gr = 0.5 * grey;
        b = 0.5 * grey;
      }
      const char px[3] = {static_cast<char>(std::lround(r)), static_cast<char>(std::lround(gr)),
                          static_cast<char>(std::lround(b))};
      os.write(px, 3);
    }
  if (!os) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace vtcd
