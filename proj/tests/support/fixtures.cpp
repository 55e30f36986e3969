#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vtcd/store.hpp"

namespace vtcd::testing {

FeatureVolume random_volume(Rng& rng, std::int64_t c, const Dims3& d, const std::string& video) {
  FeatureVolume v(video, SiteId::residual("m", 1), c, d);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

FeatureVolume two_region_volume(const Dims3& d, std::int64_t channels, double lo, double hi,
                                const std::string& video) {
  FeatureVolume v(video, SiteId::residual("m", 1), channels, d);
  for (std::int64_t t = 0; t < d.t; ++t)
    for (std::int64_t h = 0; h < d.h; ++h)
      for (std::int64_t w = 0; w < d.w; ++w) v.at(0, d.index(t, h, w)) = static_cast<float>(w < d.w / 2 ? lo : hi);
  return v;
}

Grid random_grid(Rng& rng, std::int64_t cells, double p) {
  Grid g(static_cast<std::size_t>(cells));
  for (auto& x : g) x = rng.uniform() < p ? 1 : 0;
  return g;
}

PlantedFixture planted_fixture(const std::vector<double>& proportions, int n_null, int n_videos, std::uint64_t seed) {
  const Dims3 grid{2, 4, 4};
  const std::int64_t cells = grid.cells();
  const std::int64_t region_cells = 20;
  Rng rng(seed);

  std::vector<std::int64_t> order(cells);
  std::iota(order.begin(), order.end(), 0);
  for (std::int64_t i = cells - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  Grid region(cells, 0);
  for (std::int64_t i = 0; i < region_cells; ++i) region[order[i]] = 1;

  PlantedFixture f;
  f.videos = std::make_shared<VideoStore>();
  std::vector<std::string> ids;
  for (int v = 0; v < n_videos; ++v) {
    const std::string id = "vid" + std::to_string(v);
    ids.push_back(id);
    FeatureVolume vol(id, SiteId::residual("planted", 1), 2, grid);
    for (std::int64_t c = 0; c < cells; ++c) {
      vol.at(0, c) = region[c] ? 1.0f : static_cast<float>(rng.uniform(0.0, 1.0));
      vol.at(1, c) = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    (*f.videos)[id] = vol;
  }
  f.backend = std::make_unique<PlantedOracle>(encode_rle("region", grid, region), 2, 3, f.videos);

  // Region cells split by proportion, the rest split across null concepts.
  std::vector<Grid> members;
  std::int64_t next = 0;
  double acc = 0.0;
  for (double p : proportions) {
    acc += p;
    const std::int64_t end = std::llround(acc * region_cells);
    Grid g(cells, 0);
    for (; next < end; ++next) g[order[next]] = 1;
    members.push_back(g);
    f.covered.push_back(p);
  }
  const std::int64_t outside = cells - region_cells;
  for (int n = 0; n < n_null; ++n) {
    Grid g(cells, 0);
    const std::int64_t a = region_cells + outside * n / std::max(n_null, 1);
    const std::int64_t b = region_cells + outside * (n + 1) / std::max(n_null, 1);
    for (std::int64_t i = a; i < b; ++i) g[order[i]] = 1;
    members.push_back(g);
    f.covered.push_back(0.0);
  }
  const SiteId site = f.backend->read_site();
  for (std::size_t i = 0; i < members.size(); ++i) {
    Concept c;
    c.id = {site, static_cast<int>(i)};
    for (const auto& id : ids) c.support.push_back(encode_rle(id, grid, members[i]));
    f.concepts.push_back(c);
  }
  for (const auto& id : ids) f.targets.push_back({id, TaskTarget::regression(0.0)});
  return f;
}

std::shared_ptr<VideoStore> random_videos(const ToyConfig& config, int n, std::uint64_t seed) {
  auto store = std::make_shared<VideoStore>();
  Rng rng(seed);
  for (int v = 0; v < n; ++v) {
    const std::string id = "vid" + std::to_string(v);
    FeatureVolume vol(id, SiteId::residual("input", 1), config.in_channels, config.grid);
    for (auto& x : vol.data) x = static_cast<float>(rng.normal(0.0, 1.0));
    (*store)[id] = vol;
  }
  return store;
}

std::vector<VideoTarget> pinned_regression_targets(const NativeBackend& backend, const std::vector<std::string>& ids) {
  std::vector<VideoTarget> out;
  for (const auto& id : ids) out.push_back({id, TaskTarget::regression(backend.forward(id, {}).logits[0])});
  return out;
}

namespace {

std::vector<std::string> store_ids(const VideoStore& store) {
  std::vector<std::string> ids;
  for (const auto& [id, _] : store) ids.push_back(id);
  return ids;
}

}  // namespace

HeadFixture decorative_heads_fixture(std::uint64_t seed) {
  ToyConfig cfg;
  cfg.layers = 3;
  cfg.heads = 4;
  cfg.dim = 16;
  cfg.grid = {2, 3, 3};
  cfg.in_channels = 4;
  cfg.classes = 3;
  cfg.seed = seed;
  cfg.init_std = 0.2;
  HeadFixture f;
  f.videos = random_videos(cfg, 4, seed + 1);
  ToyWeights w = ToyWeights::random(cfg);
  // A dominant embedding bias makes every token's normalized input nearly the
  // same vector, so each head writes an almost constant, additive update.
  Rng bias_rng(seed + 3);
  for (Eigen::Index i = 0; i < w.embed_bias.size(); ++i) w.embed_bias(i) = bias_rng.normal(0.0, 5.0);
  f.backend = std::make_unique<ToyTransformer>(cfg, std::move(w), f.videos, "toy");
  const int dh = cfg.dim / cfg.heads;
  const std::vector<std::pair<int, int>> decorative{{1, 3}, {2, 1}, {2, 2}, {3, 0}};
  const std::vector<std::pair<int, int>> weak{{1, 1}, {3, 2}};
  for (auto [l, h] : decorative) {
    f.backend->zero_head_output(l, h);
    f.decorative.push_back("L" + std::to_string(l) + "_H" + std::to_string(h));
  }
  for (auto [l, h] : weak) f.weak.push_back("L" + std::to_string(l) + "_H" + std::to_string(h));

  // Flip and rescale output projections until every live head, masked on top
  // of a random half of the other heads, lowers logit 0 by about 0.03 on
  // average (0.01 for the weak heads).
  const auto ids = store_ids(*f.videos);
  const auto heads = backend_heads(*f.backend);
  auto masks_for = [&](const std::vector<int>& units, const std::string& id) {
    std::vector<SiteMask> masks;
    for (int u : units)
      for (const auto& site : heads[u].sites) masks.push_back({site, full_mask(id, cfg.grid)});
    return masks;
  };
  auto listed = [](const std::vector<std::string>& names, const std::string& name) {
    return std::find(names.begin(), names.end(), name) != names.end();
  };
  for (int round = 0; round < 40; ++round) {
    bool settled = true;
    for (int u = 0; u < static_cast<int>(heads.size()); ++u) {
      if (listed(f.decorative, heads[u].name())) continue;
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(u)));
      double effect = 0.0;
      int n = 0;
      for (int s = 0; s < 32; ++s) {
        std::vector<int> others;
        for (int v = 0; v < static_cast<int>(heads.size()); ++v)
          if (v != u && rng.uniform() < 0.5) others.push_back(v);
        auto with = others;
        with.push_back(u);
        for (const auto& id : ids) {
          effect += f.backend->forward(id, masks_for(others, id)).logits[0] -
                    f.backend->forward(id, masks_for(with, id)).logits[0];
          ++n;
        }
      }
      effect /= n;
      const double want = listed(f.weak, heads[u].name()) ? 0.01 : 0.03;
      if (std::abs(effect - want) > 0.1 * want) settled = false;
      const double scale = effect <= 0.0 ? -1.0 : std::clamp(want / effect, 0.5, 2.0);
      f.backend->mutable_weights().layers[heads[u].layer - 1].wo.middleCols(heads[u].head * dh, dh) *= scale;
    }
    if (settled) break;
  }
  f.targets = pinned_regression_targets(*f.backend, ids);
  return f;
}

HeadFixture dependency_head_fixture(std::uint64_t seed) {
  ToyConfig cfg;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.dim = 16;
  cfg.grid = {2, 3, 3};
  cfg.in_channels = 4;
  cfg.classes = 3;
  cfg.seed = seed;
  cfg.init_std = 0.05;
  HeadFixture f;
  f.videos = random_videos(cfg, 4, seed + 1);
  ToyWeights w = ToyWeights::random(cfg);
  Rng rng(seed + 2);
  const int dh = cfg.dim / cfg.heads;
  // Head L1_H0 carries a large value path; everything else is near zero.
  for (int i = 0; i < dh; ++i)
    for (int j = 0; j < cfg.dim; ++j) w.layers[0].wv(i, j) = rng.normal(0.0, 1.0);
  for (int i = 0; i < cfg.dim; ++i)
    for (int j = 0; j < dh; ++j) w.layers[0].wo(i, j) = rng.normal(0.0, 3.0);
  for (int i = 0; i < cfg.classes; ++i)
    for (int j = 0; j < cfg.dim; ++j) w.cls(i, j) = rng.normal(0.0, 3.0);
  f.backend = std::make_unique<ToyTransformer>(cfg, std::move(w), f.videos, "toy");
  for (const auto& id : store_ids(*f.videos)) {
    const auto p = f.backend->forward(id, {});
    const int best = static_cast<int>(std::max_element(p.logits.begin(), p.logits.end()) - p.logits.begin());
    f.targets.push_back({id, TaskTarget::class_score(best)});
  }
  return f;
}

std::vector<ModelConcepts> random_models(int n_models, int n_concepts, const Dims3& grid, int n_videos,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> videos;
  for (int v = 0; v < n_videos; ++v) videos.push_back("vid" + std::to_string(v));
  // A few shared blobs make high-R tuples likely.
  std::vector<std::vector<Grid>> blobs;
  for (int b = 0; b < 3; ++b) {
    std::vector<Grid> per_video;
    for (int v = 0; v < n_videos; ++v) per_video.push_back(random_grid(rng, grid.cells(), 0.3));
    blobs.push_back(per_video);
  }
  std::vector<ModelConcepts> out;
  for (int m = 0; m < n_models; ++m) {
    ModelConcepts mc;
    mc.model_id = "model" + std::to_string(m);
    mc.video_ids = videos;
    mc.grid = grid;
    const SiteId site = SiteId::residual(mc.model_id, 1);
    for (int c = 0; c < n_concepts; ++c) {
      Concept con;
      con.id = {site, c};
      const bool from_blob = rng.uniform() < 0.5;
      const auto& blob = blobs[rng.below(blobs.size())];
      for (int v = 0; v < n_videos; ++v) {
        Grid g = from_blob ? blob[v] : random_grid(rng, grid.cells(), 0.25);
        // Perturb so models never agree exactly.
        for (auto& x : g)
          if (rng.uniform() < 0.08) x = 1 - x;
        con.support.push_back(encode_rle(videos[v], grid, g));
      }
      mc.concepts.push_back(con);
      mc.importance.push_back(std::floor(rng.uniform() * 10.0) / 10.0);
    }
    out.push_back(std::move(mc));
  }
  return out;
}

std::filesystem::path temp_dir(const std::string& name, bool clear) {
  auto p = std::filesystem::temp_directory_path() / ("vtcd_test_" + name);
  if (clear) std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace vtcd::testing

namespace vtcd::testing {

Workspace write_toy_workspace(const std::filesystem::path& dir, const ToyConfig& config, int n_videos,
                              std::uint64_t seed, const std::string& model_id) {
  Workspace ws;
  ws.root = dir;
  std::filesystem::create_directories(dir / "inputs");
  Json weights = toy_to_json(config, ToyWeights::random(config));
  weights["model_id"] = model_id;
  ws.weights = dir / "weights.json";
  write_json_file(weights, ws.weights);
  const auto videos = random_videos(config, n_videos, seed);
  VideoSetManifest m;
  for (const auto& [id, vol] : *videos) {
    m.video_ids.push_back(id);
    write_volume(vol, dir / "inputs" / (id + ".vtcd"));
    m.inputs[id] = "inputs/" + id + ".vtcd";
  }
  ws.manifest = dir / "manifest.json";
  m.write(ws.manifest);
  return ws;
}

Workspace write_planted_workspace(const std::filesystem::path& dir, const PlantedFixture& fixture) {
  Workspace ws;
  ws.root = dir;
  std::filesystem::create_directories(dir / "inputs");
  VideoSetManifest m;
  SiteEntry entry{fixture.backend->read_site(), 0, fixture.backend->grid(), {}};
  for (const auto& [id, vol] : *fixture.videos) {
    m.video_ids.push_back(id);
    write_volume(vol, dir / "inputs" / (id + ".vtcd"));
    m.inputs[id] = "inputs/" + id + ".vtcd";
    entry.files[id] = "inputs/" + id + ".vtcd";
    entry.channels = vol.channels;
  }
  m.sites.push_back(entry);
  ws.manifest = dir / "manifest.json";
  m.write(ws.manifest);
  ws.fixture = dir / "fixture.json";
  write_json_file(Json{{"region", mask_to_json(fixture.backend->region())},
                       {"site_layer", fixture.backend->read_site().layer},
                       {"layers", 3},
                       {"model_id", fixture.backend->model_id()}},
                  ws.fixture);
  return ws;
}

std::vector<std::string> write_rosetta_models(const std::filesystem::path& dir,
                                              const std::vector<ModelConcepts>& models) {
  std::vector<std::string> args;
  for (const auto& mc : models) {
    ConceptStore store;
    store.model_id = mc.model_id;
    store.grid = mc.grid;
    store.video_ids = mc.video_ids;
    StoredSite site;
    site.site = mc.concepts.front().id.site;
    site.q = static_cast<int>(mc.concepts.size());
    site.concepts = mc.concepts;
    store.sites.push_back(site);
    const auto store_dir = dir / mc.model_id;
    store.write(store_dir);
    ImportanceReport report;
    for (const auto& c : mc.concepts) report.units.push_back(c.id.str());
    report.scores = mc.importance;
    report.method = "fixed";
    const auto report_path = dir / (mc.model_id + "_importance.json");
    write_json_file(report_to_json(report), report_path);
    args.push_back(store_dir.string() + ":" + report_path.string());
  }
  return args;
}

}  // namespace vtcd::testing
