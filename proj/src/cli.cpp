#include "vtcd/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iomanip>
#include <iostream>
#include <memory>
#include <random>
#include <set>
#include <thread>

#include "parallel.hpp"
#include "vtcd/backend.hpp"
#include "vtcd/concepts.hpp"
#include "vtcd/eval.hpp"
#include "vtcd/importance.hpp"
#include "vtcd/random.hpp"
#include "vtcd/rosetta.hpp"
#include "vtcd/store.hpp"
#include "vtcd/tubelets.hpp"
#include "vtcd/wire.hpp"

namespace vtcd::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string out;
  std::uint64_t seed = 0;
  CLI::Option* seed_option = nullptr;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  void add(CLI::App* sub, bool needs_out = true) {
    auto* o = sub->add_option("--out", out, "Output directory");
    if (needs_out) o->required();
    seed_option = sub->add_option("--seed", seed, "Random seed (chosen and recorded when omitted)");
    sub->add_option("--jobs", jobs, "Worker cap")->envname("VTCD_JOBS")->check(CLI::PositiveNumber);
  }

  void resolve_seed() {
    if (seed_option->count() == 0) {
      std::random_device rd;
      seed = (std::uint64_t{rd()} << 32) ^ rd();
    }
  }
};

struct BackendOptions {
  std::string kind = "toy";
  std::string weights;
  std::string fixture;
  std::string endpoint;
  int pool = 1;
  int timeout_ms = 30000;
  std::string manifest;
  std::string targets;

  void add(CLI::App* sub) {
    sub->add_option("--backend", kind, "toy | planted | remote")
        ->check(CLI::IsMember({"toy", "planted", "remote"}));
    sub->add_option("--weights", weights, "Toy transformer weights JSON");
    sub->add_option("--fixture", fixture, "Planted oracle fixture JSON");
    sub->add_option("--endpoint", endpoint, "Remote model server host:port");
    sub->add_option("--pool", pool, "Remote connection pool size")->check(CLI::PositiveNumber);
    sub->add_option("--timeout-ms", timeout_ms, "Remote timeout in milliseconds")->check(CLI::PositiveNumber);
    sub->add_option("--manifest", manifest, "Video set manifest (backend inputs)");
    sub->add_option("--targets", targets, "Per-video task targets JSON");
  }

  Json to_json() const {
    Json j{{"kind", kind}};
    if (kind == "toy") j["weights"] = weights;
    if (kind == "planted") j["fixture"] = fixture;
    if (kind == "remote") j["endpoint"] = endpoint, j["pool"] = pool, j["timeout_ms"] = timeout_ms;
    j["manifest"] = manifest;
    j["targets"] = targets;
    return j;
  }
};

struct LoadedBackend {
  std::unique_ptr<ModelBackend> backend;
  std::vector<std::string> video_ids;
};

std::shared_ptr<VideoStore> load_inputs(const VideoSetManifest& manifest) {
  auto store = std::make_shared<VideoStore>();
  for (const auto& id : manifest.video_ids) (*store)[id] = manifest.load_input(id);
  return store;
}

LoadedBackend make_backend(const BackendOptions& o) {
  LoadedBackend lb;
  if (o.kind == "remote") {
    if (o.endpoint.empty()) throw Error(ErrorCode::kInvalidArgument, "--endpoint is required for the remote backend");
    lb.backend = std::make_unique<RemoteBackend>(o.endpoint, o.pool, std::chrono::milliseconds(o.timeout_ms));
    if (!o.manifest.empty()) lb.video_ids = VideoSetManifest::read(o.manifest).video_ids;
    return lb;
  }
  if (o.manifest.empty()) throw Error(ErrorCode::kInvalidArgument, "--manifest is required for native backends");
  const auto manifest = VideoSetManifest::read(o.manifest);
  lb.video_ids = manifest.video_ids;
  auto videos = load_inputs(manifest);
  if (o.kind == "toy") {
    if (o.weights.empty()) throw Error(ErrorCode::kInvalidArgument, "--weights is required for the toy backend");
    auto [config, weights] = toy_from_json(read_json_file(o.weights));
    const Json wj = read_json_file(o.weights);
    lb.backend = std::make_unique<ToyTransformer>(config, std::move(weights), videos, wj.value("model_id", "toy"));
  } else {
    if (o.fixture.empty()) throw Error(ErrorCode::kInvalidArgument, "--fixture is required for the planted backend");
    const Json f = read_json_file(o.fixture);
    try {
      lb.backend = std::make_unique<PlantedOracle>(mask_from_json(f.at("region")), f.at("site_layer").get<int>(),
                                                   f.at("layers").get<int>(), videos,
                                                   f.value("model_id", std::string("planted")));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, "malformed planted fixture: " + std::string(e.what()));
    }
  }
  return lb;
}

std::vector<VideoTarget> load_targets(const BackendOptions& o, const ModelBackend& backend,
                                      const std::vector<std::string>& video_ids) {
  std::vector<VideoTarget> out;
  if (!o.targets.empty()) {
    const Json j = read_json_file(o.targets);
    for (const auto& id : video_ids) {
      if (!j.contains(id)) throw Error(ErrorCode::kInvalidArgument, "no target for video " + id);
      out.push_back({id, target_from_json(j.at(id))});
    }
    return out;
  }
  if (const auto* toy = dynamic_cast<const ToyTransformer*>(&backend)) {
    for (const auto& id : video_ids) {
      const auto p = toy->forward(id, {});
      const int best = static_cast<int>(std::max_element(p.logits.begin(), p.logits.end()) - p.logits.begin());
      out.push_back({id, TaskTarget::class_score(best)});
    }
    return out;
  }
  if (dynamic_cast<const PlantedOracle*>(&backend)) {
    for (const auto& id : video_ids) out.push_back({id, TaskTarget::regression(0.0)});
    return out;
  }
  throw Error(ErrorCode::kInvalidArgument, "--targets is required for this backend");
}

void write_run(const fs::path& out, const std::string& command, const Common& c, Json config) {
  fs::create_directories(out);
  config["seed"] = c.seed;
  config["jobs"] = c.jobs;
  write_json_file(Json{{"command", command}, {"config", config}}, out / "run.json");
}

std::vector<SiteId> select_sites(const std::vector<SiteEntry>& entries, const std::vector<std::string>& tags) {
  std::vector<SiteId> out;
  for (const auto& e : entries)
    if (tags.empty() || std::find(tags.begin(), tags.end(), e.site.tag()) != tags.end()) out.push_back(e.site);
  for (const auto& t : tags)
    if (std::none_of(out.begin(), out.end(), [&](const SiteId& s) { return s.tag() == t; }))
      throw Error(ErrorCode::kInvalidArgument, "unknown site " + t);
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "no sites selected");
  return out;
}

std::vector<Concept> store_concepts(const ConceptStore& store, const std::vector<std::string>& tags) {
  std::vector<Concept> out;
  for (const auto& s : store.sites)
    if (tags.empty() || std::find(tags.begin(), tags.end(), s.site.tag()) != tags.end())
      out.insert(out.end(), s.concepts.begin(), s.concepts.end());
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "no concepts selected");
  return out;
}

// --- features --------------------------------------------------------------

struct FeaturesCmd {
  Common common;
  BackendOptions backend;
  std::vector<std::string> sites;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("features", "Write toy-transformer site activations as a dataset");
    common.add(sub);
    backend.add(sub);
    sub->add_option("--sites", sites, "Site tags to export (default all)");
    sub->callback([this] { run(); });
  }

  void run() {
    common.resolve_seed();
    if (backend.kind != "toy") throw Error(ErrorCode::kInvalidArgument, "features requires the toy backend");
    auto lb = make_backend(backend);
    const auto& toy = dynamic_cast<const ToyTransformer&>(*lb.backend);
    const fs::path out = common.out;
    const auto src = VideoSetManifest::read(backend.manifest);

    VideoSetManifest m;
    m.video_ids = src.video_ids;
    for (const auto& id : m.video_ids) {
      const std::string rel = "inputs/" + id + ".vtcd";
      fs::create_directories(out / "inputs");
      write_volume(src.load_input(id), out / rel);
      m.inputs[id] = rel;
    }
    std::vector<SiteEntry> all;
    for (const auto& s : toy.list_sites()) all.push_back({s, 0, toy.grid(), {}});
    for (const auto& site : select_sites(all, sites)) {
      SiteEntry e{site, toy.config().dim, toy.grid(), {}};
      if (site.head) e.channels = toy.config().dim / toy.config().heads;
      fs::create_directories(out / "volumes" / site.tag());
      for (const auto& id : m.video_ids) {
        const std::string rel = "volumes/" + site.tag() + "/" + id + ".vtcd";
        const auto v = toy.site_features(id, site);
        e.channels = v.channels;
        write_volume(v, out / rel);
        e.files[id] = rel;
      }
      m.sites.push_back(std::move(e));
    }
    m.write(out / "manifest.json");
    write_run(out, "features", common, Json{{"backend", backend.to_json()}, {"sites", sites}});
  }
};

// --- discover --------------------------------------------------------------

struct DiscoverCmd {
  Common common;
  std::string manifest;
  std::vector<std::string> sites;
  SlicParams slic;
  QRange q_range;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("discover", "Tubelet proposals and concept clustering per site");
    common.add(sub);
    sub->add_option("--manifest", manifest, "Video set manifest")->required();
    sub->add_option("--sites", sites, "Site tags to process (default all)");
    sub->add_option("--segments", slic.n_segments, "SLIC segments per video");
    sub->add_option("--compactness", slic.compactness, "SLIC compactness");
    sub->add_option("--min-size-frac", slic.min_size_fraction, "Minimum tubelet size as a fraction of cells/segments");
    sub->add_option("--slic-iters", slic.max_iters, "SLIC iterations");
    sub->add_option("--q-min", q_range.min, "Smallest concept count tried");
    sub->add_option("--q-max", q_range.max, "Largest concept count tried");
    sub->callback([this] { run(); });
  }

  void run() {
    common.resolve_seed();
    slic.validate();
    const auto m = VideoSetManifest::read(manifest);
    const auto chosen = select_sites(m.sites, sites);
    ConceptStore store;
    store.model_id = chosen.front().model_id;
    store.grid = m.site_entry(chosen.front()).dims;
    store.video_ids = m.video_ids;
    for (std::size_t si = 0; si < chosen.size(); ++si) {
      const SiteId& site = chosen[si];
      if (!(m.site_entry(site).dims == store.grid))
        throw Error(ErrorCode::kInvalidArgument, "selected sites do not share one grid");
      std::vector<std::vector<Tubelet>> per_video(m.video_ids.size());
      detail::parallel_for(0, static_cast<std::int64_t>(m.video_ids.size()), common.jobs, [&](std::int64_t v) {
        per_video[v] = extract_tubelets(m.load(m.video_ids[v], site), slic);
      });
      std::vector<Tubelet> tubelets;
      for (auto& pv : per_video) std::move(pv.begin(), pv.end(), std::back_inserter(tubelets));

      CnmfOptions opts;
      opts.seed = derive_seed(common.seed, si);
      auto discovery = build_concepts(tubelets, site, q_range, opts);

      StoredSite s;
      s.site = site;
      s.q = discovery.set.q;
      s.degenerate = discovery.set.degenerate;
      s.objective = discovery.set.objective;
      s.silhouettes = discovery.set.silhouettes;
      s.concepts = std::move(discovery.concepts);
      s.tubelets = std::move(tubelets);
      store.sites.push_back(std::move(s));
    }
    store.write(common.out);
    write_run(common.out, "discover", common,
              Json{{"manifest", manifest},
                   {"sites", sites},
                   {"slic", {{"n_segments", slic.n_segments},
                             {"compactness", slic.compactness},
                             {"max_iters", slic.max_iters},
                             {"min_size_fraction", slic.min_size_fraction}}},
                   {"q_range", {q_range.min, q_range.max}}});
  }
};

// --- rank ------------------------------------------------------------------

struct RankCmd {
  Common common;
  BackendOptions backend;
  std::string concepts_dir;
  std::vector<std::string> sites;
  SamplingPlan plan;
  std::string method = "cris";
  std::string estimator = "sample";
  bool checkpoint = false;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("rank", "Concept importance");
    common.add(sub);
    backend.add(sub);
    sub->add_option("--concepts", concepts_dir, "Concept store directory")->required();
    sub->add_option("--sites", sites, "Restrict to these site tags");
    sub->add_option("--k", plan.k, "Masking samples")->check(CLI::PositiveNumber);
    sub->add_option("--fraction", plan.fraction, "Fraction of concepts masked per sample");
    sub->add_option("--method", method, "cris | occlusion")->check(CLI::IsMember({"cris", "occlusion"}));
    sub->add_option("--estimator", estimator, "sample | inclusion")->check(CLI::IsMember({"sample", "inclusion"}));
    sub->add_flag("--checkpoint", checkpoint, "Save and resume sampling state under --out");
    sub->callback([this] { run(); });
  }

  void run() {
    common.resolve_seed();
    plan.seed = common.seed;
    plan.estimator = estimator == "sample" ? ImportanceEstimator::kPerSample : ImportanceEstimator::kPerInclusion;
    plan.validate();
    const auto store = ConceptStore::read(concepts_dir);
    const auto concepts = store_concepts(store, sites);
    auto lb = make_backend(backend);
    const auto targets = load_targets(backend, *lb.backend, store.video_ids);
    const fs::path out = common.out;
    fs::create_directories(out);
    RunOptions ro;
    ro.jobs = common.jobs;
    if (checkpoint) ro.checkpoint = out / "checkpoint.json";
    const auto report = method == "cris" ? cris(concepts, *lb.backend, targets, plan, ro)
                                         : occlusion_importance(concepts, *lb.backend, targets, ro);
    write_json_file(report_to_json(report), out / "importance.json");
    Json layers = Json::array();
    for (const auto& l : per_layer_importance(report, concepts))
      layers.push_back({{"layer", l.layer}, {"score", l.score}, {"concepts", l.concepts}});
    write_json_file(layers, out / "layers.json");
    write_run(out, "rank", common,
              Json{{"concepts", concepts_dir},
                   {"sites", sites},
                   {"backend", backend.to_json()},
                   {"method", method},
                   {"k", plan.k},
                   {"fraction", plan.fraction},
                   {"estimator", estimator}});
  }
};

// --- heads -----------------------------------------------------------------

struct HeadsCmd {
  Common common;
  BackendOptions backend;
  SamplingPlan plan;
  double keep = 2.0 / 3.0;
  std::string eval_manifest;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("heads", "Head importance and pruning plan");
    common.add(sub);
    backend.add(sub);
    sub->add_option("--k", plan.k, "Masking samples")->check(CLI::PositiveNumber);
    sub->add_option("--fraction", plan.fraction, "Fraction of heads masked per sample");
    sub->add_option("--keep", keep, "Fraction of heads kept");
    sub->add_option("--eval-manifest", eval_manifest, "Held-out videos for the before/after metric");
    sub->callback([this] { run(); });
  }

  void run() {
    common.resolve_seed();
    plan.seed = common.seed;
    plan.unit = ImportanceUnit::kHead;
    auto lb = make_backend(backend);
    const auto targets = load_targets(backend, *lb.backend, lb.video_ids);
    RunOptions ro;
    ro.jobs = common.jobs;
    const auto report = head_importance(*lb.backend, targets, plan, ro);
    const auto pp = prune_plan(report, keep);

    LoadedBackend eval_lb;
    std::vector<VideoTarget> eval_targets = targets;
    const ModelBackend* eval_backend = lb.backend.get();
    if (!eval_manifest.empty()) {
      BackendOptions eo = backend;
      eo.manifest = eval_manifest;
      eval_lb = make_backend(eo);
      eval_targets = load_targets(eo, *eval_lb.backend, eval_lb.video_ids);
      eval_backend = eval_lb.backend.get();
    }
    const auto ev = evaluate_pruning(*eval_backend, pp, eval_targets);
    const fs::path out = common.out;
    fs::create_directories(out);
    write_json_file(report_to_json(report), out / "heads.json");
    Json pj = prune_plan_to_json(pp);
    pj["metric_before"] = ev.before;
    pj["metric_after"] = ev.after;
    write_json_file(pj, out / "prune_plan.json");
    write_run(out, "heads", common,
              Json{{"backend", backend.to_json()},
                   {"k", plan.k},
                   {"fraction", plan.fraction},
                   {"keep", keep},
                   {"eval_manifest", eval_manifest}});
  }
};

// --- curves ----------------------------------------------------------------

struct CurvesCmd {
  Common common;
  BackendOptions backend;
  std::string concepts_dir;
  std::string report_path;
  std::vector<std::string> sites;
  int steps = 12;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("curves", "Attribution curves from an importance report");
    common.add(sub);
    backend.add(sub);
    sub->add_option("--concepts", concepts_dir, "Concept store directory")->required();
    sub->add_option("--report", report_path, "importance.json from rank")->required();
    sub->add_option("--sites", sites, "Restrict to these site tags (must match rank)");
    sub->add_option("--steps", steps, "Removal fractions per curve");
    sub->callback([this] { run(); });
  }

  void run() {
    common.resolve_seed();
    const auto store = ConceptStore::read(concepts_dir);
    const auto concepts = store_concepts(store, sites);
    const auto report = report_from_json(read_json_file(report_path));
    for (std::size_t i = 0; i < concepts.size(); ++i)
      if (i >= report.units.size() || report.units[i] != concepts[i].id.str())
        throw Error(ErrorCode::kInvalidArgument, "report does not match the selected concepts");
    auto lb = make_backend(backend);
    const auto targets = load_targets(backend, *lb.backend, store.video_ids);
    CurveOptions co;
    co.steps = steps;
    co.seed = common.seed;
    co.jobs = common.jobs;
    const auto curves = attribution_curves(concepts, report, *lb.backend, targets, co);
    const fs::path out = common.out;
    fs::create_directories(out);
    Json summary = Json::object();
    for (const auto* c : {&curves.positive, &curves.negative, &curves.random}) {
      const std::string name = curve_direction_name(c->direction);
      write_curve_csv(*c, out / ("curve_" + name + ".csv"));
      summary[name] = {{"auc", c->auc}};
    }
    write_json_file(summary, out / "curves.json");
    write_run(out, "curves", common,
              Json{{"concepts", concepts_dir}, {"report", report_path}, {"sites", sites},
                   {"backend", backend.to_json()}, {"steps", steps}});
  }
};

// --- rosetta ---------------------------------------------------------------

ModelConcepts load_model(const std::string& spec) {
  const auto colon = spec.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == spec.size())
    throw Error(ErrorCode::kInvalidArgument, "--model expects STORE_DIR:REPORT_JSON, got " + spec);
  const auto store = ConceptStore::read(spec.substr(0, colon));
  const auto report = report_from_json(read_json_file(spec.substr(colon + 1)));
  std::map<std::string, double> score;
  for (std::size_t i = 0; i < report.units.size(); ++i) score[report.units[i]] = report.scores[i];
  ModelConcepts mc;
  mc.model_id = store.model_id;
  mc.video_ids = store.video_ids;
  mc.grid = store.grid;
  for (const auto& c : store.all_concepts()) {
    auto it = score.find(c.id.str());
    if (it == score.end()) continue;
    mc.concepts.push_back(c);
    mc.importance.push_back(it->second);
  }
  if (mc.concepts.empty()) throw Error(ErrorCode::kInvalidArgument, "report covers no concept of " + spec);
  return mc;
}

struct RosettaCmd {
  Common common;
  std::vector<std::string> models;
  MiningParams params;

  void add(CLI::App& app, std::ostream& os) {
    auto* sub = app.add_subcommand("rosetta", "Mine concepts shared across models");
    common.add(sub);
    sub->add_option("--model", models, "STORE_DIR:REPORT_JSON, one per model")->required();
    sub->add_option("--delta", params.delta, "R-score threshold");
    sub->add_option("--epsilon", params.epsilon, "Fraction of most important concepts kept per model");
    sub->callback([this, &os] { run(os); });
  }

  void run(std::ostream& os) {
    common.resolve_seed();
    params.validate();
    std::vector<ModelConcepts> mcs;
    for (const auto& m : models) mcs.push_back(load_model(m));
    const auto tuples = mine(mcs, params);
    const fs::path out = common.out;
    fs::create_directories(out);
    write_json_file(tuples_to_json(tuples, mcs), out / "rosetta.json");
    write_run(out, "rosetta", common, Json{{"models", models}, {"delta", params.delta}, {"epsilon", params.epsilon}});
    for (const auto& t : tuples) {
      os << "d=" << t.d() << " R=" << std::fixed << std::setprecision(1) << 100.0 * t.r_score << std::defaultfloat;
      for (int i = 0; i < t.d(); ++i) os << ' ' << mcs[t.models[i]].concepts[t.concepts[i]].id.str();
      os << '\n';
    }
  }
};

// --- validate --------------------------------------------------------------

struct ValidateCmd {
  Common common;
  std::string concepts_dir;
  std::string groundtruth;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("validate", "Best concept mIoU per groundtruth category");
    common.add(sub);
    sub->add_option("--concepts", concepts_dir, "Concept store directory")->required();
    sub->add_option("--groundtruth", groundtruth, "JSON {category: [mask, ...]}")->required();
    sub->callback([this] { run(); });
  }

  void run() {
    common.resolve_seed();
    const auto store = ConceptStore::read(concepts_dir);
    const auto concepts = store.all_concepts();
    std::map<std::string, std::vector<BinaryMask>> gt;
    const Json j = read_json_file(groundtruth);
    try {
      for (const auto& [cat, masks] : j.items())
        for (const auto& m : masks) gt[cat].push_back(mask_from_json(m));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, "malformed groundtruth: " + std::string(e.what()));
    }
    Json res = Json::array();
    for (const auto& m : concept_gt_miou(concepts, store.grid, gt))
      res.push_back({{"category", m.category},
                     {"concept_id", m.concept_index >= 0 ? concepts[m.concept_index].id.str() : ""},
                     {"miou", m.miou}});
    const fs::path out = common.out;
    fs::create_directories(out);
    write_json_file(res, out / "miou.json");
    write_run(out, "validate", common, Json{{"concepts", concepts_dir}, {"groundtruth", groundtruth}});
  }
};

// --- export ----------------------------------------------------------------

struct ExportCmd {
  Common common;
  std::string concepts_dir;
  std::string manifest;
  bool overlays = false;
  int scale = 8;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("export", "Concept support masks and overlay frames");
    common.add(sub);
    sub->add_option("--concepts", concepts_dir, "Concept store directory")->required();
    sub->add_option("--manifest", manifest, "Manifest providing the heatmap volumes (needed for overlays)");
    sub->add_flag("--overlays", overlays, "Write PPM overlays");
    sub->add_option("--scale", scale, "Overlay pixels per cell")->check(CLI::PositiveNumber);
    sub->callback([this] { run(); });
  }

  void run() {
    common.resolve_seed();
    if (overlays && manifest.empty()) throw Error(ErrorCode::kInvalidArgument, "--overlays needs --manifest");
    const auto store = ConceptStore::read(concepts_dir);
    std::optional<VideoSetManifest> m;
    if (!manifest.empty()) m = VideoSetManifest::read(manifest);
    const fs::path out = common.out;
    for (const auto& s : store.sites) {
      const auto mask_dir = out / "masks" / s.site.tag();
      const auto overlay_dir = out / "overlays" / s.site.tag();
      fs::create_directories(mask_dir);
      if (overlays) fs::create_directories(overlay_dir);
      for (const auto& id : store.video_ids) {
        std::optional<FeatureVolume> vol;
        if (overlays) {
          const bool has_site = std::any_of(m->sites.begin(), m->sites.end(),
                                            [&](const SiteEntry& e) { return e.site == s.site; });
          vol = has_site ? m->load(id, s.site) : m->load_input(id);
        }
        for (const auto& c : s.concepts) {
          const auto mask = c.support_for(id, store.grid);
          const std::string stem = std::to_string(c.id.index) + "_" + id;
          write_mask(mask, mask_dir / (stem + ".json"));
          if (overlays)
            for (std::int64_t t = 0; t < store.grid.t; ++t)
              write_overlay_ppm(*vol, mask, t, overlay_dir / (stem + "_t" + std::to_string(t) + ".ppm"), scale);
        }
      }
    }
    write_run(out, "export", common,
              Json{{"concepts", concepts_dir}, {"manifest", manifest}, {"overlays", overlays}, {"scale", scale}});
  }
};

// --- serve-check -----------------------------------------------------------

struct ServeCheckCmd {
  Common common;
  std::string endpoint;
  int timeout_ms = 5000;

  void add(CLI::App& app, std::ostream& os) {
    auto* sub = app.add_subcommand("serve-check", "Probe a model server handshake");
    common.add(sub, false);
    sub->add_option("--endpoint", endpoint, "host:port")->required();
    sub->add_option("--timeout-ms", timeout_ms, "Connect and read timeout")->check(CLI::PositiveNumber);
    sub->callback([this, &os] { run(os); });
  }

  void run(std::ostream& os) {
    common.resolve_seed();
    RemoteBackend remote(endpoint, 1, std::chrono::milliseconds(timeout_ms));
    const auto& ack = remote.handshake();
    os << "model " << ack.model_id << " protocol v" << ack.version << " sites " << ack.sites.size() << " grid "
       << ack.grid.t << 'x' << ack.grid.h << 'x' << ack.grid.w << '\n';
    if (!common.out.empty()) {
      Json sites = Json::array();
      for (const auto& s : ack.sites) sites.push_back(site_to_json(s));
      fs::create_directories(common.out);
      write_json_file(Json{{"model_id", ack.model_id}, {"version", ack.version}, {"sites", sites},
                           {"grid", dims_to_json(ack.grid)}, {"channels", ack.channels}},
                      fs::path(common.out) / "serve_check.json");
      write_run(common.out, "serve-check", common, Json{{"endpoint", endpoint}, {"timeout_ms", timeout_ms}});
    }
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Video transformer concept discovery"};
  app.require_subcommand(1);
  FeaturesCmd features;
  DiscoverCmd discover;
  RankCmd rank;
  HeadsCmd heads;
  CurvesCmd curves;
  RosettaCmd rosetta;
  ValidateCmd validate;
  ExportCmd exporter;
  ServeCheckCmd serve_check;
  features.add(app);
  discover.add(app);
  rank.add(app);
  heads.add(app);
  curves.add(app);
  rosetta.add(app, out);
  validate.add(app);
  exporter.add(app);
  serve_check.add(app, out);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << '\n';
    return kExitBackend;
  } catch (const Error& e) {
    err << "error [" << error_code_name(e.code()) << "]: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "unexpected error: " << e.what() << '\n';
    return kExitUnexpected;
  }
  return kExitOk;
}

}  // namespace vtcd::cli
