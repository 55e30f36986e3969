#include "vtcd/store.hpp"

#include <algorithm>

namespace vtcd {

std::vector<Concept> ConceptStore::all_concepts() const {
  std::vector<Concept> out;
  for (const auto& s : sites) out.insert(out.end(), s.concepts.begin(), s.concepts.end());
  return out;
}

Json tubelet_to_json(const Tubelet& t) {
  return Json{{"video_id", t.video_id}, {"mask", mask_to_json(t.mask)}, {"feature", t.feature}, {"size", t.size}};
}

Tubelet tubelet_from_json(const Json& j) {
  Tubelet t;
  t.video_id = j.at("video_id").get<std::string>();
  t.mask = mask_from_json(j.at("mask"));
  t.feature = j.at("feature").get<std::vector<double>>();
  t.size = j.at("size").get<std::int64_t>();
  return t;
}

void ConceptStore::write(const std::filesystem::path& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Json index{{"model_id", model_id}, {"grid", dims_to_json(grid)}, {"video_ids", video_ids}, {"sites", Json::array()}};
  for (const auto& s : sites) {
    const std::string tag = s.site.tag();
    index["sites"].push_back({{"site", site_to_json(s.site)}, {"dir", tag}});
    const fs::path site_dir = dir / tag;
    fs::create_directories(site_dir / "masks");

    Json tubes = Json::array();
    for (auto t : s.tubelets) tubes.push_back(tubelet_to_json(t));
    write_json_file(Json{{"site", site_to_json(s.site)}, {"tubelets", tubes}}, site_dir / "tubelets.json");

    Json concepts = Json::array();
    for (const auto& c : s.concepts) {
      Json support = Json::object();
      for (const auto& m : c.support) {
        const std::string rel = "masks/" + std::to_string(c.id.index) + "_" + m.video_id + ".json";
        write_mask(m, site_dir / rel);
        support[m.video_id] = rel;
      }
      concepts.push_back({{"index", c.id.index}, {"id", c.id.str()}, {"centroid", c.centroid}, {"support", support}});
    }
    write_json_file(Json{{"site", site_to_json(s.site)},
                         {"q", s.q},
                         {"degenerate", s.degenerate},
                         {"objective", s.objective},
                         {"silhouettes", s.silhouettes},
                         {"concepts", concepts}},
                    site_dir / "concepts.json");
  }
  write_json_file(index, dir / "store.json");
}

ConceptStore ConceptStore::read(const std::filesystem::path& dir) {
  const Json index = read_json_file(dir / "store.json");
  ConceptStore store;
  try {
    store.model_id = index.at("model_id").get<std::string>();
    store.grid = dims_from_json(index.at("grid"));
    store.video_ids = index.at("video_ids").get<std::vector<std::string>>();
    for (const auto& entry : index.at("sites")) {
      const auto site_dir = dir / entry.at("dir").get<std::string>();
      const Json cj = read_json_file(site_dir / "concepts.json");
      StoredSite s;
      s.site = site_from_json(cj.at("site"));
      s.q = cj.at("q").get<int>();
      s.degenerate = cj.at("degenerate").get<bool>();
      s.objective = cj.at("objective").get<double>();
      s.silhouettes = cj.at("silhouettes").get<std::vector<double>>();
      for (const auto& c : cj.at("concepts")) {
        Concept con;
        con.id = {s.site, c.at("index").get<int>()};
        con.centroid = c.at("centroid").get<std::vector<double>>();
        for (const auto& [video, rel] : c.at("support").items()) {
          BinaryMask m = read_mask(site_dir / rel.get<std::string>());
          if (m.video_id != video) throw Error(ErrorCode::kManifest, "mask file video does not match its entry");
          con.support.push_back(std::move(m));
        }
        std::sort(con.support.begin(), con.support.end(),
                  [&](const BinaryMask& a, const BinaryMask& b) {
                    auto pos = [&](const std::string& v) {
                      return std::find(store.video_ids.begin(), store.video_ids.end(), v) - store.video_ids.begin();
                    };
                    return pos(a.video_id) < pos(b.video_id);
                  });
        s.concepts.push_back(std::move(con));
      }
      const auto tube_path = site_dir / "tubelets.json";
      if (std::filesystem::exists(tube_path)) {
        const Json tj = read_json_file(tube_path);
        for (const auto& t : tj.at("tubelets")) {
          Tubelet tub = tubelet_from_json(t);
          tub.site = s.site;
          s.tubelets.push_back(std::move(tub));
        }
      }
      store.sites.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kManifest, "malformed concept store " + dir.string() + ": " + e.what());
  }
  return store;
}

}  // namespace vtcd
