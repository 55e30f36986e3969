#pragma once

// On-disk concept store written by `discover` and read by later stages:
//   <dir>/store.json                     {model_id, grid, video_ids, sites}
//   <dir>/<site tag>/tubelets.json       every tubelet of the site
//   <dir>/<site tag>/concepts.json       concept set summary and supports
//   <dir>/<site tag>/masks/<c>_<video>.json

#include <filesystem>
#include <string>
#include <vector>

#include "vtcd/concepts.hpp"
#include "vtcd/importance.hpp"

namespace vtcd {

struct StoredSite {
  SiteId site;
  int q = 0;
  bool degenerate = false;
  double objective = 0.0;
  std::vector<double> silhouettes;
  std::vector<Concept> concepts;
  std::vector<Tubelet> tubelets;
};

struct ConceptStore {
  std::string model_id;
  Dims3 grid;
  std::vector<std::string> video_ids;
  std::vector<StoredSite> sites;

  // Every concept, site by site in store order.
  std::vector<Concept> all_concepts() const;

  void write(const std::filesystem::path& dir) const;
  static ConceptStore read(const std::filesystem::path& dir);
};

Json tubelet_to_json(const Tubelet& tubelet);
Tubelet tubelet_from_json(const Json& j);

}  // namespace vtcd
