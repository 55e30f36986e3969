#pragma once

// nlohmann/json conversions for the on-disk JSON documents (manifests, mask
// files, concept stores, reports, wire messages).

#include <json.hpp>

#include "vtcd/tensor_store.hpp"

namespace vtcd {

using Json = nlohmann::json;

Json site_to_json(const SiteId& site);
SiteId site_from_json(const Json& j);

Json dims_to_json(const Dims3& dims);
Dims3 dims_from_json(const Json& j);

Json mask_to_json(const BinaryMask& mask);
BinaryMask mask_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
// Writes with a trailing newline and stable key order (nlohmann sorts keys).
void write_json_file(const Json& j, const std::filesystem::path& path);

}  // namespace vtcd
