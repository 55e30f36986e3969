#include "vtcd/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "vtcd/json_io.hpp"

namespace vtcd {

namespace fs = std::filesystem;

const char* facet_name(Facet facet) {
  switch (facet) {
    case Facet::kKey: return "key";
    case Facet::kQuery: return "query";
    case Facet::kValue: return "value";
    case Facet::kResidual: return "residual";
  }
  return "?";
}

Facet parse_facet(const std::string& name) {
  if (name == "key") return Facet::kKey;
  if (name == "query") return Facet::kQuery;
  if (name == "value") return Facet::kValue;
  if (name == "residual") return Facet::kResidual;
  throw Error(ErrorCode::kInvalidArgument, "unknown facet '" + name + "'");
}

SiteId SiteId::residual(std::string model, int layer) {
  return SiteId{std::move(model), layer, std::nullopt, Facet::kResidual};
}

SiteId SiteId::attention(std::string model, int layer, int head, Facet facet) {
  return SiteId{std::move(model), layer, head, facet};
}

void SiteId::validate() const {
  if (layer < 1) throw Error(ErrorCode::kInvalidArgument, "site layer must be >= 1");
  if (facet == Facet::kResidual && head.has_value())
    throw Error(ErrorCode::kInvalidArgument, "residual site cannot name a head");
  if (facet != Facet::kResidual && (!head.has_value() || *head < 0))
    throw Error(ErrorCode::kInvalidArgument, "attention site requires a head index >= 0");
}

std::string SiteId::tag() const {
  std::string out = "L" + std::to_string(layer);
  if (head) out += "_H" + std::to_string(*head);
  out += "_";
  out += facet_name(facet);
  return out;
}

FeatureVolume::FeatureVolume(std::string video, SiteId site_id, std::int64_t c, Dims3 d)
    : video_id(std::move(video)), site(std::move(site_id)), channels(c), dims(d) {
  if (c < 1 || d.t < 1 || d.h < 1 || d.w < 1)
    throw Error(ErrorCode::kInvalidArgument, "volume dimensions must be >= 1");
  data.assign(static_cast<std::size_t>(c * d.cells()), 0.0f);
}

std::vector<double> FeatureVolume::cell_vector(std::int64_t cell) const {
  std::vector<double> out(static_cast<std::size_t>(channels));
  for (std::int64_t c = 0; c < channels; ++c) out[c] = at(c, cell);
  return out;
}

void FeatureVolume::validate() const {
  if (channels < 1 || dims.t < 1 || dims.h < 1 || dims.w < 1)
    throw Error(ErrorCode::kInvalidArgument, "volume dimensions must be >= 1");
  if (static_cast<std::int64_t>(data.size()) != channels * dims.cells())
    throw Error(ErrorCode::kInvalidArgument, "volume data length does not match its shape");
  for (float v : data)
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteData, "volume '" + video_id + "' holds NaN/Inf");
}

// ---------------------------------------------------------------------------
// Run-length encoding

std::int64_t BinaryMask::count() const {
  std::int64_t n = 0;
  for (std::size_t i = 1; i < runs.size(); i += 2) n += runs[i];
  return n;
}

void BinaryMask::validate() const {
  if (runs.empty()) throw Error(ErrorCode::kRunLengthMismatch, "mask has no runs");
  std::int64_t total = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i > 0 && runs[i] == 0)
      throw Error(ErrorCode::kRunLengthMismatch, "runs must strictly alternate (empty interior run)");
    total += runs[i];
  }
  if (total != dims.cells())
    throw Error(ErrorCode::kRunLengthMismatch,
                "run lengths sum to " + std::to_string(total) + ", grid has " + std::to_string(dims.cells()));
}

BinaryMask encode_rle(std::string video_id, const Dims3& dims, std::span<const std::uint8_t> grid) {
  if (static_cast<std::int64_t>(grid.size()) != dims.cells())
    throw Error(ErrorCode::kInvalidArgument, "grid size does not match dims");
  BinaryMask mask{std::move(video_id), dims, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (std::uint8_t cell : grid) {
    const std::uint8_t v = cell ? 1 : 0;
    if (v != current) {
      mask.runs.push_back(run);
      run = 0;
      current = v;
    }
    ++run;
  }
  mask.runs.push_back(run);
  return mask;
}

Grid decode_rle(const BinaryMask& mask) {
  mask.validate();
  Grid grid;
  grid.reserve(static_cast<std::size_t>(mask.dims.cells()));
  std::uint8_t value = 0;
  for (std::uint32_t run : mask.runs) {
    grid.insert(grid.end(), run, value);
    value ^= 1;
  }
  return grid;
}

BinaryMask empty_mask(std::string video_id, const Dims3& dims) {
  return BinaryMask{std::move(video_id), dims, {static_cast<std::uint32_t>(dims.cells())}};
}

BinaryMask full_mask(std::string video_id, const Dims3& dims) {
  return BinaryMask{std::move(video_id), dims, {0, static_cast<std::uint32_t>(dims.cells())}};
}

std::int64_t count_cells(std::span<const std::uint8_t> grid) {
  std::int64_t n = 0;
  for (auto v : grid) n += v ? 1 : 0;
  return n;
}

std::int64_t intersection_count(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] && b[i]) ? 1 : 0;
  return n;
}

std::int64_t union_count(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] || b[i]) ? 1 : 0;
  return n;
}

void union_into(Grid& acc, std::span<const std::uint8_t> other) {
  if (acc.size() != other.size()) throw Error(ErrorCode::kInvalidArgument, "grid size mismatch in union");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = (acc[i] || other[i]) ? 1 : 0;
}

double grid_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kInvalidArgument, "grid size mismatch in IoU");
  const auto u = union_count(a, b);
  if (u == 0) return 0.0;
  return static_cast<double>(intersection_count(a, b)) / static_cast<double>(u);
}

// ---------------------------------------------------------------------------
// Volume files

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((u >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<std::make_unsigned_t<T>>(bytes[offset + i]) << (8 * i);
  return static_cast<T>(u);
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> serialize_volume(const FeatureVolume& volume) {
  volume.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kVolumeHeaderBytes + 32 + volume.data.size() * 4);
  out.insert(out.end(), {'V', 'T', 'C', 'D'});
  put_le<std::uint32_t>(out, kVolumeFormatVersion);
  out.push_back(0);  // dtype f32
  out.push_back(4);  // rank
  out.insert(out.end(), 6, 0);
  for (std::int64_t d : {volume.channels, volume.dims.t, volume.dims.h, volume.dims.w})
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  for (float v : volume.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

FeatureVolume deserialize_volume(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kVolumeHeaderBytes) throw Error(ErrorCode::kTruncated, "file shorter than header");
  if (std::memcmp(bytes.data(), "VTCD", 4) != 0) throw Error(ErrorCode::kBadMagic, "expected magic VTCD");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kVolumeFormatVersion)
    throw Error(ErrorCode::kVersionMismatch, "unsupported format version " + std::to_string(version));
  if (bytes[8] != 0) throw Error(ErrorCode::kInvalidArgument, "unsupported dtype code " + std::to_string(bytes[8]));
  const std::size_t rank = bytes[9];
  if (rank != 4) throw Error(ErrorCode::kInvalidArgument, "expected rank 4, got " + std::to_string(rank));
  const std::size_t shape_end = kVolumeHeaderBytes + rank * 8;
  if (bytes.size() < shape_end) throw Error(ErrorCode::kTruncated, "file ends inside shape block");

  std::uint64_t shape[4];
  std::uint64_t elements = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_le<std::uint64_t>(bytes, kVolumeHeaderBytes + 8 * i);
    if (shape[i] == 0) throw Error(ErrorCode::kInvalidArgument, "zero-sized dimension");
    if (shape[i] > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()) ||
        elements > (std::numeric_limits<std::uint64_t>::max() / 4) / shape[i])
      throw Error(ErrorCode::kShapeOverflow, "declared shape overflows");
    elements *= shape[i];
  }
  const std::uint64_t payload = bytes.size() - shape_end;
  if (payload < elements * 4)
    throw Error(ErrorCode::kTruncated, "payload holds " + std::to_string(payload / 4) + " floats, header declares " +
                                           std::to_string(elements));
  if (payload > elements * 4) throw Error(ErrorCode::kInvalidArgument, "trailing bytes after payload");

  FeatureVolume volume;
  volume.channels = static_cast<std::int64_t>(shape[0]);
  volume.dims = Dims3{static_cast<std::int64_t>(shape[1]), static_cast<std::int64_t>(shape[2]),
                      static_cast<std::int64_t>(shape[3])};
  volume.data.resize(elements);
  for (std::uint64_t i = 0; i < elements; ++i)
    volume.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, shape_end + 4 * i));
  volume.validate();
  return volume;
}

void write_volume(const FeatureVolume& volume, const fs::path& path) {
  write_file_bytes(path, serialize_volume(volume));
}

FeatureVolume read_volume(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return deserialize_volume(bytes);
}

// ---------------------------------------------------------------------------
// JSON documents

Json site_to_json(const SiteId& site) {
  Json j{{"model_id", site.model_id}, {"layer", site.layer}, {"facet", facet_name(site.facet)}};
  j["head"] = site.head ? Json(*site.head) : Json(nullptr);
  return j;
}

SiteId site_from_json(const Json& j) {
  SiteId site;
  site.model_id = j.value("model_id", std::string{});
  site.layer = j.at("layer").get<int>();
  site.facet = parse_facet(j.at("facet").get<std::string>());
  if (j.contains("head") && !j.at("head").is_null()) site.head = j.at("head").get<int>();
  site.validate();
  return site;
}

Json dims_to_json(const Dims3& dims) { return Json::array({dims.t, dims.h, dims.w}); }

Dims3 dims_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kInvalidArgument, "dims must be [T, H, W]");
  Dims3 d{j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
  if (d.t < 1 || d.h < 1 || d.w < 1) throw Error(ErrorCode::kInvalidArgument, "dims must be >= 1");
  return d;
}

Json mask_to_json(const BinaryMask& mask) {
  return Json{{"video_id", mask.video_id}, {"dims", dims_to_json(mask.dims)}, {"runs", mask.runs}};
}

BinaryMask mask_from_json(const Json& j) {
  BinaryMask mask;
  mask.video_id = j.value("video_id", std::string{});
  mask.dims = dims_from_json(j.at("dims"));
  mask.runs = j.at("runs").get<std::vector<std::uint32_t>>();
  mask.validate();
  return mask;
}

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
}

void write_json_file(const Json& j, const fs::path& path) {
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_mask(const BinaryMask& mask, const fs::path& path) {
  mask.validate();
  write_json_file(mask_to_json(mask), path);
}

BinaryMask read_mask(const fs::path& path) { return mask_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Manifest

void VideoSetManifest::validate() const {
  std::set<std::string> ids(video_ids.begin(), video_ids.end());
  if (ids.size() != video_ids.size()) throw Error(ErrorCode::kManifest, "duplicate video ids");
  std::set<SiteId> seen;
  for (const auto& entry : sites) {
    entry.site.validate();
    if (!seen.insert(entry.site).second) throw Error(ErrorCode::kManifest, "duplicate site " + entry.site.tag());
    if (entry.channels < 1 || entry.dims.cells() < 1)
      throw Error(ErrorCode::kManifest, "site " + entry.site.tag() + " has invalid dims");
    if (entry.files.size() != video_ids.size())
      throw Error(ErrorCode::kManifest, "site " + entry.site.tag() + " does not list every video exactly once");
    for (const auto& id : video_ids)
      if (!entry.files.contains(id))
        throw Error(ErrorCode::kManifest, "site " + entry.site.tag() + " is missing video " + id);
  }
  for (const auto& [id, _] : inputs)
    if (!ids.contains(id)) throw Error(ErrorCode::kManifest, "input listed for unknown video " + id);
}

const SiteEntry& VideoSetManifest::site_entry(const SiteId& site) const {
  for (const auto& entry : sites)
    if (entry.site == site) return entry;
  throw Error(ErrorCode::kManifest, "site " + site.tag() + " not in manifest");
}

FeatureVolume VideoSetManifest::load(const std::string& video_id, const SiteId& site) const {
  const auto& entry = site_entry(site);
  auto it = entry.files.find(video_id);
  if (it == entry.files.end()) throw Error(ErrorCode::kManifest, "no volume for video " + video_id);
  FeatureVolume v = read_volume(root / it->second);
  if (v.channels != entry.channels || !(v.dims == entry.dims))
    throw Error(ErrorCode::kManifest, "volume " + it->second + " disagrees with manifest dims");
  v.video_id = video_id;
  v.site = site;
  return v;
}

FeatureVolume VideoSetManifest::load_input(const std::string& video_id) const {
  auto it = inputs.find(video_id);
  if (it == inputs.end()) throw Error(ErrorCode::kManifest, "no input volume for video " + video_id);
  FeatureVolume v = read_volume(root / it->second);
  v.video_id = video_id;
  return v;
}

void VideoSetManifest::verify_files() const {
  validate();
  for (const auto& entry : sites)
    for (const auto& id : video_ids) (void)load(id, entry.site);
}

VideoSetManifest VideoSetManifest::read(const fs::path& path) {
  const Json j = read_json_file(path);
  VideoSetManifest m;
  m.root = path.parent_path();
  try {
    m.video_ids = j.at("video_ids").get<std::vector<std::string>>();
    for (const auto& s : j.at("sites")) {
      SiteEntry entry;
      entry.site = site_from_json(s.at("site"));
      entry.channels = s.at("channels").get<std::int64_t>();
      entry.dims = dims_from_json(s.at("dims"));
      entry.files = s.at("files").get<std::map<std::string, std::string>>();
      m.sites.push_back(std::move(entry));
    }
    if (j.contains("inputs")) m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kManifest, path.string() + ": " + e.what());
  }
  m.validate();
  return m;
}

void VideoSetManifest::write(const fs::path& path) const {
  validate();
  Json sites_json = Json::array();
  for (const auto& entry : sites)
    sites_json.push_back({{"site", site_to_json(entry.site)},
                          {"channels", entry.channels},
                          {"dims", dims_to_json(entry.dims)},
                          {"files", entry.files}});
  Json j{{"video_ids", video_ids}, {"sites", sites_json}};
  if (!inputs.empty()) j["inputs"] = inputs;
  write_json_file(j, path);
}

}  // namespace vtcd
