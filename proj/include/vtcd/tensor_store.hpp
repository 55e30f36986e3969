#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vtcd/error.hpp"

namespace vtcd {

enum class Facet : std::uint8_t { kKey, kQuery, kValue, kResidual };

const char* facet_name(Facet facet);
Facet parse_facet(const std::string& name);

// A maskable location inside a model: an attention facet of one head, or the
// residual stream at the output of a layer.
struct SiteId {
  std::string model_id;
  int layer = 1;
  std::optional<int> head;
  Facet facet = Facet::kResidual;

  static SiteId residual(std::string model, int layer);
  static SiteId attention(std::string model, int layer, int head, Facet facet);

  void validate() const;
  // Filesystem-safe short tag, e.g. "L3_H0_key" or "L2_residual".
  std::string tag() const;

  auto operator<=>(const SiteId&) const = default;
  bool operator==(const SiteId&) const = default;
};

struct Dims3 {
  std::int64_t t = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  std::int64_t cells() const { return t * h * w; }
  std::int64_t index(std::int64_t ti, std::int64_t hi, std::int64_t wi) const {
    return (ti * h + hi) * w + wi;
  }
  bool operator==(const Dims3&) const = default;
};

// Dense boolean grid over T'×H'×W' (W' fastest); 0 or 1 per cell.
using Grid = std::vector<std::uint8_t>;

// One video's features at one site, C × T' × H' × W' row-major.
struct FeatureVolume {
  std::string video_id;
  SiteId site;
  std::int64_t channels = 1;
  Dims3 dims;
  std::vector<float> data;

  FeatureVolume() = default;
  FeatureVolume(std::string video, SiteId site_id, std::int64_t c, Dims3 d);

  float& at(std::int64_t c, std::int64_t cell) { return data[c * dims.cells() + cell]; }
  float at(std::int64_t c, std::int64_t cell) const { return data[c * dims.cells() + cell]; }
  std::vector<double> cell_vector(std::int64_t cell) const;

  // Throws kInvalidArgument on shape mismatch, kNonFiniteData on NaN/Inf.
  void validate() const;

  bool operator==(const FeatureVolume&) const = default;
};

// Run-length encoded support. runs[0] counts zeros (possibly 0), then runs
// alternate ones/zeros; no interior run is empty.
struct BinaryMask {
  std::string video_id;
  Dims3 dims;
  std::vector<std::uint32_t> runs;

  std::int64_t count() const;
  void validate() const;
  bool operator==(const BinaryMask&) const = default;
};

BinaryMask encode_rle(std::string video_id, const Dims3& dims, std::span<const std::uint8_t> grid);
Grid decode_rle(const BinaryMask& mask);
BinaryMask empty_mask(std::string video_id, const Dims3& dims);
BinaryMask full_mask(std::string video_id, const Dims3& dims);

std::int64_t count_cells(std::span<const std::uint8_t> grid);
std::int64_t intersection_count(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
std::int64_t union_count(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
void union_into(Grid& acc, std::span<const std::uint8_t> other);
// |a ∩ b| / |a ∪ b|; an empty union yields 0.
double grid_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

// Binary volume file. Layout: "VTCD", u32 version, u8 dtype, u8 rank,
// 6 reserved bytes, rank × u64 shape, f32 payload; little-endian throughout.
inline constexpr std::uint32_t kVolumeFormatVersion = 1;
inline constexpr std::size_t kVolumeHeaderBytes = 16;

std::vector<std::uint8_t> serialize_volume(const FeatureVolume& volume);
// Parses the payload only; identity fields (video, site) are left default.
FeatureVolume deserialize_volume(std::span<const std::uint8_t> bytes);

void write_volume(const FeatureVolume& volume, const std::filesystem::path& path);
FeatureVolume read_volume(const std::filesystem::path& path);

void write_mask(const BinaryMask& mask, const std::filesystem::path& path);
BinaryMask read_mask(const std::filesystem::path& path);

struct SiteEntry {
  SiteId site;
  std::int64_t channels = 1;
  Dims3 dims;
  // video_id -> path relative to the manifest directory.
  std::map<std::string, std::string> files;
};

// Dataset index. `inputs` optionally maps each video to the volume a native
// backend consumes as its input.
struct VideoSetManifest {
  std::vector<std::string> video_ids;
  std::vector<SiteEntry> sites;
  std::map<std::string, std::string> inputs;
  std::filesystem::path root;

  void validate() const;
  const SiteEntry& site_entry(const SiteId& site) const;
  FeatureVolume load(const std::string& video_id, const SiteId& site) const;
  FeatureVolume load_input(const std::string& video_id) const;

  static VideoSetManifest read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

  // Checks every listed file exists and agrees with the declared shape.
  void verify_files() const;
};

}  // namespace vtcd
