#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cforge/shapes.hpp"

namespace cforge {

inline constexpr std::string_view kManifestFormat = "concept-forge-manifest/1";
inline constexpr std::string_view kManifestFile = "manifest.json";

enum class Split { kTrain, kVal };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest's directory
  std::vector<std::string> labels;
  double drag = 0.0;
  Split split = Split::kTrain;

  bool has_label(std::string_view label) const;
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::size_t points = 0;
  std::uint64_t layout_seed = 0;
  std::uint64_t seed = 0;
  double val_fraction = 0.25;
  std::vector<ManifestEntry> entries;

  std::optional<std::size_t> find(std::string_view id) const;
  std::size_t index_of(std::string_view id) const;  // throws InvalidInput
  std::vector<std::size_t> with_label(std::string_view label) const;
  std::vector<std::size_t> in_split(Split split) const;
  SurfaceLayout layout() const { return SurfaceLayout::make(points, layout_seed); }

  // Throws InvalidInput on duplicate ids, negative drag or an empty path.
  void validate() const;

  std::string to_json() const;
  static DatasetManifest from_json(std::string_view text);

  bool operator==(const DatasetManifest&) const = default;
};

struct DatasetConfig {
  std::size_t cars = 1200;
  std::size_t cuboids = 60;
  std::size_t ellipsoids = 60;
  std::size_t bumps = 0;
  std::size_t points = 512;
  std::uint64_t seed = 0;
  double val_fraction = 0.25;
  SizeBounds primitive_bounds{};
  BumpRecipe bump_recipe = random_bump_recipe();
  // Bumped ellipsoids at or above / at or below these heights get the
  // "highbump" / "lowbump" labels.
  double high_bump_threshold = 0.4;
  double low_bump_threshold = 0.1;
};

struct GeneratedDataset {
  DatasetManifest manifest;
  std::vector<PointCloud> clouds;     // normalised, in manifest order
  std::vector<double> bump_heights;   // generator ground truth; NaN for non-bump shapes
  std::vector<Vec3> semi_axes;        // generator semi-axes for bumps; zero otherwise
};

// Every shape is a pure function of (config.seed, kind, index).
GeneratedDataset generate_dataset(const DatasetConfig& config);

// Writes clouds/<id>.xyz and manifest.json under `dir`.
void write_dataset(const std::filesystem::path& dir, const GeneratedDataset& data);

std::filesystem::path manifest_path(const std::filesystem::path& dir_or_file);
DatasetManifest load_manifest(const std::filesystem::path& dir_or_file);
void save_manifest(const std::filesystem::path& dir, const DatasetManifest& manifest);

struct LoadedDataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<PointCloud> clouds;
  std::string manifest_hash;
};

// Loads the manifest and every cloud; checks paths resolve and P matches.
LoadedDataset load_dataset(const std::filesystem::path& dir_or_file);

}  // namespace cforge
