#include "cforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "cforge/error.hpp"
#include "cforge/io.hpp"

namespace cforge {

namespace {

using ordered_json = nlohmann::ordered_json;

enum Stream : std::uint64_t { kCarStream = 1, kCuboidStream, kEllipsoidStream, kBumpStream, kSplitStream, kLayoutStream };

Rng shape_rng(std::uint64_t seed, std::uint64_t stream, std::size_t index) {
  return Rng(mix_seed(mix_seed(seed, stream), index));
}

std::string make_id(std::string_view prefix, std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return std::string(prefix) + "_" + digits;
}

}  // namespace

std::string_view split_name(Split split) { return split == Split::kTrain ? "train" : "val"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  throw InvalidInput("unknown split '" + std::string(name) + "'");
}

bool ManifestEntry::has_label(std::string_view label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

std::optional<std::size_t> DatasetManifest::find(std::string_view id) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].id == id) return i;
  }
  return std::nullopt;
}

std::size_t DatasetManifest::index_of(std::string_view id) const {
  if (auto i = find(id)) return *i;
  throw InvalidInput("unknown shape id '" + std::string(id) + "'");
}

std::vector<std::size_t> DatasetManifest::with_label(std::string_view label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].has_label(label)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> DatasetManifest::in_split(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == split) out.push_back(i);
  }
  return out;
}

void DatasetManifest::validate() const {
  std::set<std::string_view> seen;
  for (const auto& e : entries) {
    if (e.id.empty()) throw InvalidInput("manifest entry with empty id");
    if (!seen.insert(e.id).second) throw InvalidInput("duplicate manifest id '" + e.id + "'");
    if (e.path.empty()) throw InvalidInput("manifest entry '" + e.id + "' has no path");
    if (!(e.drag >= 0.0) || !std::isfinite(e.drag)) {
      throw InvalidInput("manifest entry '" + e.id + "' has an invalid drag value");
    }
  }
}

std::string DatasetManifest::to_json() const {
  ordered_json j;
  j["format"] = kManifestFormat;
  j["points"] = points;
  j["layout_seed"] = layout_seed;
  j["seed"] = seed;
  j["val_fraction"] = val_fraction;
  j["normalization"] = "centroid-origin/bbox-diagonal-1";
  auto& arr = j["entries"] = ordered_json::array();
  for (const auto& e : entries) {
    arr.push_back({{"id", e.id},
                   {"path", e.path},
                   {"labels", e.labels},
                   {"drag", e.drag},
                   {"split", split_name(e.split)}});
  }
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(std::string_view text) {
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.value("format", std::string()) != kManifestFormat) {
      throw IoError("not a concept-forge manifest");
    }
    m.points = j.at("points").get<std::size_t>();
    m.layout_seed = j.at("layout_seed").get<std::uint64_t>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.val_fraction = j.value("val_fraction", 0.25);
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.path = e.at("path").get<std::string>();
      entry.labels = e.at("labels").get<std::vector<std::string>>();
      entry.drag = e.at("drag").get<double>();
      entry.split = parse_split(e.at("split").get<std::string>());
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(std::string("malformed manifest: ") + ex.what());
  }
  m.validate();
  return m;
}

GeneratedDataset generate_dataset(const DatasetConfig& config) {
  if (config.points == 0) throw InvalidInput("points per cloud must be positive");
  if (!(config.val_fraction > 0.0 && config.val_fraction < 1.0)) {
    throw InvalidInput("validation fraction must lie in (0, 1)");
  }
  GeneratedDataset data;
  auto& m = data.manifest;
  m.points = config.points;
  m.seed = config.seed;
  m.layout_seed = mix_seed(config.seed, kLayoutStream);
  m.val_fraction = config.val_fraction;
  const SurfaceLayout layout = m.layout();

  auto add = [&](std::string id, std::vector<std::string> labels, const PointCloud& raw,
                 double bump_height, Vec3 axes) {
    PointCloud pc = normalize(raw);
    ManifestEntry e;
    e.path = "clouds/" + id + ".xyz";
    e.id = std::move(id);
    e.labels = std::move(labels);
    e.drag = drag_proxy(pc);
    m.entries.push_back(std::move(e));
    data.clouds.push_back(std::move(pc));
    data.bump_heights.push_back(bump_height);
    data.semi_axes.push_back(axes);
  };

  const double nan = std::nan("");
  for (std::size_t i = 0; i < config.cars; ++i) {
    auto rng = shape_rng(config.seed, kCarStream, i);
    const CarStyle style = i % 2 == 0 ? CarStyle::kSport : CarStyle::kSedan;
    auto car = gen_car_like(rng, style, layout);
    add(make_id("car", i), {"car", std::string(car_style_name(style))}, car.cloud, nan, {});
  }
  for (std::size_t i = 0; i < config.cuboids; ++i) {
    auto rng = shape_rng(config.seed, kCuboidStream, i);
    add(make_id("cuboid", i), {"cuboid"}, gen_cuboid(rng, config.primitive_bounds, layout), nan, {});
  }
  for (std::size_t i = 0; i < config.ellipsoids; ++i) {
    auto rng = shape_rng(config.seed, kEllipsoidStream, i);
    add(make_id("ellipsoid", i), {"ellipsoid"}, gen_ellipsoid(rng, config.primitive_bounds, layout),
        nan, {});
  }
  for (std::size_t i = 0; i < config.bumps; ++i) {
    auto rng = shape_rng(config.seed, kBumpStream, i);
    auto bump = gen_bumped_ellipsoid(rng, config.bump_recipe, layout);
    std::vector<std::string> labels{"bump"};
    if (bump.bump_height >= config.high_bump_threshold) labels.emplace_back("highbump");
    if (bump.bump_height <= config.low_bump_threshold) labels.emplace_back("lowbump");
    add(make_id("bump", i), std::move(labels), bump.cloud, bump.bump_height, bump.semi_axes);
  }

  const std::size_t n = m.entries.size();
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * config.val_fraction));
  Rng split_rng(mix_seed(config.seed, kSplitStream));
  const auto order = split_rng.permutation(n);
  for (std::size_t k = 0; k < n_val && k < n; ++k) m.entries[order[k]].split = Split::kVal;
  m.validate();
  return data;
}

void write_dataset(const std::filesystem::path& dir, const GeneratedDataset& data) {
  std::filesystem::create_directories(dir / "clouds");
  for (std::size_t i = 0; i < data.clouds.size(); ++i) {
    save_xyz(dir / data.manifest.entries[i].path, data.clouds[i]);
  }
  save_manifest(dir, data.manifest);
}

std::filesystem::path manifest_path(const std::filesystem::path& dir_or_file) {
  if (std::filesystem::is_directory(dir_or_file)) return dir_or_file / kManifestFile;
  return dir_or_file;
}

DatasetManifest load_manifest(const std::filesystem::path& dir_or_file) {
  return DatasetManifest::from_json(read_text_file(manifest_path(dir_or_file)));
}

void save_manifest(const std::filesystem::path& dir, const DatasetManifest& manifest) {
  write_text_file(dir / kManifestFile, manifest.to_json());
}

LoadedDataset load_dataset(const std::filesystem::path& dir_or_file) {
  LoadedDataset d;
  const auto mpath = manifest_path(dir_or_file);
  d.root = mpath.parent_path();
  const std::string text = read_text_file(mpath);
  d.manifest_hash = fnv1a_hex(text);
  d.manifest = DatasetManifest::from_json(text);
  d.clouds.reserve(d.manifest.entries.size());
  for (const auto& e : d.manifest.entries) {
    const auto path = d.root / e.path;
    if (!std::filesystem::exists(path)) {
      throw IoError("manifest entry '" + e.id + "' points at missing file " + path.string());
    }
    auto pc = load_xyz(path);
    if (pc.size() != d.manifest.points) {
      throw InvalidInput("cloud '" + e.id + "' has " + std::to_string(pc.size()) + " points, manifest says " +
                         std::to_string(d.manifest.points));
    }
    d.clouds.push_back(std::move(pc));
  }
  return d;
}

}  // namespace cforge
