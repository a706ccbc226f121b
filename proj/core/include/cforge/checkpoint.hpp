#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cforge/numerics.hpp"

namespace cforge {

inline constexpr std::string_view kModelFormat = "concept-forge-model/1";

struct NamedModel {
  std::string name;
  MlpModel model;
};

// Text checkpoint holding one or more named MLPs:
//
//   format concept-forge-model/1
//   models <count>
//   model <name>
//   input_dim <n> output_dim <n> layers <n>
//   layer <k> in <n> out <n> activation <tag> slope <x> dropout <x>
//   weights            (out lines of `in` values, row-major)
//   bias               (one line of `out` values)
//   end
//
// Values are written in shortest round-trip form, so save/load is lossless.
std::string serialize_models(const std::vector<NamedModel>& models);
std::vector<NamedModel> parse_models(std::string_view text);

void save_models(const std::filesystem::path& path, const std::vector<NamedModel>& models);
std::vector<NamedModel> load_models(const std::filesystem::path& path);

// Finds `name` among the parsed models or throws IoError.
const MlpModel& find_model(const std::vector<NamedModel>& models, std::string_view name);

}  // namespace cforge
