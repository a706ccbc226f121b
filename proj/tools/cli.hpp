#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cforge/autoencoder.hpp"
#include "cforge/explore.hpp"
#include "cforge/shapes.hpp"

namespace cforge::cli {

// Runs one subcommand. `args` excludes the program name. Results go to
// `out`, progress and the one-line diagnostic on failure to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct BumpStudyConfig {
  BumpRecipe::Proportions mode = BumpRecipe::Proportions::kFixed;
  std::size_t shapes = 200;
  std::size_t points = 512;
  std::size_t epochs = 1000;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden{512, 128, 32};
  // Noise-free synthetic shapes that differ only slightly from each other;
  // dropout noise on the shared part of the signal drowns the differences.
  double dropout = 0.0;
  std::size_t random_counter = 50;
  std::size_t steps = 9;
  double eps_range = 0.0;  // 0: the data's extent along the CAV from the base shape
  std::uint64_t seed = 0;
};

struct BumpSweepRow {
  double eps = 0.0;
  double bump = 0.0;
  Vec3 semi_axes{};
  bool out_of_box = false;
};

struct BumpStudyResult {
  std::optional<AutoEncoder> model;
  LatentCorrelation correlation;
  std::vector<double> height_spearman;  // per latent coordinate, against generated height
  Cav cav;
  std::string base_id;
  std::vector<BumpSweepRow> sweep;
  double eps_range = 0.0;        // half-width actually swept
  double spearman = 0.0;         // eps vs measured bump height
  double max_axis_change = 0.0;  // largest relative semi-axis change against eps = 0
  double final_train_loss = 0.0;
  double initial_train_loss = 0.0;

  std::string sweep_csv() const;
};

// Generates bumped ellipsoids, trains an auto-encoder, measures the latent
// correlation, trains the HighBump CAV (against random shapes in fixed mode,
// against LowBump shapes in random mode) and sweeps eps from a mid-height
// shape. Progress lines go to `log` when non-null.
BumpStudyResult run_bump_study(const BumpStudyConfig& config, std::ostream* log = nullptr);

}  // namespace cforge::cli
