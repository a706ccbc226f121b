#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cforge/numerics.hpp"

namespace cforge {

struct RegressorConfig {
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden{64, 64};
  double leaky_slope = 0.01;
  double dropout = 0.1;
  std::size_t epochs = 1000;
  std::size_t batch_size = 32;
  AdamConfig adam{};
  // Only used by the overload that splits internally.
  double val_fraction = 0.25;
  std::uint64_t seed = 0;
};

// Latent -> scalar network whose last layer is a single ReLU unit, so
// predictions are never negative.
class Regressor {
 public:
  // Throws InvalidInput unless the model ends in one ReLU output.
  explicit Regressor(MlpModel net);

  const MlpModel& net() const { return net_; }
  MlpModel& mutable_net() { return net_; }
  std::size_t latent_dim() const { return net_.input_dim(); }

 private:
  MlpModel net_;
};

double predict(const Regressor& reg, std::span<const double> z);
std::vector<double> predict_all(const Regressor& reg, std::span<const std::vector<double>> latents);

// Analytic gradient of the prediction. Exactly zero when the output unit is
// dead (pre-activation <= 0).
std::vector<double> grad_wrt_latent(const Regressor& reg, std::span<const double> z);

double mean_squared_error(const Regressor& reg, std::span<const std::vector<double>> latents,
                          std::span<const double> targets);

struct RegressorTrainResult {
  Regressor model;
  double train_mse = 0.0;
  double val_mse = 0.0;  // NaN when there is no validation set
};

// ADAM on the mean squared error. The output bias starts at the mean
// training target. Throws InvalidInput on length mismatch, empty input or
// negative targets.
RegressorTrainResult train_regressor(std::span<const std::vector<double>> train_latents,
                                     std::span<const double> train_targets,
                                     std::span<const std::vector<double>> val_latents,
                                     std::span<const double> val_targets, const RegressorConfig& config);
// Holds out config.val_fraction of the samples (seeded) for validation.
RegressorTrainResult train_regressor(std::span<const std::vector<double>> latents,
                                     std::span<const double> targets, const RegressorConfig& config);

struct RegressorMetadata {
  std::size_t latent_dim = 0;
  std::string ae_hash;
  std::string ae_path;
  double train_mse = 0.0;
  double val_mse = 0.0;
  std::string checkpoint_hash;
};

// Writes the checkpoint plus <file>.meta.json; returns the checkpoint hash.
std::string save_regressor(const std::filesystem::path& path, const Regressor& reg, RegressorMetadata meta);

struct LoadedRegressor {
  Regressor model;
  RegressorMetadata meta;
  std::string hash;
};

// When `expected_ae_hash` is nonempty the sidecar must name that
// auto-encoder, otherwise HashMismatch is thrown.
LoadedRegressor load_regressor(const std::filesystem::path& path, const std::string& expected_ae_hash = {});

}  // namespace cforge
