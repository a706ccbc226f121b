#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cforge/dataset.hpp"
#include "cforge/numerics.hpp"
#include "cforge/shapes.hpp"

namespace cforge {

using Latent = std::vector<double>;

// True when some coordinate lies outside [-1, 1].
bool outside_latent_box(std::span<const double> z);

struct AutoEncoderConfig {
  std::size_t points = 512;
  std::size_t latent_dim = 8;
  // Encoder hidden widths; the decoder mirrors them in reverse.
  std::vector<std::size_t> hidden{512, 128, 32};
  double leaky_slope = 0.01;
  // Decoder hidden layers. Encoder dropout is off by default: noise ahead of
  // the tanh bottleneck pushes the codes into saturation.
  double dropout = 0.1;
  bool encoder_dropout = false;
};

// Encoder 3P -> ... -> h with a tanh bottleneck, decoder h -> ... -> 3P with
// an identity output layer.
class AutoEncoder {
 public:
  // Throws InvalidInput unless the halves satisfy the structural invariants:
  // tanh latent, identity output, decoder widths mirroring the encoder's.
  AutoEncoder(MlpModel encoder, MlpModel decoder);

  static AutoEncoder initialize(const AutoEncoderConfig& config, Rng& rng);

  const MlpModel& encoder() const { return encoder_; }
  const MlpModel& decoder() const { return decoder_; }
  MlpModel& mutable_encoder() { return encoder_; }
  MlpModel& mutable_decoder() { return decoder_; }
  std::size_t latent_dim() const { return encoder_.output_dim(); }
  std::size_t points() const { return encoder_.input_dim() / 3; }

 private:
  MlpModel encoder_;
  MlpModel decoder_;
};

Latent encode(const AutoEncoder& ae, const PointCloud& cloud);
std::vector<Latent> encode_all(const AutoEncoder& ae, std::span<const PointCloud> clouds);
// Any latent of the right length is accepted, including points outside the
// tanh box.
PointCloud decode(const AutoEncoder& ae, std::span<const double> z);

// Squared Frobenius norm of the difference (sum of squared coordinate errors).
double reconstruction_loss(const PointCloud& x, const PointCloud& x_hat);

struct EpochLoss {
  std::size_t epoch = 0;  // 0 = before the first update
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainingCurve {
  std::vector<EpochLoss> epochs;
  std::string to_csv() const;
};

// Affine input map x' = (x - mean) / scale, with `mean` the training mean
// cloud (flattened) and `scale` the RMS deviation from it.
struct TrainConfig {
  std::size_t epochs = 1000;
  std::size_t batch_size = 32;
  AdamConfig adam{};
  double val_fraction = 0.25;
  std::uint64_t seed = 0;
  AutoEncoderConfig arch{};
  std::function<void(const EpochLoss&)> on_epoch;
};

struct AeTrainResult {
  AutoEncoder model;
  TrainingCurve curve;
};

// Minibatch ADAM on the mean per-shape reconstruction loss. Epoch 0 records
// the losses of the initial weights; epochs 1.. record the mean training-mode
// minibatch loss and the validation loss after the epoch. Throws
// TrainingError on a non-finite loss and InvalidInput on an empty split.
AeTrainResult train_autoencoder(std::span<const PointCloud> train, std::span<const PointCloud> val,
                                const TrainConfig& config);
// Uses the manifest's train/val tags.
AeTrainResult train_autoencoder(const LoadedDataset& data, TrainConfig config);

double mean_reconstruction_loss(const AutoEncoder& ae, std::span<const PointCloud> clouds);

// Sidecar metadata stored next to the checkpoint as <file>.meta.json.
struct AeMetadata {
  std::size_t points = 0;
  std::size_t latent_dim = 0;
  std::string normalization = "centroid-origin/bbox-diagonal-1";
  std::string manifest_hash;
  std::string manifest_path;  // absolute path of the training manifest
  std::string checkpoint_hash;
};

std::filesystem::path metadata_path(const std::filesystem::path& checkpoint);

// Writes the checkpoint and its sidecar; returns the checkpoint hash.
std::string save_autoencoder(const std::filesystem::path& path, const AutoEncoder& ae, AeMetadata meta);

struct LoadedAutoEncoder {
  AutoEncoder model;
  AeMetadata meta;
  std::string hash;
};

// Throws HashMismatch when the sidecar does not describe this checkpoint.
LoadedAutoEncoder load_autoencoder(const std::filesystem::path& path);

}  // namespace cforge
