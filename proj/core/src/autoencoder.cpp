#include "cforge/autoencoder.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "cforge/checkpoint.hpp"
#include "cforge/error.hpp"
#include "cforge/io.hpp"

namespace cforge {

namespace {

std::vector<std::size_t> widths(const MlpModel& m) {
  std::vector<std::size_t> w{m.input_dim()};
  for (const auto& l : m.layers()) w.push_back(l.out_dim());
  return w;
}

Matrix stack(std::span<const PointCloud> clouds, std::span<const std::size_t> rows) {
  const std::size_t dim = clouds.front().flat().size();
  Matrix m(rows.size(), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = clouds[rows[r]].flat();
    if (src.size() != dim) throw InvalidInput("clouds in a batch differ in point count");
    std::copy(src.begin(), src.end(), m.row(r).begin());
  }
  return m;
}

void check_cloud(const AutoEncoder& ae, const PointCloud& cloud) {
  if (cloud.size() != ae.points()) {
    throw InvalidInput("cloud has " + std::to_string(cloud.size()) + " points, auto-encoder expects " +
                       std::to_string(ae.points()));
  }
}

}  // namespace

bool outside_latent_box(std::span<const double> z) {
  return std::any_of(z.begin(), z.end(), [](double v) { return v < -1.0 || v > 1.0; });
}

AutoEncoder::AutoEncoder(MlpModel encoder, MlpModel decoder)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  if (encoder_.layers().empty() || decoder_.layers().empty()) {
    throw InvalidInput("auto-encoder halves must have layers");
  }
  if (encoder_.input_dim() % 3 != 0) throw InvalidInput("encoder input must be 3P");
  if (encoder_.layers().back().activation.kind != ActivationKind::kTanh) {
    throw InvalidInput("encoder output layer must use tanh");
  }
  if (decoder_.layers().back().activation.kind != ActivationKind::kIdentity) {
    throw InvalidInput("decoder output layer must have no activation");
  }
  auto enc = widths(encoder_);
  auto dec = widths(decoder_);
  std::reverse(dec.begin(), dec.end());
  if (enc != dec) throw InvalidInput("decoder widths must mirror the encoder widths");
}

AutoEncoder AutoEncoder::initialize(const AutoEncoderConfig& c, Rng& rng) {
  if (c.points == 0 || c.latent_dim == 0) throw InvalidInput("points and latent_dim must be positive");
  std::vector<LayerSpec> enc;
  for (std::size_t w : c.hidden) {
    enc.push_back({w, Activation::leaky_relu(c.leaky_slope), c.encoder_dropout ? c.dropout : 0.0});
  }
  enc.push_back({c.latent_dim, Activation::tanh(), 0.0});
  std::vector<LayerSpec> dec;
  for (auto it = c.hidden.rbegin(); it != c.hidden.rend(); ++it) {
    dec.push_back({*it, Activation::leaky_relu(c.leaky_slope), c.dropout});
  }
  dec.push_back({3 * c.points, Activation::identity(), 0.0});
  auto encoder = MlpModel::initialize(3 * c.points, enc, rng);
  auto decoder = MlpModel::initialize(c.latent_dim, dec, rng);
  return AutoEncoder(std::move(encoder), std::move(decoder));
}

Latent encode(const AutoEncoder& ae, const PointCloud& cloud) {
  check_cloud(ae, cloud);
  return infer(ae.encoder(), cloud.flat());
}

std::vector<Latent> encode_all(const AutoEncoder& ae, std::span<const PointCloud> clouds) {
  std::vector<Latent> out;
  out.reserve(clouds.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < clouds.size(); start += kChunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(clouds.size(), start + kChunk); ++i) {
      check_cloud(ae, clouds[i]);
      rows.push_back(i);
    }
    const Matrix z = infer(ae.encoder(), stack(clouds, rows));
    for (std::size_t r = 0; r < z.rows(); ++r) out.emplace_back(z.row(r).begin(), z.row(r).end());
  }
  return out;
}

PointCloud decode(const AutoEncoder& ae, std::span<const double> z) {
  if (z.size() != ae.latent_dim()) {
    throw InvalidInput("latent has length " + std::to_string(z.size()) + ", auto-encoder expects " +
                       std::to_string(ae.latent_dim()));
  }
  return PointCloud::from_flat(infer(ae.decoder(), z));
}

double reconstruction_loss(const PointCloud& x, const PointCloud& x_hat) {
  if (x.size() != x_hat.size()) throw InvalidInput("reconstruction_loss: point counts differ");
  const auto a = x.flat();
  const auto b = x_hat.flat();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::string TrainingCurve::to_csv() const {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.val_loss) + "\n";
  }
  return out;
}

double mean_reconstruction_loss(const AutoEncoder& ae, std::span<const PointCloud> clouds) {
  if (clouds.empty()) throw InvalidInput("mean_reconstruction_loss of an empty set");
  double total = 0.0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < clouds.size(); start += kChunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(clouds.size(), start + kChunk); ++i) {
      check_cloud(ae, clouds[i]);
      rows.push_back(i);
    }
    const Matrix x = stack(clouds, rows);
    const Matrix x_hat = infer(ae.decoder(), infer(ae.encoder(), x));
    const auto a = x.values();
    const auto b = x_hat.values();
    for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  }
  return total / static_cast<double>(clouds.size());
}

AeTrainResult train_autoencoder(std::span<const PointCloud> train, std::span<const PointCloud> val,
                                const TrainConfig& config) {
  if (train.empty()) throw InvalidInput("auto-encoder training split is empty");
  if (val.empty()) throw InvalidInput("auto-encoder validation split is empty");
  if (config.epochs == 0) throw InvalidInput("epochs must be positive");
  if (config.batch_size == 0) throw InvalidInput("batch size must be positive");
  if (!(config.val_fraction > 0.0 && config.val_fraction < 1.0)) {
    throw InvalidInput("validation fraction must lie in (0, 1)");
  }
  auto arch = config.arch;
  arch.points = train.front().size();
  for (const auto& c : train) {
    if (c.size() != arch.points) throw InvalidInput("training clouds differ in point count");
  }

  Rng init_rng(mix_seed(config.seed, 1));
  Rng rng(mix_seed(config.seed, 2));
  AutoEncoder ae = AutoEncoder::initialize(arch, init_rng);
  for (const auto& c : train) check_cloud(ae, c);
  for (const auto& c : val) check_cloud(ae, c);

  AdamState enc_state = make_adam_state(ae.encoder(), config.adam);
  AdamState dec_state = make_adam_state(ae.decoder(), config.adam);

  AeTrainResult result{ae, {}};
  auto record = [&](const EpochLoss& e) {
    if (!std::isfinite(e.train_loss) || !std::isfinite(e.val_loss)) {
      throw TrainingError("auto-encoder loss became non-finite at epoch " + std::to_string(e.epoch));
    }
    result.curve.epochs.push_back(e);
    if (config.on_epoch) config.on_epoch(e);
  };
  record({0, mean_reconstruction_loss(ae, train), mean_reconstruction_loss(ae, val)});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = rng.permutation(train.size());
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      const Matrix x = stack(train, rows);
      const double inv_b = 1.0 / static_cast<double>(rows.size());

      auto enc = forward(ae.encoder(), x, Mode::kTrain, &rng);
      auto dec = forward(ae.decoder(), enc.output, Mode::kTrain, &rng);

      Matrix grad(x.rows(), x.cols());
      const auto xv = x.values();
      const auto yv = dec.output.values();
      auto gv = grad.values();
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < gv.size(); ++i) {
        const double d = yv[i] - xv[i];
        batch_loss += d * d;
        gv[i] = 2.0 * d * inv_b;
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("auto-encoder loss became non-finite in epoch " + std::to_string(epoch));
      }
      epoch_total += batch_loss;

      auto dec_grads = backward(ae.decoder(), dec.cache, grad);
      auto enc_grads = backward(ae.encoder(), enc.cache, dec_grads.grad_input);
      adam_step(ae.mutable_decoder(), dec_grads.params, dec_state);
      adam_step(ae.mutable_encoder(), enc_grads.params, enc_state);
    }
    record({epoch, epoch_total / static_cast<double>(train.size()), mean_reconstruction_loss(ae, val)});
  }
  result.model = std::move(ae);
  return result;
}

AeTrainResult train_autoencoder(const LoadedDataset& data, TrainConfig config) {
  std::vector<PointCloud> train, val;
  for (std::size_t i = 0; i < data.manifest.entries.size(); ++i) {
    (data.manifest.entries[i].split == Split::kTrain ? train : val).push_back(data.clouds[i]);
  }
  config.val_fraction = data.manifest.val_fraction;
  return train_autoencoder(train, val, config);
}

std::filesystem::path metadata_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".meta.json";
  return p;
}

std::string save_autoencoder(const std::filesystem::path& path, const AutoEncoder& ae, AeMetadata meta) {
  const std::string text = serialize_models({{"encoder", ae.encoder()}, {"decoder", ae.decoder()}});
  write_text_file(path, text);
  meta.points = ae.points();
  meta.latent_dim = ae.latent_dim();
  meta.checkpoint_hash = fnv1a_hex(text);
  nlohmann::ordered_json j;
  j["format"] = "concept-forge-meta/1";
  j["kind"] = "autoencoder";
  j["points"] = meta.points;
  j["latent_dim"] = meta.latent_dim;
  j["normalization"] = meta.normalization;
  j["manifest_hash"] = meta.manifest_hash;
  j["manifest_path"] = meta.manifest_path;
  j["checkpoint_hash"] = meta.checkpoint_hash;
  write_text_file(metadata_path(path), j.dump(2) + "\n");
  return meta.checkpoint_hash;
}

LoadedAutoEncoder load_autoencoder(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  const auto models = parse_models(text);
  LoadedAutoEncoder out{AutoEncoder(find_model(models, "encoder"), find_model(models, "decoder")), {},
                        fnv1a_hex(text)};
  const auto mpath = metadata_path(path);
  if (std::filesystem::exists(mpath)) {
    try {
      const auto j = nlohmann::json::parse(read_text_file(mpath));
      out.meta.points = j.at("points").get<std::size_t>();
      out.meta.latent_dim = j.at("latent_dim").get<std::size_t>();
      out.meta.normalization = j.value("normalization", out.meta.normalization);
      out.meta.manifest_hash = j.value("manifest_hash", std::string());
      out.meta.manifest_path = j.value("manifest_path", std::string());
      out.meta.checkpoint_hash = j.value("checkpoint_hash", std::string());
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("malformed auto-encoder metadata " + mpath.string() + ": " + ex.what());
    }
    if (out.meta.checkpoint_hash != out.hash) {
      throw HashMismatch("metadata " + mpath.string() + " describes checkpoint " +
                         out.meta.checkpoint_hash + ", file hashes to " + out.hash);
    }
    if (out.meta.points != out.model.points() || out.meta.latent_dim != out.model.latent_dim()) {
      throw HashMismatch("metadata dimensions disagree with checkpoint " + path.string());
    }
  } else {
    out.meta.points = out.model.points();
    out.meta.latent_dim = out.model.latent_dim();
    out.meta.checkpoint_hash = out.hash;
  }
  return out;
}

}  // namespace cforge
