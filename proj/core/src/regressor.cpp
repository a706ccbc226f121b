#include "cforge/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "cforge/checkpoint.hpp"
#include "cforge/error.hpp"
#include "cforge/io.hpp"

namespace cforge {

namespace {

void check_latent(const Regressor& reg, std::span<const double> z) {
  if (z.size() != reg.latent_dim()) {
    throw InvalidInput("latent has length " + std::to_string(z.size()) + ", regressor expects " +
                       std::to_string(reg.latent_dim()));
  }
}

void check_samples(std::span<const std::vector<double>> latents, std::span<const double> targets,
                   const char* what) {
  if (latents.size() != targets.size()) {
    throw InvalidInput(std::string(what) + ": " + std::to_string(latents.size()) + " latents but " +
                       std::to_string(targets.size()) + " targets");
  }
  for (double y : targets) {
    if (!std::isfinite(y) || y < 0.0) throw InvalidInput(std::string(what) + ": targets must be finite and >= 0");
  }
}

Matrix stack(std::span<const std::vector<double>> latents, std::span<const std::size_t> rows,
             std::size_t dim) {
  Matrix m(rows.size(), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& z = latents[rows[r]];
    if (z.size() != dim) throw InvalidInput("latent length differs from the regressor input");
    std::copy(z.begin(), z.end(), m.row(r).begin());
  }
  return m;
}

}  // namespace

Regressor::Regressor(MlpModel net) : net_(std::move(net)) {
  if (net_.layers().empty()) throw InvalidInput("regressor has no layers");
  if (net_.output_dim() != 1) throw InvalidInput("regressor must have one output");
  if (net_.layers().back().activation.kind != ActivationKind::kRelu) {
    throw InvalidInput("regressor output layer must be ReLU");
  }
}

double predict(const Regressor& reg, std::span<const double> z) {
  check_latent(reg, z);
  return infer(reg.net(), z)[0];
}

std::vector<double> predict_all(const Regressor& reg, std::span<const std::vector<double>> latents) {
  std::vector<std::size_t> rows(latents.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  if (rows.empty()) return {};
  const Matrix y = infer(reg.net(), stack(latents, rows, reg.latent_dim()));
  return {y.values().begin(), y.values().end()};
}

std::vector<double> grad_wrt_latent(const Regressor& reg, std::span<const double> z) {
  check_latent(reg, z);
  auto fwd = forward(reg.net(), z, Mode::kInfer, nullptr);
  const double one = 1.0;
  auto back = backward(reg.net(), fwd.cache, std::span<const double>(&one, 1));
  return {back.grad_input.values().begin(), back.grad_input.values().end()};
}

double mean_squared_error(const Regressor& reg, std::span<const std::vector<double>> latents,
                          std::span<const double> targets) {
  check_samples(latents, targets, "mean_squared_error");
  if (latents.empty()) throw InvalidInput("mean_squared_error of an empty set");
  const auto y = predict_all(reg, latents);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - targets[i]) * (y[i] - targets[i]);
  return s / static_cast<double>(y.size());
}

RegressorTrainResult train_regressor(std::span<const std::vector<double>> train_latents,
                                     std::span<const double> train_targets,
                                     std::span<const std::vector<double>> val_latents,
                                     std::span<const double> val_targets, const RegressorConfig& config) {
  check_samples(train_latents, train_targets, "train_regressor");
  check_samples(val_latents, val_targets, "train_regressor (validation)");
  if (train_latents.empty()) throw InvalidInput("train_regressor: no training samples");
  if (config.epochs == 0 || config.batch_size == 0) {
    throw InvalidInput("train_regressor: epochs and batch size must be positive");
  }
  const std::size_t dim = train_latents.front().size();

  std::vector<LayerSpec> specs;
  for (std::size_t w : config.hidden) specs.push_back({w, Activation::leaky_relu(config.leaky_slope), config.dropout});
  specs.push_back({1, Activation::relu(), 0.0});
  Rng init_rng(mix_seed(config.seed, 1));
  Rng rng(mix_seed(config.seed, 2));
  MlpModel net = MlpModel::initialize(dim, specs, init_rng);
  double mean_y = 0.0;
  for (double y : train_targets) mean_y += y;
  mean_y /= static_cast<double>(train_targets.size());
  net.mutable_layers().back().bias[0] = mean_y;
  Regressor reg(std::move(net));

  AdamState state = make_adam_state(reg.net(), config.adam);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = rng.permutation(train_latents.size());
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      const Matrix x = stack(train_latents, rows, dim);
      auto fwd = forward(reg.net(), x, Mode::kTrain, &rng);
      Matrix grad(rows.size(), 1);
      const double scale = 2.0 / static_cast<double>(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        grad(r, 0) = scale * (fwd.output(r, 0) - train_targets[rows[r]]);
      }
      auto back = backward(reg.net(), fwd.cache, grad);
      adam_step(reg.mutable_net(), back.params, state);
    }
  }

  RegressorTrainResult result{reg, mean_squared_error(reg, train_latents, train_targets),
                              std::numeric_limits<double>::quiet_NaN()};
  if (!val_latents.empty()) result.val_mse = mean_squared_error(reg, val_latents, val_targets);
  if (!std::isfinite(result.train_mse)) throw TrainingError("regressor training diverged");
  return result;
}

RegressorTrainResult train_regressor(std::span<const std::vector<double>> latents,
                                     std::span<const double> targets, const RegressorConfig& config) {
  check_samples(latents, targets, "train_regressor");
  if (!(config.val_fraction >= 0.0 && config.val_fraction < 1.0)) {
    throw InvalidInput("train_regressor: validation fraction must lie in [0, 1)");
  }
  Rng split_rng(mix_seed(config.seed, 3));
  const auto order = split_rng.permutation(latents.size());
  const auto n_val = static_cast<std::size_t>(std::lround(config.val_fraction * static_cast<double>(latents.size())));
  std::vector<std::vector<double>> tz, vz;
  std::vector<double> ty, vy;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& z = i < n_val ? vz : tz;
    auto& y = i < n_val ? vy : ty;
    z.push_back(latents[order[i]]);
    y.push_back(targets[order[i]]);
  }
  return train_regressor(tz, ty, vz, vy, config);
}

std::string save_regressor(const std::filesystem::path& path, const Regressor& reg, RegressorMetadata meta) {
  const std::string text = serialize_models({{"regressor", reg.net()}});
  write_text_file(path, text);
  meta.latent_dim = reg.latent_dim();
  meta.checkpoint_hash = fnv1a_hex(text);
  nlohmann::ordered_json j;
  j["format"] = "concept-forge-meta/1";
  j["kind"] = "regressor";
  j["latent_dim"] = meta.latent_dim;
  j["ae_hash"] = meta.ae_hash;
  j["ae_path"] = meta.ae_path;
  j["train_mse"] = meta.train_mse;
  if (std::isfinite(meta.val_mse)) j["val_mse"] = meta.val_mse;
  j["checkpoint_hash"] = meta.checkpoint_hash;
  auto mpath = path;
  mpath += ".meta.json";
  write_text_file(mpath, j.dump(2) + "\n");
  return meta.checkpoint_hash;
}

LoadedRegressor load_regressor(const std::filesystem::path& path, const std::string& expected_ae_hash) {
  const std::string text = read_text_file(path);
  LoadedRegressor out{Regressor(find_model(parse_models(text), "regressor")), {}, fnv1a_hex(text)};
  auto mpath = path;
  mpath += ".meta.json";
  if (!std::filesystem::exists(mpath)) {
    if (!expected_ae_hash.empty()) {
      throw HashMismatch("regressor " + path.string() + " has no metadata naming its auto-encoder");
    }
    out.meta.latent_dim = out.model.latent_dim();
    out.meta.checkpoint_hash = out.hash;
    return out;
  }
  try {
    const auto j = nlohmann::json::parse(read_text_file(mpath));
    out.meta.latent_dim = j.at("latent_dim").get<std::size_t>();
    out.meta.ae_hash = j.value("ae_hash", std::string());
    out.meta.ae_path = j.value("ae_path", std::string());
    out.meta.train_mse = j.value("train_mse", 0.0);
    out.meta.val_mse = j.value("val_mse", std::numeric_limits<double>::quiet_NaN());
    out.meta.checkpoint_hash = j.value("checkpoint_hash", std::string());
  } catch (const nlohmann::json::exception& ex) {
    throw IoError("malformed regressor metadata " + mpath.string() + ": " + ex.what());
  }
  if (out.meta.checkpoint_hash != out.hash) {
    throw HashMismatch("metadata " + mpath.string() + " describes checkpoint " + out.meta.checkpoint_hash +
                       ", file hashes to " + out.hash);
  }
  if (!expected_ae_hash.empty() && out.meta.ae_hash != expected_ae_hash) {
    throw HashMismatch("regressor " + path.string() + " was trained on auto-encoder " + out.meta.ae_hash +
                       ", not " + expected_ae_hash);
  }
  return out;
}

}  // namespace cforge
