#include "cforge/numerics.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "cforge/error.hpp"

namespace cforge {

namespace {

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

Matrix Matrix::from_rows(std::span<const std::vector<double>> rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw InvalidInput("ragged rows in Matrix::from_rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  Matrix m(1, values.size());
  std::copy(values.begin(), values.end(), m.row(0).begin());
  return m;
}

void gemm(bool transpose_a, bool transpose_b, double alpha, const Matrix& a, const Matrix& b,
          double beta, Matrix& c) {
  const std::size_t m = transpose_a ? a.cols() : a.rows();
  const std::size_t k = transpose_a ? a.rows() : a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  if (k != kb || c.rows() != m || c.cols() != n) {
    throw InvalidInput("gemm shape mismatch: " + dims(m, k) + " * " + dims(kb, n) + " -> " +
                       dims(c.rows(), c.cols()));
  }
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (double& x : c.values()) x *= beta;
    return;
  }
  cblas_dgemm(CblasRowMajor, transpose_a ? CblasTrans : CblasNoTrans,
              transpose_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a.data(), static_cast<int>(a.cols()), b.data(),
              static_cast<int>(b.cols()), beta, c.data(), static_cast<int>(c.cols()));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }
double leaky_relu_derivative(double x, double slope) { return x > 0.0 ? 1.0 : slope; }
double relu(double x) { return x > 0.0 ? x : 0.0; }
double relu_derivative(double x) { return x > 0.0 ? 1.0 : 0.0; }
double tanh_derivative(double x) {
  const double t = std::tanh(x);
  return 1.0 - t * t;
}

double Activation::apply(double pre) const {
  switch (kind) {
    case ActivationKind::kIdentity: return pre;
    case ActivationKind::kTanh: return std::tanh(pre);
    case ActivationKind::kRelu: return cforge::relu(pre);
    case ActivationKind::kLeakyRelu: return cforge::leaky_relu(pre, slope);
  }
  return pre;
}

double Activation::derivative(double pre) const {
  switch (kind) {
    case ActivationKind::kIdentity: return 1.0;
    case ActivationKind::kTanh: return tanh_derivative(pre);
    case ActivationKind::kRelu: return relu_derivative(pre);
    case ActivationKind::kLeakyRelu: return leaky_relu_derivative(pre, slope);
  }
  return 1.0;
}

std::string_view activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kIdentity: return "identity";
    case ActivationKind::kTanh: return "tanh";
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kLeakyRelu: return "leaky_relu";
  }
  return "identity";
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "identity") return ActivationKind::kIdentity;
  if (name == "tanh") return ActivationKind::kTanh;
  if (name == "relu") return ActivationKind::kRelu;
  if (name == "leaky_relu") return ActivationKind::kLeakyRelu;
  throw InvalidInput("unknown activation '" + std::string(name) + "'");
}

// --- MlpModel ----------------------------------------------------------------

MlpModel::MlpModel(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidInput("an MLP needs at least one layer");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& layer = layers_[k];
    if (layer.out_dim() == 0 || layer.in_dim() == 0) {
      throw InvalidInput("layer " + std::to_string(k) + " has a zero dimension");
    }
    if (layer.bias.size() != layer.out_dim()) {
      throw InvalidInput("layer " + std::to_string(k) + ": bias length " +
                         std::to_string(layer.bias.size()) + " != weight rows " +
                         std::to_string(layer.out_dim()));
    }
    if (!(layer.dropout_rate >= 0.0 && layer.dropout_rate < 1.0)) {
      throw InvalidInput("layer " + std::to_string(k) + ": dropout rate outside [0,1)");
    }
    if (k > 0 && layers_[k - 1].out_dim() != layer.in_dim()) {
      throw InvalidInput("layer " + std::to_string(k) + " input dim " +
                         std::to_string(layer.in_dim()) + " does not chain with previous output " +
                         std::to_string(layers_[k - 1].out_dim()));
    }
  }
}

MlpModel MlpModel::initialize(std::size_t input_dim, std::span<const LayerSpec> specs, Rng& rng) {
  std::vector<DenseLayer> layers;
  std::size_t fan_in = input_dim;
  for (const auto& spec : specs) {
    DenseLayer layer;
    layer.weights = Matrix(spec.out_dim, fan_in);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + spec.out_dim));
    for (double& w : layer.weights.values()) w = rng.uniform(-limit, limit);
    layer.bias.assign(spec.out_dim, 0.0);
    layer.activation = spec.activation;
    layer.dropout_rate = spec.dropout_rate;
    layers.push_back(std::move(layer));
    fan_in = spec.out_dim;
  }
  return MlpModel(std::move(layers));
}

std::size_t MlpModel::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t MlpModel::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.parameter_count();
  return n;
}

bool MlpModel::all_finite() const {
  for (const auto& l : layers_) {
    for (double w : l.weights.values())
      if (!std::isfinite(w)) return false;
    for (double b : l.bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

// --- forward / backward ----------------------------------------------------------

ForwardResult forward(const MlpModel& model, const Matrix& input, Mode mode, Rng* rng) {
  if (input.cols() != model.input_dim()) {
    throw InvalidInput("forward: input has " + std::to_string(input.cols()) +
                       " features, model expects " + std::to_string(model.input_dim()));
  }
  ForwardResult result;
  result.cache.layers.reserve(model.layers().size());
  Matrix x = input;
  for (const auto& layer : model.layers()) {
    LayerCache lc;
    lc.pre = Matrix(x.rows(), layer.out_dim());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      std::copy(layer.bias.begin(), layer.bias.end(), lc.pre.row(r).begin());
    }
    gemm(false, true, 1.0, x, layer.weights, 1.0, lc.pre);

    Matrix out(lc.pre.rows(), lc.pre.cols());
    const auto pre = lc.pre.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < pre.size(); ++i) dst[i] = layer.activation.apply(pre[i]);

    if (mode == Mode::kTrain && layer.dropout_rate > 0.0) {
      if (rng == nullptr) throw InvalidInput("forward: training-mode dropout needs a random source");
      const double keep = 1.0 - layer.dropout_rate;
      lc.mask = Matrix(out.rows(), out.cols());
      auto mask = lc.mask.values();
      for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
        dst[i] *= mask[i];
      }
    }
    lc.input = std::move(x);
    x = std::move(out);
    result.cache.layers.push_back(std::move(lc));
  }
  result.output = std::move(x);
  return result;
}

ForwardResult forward(const MlpModel& model, std::span<const double> input, Mode mode, Rng* rng) {
  return forward(model, Matrix::row_vector(input), mode, rng);
}

std::vector<double> infer(const MlpModel& model, std::span<const double> input) {
  auto out = forward(model, input, Mode::kInfer, nullptr).output;
  return {out.values().begin(), out.values().end()};
}

Matrix infer(const MlpModel& model, const Matrix& input) {
  if (input.cols() != model.input_dim()) {
    throw InvalidInput("infer: input has " + std::to_string(input.cols()) +
                       " features, model expects " + std::to_string(model.input_dim()));
  }
  // Same arithmetic as forward() without keeping the cache alive.
  Matrix x = input;
  for (const auto& layer : model.layers()) {
    Matrix pre(x.rows(), layer.out_dim());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      std::copy(layer.bias.begin(), layer.bias.end(), pre.row(r).begin());
    }
    gemm(false, true, 1.0, x, layer.weights, 1.0, pre);
    for (double& v : pre.values()) v = layer.activation.apply(v);
    x = std::move(pre);
  }
  return x;
}

Matrix replay(const MlpModel& model, const ActivationCache& cache) {
  if (cache.layers.size() != model.layers().size()) {
    throw InvalidInput("replay: cache does not belong to this model");
  }
  Matrix x = cache.layers.front().input;
  for (std::size_t k = 0; k < model.layers().size(); ++k) {
    const auto& layer = model.layers()[k];
    Matrix pre(x.rows(), layer.out_dim());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      std::copy(layer.bias.begin(), layer.bias.end(), pre.row(r).begin());
    }
    gemm(false, true, 1.0, x, layer.weights, 1.0, pre);
    auto v = pre.values();
    const auto& mask = cache.layers[k].mask;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = layer.activation.apply(v[i]);
      if (!mask.empty()) v[i] *= mask.values()[i];
    }
    x = std::move(pre);
  }
  return x;
}

MlpGradients MlpGradients::zeros_like(const MlpModel& model) {
  MlpGradients g;
  for (const auto& l : model.layers()) {
    g.layers.push_back({Matrix(l.out_dim(), l.in_dim()), std::vector<double>(l.out_dim(), 0.0)});
  }
  return g;
}

void MlpGradients::add(const MlpGradients& other) {
  if (other.layers.size() != layers.size()) throw InvalidInput("gradient layer count mismatch");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    auto dst = layers[k].weights.values();
    auto src = other.layers[k].weights.values();
    if (dst.size() != src.size() || layers[k].bias.size() != other.layers[k].bias.size()) {
      throw InvalidInput("gradient shape mismatch");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    for (std::size_t i = 0; i < layers[k].bias.size(); ++i) layers[k].bias[i] += other.layers[k].bias[i];
  }
}

void MlpGradients::scale(double factor) {
  for (auto& l : layers) {
    for (double& w : l.weights.values()) w *= factor;
    for (double& b : l.bias) b *= factor;
  }
}

BackwardResult backward(const MlpModel& model, const ActivationCache& cache,
                        const Matrix& grad_output) {
  const auto& layers = model.layers();
  if (cache.layers.size() != layers.size()) {
    throw InvalidInput("backward: cache has " + std::to_string(cache.layers.size()) +
                       " layers, model has " + std::to_string(layers.size()));
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& lc = cache.layers[k];
    if (lc.input.cols() != layers[k].in_dim() || lc.pre.cols() != layers[k].out_dim() ||
        lc.pre.rows() != cache.batch()) {
      throw InvalidInput("backward: cache layer " + std::to_string(k) + " does not match model");
    }
  }
  if (grad_output.rows() != cache.batch() || grad_output.cols() != model.output_dim()) {
    throw InvalidInput("backward: grad_output is " + dims(grad_output.rows(), grad_output.cols()) +
                       ", expected " + dims(cache.batch(), model.output_dim()));
  }

  BackwardResult result;
  result.params.layers.resize(layers.size());
  Matrix g = grad_output;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& layer = layers[k];
    const auto& lc = cache.layers[k];
    auto gv = g.values();
    const auto pre = lc.pre.values();
    if (!lc.mask.empty()) {
      const auto mask = lc.mask.values();
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= mask[i];
    }
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= layer.activation.derivative(pre[i]);

    auto& lg = result.params.layers[k];
    lg.weights = Matrix(layer.out_dim(), layer.in_dim());
    gemm(true, false, 1.0, g, lc.input, 0.0, lg.weights);
    lg.bias.assign(layer.out_dim(), 0.0);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const auto row = g.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) lg.bias[c] += row[c];
    }

    Matrix prev(g.rows(), layer.in_dim());
    gemm(false, false, 1.0, g, layer.weights, 0.0, prev);
    g = std::move(prev);
  }
  result.grad_input = std::move(g);
  return result;
}

BackwardResult backward(const MlpModel& model, const ActivationCache& cache,
                        std::span<const double> grad_output) {
  return backward(model, cache, Matrix::row_vector(grad_output));
}

std::vector<double> jacobian_vector_product(const MlpModel& model, std::span<const double> input,
                                            std::span<const double> direction) {
  if (input.size() != model.input_dim() || direction.size() != model.input_dim()) {
    throw InvalidInput("jacobian_vector_product: expected vectors of length " +
                       std::to_string(model.input_dim()));
  }
  std::vector<double> x(input.begin(), input.end());
  std::vector<double> t(direction.begin(), direction.end());
  for (const auto& layer : model.layers()) {
    std::vector<double> nx(layer.out_dim());
    std::vector<double> nt(layer.out_dim());
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      const auto w = layer.weights.row(o);
      const double pre = layer.bias[o] + dot(w, x);
      const double tangent = dot(w, t);
      nx[o] = layer.activation.apply(pre);
      nt[o] = layer.activation.derivative(pre) * tangent;
    }
    x = std::move(nx);
    t = std::move(nt);
  }
  return t;
}

// --- ADAM --------------------------------------------------------------------------

AdamState make_adam_state(std::span<const std::size_t> tensor_sizes, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  for (std::size_t n : tensor_sizes) {
    s.m.emplace_back(n, 0.0);
    s.v.emplace_back(n, 0.0);
  }
  return s;
}

AdamState make_adam_state(const MlpModel& model, const AdamConfig& config) {
  std::vector<std::size_t> sizes;
  for (const auto& l : model.layers()) {
    sizes.push_back(l.weights.size());
    sizes.push_back(l.bias.size());
  }
  return make_adam_state(sizes, config);
}

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw InvalidInput("adam_step: tensor count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || params[i].size() != state.m[i].size()) {
      throw InvalidInput("adam_step: tensor " + std::to_string(i) + " shape mismatch");
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        throw TrainingError("adam_step: non-finite gradient in tensor " + std::to_string(i) +
                            " at step " + std::to_string(state.step + 1));
      }
    }
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto p = params[i];
    const auto g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
      if (!std::isfinite(p[j])) {
        throw TrainingError("adam_step: parameter became non-finite at step " +
                            std::to_string(state.step));
      }
    }
  }
}

void adam_step(MlpModel& model, const MlpGradients& grads, AdamState& state) {
  auto& layers = model.mutable_layers();
  if (grads.layers.size() != layers.size()) throw InvalidInput("adam_step: gradient layer count mismatch");
  std::vector<std::span<double>> params;
  std::vector<std::span<const double>> gs;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    params.emplace_back(layers[k].weights.values());
    params.emplace_back(layers[k].bias);
    gs.emplace_back(grads.layers[k].weights.values());
    gs.emplace_back(grads.layers[k].bias);
  }
  adam_step(params, gs, state);
}

}  // namespace cforge
