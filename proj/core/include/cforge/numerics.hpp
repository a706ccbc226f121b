#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cforge/rng.hpp"

namespace cforge {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  static Matrix from_rows(std::span<const std::vector<double>> rows);
  static Matrix row_vector(std::span<const double> values);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// c = alpha * op(a) * op(b) + beta * c, where op transposes when requested.
// `c` must already have the result shape.
void gemm(bool transpose_a, bool transpose_b, double alpha, const Matrix& a, const Matrix& b,
          double beta, Matrix& c);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

// --- activations -----------------------------------------------------------

double leaky_relu(double x, double slope);
// Derivative at the kink (x == 0) is `slope`.
double leaky_relu_derivative(double x, double slope);
double relu(double x);
// Derivative at 0 is 0.
double relu_derivative(double x);
double tanh_derivative(double x);

enum class ActivationKind { kIdentity, kTanh, kRelu, kLeakyRelu };

struct Activation {
  ActivationKind kind = ActivationKind::kIdentity;
  double slope = 0.01;  // LeakyReLU only

  static Activation identity() { return {ActivationKind::kIdentity, 0.0}; }
  static Activation tanh() { return {ActivationKind::kTanh, 0.0}; }
  static Activation relu() { return {ActivationKind::kRelu, 0.0}; }
  static Activation leaky_relu(double slope = 0.01) { return {ActivationKind::kLeakyRelu, slope}; }

  double apply(double pre) const;
  double derivative(double pre) const;

  bool operator==(const Activation&) const = default;
};

std::string_view activation_name(ActivationKind kind);
ActivationKind parse_activation(std::string_view name);

// --- model -----------------------------------------------------------------

struct DenseLayer {
  Matrix weights;  // out x in
  std::vector<double> bias;
  Activation activation;
  double dropout_rate = 0.0;  // training mode only, inverted scaling

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }
  std::size_t parameter_count() const { return weights.size() + bias.size(); }

  bool operator==(const DenseLayer&) const = default;
};

struct LayerSpec {
  std::size_t out_dim;
  Activation activation;
  double dropout_rate = 0.0;
};

class MlpModel {
 public:
  MlpModel() = default;
  // Throws InvalidInput unless the layers chain and every bias matches its
  // weight rows.
  explicit MlpModel(std::vector<DenseLayer> layers);

  // Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases.
  static MlpModel initialize(std::size_t input_dim, std::span<const LayerSpec> specs, Rng& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }

  bool all_finite() const;
  bool operator==(const MlpModel&) const = default;

 private:
  std::vector<DenseLayer> layers_;
};

enum class Mode { kTrain, kInfer };

struct LayerCache {
  Matrix input;  // batch x in
  Matrix pre;    // batch x out, before activation
  Matrix mask;   // batch x out, entries 0 or 1/(1-p); empty when no dropout was applied
};

struct ActivationCache {
  std::vector<LayerCache> layers;
  std::size_t batch() const { return layers.empty() ? 0 : layers.front().input.rows(); }
};

struct ForwardResult {
  Matrix output;  // batch x output_dim
  ActivationCache cache;
};

// Batched forward pass; each row of `input` is one sample. In kInfer mode
// dropout is skipped and `rng` is never touched (it may be null).
ForwardResult forward(const MlpModel& model, const Matrix& input, Mode mode, Rng* rng);

// Single-sample convenience wrapper.
ForwardResult forward(const MlpModel& model, std::span<const double> input, Mode mode, Rng* rng);

// Deterministic inference.
std::vector<double> infer(const MlpModel& model, std::span<const double> input);
Matrix infer(const MlpModel& model, const Matrix& input);

// Recomputes the forward output from the cached input of layer 0 and the
// cached dropout masks. Used to check mask consistency.
Matrix replay(const MlpModel& model, const ActivationCache& cache);

struct LayerGradient {
  Matrix weights;
  std::vector<double> bias;
};

struct MlpGradients {
  std::vector<LayerGradient> layers;

  static MlpGradients zeros_like(const MlpModel& model);
  void add(const MlpGradients& other);
  void scale(double factor);
};

struct BackwardResult {
  MlpGradients params;
  Matrix grad_input;  // batch x input_dim
};

// Gradients are summed over the batch rows.
BackwardResult backward(const MlpModel& model, const ActivationCache& cache,
                        const Matrix& grad_output);
BackwardResult backward(const MlpModel& model, const ActivationCache& cache,
                        std::span<const double> grad_output);

// Forward-mode directional derivative J(input) * direction, inference mode.
std::vector<double> jacobian_vector_product(const MlpModel& model, std::span<const double> input,
                                            std::span<const double> direction);

// --- ADAM ------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;  // one accumulator per parameter tensor
  std::vector<std::vector<double>> v;
  long long step = 0;
};

// State sized for tensors with the given element counts.
AdamState make_adam_state(std::span<const std::size_t> tensor_sizes, const AdamConfig& config);
AdamState make_adam_state(const MlpModel& model, const AdamConfig& config);

// One bias-corrected ADAM update. Throws TrainingError when a gradient is
// not finite, InvalidInput when shapes disagree.
void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state);
void adam_step(MlpModel& model, const MlpGradients& grads, AdamState& state);

}  // namespace cforge
