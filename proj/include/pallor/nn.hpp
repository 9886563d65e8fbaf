#pragma once

// Small neural-network engine: dense and 2-D convolutional layers, exact
// backpropagation of a mean-squared-error loss, and plain SGD.
//
// Tensors hold one sample. Convolutional tensors are (channels, height,
// width); dense tensors are 1-D. Convolution is cross-correlation with zero
// padding; Upsample2x repeats every pixel into a 2x2 block.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace pallor::nn {

using Shape = std::vector<std::size_t>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t element_count(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

enum class Activation { relu, sigmoid, linear };

std::string_view to_string(Activation a) noexcept;
Activation parse_activation(std::string_view name);

struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  friend bool operator==(const Dense&, const Dense&) = default;
};

struct Conv2d {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  friend bool operator==(const Conv2d&, const Conv2d&) = default;
};

struct ActivationLayer {
  Activation fn = Activation::linear;
  friend bool operator==(const ActivationLayer&, const ActivationLayer&) = default;
};

struct Upsample2x {
  friend bool operator==(const Upsample2x&, const Upsample2x&) = default;
};

struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

using LayerSpec = std::variant<Dense, Conv2d, ActivationLayer, Upsample2x, Flatten>;

struct NetworkSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::uint64_t seed = 0;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Output shape after every layer (index i is the output of layer i).
/// Throws Error(shape_mismatch) when adjacent layers do not compose.
std::vector<Shape> propagate_shapes(const NetworkSpec& spec);

/// One-line summary per layer; an activation directly after a dense or conv
/// layer is folded into it, e.g. "dense 3->16 relu".
std::vector<std::string> summarize(const NetworkSpec& spec);

struct LayerParams {
  std::vector<double> weights;
  std::vector<double> biases;
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// One entry per layer; parameter-free layers hold empty vectors.
using Parameters = std::vector<LayerParams>;
using Gradients = Parameters;

/// Per-feature affine standardization stored with the weights. Empty vectors
/// mean "identity".
struct Standardization {
  std::vector<double> input_mean;
  std::vector<double> input_std;
  std::vector<double> output_mean;
  std::vector<double> output_std;
  friend bool operator==(const Standardization&, const Standardization&) = default;
};

class Network {
 public:
  /// Glorot-uniform weights from Rng(spec.seed), zero biases.
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const noexcept { return spec_; }
  const Shape& input_shape() const noexcept { return spec_.input_shape; }
  const Shape& output_shape() const noexcept { return shapes_.back(); }
  const std::vector<Shape>& layer_shapes() const noexcept { return shapes_; }

  const Parameters& params() const noexcept { return params_; }
  Parameters& params() noexcept { return params_; }
  std::size_t parameter_count() const noexcept;

  /// Flat views in layer order (weights, then biases, per layer).
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);

  const Standardization& standardization() const noexcept { return standardization_; }
  void set_standardization(Standardization s) { standardization_ = std::move(s); }

  friend bool operator==(const Network&, const Network&) = default;

 private:
  NetworkSpec spec_;
  std::vector<Shape> shapes_;
  Parameters params_;
  Standardization standardization_;
};

Network init_network(const NetworkSpec& spec);

Tensor forward(const Network& net, const Tensor& input);

/// Mean over output elements of (y - t)^2.
double mse_loss(const Network& net, const Tensor& input, const Tensor& target);

struct BackwardResult {
  double loss = 0.0;
  Gradients grads;
};

/// Exact gradient of the MSE loss with respect to every weight and bias.
BackwardResult backward(const Network& net, const Tensor& input, const Tensor& target);

Gradients zero_gradients(const Network& net);
void accumulate(Gradients& into, const Gradients& g, double scale = 1.0);

/// w <- w - lr * g for every parameter.
void sgd_step(Network& net, const Gradients& grads, double lr);

/// Max over parameters of |analytic - central difference| /
/// max(|analytic|, |central difference|, kGradientCheckFloor). The floor keeps
/// round-off on near-zero gradients from dominating the ratio.
inline constexpr double kGradientCheckFloor = 1e-6;
double gradient_check(const Network& net, const Tensor& input, const Tensor& target, double step);

struct TrainingConfig {
  double learning_rate = 1e-3;
  int epochs = 1;
  int batch_size = 1;
  std::uint64_t seed = 0;
};

void validate(const TrainingConfig& config);

struct Example {
  Tensor input;
  Tensor target;
};

/// Called after every epoch with (epoch index, mean training loss). Returning
/// false stops training early.
using EpochCallback = std::function<bool(int, double)>;

/// Mini-batch SGD over `examples`, shuffled per epoch from config.seed.
/// Per-sample gradients may be computed on several threads; they are always
/// reduced in sample order, so results do not depend on the thread count.
std::vector<double> train(Network& net, std::span<const Example> examples,
                          const TrainingConfig& config, const EpochCallback& on_epoch = {});

// Weights files.

enum class WeightsFormat { binary, json };

inline constexpr std::string_view kWeightsMagic = "PALLOR-NN";
inline constexpr std::uint32_t kWeightsVersion = 1;

std::vector<std::uint8_t> serialize_weights(const Network& net, WeightsFormat format);
Network deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const Network& net, const std::filesystem::path& path,
                  WeightsFormat format = WeightsFormat::binary);
/// Reads either format (detected from the first byte).
Network load_weights(const std::filesystem::path& path);
/// As above, but throws Error(spec_mismatch) unless the file's spec equals `expected`.
Network load_weights(const std::filesystem::path& path, const NetworkSpec& expected);

}  // namespace pallor::nn
