#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "softdiamond/binary_io.hpp"
#include "softdiamond/layers.hpp"
#include "softdiamond/tensor.hpp"

namespace softdiamond::net {

/// One trainable tensor of a model.
struct ParamInfo {
  std::size_t layer = 0;
  std::string name;    // "weight", "bias", "gamma", "beta"
  bool prior = false;  // receives the prior gradient
  bool operator==(const ParamInfo&) const = default;
};

struct ForwardCache;

/// Ordered layer graph with resolved shapes. Activation 0 is the input and
/// activation i + 1 is the output of layer i; ResidualAdd layers read one
/// extra earlier activation.
class Model {
 public:
  const Shape& input_shape() const noexcept { return shapes_.front(); }
  const Shape& output_shape() const noexcept { return shapes_.back(); }
  /// Per-sample shapes of every activation (no batch dimension).
  const std::vector<Shape>& activation_shapes() const noexcept { return shapes_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }

  std::vector<Tensor>& params() noexcept { return params_; }
  const std::vector<Tensor>& params() const noexcept { return params_; }
  const std::vector<ParamInfo>& param_info() const noexcept { return info_; }
  /// Parameter indices owned by layer i (empty for parameter-free layers).
  const std::vector<std::size_t>& layer_params(std::size_t i) const { return layer_params_.at(i); }

  /// BatchNorm running mean and variance (two tensors per BatchNorm layer).
  std::vector<Tensor>& state() noexcept { return state_; }
  const std::vector<Tensor>& state() const noexcept { return state_; }
  const std::vector<std::size_t>& layer_state(std::size_t i) const { return layer_state_.at(i); }

  std::vector<bool> prior_mask() const;
  void set_prior_mask(const std::vector<bool>& mask);

  /// ReLU layers whose output feeds a Dense layer (through Flatten at most);
  /// the trainer applies dropout there.
  const std::vector<std::size_t>& dropout_sites() const noexcept { return dropout_sites_; }

  std::size_t parameter_count() const;
  std::size_t prior_parameter_count() const;

  /// Folds the batch statistics of a training-mode pass into the running ones.
  void update_running_stats(const ForwardCache& cache);

  /// Xavier-uniform weights, zero biases, unit BatchNorm scale.
  void init_xavier_uniform(std::uint64_t seed);

  io::Bytes serialize() const;
  static Model deserialize(std::span<const std::uint8_t> bytes);

  bool operator==(const Model&) const = default;

 private:
  friend class ModelBuilder;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  std::vector<Tensor> params_;
  std::vector<ParamInfo> info_;
  std::vector<std::vector<std::size_t>> layer_params_;
  std::vector<Tensor> state_;
  std::vector<std::vector<std::size_t>> layer_state_;
  std::vector<std::size_t> dropout_sites_;
};

/// Resolves shapes as layers are added; any inconsistency throws ShapeMismatch
/// before a model exists.
class ModelBuilder {
 public:
  explicit ModelBuilder(Shape input_shape);
  ModelBuilder& add(const LayerSpec& spec);
  /// Index of the activation the next layer will consume.
  std::int64_t current() const noexcept { return static_cast<std::int64_t>(model_.shapes_.size()) - 1; }
  Model build() const;

 private:
  Model model_;
};

Model init_xavier_uniform(Model model, std::uint64_t seed);

struct ForwardOptions {
  bool training = false;
  double dropout_rate = 0.0;
  std::uint64_t dropout_seed = 0;
};

struct LayerCache {
  ops::BatchNormCache bn;
  std::vector<std::size_t> argmax;
  std::vector<double> dropout_mask;  // empty when no dropout was applied
};

struct ForwardCache {
  bool training = false;
  std::vector<Tensor> activations;  // size = layers + 1
  std::vector<LayerCache> layers;
  const Tensor& output() const { return activations.back(); }
};

using Gradients = std::vector<Tensor>;

ForwardCache forward(const Model& model, const Tensor& batch, const ForwardOptions& options = {});

/// Gradient of a scalar S with respect to every parameter, given dS/d(output).
Gradients backward_from_output(const Model& model, const ForwardCache& cache, const Tensor& d_output);

/// Gradient of the batch-mean log-likelihood (1/N) sum ln a^y[target] with
/// respect to every parameter (ascent orientation). The model must end in
/// Softmax; `targets` is one-hot [N, K].
Gradients backward(const Model& model, const ForwardCache& cache, const Tensor& targets);

/// Mean over rows of ln(output[target]).
double mean_log_likelihood(const Tensor& probabilities, const Tensor& targets);

Tensor one_hot(const std::vector<int>& labels, std::size_t classes);

/// Reference architecture: input module (conv-BN-ReLU) -> conv module
/// (conv-BN-ReLU-maxpool) -> residual module (two conv-BN-ReLU with skip)
/// -> output module (maxpool-flatten-dense-softmax).
struct MicroResNetConfig {
  Shape input{3, 32, 32};
  std::size_t classes = 10;
  std::size_t stem_channels = 16;
  std::size_t channels = 32;
  std::size_t output_pool = 4;
};
Model micro_resnet(const MicroResNetConfig& config);

/// Flatten -> (Dense -> ReLU)* -> Dense -> Softmax.
Model mlp(const Shape& input, const std::vector<std::size_t>& hidden, std::size_t classes);

}  // namespace softdiamond::net
