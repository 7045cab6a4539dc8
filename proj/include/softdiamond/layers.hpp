#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "softdiamond/tensor.hpp"

namespace softdiamond::net {

enum class LayerKind : std::uint8_t {
  Dense = 0,
  Conv2D = 1,
  BatchNorm = 2,
  ReLU = 3,
  MaxPool = 4,
  ResidualAdd = 5,
  Flatten = 6,
  Softmax = 7,
};

std::string to_string(LayerKind kind);

/// Layer description. Only the fields relevant to `kind` are read.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::size_t units = 0;         // Dense output width
  std::size_t out_channels = 0;  // Conv2D
  std::size_t kernel = 3;        // Conv2D
  std::size_t stride = 1;        // Conv2D, MaxPool (0 = same as pool)
  std::size_t padding = 0;       // Conv2D
  std::size_t pool = 2;          // MaxPool window
  std::int64_t skip_from = -1;   // ResidualAdd: activation index added to the input
  double bn_momentum = 0.1;      // BatchNorm running-stat update weight
  double bn_eps = 1e-5;

  static LayerSpec dense(std::size_t units) { return {.kind = LayerKind::Dense, .units = units}; }
  static LayerSpec conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0) {
    return {.kind = LayerKind::Conv2D,
            .out_channels = out_channels,
            .kernel = kernel,
            .stride = stride,
            .padding = padding};
  }
  static LayerSpec batchnorm(double momentum = 0.1, double eps = 1e-5) {
    return {.kind = LayerKind::BatchNorm, .bn_momentum = momentum, .bn_eps = eps};
  }
  static LayerSpec relu() { return {.kind = LayerKind::ReLU}; }
  static LayerSpec maxpool(std::size_t pool, std::size_t stride = 0) {
    return {.kind = LayerKind::MaxPool, .stride = stride == 0 ? pool : stride, .pool = pool};
  }
  /// Adds activation `from` (0 = network input, i = output of layer i-1).
  static LayerSpec residual_add(std::int64_t from) {
    return {.kind = LayerKind::ResidualAdd, .skip_from = from};
  }
  static LayerSpec flatten() { return {.kind = LayerKind::Flatten}; }
  static LayerSpec softmax() { return {.kind = LayerKind::Softmax}; }

  bool operator==(const LayerSpec&) const = default;
};

/// Batched kernels. Image tensors are [N, C, H, W]; feature tensors [N, F].
namespace ops {

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b);
struct DenseGrads {
  Tensor dx, dw, db;
};
DenseGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                      std::size_t padding);
struct ConvGrads {
  Tensor dx, dw, db;
};
ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, std::size_t stride,
                          std::size_t padding);

/// Per-channel statistics saved by a training-mode batchnorm pass.
struct BatchNormCache {
  Tensor x_hat;
  std::vector<double> mean;
  std::vector<double> var;  // biased batch variance
  std::vector<double> inv_std;
};
struct BatchNormResult {
  Tensor y;
  BatchNormCache cache;
};
/// Training mode normalizes with batch statistics; eval mode with the running ones.
BatchNormResult batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                  double eps, bool training, const Tensor& running_mean,
                                  const Tensor& running_var);
struct BatchNormGrads {
  Tensor dx, dgamma, dbeta;
};
BatchNormGrads batchnorm_backward(const Tensor& dy, const Tensor& gamma,
                                  const BatchNormCache& cache, bool training);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

struct MaxPoolResult {
  Tensor y;
  std::vector<std::size_t> argmax;  // flat input index per output element
};
/// Ties resolve to the first maximum in row-major scan order of the window.
MaxPoolResult maxpool_forward(const Tensor& x, std::size_t pool, std::size_t stride);
Tensor maxpool_backward(const Shape& x_shape, const std::vector<std::size_t>& argmax,
                        const Tensor& dy);

Tensor residual_add(const Tensor& a, const Tensor& b);

Tensor softmax_forward(const Tensor& logits);
/// Vector-Jacobian product of the row-wise softmax.
Tensor softmax_backward(const Tensor& y, const Tensor& dy);

}  // namespace ops

}  // namespace softdiamond::net
