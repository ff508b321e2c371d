#pragma once

#include <complex>
#include <span>
#include <vector>

#include "cada/tensor.hpp"

namespace cada {

enum class Mode { kTrain, kEval };

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Grouped cross-correlation with symmetric zero padding.
/// weight is shaped (C_out, C_in/groups, kH, kW).
template <typename T>
struct ConvParams {
  Tensor<T> weight;
  std::vector<T> bias;  // empty, or length C_out
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

inline int conv_out_extent(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Validates channel/group arithmetic and returns the output shape.
Shape conv2d_output_shape(const Shape& input, const Shape& weight, const ConvGeometry& g);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias,
                 const ConvGeometry& g);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& p) {
  return conv2d<T>(input, p.weight, p.bias, {p.stride, p.padding, p.groups});
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  std::vector<T> bias;  // empty when the layer has no bias
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& weight, bool has_bias, const ConvGeometry& g,
                             bool need_input_grad = true);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const ConvParams<T>& p) {
  return conv2d_backward<T>(grad_out, input, p.weight, !p.bias.empty(),
                            {p.stride, p.padding, p.groups});
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct BatchNormStats {
  std::span<T> running_mean;
  std::span<T> running_var;
};

/// Saved per-channel statistics needed by the backward pass.
template <typename T>
struct BatchNormCache {
  Mode mode = Mode::kEval;
  std::vector<T> mean;
  std::vector<T> inv_std;
};

/// Train mode normalizes with biased batch variance and folds the unbiased
/// variance into the running estimate. Pass update_stats=false to measure a
/// batch without touching running state.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, std::span<const T> scale, std::span<const T> shift,
                     BatchNormStats<T> stats, Mode mode, BatchNormCache<T>* cache = nullptr,
                     bool update_stats = true);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  std::vector<T> scale;
  std::vector<T> shift;
};

template <typename T>
BatchNormGrads<T> batch_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                      std::span<const T> scale, const BatchNormCache<T>& cache);

// ---------------------------------------------------------------------------
// Pointwise, pooling, dense, loss
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input);

/// Average over k x k windows; the divisor is always k*k (padding counts).
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& input, int k, int stride, int pad);

template <typename T>
Tensor<T> avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape, int k, int stride,
                            int pad);

/// Padded cells never win the max; the first maximum in scan order does.
template <typename T>
Tensor<T> max_pool(const Tensor<T>& input, int k, int stride, int pad);

template <typename T>
Tensor<T> max_pool_backward(const Tensor<T>& grad_out, const Tensor<T>& input, int k, int stride,
                            int pad);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape);

/// Each sample is flattened to C*H*W features. weight is (out, features, 1, 1);
/// the result is (N, out, 1, 1).
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias);

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  std::vector<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weight);

template <typename T>
struct LossResult {
  double loss = 0.0;  // mean over the batch
  Tensor<T> grad;     // d loss / d logits
};

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Row-major argmax over the channel axis of (N, K, 1, 1) logits.
template <typename T>
std::vector<int> argmax_classes(const Tensor<T>& logits);

// ---------------------------------------------------------------------------
// 2-D discrete Fourier transform (unitary convention)
// ---------------------------------------------------------------------------

struct ComplexGrid {
  int h = 0;
  int w = 0;
  std::vector<std::complex<double>> v;

  std::complex<double>& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  const std::complex<double>& at(int y, int x) const {
    return v[static_cast<std::size_t>(y) * w + x];
  }
};

/// Forward transform scaled by 1/sqrt(H*W). Power-of-two extents use radix-2;
/// other extents fall back to a direct DFT.
ComplexGrid fft2(std::span<const double> image, int h, int w);
ComplexGrid fft2(const ComplexGrid& grid);
ComplexGrid ifft2(const ComplexGrid& spectrum);

}  // namespace cada
