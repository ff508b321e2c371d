#pragma once

#include <span>
#include <vector>

#include "cada/tensor.hpp"

namespace cada {

/// Live view of the per-head position-encoding kernel and base kernels.
///
/// The storage is the accumulation 1x1 convolution of a context network:
/// its weight, shaped (heads*G*G, b, 1, 1), holds base kernel i of head h
/// at row h*G*G + (ky*G + kx), column i; its bias, shaped (heads*G*G),
/// holds the position-encoding kernel. Grouped (per-head) and shared
/// accumulation layouts coincide, so one view serves both.
///
/// The view does not own memory. Writes through it are visible to the layer
/// that owns the storage.
template <typename T>
class BaseKernelBank {
 public:
  BaseKernelBank() = default;
  BaseKernelBank(int heads, int num_bases, int kernel_size, std::span<T> weight,
                 std::span<T> bias);

  int heads() const { return heads_; }
  int num_bases() const { return b_; }
  int kernel_size() const { return g_; }
  int taps() const { return g_ * g_; }
  bool pos_enabled() const { return !bias_.empty(); }

  T& base(int h, int i, int ky, int kx) { return weight_[offset(h, i, ky * g_ + kx)]; }
  T base(int h, int i, int ky, int kx) const { return weight_[offset(h, i, ky * g_ + kx)]; }
  T base_tap(int h, int i, int tap) const { return weight_[offset(h, i, tap)]; }

  /// Zero whenever the position encoding is disabled.
  T pos(int h, int ky, int kx) const { return pos_tap(h, ky * g_ + kx); }
  T pos_tap(int h, int tap) const {
    return bias_.empty() ? T(0) : bias_[static_cast<std::size_t>(h) * taps() + tap];
  }
  /// Throws when the position encoding is disabled (there is no storage).
  T& pos(int h, int ky, int kx) {
    if (bias_.empty()) throw ConfigError("position encoding is disabled for this bank");
    return bias_[static_cast<std::size_t>(h) * taps() + ky * g_ + kx];
  }

  /// Row-major G*G copy of one kernel.
  std::vector<T> base_kernel(int h, int i) const;
  std::vector<T> pos_kernel(int h) const;
  void set_base_kernel(int h, int i, std::span<const T> kernel);
  void zero_base(int h, int i);

  std::span<T> weight_storage() const { return weight_; }
  std::span<T> bias_storage() const { return bias_; }

 private:
  std::size_t offset(int h, int i, int tap) const {
    return (static_cast<std::size_t>(h) * taps() + tap) * b_ + i;
  }

  int heads_ = 0;
  int b_ = 0;
  int g_ = 0;
  std::span<T> weight_;
  std::span<T> bias_;
};

/// Owning storage with the same layout as an accumulation convolution;
/// used by standalone callers and tests.
template <typename T>
struct KernelBankStorage {
  KernelBankStorage(int heads, int num_bases, int kernel_size, bool pos_enabled);

  BaseKernelBank<T> view() {
    return BaseKernelBank<T>(heads, b, g, weight, pos_enabled ? std::span<T>(bias) : std::span<T>());
  }

  int heads, b, g;
  bool pos_enabled;
  std::vector<T> weight;
  std::vector<T> bias;
};

/// Mixing coefficients: alpha is (N, groups*b, H_out, W_out); channel
/// g*b + i holds coefficient i of head g. groups == 1 shares one set of
/// coefficients across every head.
template <typename T>
struct AccumulationParams {
  Tensor<T> alpha;
  int groups = 1;
};

/// Per-location filters F[n, h*G*G + tap, y, x] = pos[h, tap]
///   + sum_i alpha[n, (h or 0)*b + i, y, x] * base[h, i, tap].
template <typename T>
Tensor<T> construct_maps(const AccumulationParams<T>& alpha, const BaseKernelBank<T>& bank);

template <typename T>
struct ConstructMapsGrads {
  Tensor<T> alpha;
  std::vector<T> weight;  // same layout as the bank's weight storage
  std::vector<T> bias;    // empty when the position encoding is disabled
};

template <typename T>
ConstructMapsGrads<T> construct_maps_backward(const Tensor<T>& grad_maps,
                                              const AccumulationParams<T>& alpha,
                                              const BaseKernelBank<T>& bank);

/// Output extent of a G-tap aggregation with fixed G/2 zero padding.
int aggregate_out_extent(int in, int kernel_size, int stride);

/// Recovers G from a maps tensor, validating heads and odd square taps.
int aggregate_kernel_size(const Shape& input, const Shape& maps, int channels_per_head,
                          int stride);

/// Multi-head per-location filtering. Channel c uses the map of head
/// c / channels_per_head:
///   out[n,c,y,x] = sum_{ky,kx} F[n, head, ky, kx, y, x] * in_pad[n, c, y*s+ky, x*s+kx]
/// where in_pad is the input zero-padded by G/2 on every side.
template <typename T>
Tensor<T> aggregate(const Tensor<T>& input, const Tensor<T>& maps, int channels_per_head,
                    int stride);

template <typename T>
struct AggregateGrads {
  Tensor<T> input;
  Tensor<T> maps;
};

template <typename T>
AggregateGrads<T> aggregate_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                     const Tensor<T>& maps, int channels_per_head, int stride);

/// Depthwise convolution whose (heads, 1, G, G) kernels are shared by the
/// channels_per_head channels of each head. Bias, when given, is per channel.
/// Same arithmetic as `aggregate` with location-constant maps.
template <typename T>
Tensor<T> mh_dw_conv(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias,
                     int channels_per_head, int stride);

template <typename T>
struct MhDwConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  std::vector<T> bias;
};

template <typename T>
MhDwConvGrads<T> mh_dw_conv_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                     const Tensor<T>& weight, bool has_bias,
                                     int channels_per_head, int stride,
                                     bool need_input_grad = true);

}  // namespace cada
