#pragma once

#include <string>

#include "cada/attention.hpp"
#include "cada/module.hpp"

namespace cada {

enum class AttentionKind { kCada, kCadaSp, kDa, kDaSp };

const char* to_string(AttentionKind k);

struct AttentionConfig {
  AttentionKind kind = AttentionKind::kCada;
  int width = 0;              // channels filtered
  int channels_per_head = 1;  // C_h
  int num_bases = 1;          // b
  int ca_kernel = 3;          // T
  int kernel_size = 3;        // G
  int stride = 1;
  bool pos_enabled = true;

  int heads() const { return width / channels_per_head; }
  bool context_aware() const { return kind == AttentionKind::kCada || kind == AttentionKind::kCadaSp; }
  bool shared() const { return kind == AttentionKind::kCadaSp || kind == AttentionKind::kDaSp; }
  /// Head axis of the accumulation parameters.
  int groups() const { return shared() ? 1 : heads(); }
  void validate(const std::string& where) const;
};

/// Spatial filter built from per-location maps and multi-head aggregation.
///
/// Context-aware kinds (CADA, CADAsp) compute the accumulation parameters
/// from the input: T x T conv (stride = layer stride) -> BN -> ReLU.
/// DA kinds feed a trainable (1, width, T, T) seed through a valid T x T
/// conv and ReLU, giving one coefficient set that is broadcast to every
/// sample and location.
///
/// Both finish with a 1x1 accumulation conv whose weight is the base-kernel
/// bank and whose bias is the position encoding.
template <typename T>
class DecomposedAttention : public Module<T> {
 public:
  DecomposedAttention(std::string name, const AttentionConfig& cfg);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void visit_params(const ParamVisitor<T>& fn) override;
  void visit_children(const std::function<void(Module<T>&)>& fn) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;
  void reset_parameters(Rng& rng) override;

  const AttentionConfig& config() const { return cfg_; }

  /// Live view over the accumulation conv's storage.
  BaseKernelBank<T> bank();

  /// Accumulation parameters for input x: (N, groups*b, H_out, W_out) for
  /// context-aware kinds, (1, groups*b, 1, 1) for DA kinds.
  AccumulationParams<T> accumulation(const Tensor<T>& x, Mode mode);

  /// Maps through construct_maps; DA maps are broadcast to x's batch and
  /// output extent.
  Tensor<T> maps(const Tensor<T>& x, Mode mode);

  /// Maps through the accumulation 1x1 conv applied to the coefficients.
  Tensor<T> maps_fused(const Tensor<T>& x, Mode mode);

  /// DA maps broadcast to (batch, heads*G*G, ho, wo); independent of input.
  Tensor<T> da_maps(int batch, int ho, int wo);

  /// Adjoint of the most recent `maps`/`da_maps` call. Accumulates
  /// parameter gradients and returns the gradient with respect to the
  /// input of the CA network (zero-sized for DA kinds).
  Tensor<T> maps_backward(const Tensor<T>& grad_maps);

  Conv2d<T>& first_conv() { return first_; }
  BatchNorm2d<T>* norm() { return norm_.get(); }
  Conv2d<T>& accumulation_conv() { return acc_; }
  Parameter<T>* seed() { return cfg_.context_aware() ? nullptr : &seed_; }

 private:
  Tensor<T> coefficient_path(const Tensor<T>& x, Mode mode);
  Tensor<T> coefficient_backward(const Tensor<T>& grad_alpha);
  Tensor<T> da_kernels();

  AttentionConfig cfg_;
  Conv2d<T> first_;
  std::unique_ptr<BatchNorm2d<T>> norm_;
  ReLU<T> act_;
  Conv2d<T> acc_;
  Parameter<T> seed_;

  Tensor<T> input_;
  Tensor<T> alpha_;
  Tensor<T> maps_;
  Shape maps_shape_;
};

}  // namespace cada
