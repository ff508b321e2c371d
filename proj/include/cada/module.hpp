#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cada/ops.hpp"
#include "cada/profile.hpp"
#include "cada/tensor.hpp"

namespace cada {

using Rng = std::mt19937_64;

enum class ParamRole {
  kWeight,
  kBias,
  kNormAffine,   // BN scale and shift
  kPosition,     // position-encoding bias of an accumulation conv
  kSeed,         // trainable accumulation input of DA layers
  kRunningStat,  // BN running mean/var; saved, never trained
};

template <typename T>
struct Parameter {
  std::string name;
  ParamRole role = ParamRole::kWeight;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, ParamRole r, Shape s)
      : name(std::move(n)), role(r), value(s), grad(r == ParamRole::kRunningStat ? Shape{} : s) {}

  bool trainable() const { return role != ParamRole::kRunningStat; }
  std::span<const T> cvalues() const { return value.data(); }
};

template <typename T>
using ParamVisitor = std::function<void(Parameter<T>&)>;

/// A layer with cached-input reverse mode. `backward` must follow the
/// matching `forward`; it accumulates into parameter gradients and returns
/// the input gradient.
template <typename T>
class Module {
 public:
  explicit Module(std::string name) : name_(std::move(name)) {}
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  const std::string& name() const { return name_; }

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

  virtual void visit_params(const ParamVisitor<T>& fn) { (void)fn; }
  virtual void visit_children(const std::function<void(Module<T>&)>& fn) { (void)fn; }

  /// Appends rows for this layer and returns its output shape.
  virtual Shape profile(const Shape& in, ProfileReport& report) const = 0;

  virtual void reset_parameters(Rng& rng) { (void)rng; }

 private:
  std::string name_;
};

template <typename T>
using ModulePtr = std::unique_ptr<Module<T>>;

/// Depth-first visit of `m` and every descendant.
template <typename T>
void walk(Module<T>& m, const std::function<void(Module<T>&)>& fn) {
  fn(m);
  m.visit_children([&](Module<T>& c) { walk(c, fn); });
}

template <typename T>
void zero_grads(Module<T>& m) {
  m.visit_params([](Parameter<T>& p) {
    if (p.trainable()) p.grad.fill(T(0));
  });
}

/// Kaiming fan-in normal: std = gain / sqrt(fan_in).
template <typename T>
void kaiming_normal(Tensor<T>& w, int fan_in, double gain, Rng& rng) {
  fill_normal(w, rng, 0.0, gain / std::sqrt(static_cast<double>(std::max(fan_in, 1))));
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  require_shape(src, dst.shape(), "gradient accumulation");
  T* d = dst.ptr();
  const T* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <typename T>
void add_into(Tensor<T>& dst, const std::vector<T>& src) {
  if (src.size() != dst.size()) throw ConfigError("gradient accumulation: length mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// ---------------------------------------------------------------------------
// Basic layers
// ---------------------------------------------------------------------------

template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(std::string name, int in, int out, int k, int stride, int padding, int groups = 1,
         bool bias = false);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void visit_params(const ParamVisitor<T>& fn) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;
  void reset_parameters(Rng& rng) override;

  Parameter<T>& weight() { return weight_; }
  const Parameter<T>& weight() const { return weight_; }
  Parameter<T>& bias() { return bias_; }
  const Parameter<T>& bias() const { return bias_; }
  bool has_bias() const { return has_bias_; }
  const ConvGeometry& geometry() const { return geom_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_, out_;
  ConvGeometry geom_;
  bool has_bias_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  BatchNorm2d(std::string name, int channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void visit_params(const ParamVisitor<T>& fn) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;
  void reset_parameters(Rng& rng) override;

  Parameter<T>& scale() { return scale_; }
  Parameter<T>& shift() { return shift_; }
  Parameter<T>& running_mean() { return mean_; }
  Parameter<T>& running_var() { return var_; }

  /// Train-mode forwards normally fold batch statistics into the running
  /// estimates; finite-difference probes switch that off.
  void set_update_stats(bool on) { update_stats_ = on; }

 private:
  int channels_;
  Parameter<T> scale_, shift_, mean_, var_;
  bool update_stats_ = true;
  Tensor<T> input_;
  BatchNormCache<T> cache_;
};

template <typename T>
class ReLU : public Module<T> {
 public:
  explicit ReLU(std::string name) : Module<T>(std::move(name)) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;

 private:
  Tensor<T> input_;
};

template <typename T>
class MaxPool2d : public Module<T> {
 public:
  MaxPool2d(std::string name, int k, int stride, int pad)
      : Module<T>(std::move(name)), k_(k), stride_(stride), pad_(pad) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;

 private:
  int k_, stride_, pad_;
  Tensor<T> input_;
};

template <typename T>
class AvgPool2d : public Module<T> {
 public:
  AvgPool2d(std::string name, int k, int stride, int pad)
      : Module<T>(std::move(name)), k_(k), stride_(stride), pad_(pad) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;

 private:
  int k_, stride_, pad_;
  Shape in_shape_;
};

template <typename T>
class GlobalAvgPool : public Module<T> {
 public:
  explicit GlobalAvgPool(std::string name) : Module<T>(std::move(name)) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;

 private:
  Shape in_shape_;
};

template <typename T>
class Linear : public Module<T> {
 public:
  Linear(std::string name, int in, int out);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void visit_params(const ParamVisitor<T>& fn) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;
  void reset_parameters(Rng& rng) override;

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  int in_, out_;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

/// Depthwise convolution with one G x G kernel per head of C_h channels.
template <typename T>
class MhDwConv : public Module<T> {
 public:
  MhDwConv(std::string name, int channels, int channels_per_head, int kernel_size, int stride,
           bool bias = false);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void visit_params(const ParamVisitor<T>& fn) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;
  void reset_parameters(Rng& rng) override;

  Parameter<T>& weight() { return weight_; }
  int channels_per_head() const { return ch_; }
  int kernel_size() const { return g_; }

 private:
  int channels_, ch_, g_, stride_;
  bool has_bias_;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

/// Runs children in order.
template <typename T>
class Sequential : public Module<T> {
 public:
  explicit Sequential(std::string name) : Module<T>(std::move(name)) {}

  Module<T>& add(ModulePtr<T> m) {
    layers_.push_back(std::move(m));
    return *layers_.back();
  }
  template <typename M, typename... Args>
  M& emplace(Args&&... args) {
    auto m = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *m;
    layers_.push_back(std::move(m));
    return ref;
  }
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Module<T>& at(std::size_t i) { return *layers_[i]; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void visit_params(const ParamVisitor<T>& fn) override;
  void visit_children(const std::function<void(Module<T>&)>& fn) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;
  void reset_parameters(Rng& rng) override;

 private:
  std::vector<ModulePtr<T>> layers_;
};

}  // namespace cada
