#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cada/ca_networks.hpp"
#include "cada/downsample.hpp"
#include "cada/module.hpp"

namespace cada {

/// Stride placement family. Original strides the first 1x1 and the skip
/// 1x1; B moves the stride into the spatial filter; D adds a 2x2 average
/// pool before the skip 1x1; E keeps Original placement and inserts a
/// downsampling filter ahead of every stride-2 stage.
enum class Variant { kOriginal, kB, kD, kE };
enum class Stem { kClassic, kDeep, kDeepNoMaxPool };
enum class FilterKind { kConv3x3, kMhDwConv, kCada, kCadaSp, kDa, kDaSp };
/// What sits between the first 1x1 conv and the spatial filter.
enum class NormAct { kDefault, kNone, kBn, kRelu, kBnRelu };

const char* to_string(Variant v);
const char* to_string(Stem s);
const char* to_string(FilterKind f);
const char* to_string(NormAct n);

struct StageConfig {
  int blocks = 1;
  int width = 64;
  int stride = 1;
  FilterKind filter = FilterKind::kConv3x3;
  int num_bases = 4;          // b
  int channels_per_head = 8;  // C_h
  int ca_kernel = 3;          // T
  int kernel_size = 3;        // G
  NormAct norm_act = NormAct::kDefault;
  bool pos_enabled = true;
  bool dw_bias = false;

  /// Default placement: BN+ReLU before a 3x3 conv, nothing otherwise.
  NormAct resolved_norm_act() const;
};

struct BackboneConfig {
  Variant variant = Variant::kD;
  Stem stem = Stem::kDeep;
  int stem_width = 64;
  int expansion = 4;
  std::vector<StageConfig> stages;
  int num_classes = 1000;
  int input_hw = 224;
  DownsampleConfig downsample;

  /// Throws ConfigError naming the violated rule.
  void validate() const;

  static BackboneConfig resnet50();
};

/// Bottleneck residual block.
template <typename T>
class Bottleneck : public Module<T> {
 public:
  Bottleneck(std::string name, int in, const StageConfig& stage, int stride, Variant variant,
             int expansion);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void visit_params(const ParamVisitor<T>& fn) override;
  void visit_children(const std::function<void(Module<T>&)>& fn) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;
  void reset_parameters(Rng& rng) override;

  Module<T>& filter() { return *filter_; }

 private:
  Sequential<T> main_;
  std::unique_ptr<Sequential<T>> skip_;
  Module<T>* filter_ = nullptr;
  Tensor<T> sum_;
};

template <typename T>
class Model {
 public:
  /// `init_params=false` leaves weights zero; used for profiling.
  explicit Model(const BackboneConfig& cfg, bool init_params = true, std::uint64_t seed = 0);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) { return net_.forward(x, mode); }
  Tensor<T> backward(const Tensor<T>& grad_logits) { return net_.backward(grad_logits); }

  void visit_params(const ParamVisitor<T>& fn) { net_.visit_params(fn); }
  void zero_grad() { zero_grads<T>(net_); }
  void set_bn_update_stats(bool on);

  ProfileReport profile() const;

  const BackboneConfig& config() const { return cfg_; }
  Sequential<T>& net() { return net_; }

  std::vector<DecomposedAttention<T>*> attention_layers();
  std::vector<MhDwConv<T>*> depthwise_layers();

 private:
  BackboneConfig cfg_;
  Sequential<T> net_;
};

}  // namespace cada
