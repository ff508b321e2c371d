#include "cada/ca_networks.hpp"

namespace cada {

const char* to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::kCada: return "cada";
    case AttentionKind::kCadaSp: return "cadasp";
    case AttentionKind::kDa: return "da";
    case AttentionKind::kDaSp: return "dasp";
  }
  return "?";
}

void AttentionConfig::validate(const std::string& where) const {
  auto fail = [&](const std::string& msg) { throw ConfigError(where + ": " + msg); };
  if (width <= 0) fail("width must be positive");
  if (channels_per_head <= 0 || width % channels_per_head != 0) {
    fail("C_h=" + std::to_string(channels_per_head) + " must divide width " + std::to_string(width));
  }
  if (num_bases < 1) fail("b must be at least 1");
  if (ca_kernel < 1 || ca_kernel % 2 == 0) fail("T must be odd, got " + std::to_string(ca_kernel));
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    fail("G must be odd, got " + std::to_string(kernel_size));
  }
  if (stride < 1) fail("stride must be positive");
}

namespace {

const AttentionConfig& checked(const AttentionConfig& cfg, const std::string& name) {
  cfg.validate(name);
  return cfg;
}

}  // namespace

template <typename T>
DecomposedAttention<T>::DecomposedAttention(std::string name, const AttentionConfig& cfg)
    : Module<T>(name),
      cfg_(checked(cfg, name)),
      first_(name + ".ca_conv", cfg.width, cfg.groups() * cfg.num_bases, cfg.ca_kernel,
             cfg.context_aware() ? cfg.stride : 1, cfg.context_aware() ? cfg.ca_kernel / 2 : 0,
             cfg.groups()),
      act_(name + ".ca_relu"),
      acc_(name + ".accumulate", cfg.groups() * cfg.num_bases,
           cfg.heads() * cfg.kernel_size * cfg.kernel_size, 1, 1, 0, cfg.groups(),
           cfg.pos_enabled) {
  if (cfg_.context_aware()) {
    norm_ = std::make_unique<BatchNorm2d<T>>(name + ".ca_bn", cfg.groups() * cfg.num_bases);
  } else {
    seed_ = Parameter<T>(name + ".seed", ParamRole::kSeed,
                         Shape{1, cfg.width, cfg.ca_kernel, cfg.ca_kernel});
  }
  if (cfg_.pos_enabled) acc_.bias().role = ParamRole::kPosition;
}

template <typename T>
BaseKernelBank<T> DecomposedAttention<T>::bank() {
  return BaseKernelBank<T>(cfg_.heads(), cfg_.num_bases, cfg_.kernel_size,
                           acc_.weight().value.data(),
                           cfg_.pos_enabled ? acc_.bias().value.data() : std::span<T>());
}

template <typename T>
Tensor<T> DecomposedAttention<T>::coefficient_path(const Tensor<T>& x, Mode mode) {
  Tensor<T> a = first_.forward(cfg_.context_aware() ? x : seed_.value, mode);
  if (norm_) a = norm_->forward(a, mode);
  return act_.forward(a, mode);
}

template <typename T>
Tensor<T> DecomposedAttention<T>::coefficient_backward(const Tensor<T>& grad_alpha) {
  Tensor<T> g = act_.backward(grad_alpha);
  if (norm_) g = norm_->backward(g);
  g = first_.backward(g);
  if (cfg_.context_aware()) return g;
  add_into(seed_.grad, g);
  return Tensor<T>();
}

template <typename T>
AccumulationParams<T> DecomposedAttention<T>::accumulation(const Tensor<T>& x, Mode mode) {
  return {coefficient_path(x, mode), cfg_.groups()};
}

template <typename T>
Tensor<T> DecomposedAttention<T>::da_kernels() {
  alpha_ = coefficient_path(seed_.value, Mode::kTrain);
  Tensor<T> k = construct_maps<T>({alpha_, cfg_.groups()}, bank());
  k.reshape(Shape{cfg_.heads(), 1, cfg_.kernel_size, cfg_.kernel_size});
  return k;
}

namespace {

template <typename T>
Tensor<T> broadcast_maps(const Tensor<T>& per_head, int batch, int ho, int wo) {
  const int c = static_cast<int>(per_head.size());
  Tensor<T> out(Shape{batch, c, ho, wo});
  for (int n = 0; n < batch; ++n) {
    for (int k = 0; k < c; ++k) {
      T* dst = out.plane(n, k);
      std::fill(dst, dst + static_cast<std::size_t>(ho) * wo, per_head[k]);
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> DecomposedAttention<T>::da_maps(int batch, int ho, int wo) {
  Tensor<T> k = da_kernels();
  maps_shape_ = Shape{batch, static_cast<int>(k.size()), ho, wo};
  return broadcast_maps(k, batch, ho, wo);
}

template <typename T>
Tensor<T> DecomposedAttention<T>::maps(const Tensor<T>& x, Mode mode) {
  const int ho = aggregate_out_extent(x.h(), cfg_.kernel_size, cfg_.stride);
  const int wo = aggregate_out_extent(x.w(), cfg_.kernel_size, cfg_.stride);
  if (!cfg_.context_aware()) return da_maps(x.n(), ho, wo);
  alpha_ = coefficient_path(x, mode);
  Tensor<T> m = construct_maps<T>({alpha_, cfg_.groups()}, bank());
  maps_shape_ = m.shape();
  return m;
}

template <typename T>
Tensor<T> DecomposedAttention<T>::maps_fused(const Tensor<T>& x, Mode mode) {
  const Tensor<T> a = coefficient_path(cfg_.context_aware() ? x : seed_.value, mode);
  const Tensor<T> m = conv2d<T>(a, acc_.weight().value,
                                cfg_.pos_enabled ? acc_.bias().cvalues() : std::span<const T>(),
                                {1, 0, cfg_.groups()});
  if (cfg_.context_aware()) return m;
  return broadcast_maps(m, x.n(), aggregate_out_extent(x.h(), cfg_.kernel_size, cfg_.stride),
                        aggregate_out_extent(x.w(), cfg_.kernel_size, cfg_.stride));
}

template <typename T>
Tensor<T> DecomposedAttention<T>::maps_backward(const Tensor<T>& grad_maps) {
  require_shape(grad_maps, maps_shape_, "maps_backward grad_maps");
  Tensor<T> gm = grad_maps;
  if (!cfg_.context_aware()) {
    // Broadcast adjoint: sum over samples and locations, in index order.
    Tensor<T> reduced(Shape{1, grad_maps.c(), 1, 1});
    const std::size_t P = grad_maps.shape().plane();
    for (int k = 0; k < grad_maps.c(); ++k) {
      T s = T(0);
      for (int n = 0; n < grad_maps.n(); ++n) {
        const T* src = grad_maps.plane(n, k);
        for (std::size_t p = 0; p < P; ++p) s += src[p];
      }
      reduced[k] = s;
    }
    gm = std::move(reduced);
  }
  auto g = construct_maps_backward<T>(gm, {alpha_, cfg_.groups()}, bank());
  add_into(acc_.weight().grad, g.weight);
  if (cfg_.pos_enabled) add_into(acc_.bias().grad, g.bias);
  return coefficient_backward(g.alpha);
}

template <typename T>
Tensor<T> DecomposedAttention<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.c() != cfg_.width) {
    throw ConfigError(this->name() + ": expects " + std::to_string(cfg_.width) +
                      " channels, got " + std::to_string(x.c()));
  }
  input_ = x;
  if (cfg_.context_aware()) {
    maps_ = maps(x, mode);
    return aggregate(x, maps_, cfg_.channels_per_head, cfg_.stride);
  }
  maps_ = da_kernels();
  return mh_dw_conv<T>(x, maps_, {}, cfg_.channels_per_head, cfg_.stride);
}

template <typename T>
Tensor<T> DecomposedAttention<T>::backward(const Tensor<T>& grad_out) {
  if (cfg_.context_aware()) {
    auto g = aggregate_backward(grad_out, input_, maps_, cfg_.channels_per_head, cfg_.stride);
    Tensor<T> gx = maps_backward(g.maps);
    add_into(g.input, gx);
    return std::move(g.input);
  }
  auto g = mh_dw_conv_backward<T>(grad_out, input_, maps_, false, cfg_.channels_per_head,
                                  cfg_.stride);
  g.weight.reshape(Shape{1, cfg_.heads() * cfg_.kernel_size * cfg_.kernel_size, 1, 1});
  maps_shape_ = g.weight.shape();
  maps_backward(g.weight);
  return std::move(g.input);
}

template <typename T>
void DecomposedAttention<T>::visit_params(const ParamVisitor<T>& fn) {
  if (!cfg_.context_aware()) fn(seed_);
  first_.visit_params(fn);
  if (norm_) norm_->visit_params(fn);
  acc_.visit_params(fn);
}

template <typename T>
void DecomposedAttention<T>::visit_children(const std::function<void(Module<T>&)>& fn) {
  fn(first_);
  if (norm_) fn(*norm_);
  fn(act_);
  fn(acc_);
}

template <typename T>
Shape DecomposedAttention<T>::profile(const Shape& in, ProfileReport& report) const {
  if (in.c != cfg_.width) throw ConfigError(this->name() + ": channel mismatch");
  const int g = cfg_.kernel_size;
  const Shape out{in.n, in.c, aggregate_out_extent(in.h, g, cfg_.stride),
                  aggregate_out_extent(in.w, g, cfg_.stride)};
  Shape a;
  if (cfg_.context_aware()) {
    a = first_.profile(in, report);
    a = norm_->profile(a, report);
  } else {
    report.add(seed_.name, static_cast<std::int64_t>(seed_.value.size()), 0);
    a = first_.profile(seed_.value.shape(), report);
  }
  acc_.profile(a, report);
  report.add(this->name() + ".aggregate", 0,
             static_cast<std::int64_t>(out.c) * out.h * out.w * g * g);
  return out;
}

template <typename T>
void DecomposedAttention<T>::reset_parameters(Rng& rng) {
  if (!cfg_.context_aware()) fill_normal(seed_.value, rng, 0.0, 1.0);
  first_.reset_parameters(rng);
  if (norm_) norm_->reset_parameters(rng);
  acc_.reset_parameters(rng);
}

template class DecomposedAttention<float>;
template class DecomposedAttention<double>;

}  // namespace cada
