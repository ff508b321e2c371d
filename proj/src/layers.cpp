#include "cada/attention.hpp"
#include "cada/module.hpp"

namespace cada {

namespace {

std::int64_t count(const Shape& s) { return static_cast<std::int64_t>(s.numel()); }

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in, int out, int k, int stride, int padding, int groups,
                  bool bias)
    : Module<T>(std::move(name)),
      in_(in),
      out_(out),
      geom_{stride, padding, groups},
      has_bias_(bias) {
  if (groups <= 0 || in % groups != 0 || out % groups != 0) {
    throw ConfigError(this->name() + ": groups=" + std::to_string(groups) +
                      " must divide in=" + std::to_string(in) + " and out=" + std::to_string(out));
  }
  weight_ = Parameter<T>(this->name() + ".weight", ParamRole::kWeight, Shape{out, in / groups, k, k});
  if (bias) bias_ = Parameter<T>(this->name() + ".bias", ParamRole::kBias, Shape{1, out, 1, 1});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode) {
  input_ = x;
  return conv2d<T>(x, weight_.value, has_bias_ ? bias_.cvalues() : std::span<const T>(), geom_);
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  auto g = conv2d_backward<T>(grad_out, input_, weight_.value, has_bias_, geom_);
  add_into(weight_.grad, g.weight);
  if (has_bias_) add_into(bias_.grad, g.bias);
  return std::move(g.input);
}

template <typename T>
void Conv2d<T>::visit_params(const ParamVisitor<T>& fn) {
  fn(weight_);
  if (has_bias_) fn(bias_);
}

template <typename T>
Shape Conv2d<T>::profile(const Shape& in, ProfileReport& report) const {
  const Shape out = conv2d_output_shape(in, weight_.value.shape(), geom_);
  const std::int64_t per_out = static_cast<std::int64_t>(in_ / geom_.groups) *
                               weight_.value.h() * weight_.value.w();
  report.add(this->name(), count(weight_.value.shape()) + (has_bias_ ? out_ : 0),
             count(Shape{1, out.c, out.h, out.w}) * per_out);
  return out;
}

template <typename T>
void Conv2d<T>::reset_parameters(Rng& rng) {
  const int fan_in = (in_ / geom_.groups) * weight_.value.h() * weight_.value.w();
  kaiming_normal(weight_.value, fan_in, std::sqrt(2.0), rng);
  if (has_bias_) bias_.value.fill(T(0));
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::string name, int channels)
    : Module<T>(std::move(name)), channels_(channels) {
  const Shape s{1, channels, 1, 1};
  scale_ = Parameter<T>(this->name() + ".scale", ParamRole::kNormAffine, s);
  shift_ = Parameter<T>(this->name() + ".shift", ParamRole::kNormAffine, s);
  mean_ = Parameter<T>(this->name() + ".running_mean", ParamRole::kRunningStat, s);
  var_ = Parameter<T>(this->name() + ".running_var", ParamRole::kRunningStat, s);
  scale_.value.fill(T(1));
  var_.value.fill(T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  input_ = x;
  return batch_norm<T>(x, scale_.cvalues(), shift_.cvalues(),
                       {mean_.value.data(), var_.value.data()}, mode, &cache_, update_stats_);
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out) {
  auto g = batch_norm_backward<T>(grad_out, input_, scale_.cvalues(), cache_);
  add_into(scale_.grad, g.scale);
  add_into(shift_.grad, g.shift);
  return std::move(g.input);
}

template <typename T>
void BatchNorm2d<T>::visit_params(const ParamVisitor<T>& fn) {
  fn(scale_);
  fn(shift_);
  fn(mean_);
  fn(var_);
}

template <typename T>
Shape BatchNorm2d<T>::profile(const Shape& in, ProfileReport& report) const {
  if (in.c != channels_) throw ConfigError(this->name() + ": channel mismatch");
  report.add(this->name(), 2 * channels_, 0);
  return in;
}

template <typename T>
void BatchNorm2d<T>::reset_parameters(Rng&) {
  scale_.value.fill(T(1));
  shift_.value.fill(T(0));
  mean_.value.fill(T(0));
  var_.value.fill(T(1));
}

// ---------------------------------------------------------------------------
// Parameter-free layers

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode) {
  input_ = x;
  return relu(x);
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out) {
  return relu_backward(grad_out, input_);
}

template <typename T>
Shape ReLU<T>::profile(const Shape& in, ProfileReport&) const {
  return in;
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x, Mode) {
  input_ = x;
  return max_pool(x, k_, stride_, pad_);
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& grad_out) {
  return max_pool_backward(grad_out, input_, k_, stride_, pad_);
}

template <typename T>
Shape MaxPool2d<T>::profile(const Shape& in, ProfileReport&) const {
  return {in.n, in.c, conv_out_extent(in.h, k_, stride_, pad_),
          conv_out_extent(in.w, k_, stride_, pad_)};
}

template <typename T>
Tensor<T> AvgPool2d<T>::forward(const Tensor<T>& x, Mode) {
  in_shape_ = x.shape();
  return avg_pool(x, k_, stride_, pad_);
}

template <typename T>
Tensor<T> AvgPool2d<T>::backward(const Tensor<T>& grad_out) {
  return avg_pool_backward(grad_out, in_shape_, k_, stride_, pad_);
}

template <typename T>
Shape AvgPool2d<T>::profile(const Shape& in, ProfileReport&) const {
  return {in.n, in.c, conv_out_extent(in.h, k_, stride_, pad_),
          conv_out_extent(in.w, k_, stride_, pad_)};
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Mode) {
  in_shape_ = x.shape();
  return global_avg_pool(x);
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out) {
  return global_avg_pool_backward(grad_out, in_shape_);
}

template <typename T>
Shape GlobalAvgPool<T>::profile(const Shape& in, ProfileReport&) const {
  return {in.n, in.c, 1, 1};
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(std::string name, int in, int out)
    : Module<T>(std::move(name)), in_(in), out_(out) {
  weight_ = Parameter<T>(this->name() + ".weight", ParamRole::kWeight, Shape{out, in, 1, 1});
  bias_ = Parameter<T>(this->name() + ".bias", ParamRole::kBias, Shape{1, out, 1, 1});
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode) {
  input_ = x;
  return linear<T>(x, weight_.value, bias_.cvalues());
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
  auto g = linear_backward<T>(grad_out, input_, weight_.value);
  add_into(weight_.grad, g.weight);
  add_into(bias_.grad, g.bias);
  return std::move(g.input);
}

template <typename T>
void Linear<T>::visit_params(const ParamVisitor<T>& fn) {
  fn(weight_);
  fn(bias_);
}

template <typename T>
Shape Linear<T>::profile(const Shape& in, ProfileReport& report) const {
  if (static_cast<std::size_t>(in.c) * in.h * in.w != static_cast<std::size_t>(in_)) {
    throw ConfigError(this->name() + ": expects " + std::to_string(in_) + " features");
  }
  report.add(this->name(), static_cast<std::int64_t>(in_) * out_ + out_,
             static_cast<std::int64_t>(in_) * out_);
  return {in.n, out_, 1, 1};
}

template <typename T>
void Linear<T>::reset_parameters(Rng& rng) {
  kaiming_normal(weight_.value, in_, 1.0, rng);
  bias_.value.fill(T(0));
}

// ---------------------------------------------------------------------------
// MhDwConv

template <typename T>
MhDwConv<T>::MhDwConv(std::string name, int channels, int channels_per_head, int kernel_size,
                      int stride, bool bias)
    : Module<T>(std::move(name)),
      channels_(channels),
      ch_(channels_per_head),
      g_(kernel_size),
      stride_(stride),
      has_bias_(bias) {
  if (ch_ <= 0 || channels % ch_ != 0) {
    throw ConfigError(this->name() + ": C_h=" + std::to_string(ch_) + " must divide width " +
                      std::to_string(channels));
  }
  if (g_ % 2 == 0) throw ConfigError(this->name() + ": G must be odd, got " + std::to_string(g_));
  weight_ = Parameter<T>(this->name() + ".weight", ParamRole::kWeight,
                         Shape{channels / ch_, 1, g_, g_});
  if (bias) bias_ = Parameter<T>(this->name() + ".bias", ParamRole::kBias, Shape{1, channels, 1, 1});
}

template <typename T>
Tensor<T> MhDwConv<T>::forward(const Tensor<T>& x, Mode) {
  input_ = x;
  return mh_dw_conv<T>(x, weight_.value, has_bias_ ? bias_.cvalues() : std::span<const T>(), ch_,
                       stride_);
}

template <typename T>
Tensor<T> MhDwConv<T>::backward(const Tensor<T>& grad_out) {
  auto g = mh_dw_conv_backward<T>(grad_out, input_, weight_.value, has_bias_, ch_, stride_);
  add_into(weight_.grad, g.weight);
  if (has_bias_) add_into(bias_.grad, g.bias);
  return std::move(g.input);
}

template <typename T>
void MhDwConv<T>::visit_params(const ParamVisitor<T>& fn) {
  fn(weight_);
  if (has_bias_) fn(bias_);
}

template <typename T>
Shape MhDwConv<T>::profile(const Shape& in, ProfileReport& report) const {
  if (in.c != channels_) throw ConfigError(this->name() + ": channel mismatch");
  const Shape out{in.n, in.c, aggregate_out_extent(in.h, g_, stride_),
                  aggregate_out_extent(in.w, g_, stride_)};
  report.add(this->name(), count(weight_.value.shape()) + (has_bias_ ? channels_ : 0),
             static_cast<std::int64_t>(out.c) * out.h * out.w * g_ * g_);
  return out;
}

template <typename T>
void MhDwConv<T>::reset_parameters(Rng& rng) {
  kaiming_normal(weight_.value, g_ * g_, std::sqrt(2.0), rng);
  if (has_bias_) bias_.value.fill(T(0));
}

// ---------------------------------------------------------------------------
// Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> y = x;
  for (auto& l : layers_) y = l->forward(y, mode);
  return y;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <typename T>
void Sequential<T>::visit_params(const ParamVisitor<T>& fn) {
  for (auto& l : layers_) l->visit_params(fn);
}

template <typename T>
void Sequential<T>::visit_children(const std::function<void(Module<T>&)>& fn) {
  for (auto& l : layers_) fn(*l);
}

template <typename T>
Shape Sequential<T>::profile(const Shape& in, ProfileReport& report) const {
  Shape s = in;
  for (const auto& l : layers_) s = l->profile(s, report);
  return s;
}

template <typename T>
void Sequential<T>::reset_parameters(Rng& rng) {
  for (auto& l : layers_) l->reset_parameters(rng);
}

#define CADA_INSTANTIATE_LAYERS(T) \
  template class Conv2d<T>;        \
  template class BatchNorm2d<T>;   \
  template class ReLU<T>;          \
  template class MaxPool2d<T>;     \
  template class AvgPool2d<T>;     \
  template class GlobalAvgPool<T>; \
  template class Linear<T>;        \
  template class MhDwConv<T>;      \
  template class Sequential<T>;

CADA_INSTANTIATE_LAYERS(float)
CADA_INSTANTIATE_LAYERS(double)

}  // namespace cada
