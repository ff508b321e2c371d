#include "cada/downsample.hpp"

#include <cmath>
#include <cstdlib>
#include <numbers>

namespace cada {

const char* to_string(DownsampleKind k) {
  switch (k) {
    case DownsampleKind::kNone: return "none";
    case DownsampleKind::kIdeal: return "ideal";
    case DownsampleKind::kBox: return "box";
    case DownsampleKind::kBinomial3: return "binomial3";
    case DownsampleKind::kAvgPool: return "avgpool";
    case DownsampleKind::kDwConv: return "dwconv";
    case DownsampleKind::kCadaSp: return "cadasp";
  }
  return "?";
}

void DownsampleConfig::validate(const std::string& where) const {
  if (kind == DownsampleKind::kAvgPool && kernel != 2 && kernel != 3 && kernel != 5) {
    throw ConfigError(where + ": avgpool downsampling requires k in {2,3,5}, got " +
                      std::to_string(kernel));
  }
  if ((kind == DownsampleKind::kDwConv || kind == DownsampleKind::kCadaSp) &&
      (kernel < 1 || kernel % 2 == 0)) {
    throw ConfigError(where + ": downsampling kernel must be odd, got " + std::to_string(kernel));
  }
}

bool lowpass_passes(int k, int n, LowpassMask mask) {
  const int signed_k = k <= n / 2 ? k : k - n;
  const int a = 4 * std::abs(signed_k);
  return mask == LowpassMask::kIdeal ? a < n : a <= n;
}

template <typename T>
Tensor<T> fft_lowpass(const Tensor<T>& input, LowpassMask mask) {
  const int h = input.h(), w = input.w();
  const std::size_t P = input.shape().plane();
  Tensor<T> out(input.shape());
  const int jobs = input.n() * input.c();

#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const T* src = input.plane(job / input.c(), job % input.c());
    std::vector<double> img(src, src + P);
    ComplexGrid f = fft2(img, h, w);
    for (int y = 0; y < h; ++y) {
      const bool py = lowpass_passes(y, h, mask);
      for (int x = 0; x < w; ++x) {
        if (!py || !lowpass_passes(x, w, mask)) f.at(y, x) = 0.0;
      }
    }
    const ComplexGrid r = ifft2(f);
    T* dst = out.plane(job / input.c(), job % input.c());
    for (std::size_t i = 0; i < P; ++i) dst[i] = static_cast<T>(r.v[i].real());
  }
  return out;
}

std::vector<double> binomial_kernel(int k) {
  if (k < 1) throw ConfigError("binomial kernel size must be positive");
  std::vector<double> row(k, 0.0);
  row[0] = 1.0;
  for (int i = 1; i < k; ++i) {
    for (int j = i; j > 0; --j) row[j] += row[j - 1];
  }
  double s = 0.0;
  for (double v : row) s += v;
  std::vector<double> out(static_cast<std::size_t>(k) * k);
  for (int y = 0; y < k; ++y) {
    for (int x = 0; x < k; ++x) out[static_cast<std::size_t>(y) * k + x] = row[y] * row[x] / (s * s);
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> binomial3_weight() {
  const auto k = binomial_kernel(3);
  return Tensor<T>(Shape{1, 1, 3, 3}, std::vector<T>(k.begin(), k.end()));
}

}  // namespace

template <typename T>
Tensor<T> binomial3(const Tensor<T>& input) {
  return mh_dw_conv<T>(input, binomial3_weight<T>(), {}, input.c(), 1);
}

template <typename T>
Tensor<T> avg_pool_same(const Tensor<T>& input, int k) {
  if (k < 1) throw ConfigError("avg_pool_same: k must be positive");
  const int before = (k - 1) / 2;
  const int h = input.h(), w = input.w();
  const T inv = T(1) / static_cast<T>(k * k);
  Tensor<T> out(input.shape());
  const int jobs = input.n() * input.c();

#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const T* src = input.plane(job / input.c(), job % input.c());
    T* dst = out.plane(job / input.c(), job % input.c());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        T s = T(0);
        for (int dy = 0; dy < k; ++dy) {
          const int iy = y - before + dy;
          if (iy < 0 || iy >= h) continue;
          for (int dx = 0; dx < k; ++dx) {
            const int ix = x - before + dx;
            if (ix >= 0 && ix < w) s += src[iy * w + ix];
          }
        }
        dst[y * w + x] = s * inv;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool_same_backward(const Tensor<T>& grad_out, int k) {
  const int before = (k - 1) / 2;
  const int h = grad_out.h(), w = grad_out.w();
  const T inv = T(1) / static_cast<T>(k * k);
  Tensor<T> gin(grad_out.shape());
  const int jobs = grad_out.n() * grad_out.c();

#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const T* g = grad_out.plane(job / grad_out.c(), job % grad_out.c());
    T* dst = gin.plane(job / grad_out.c(), job % grad_out.c());
    // Input (iy, ix) feeds outputs y with y - before <= iy <= y - before + k - 1.
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < w; ++ix) {
        T s = T(0);
        for (int y = iy + before - k + 1; y <= iy + before; ++y) {
          if (y < 0 || y >= h) continue;
          for (int x = ix + before - k + 1; x <= ix + before; ++x) {
            if (x >= 0 && x < w) s += g[y * w + x];
          }
        }
        dst[iy * w + ix] = s * inv;
      }
    }
  }
  return gin;
}

double spectrum_frequency(int index, int grid) {
  return 2.0 * std::numbers::pi * static_cast<double>(index - grid / 2) / grid;
}

Spectrum spectrum(std::span<const double> kernel, int kernel_size, int grid) {
  if (kernel.size() != static_cast<std::size_t>(kernel_size) * kernel_size) {
    throw ConfigError("spectrum: kernel length must be kernel_size^2");
  }
  if (grid < kernel_size) throw ConfigError("spectrum: grid must be at least the kernel side");
  std::vector<double> padded(static_cast<std::size_t>(grid) * grid, 0.0);
  for (int y = 0; y < kernel_size; ++y) {
    for (int x = 0; x < kernel_size; ++x) {
      padded[static_cast<std::size_t>(y) * grid + x] = kernel[static_cast<std::size_t>(y) * kernel_size + x];
    }
  }
  const ComplexGrid f = fft2(padded, grid, grid);
  Spectrum s;
  s.grid = grid;
  s.magnitude.assign(padded.size(), 0.0);
  // Undo the unitary scaling so a delta has unit magnitude before normalizing.
  const double scale = static_cast<double>(grid);
  double peak = 0.0;
  for (int y = 0; y < grid; ++y) {
    for (int x = 0; x < grid; ++x) {
      const int sy = (y + grid / 2) % grid;
      const int sx = (x + grid / 2) % grid;
      const double m = std::abs(f.at(y, x)) * scale;
      s.magnitude[static_cast<std::size_t>(sy) * grid + sx] = m;
      peak = std::max(peak, m);
    }
  }
  if (peak == 0.0) {
    s.degenerate = true;
    return s;
  }
  for (double& m : s.magnitude) m /= peak;
  return s;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> FftLowpass<T>::forward(const Tensor<T>& x, Mode) {
  return fft_lowpass(x, mask_);
}

template <typename T>
Tensor<T> FftLowpass<T>::backward(const Tensor<T>& grad_out) {
  return fft_lowpass(grad_out, mask_);
}

template <typename T>
Shape FftLowpass<T>::profile(const Shape& in, ProfileReport& report) const {
  report.add(this->name(), 0, 0);
  return in;
}

template <typename T>
Tensor<T> Binomial3<T>::forward(const Tensor<T>& x, Mode) {
  return binomial3(x);
}

template <typename T>
Tensor<T> Binomial3<T>::backward(const Tensor<T>& grad_out) {
  // The kernel is symmetric, so the adjoint is the same blur.
  return binomial3(grad_out);
}

template <typename T>
Shape Binomial3<T>::profile(const Shape& in, ProfileReport& report) const {
  report.add(this->name(), 0, static_cast<std::int64_t>(in.c) * in.h * in.w * 9);
  return in;
}

template <typename T>
AvgPoolSame<T>::AvgPoolSame(std::string name, int k) : Module<T>(std::move(name)), k_(k) {
  if (k < 1) throw ConfigError(this->name() + ": k must be positive");
}

template <typename T>
Tensor<T> AvgPoolSame<T>::forward(const Tensor<T>& x, Mode) {
  return avg_pool_same(x, k_);
}

template <typename T>
Tensor<T> AvgPoolSame<T>::backward(const Tensor<T>& grad_out) {
  return avg_pool_same_backward(grad_out, k_);
}

template <typename T>
Shape AvgPoolSame<T>::profile(const Shape& in, ProfileReport& report) const {
  report.add(this->name(), 0, 0);
  return in;
}

template <typename T>
void BinomialDwConv<T>::reset_parameters(Rng&) {
  const auto k = binomial_kernel(this->kernel_size());
  Tensor<T>& w = this->weight().value;
  const std::size_t taps = k.size();
  for (int h = 0; h < w.n(); ++h) {
    for (std::size_t t = 0; t < taps; ++t) w[h * taps + t] = static_cast<T>(k[t]);
  }
}

template <typename T>
ModulePtr<T> make_downsample(const std::string& name, const DownsampleConfig& cfg, int channels) {
  cfg.validate(name);
  switch (cfg.kind) {
    case DownsampleKind::kNone: return nullptr;
    case DownsampleKind::kIdeal: return std::make_unique<FftLowpass<T>>(name, LowpassMask::kIdeal);
    case DownsampleKind::kBox: return std::make_unique<FftLowpass<T>>(name, LowpassMask::kBox);
    case DownsampleKind::kBinomial3: return std::make_unique<Binomial3<T>>(name);
    case DownsampleKind::kAvgPool: return std::make_unique<AvgPoolSame<T>>(name, cfg.kernel);
    case DownsampleKind::kDwConv:
      return std::make_unique<BinomialDwConv<T>>(name, channels, cfg.channels_per_head, cfg.kernel);
    case DownsampleKind::kCadaSp: {
      AttentionConfig a;
      a.kind = AttentionKind::kCadaSp;
      a.width = channels;
      a.channels_per_head = channels;
      a.num_bases = cfg.num_bases;
      a.ca_kernel = cfg.ca_kernel;
      a.kernel_size = cfg.kernel;
      a.stride = 1;
      a.pos_enabled = true;
      return std::make_unique<DecomposedAttention<T>>(name, a);
    }
  }
  return nullptr;
}

#define CADA_INSTANTIATE_DOWNSAMPLE(T)                                                     \
  template Tensor<T> fft_lowpass<T>(const Tensor<T>&, LowpassMask);                        \
  template Tensor<T> binomial3<T>(const Tensor<T>&);                                       \
  template Tensor<T> avg_pool_same<T>(const Tensor<T>&, int);                              \
  template Tensor<T> avg_pool_same_backward<T>(const Tensor<T>&, int);                     \
  template class FftLowpass<T>;                                                            \
  template class Binomial3<T>;                                                             \
  template class AvgPoolSame<T>;                                                           \
  template class BinomialDwConv<T>;                                                        \
  template ModulePtr<T> make_downsample<T>(const std::string&, const DownsampleConfig&, int);

CADA_INSTANTIATE_DOWNSAMPLE(float)
CADA_INSTANTIATE_DOWNSAMPLE(double)

}  // namespace cada
