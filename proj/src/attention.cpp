#include "cada/attention.hpp"

#include <algorithm>
#include <cmath>

namespace cada {

template <typename T>
BaseKernelBank<T>::BaseKernelBank(int heads, int num_bases, int kernel_size, std::span<T> weight,
                                  std::span<T> bias)
    : heads_(heads), b_(num_bases), g_(kernel_size), weight_(weight), bias_(bias) {
  const std::size_t rows = static_cast<std::size_t>(heads) * kernel_size * kernel_size;
  if (heads <= 0 || num_bases < 0 || kernel_size <= 0) {
    throw ConfigError("kernel bank: heads and kernel size must be positive");
  }
  if (weight.size() != rows * num_bases) {
    throw ConfigError("kernel bank: weight storage holds " + std::to_string(weight.size()) +
                      " values, expected " + std::to_string(rows * num_bases));
  }
  if (!bias.empty() && bias.size() != rows) {
    throw ConfigError("kernel bank: position storage holds " + std::to_string(bias.size()) +
                      " values, expected " + std::to_string(rows));
  }
}

template <typename T>
std::vector<T> BaseKernelBank<T>::base_kernel(int h, int i) const {
  std::vector<T> k(taps());
  for (int t = 0; t < taps(); ++t) k[t] = base_tap(h, i, t);
  return k;
}

template <typename T>
std::vector<T> BaseKernelBank<T>::pos_kernel(int h) const {
  std::vector<T> k(taps());
  for (int t = 0; t < taps(); ++t) k[t] = pos_tap(h, t);
  return k;
}

template <typename T>
void BaseKernelBank<T>::set_base_kernel(int h, int i, std::span<const T> kernel) {
  if (kernel.size() != static_cast<std::size_t>(taps())) {
    throw ConfigError("kernel bank: kernel must have G*G taps");
  }
  for (int t = 0; t < taps(); ++t) weight_[offset(h, i, t)] = kernel[t];
}

template <typename T>
void BaseKernelBank<T>::zero_base(int h, int i) {
  for (int t = 0; t < taps(); ++t) weight_[offset(h, i, t)] = T(0);
}

template <typename T>
KernelBankStorage<T>::KernelBankStorage(int heads_, int num_bases, int kernel_size, bool pos)
    : heads(heads_),
      b(num_bases),
      g(kernel_size),
      pos_enabled(pos),
      weight(static_cast<std::size_t>(heads_) * kernel_size * kernel_size * num_bases),
      bias(pos ? static_cast<std::size_t>(heads_) * kernel_size * kernel_size : 0) {}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void check_alpha(const AccumulationParams<T>& alpha, const BaseKernelBank<T>& bank) {
  if (alpha.groups != 1 && alpha.groups != bank.heads()) {
    throw ConfigError("construct_maps: accumulation head axis must be 1 or " +
                      std::to_string(bank.heads()) + ", got " + std::to_string(alpha.groups));
  }
  if (alpha.alpha.c() != alpha.groups * bank.num_bases()) {
    throw ConfigError("construct_maps: alpha has " + std::to_string(alpha.alpha.c()) +
                      " channels, expected groups*b = " +
                      std::to_string(alpha.groups * bank.num_bases()));
  }
}

}  // namespace

template <typename T>
Tensor<T> construct_maps(const AccumulationParams<T>& alpha, const BaseKernelBank<T>& bank) {
  check_alpha(alpha, bank);
  const Tensor<T>& a = alpha.alpha;
  const int heads = bank.heads();
  const int taps = bank.taps();
  const int b = bank.num_bases();
  const std::size_t P = a.shape().plane();
  Tensor<T> maps(Shape{a.n(), heads * taps, a.h(), a.w()});
  const int jobs = a.n() * heads;

#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const int n = job / heads;
    const int h = job % heads;
    const int grp = alpha.groups == 1 ? 0 : h;
    for (int t = 0; t < taps; ++t) {
      T* dst = maps.plane(n, h * taps + t);
      std::fill(dst, dst + P, bank.pos_tap(h, t));
      for (int i = 0; i < b; ++i) {
        const T k = bank.base_tap(h, i, t);
        const T* src = a.plane(n, grp * b + i);
        for (std::size_t p = 0; p < P; ++p) dst[p] += k * src[p];
      }
    }
  }
  return maps;
}

template <typename T>
ConstructMapsGrads<T> construct_maps_backward(const Tensor<T>& grad_maps,
                                              const AccumulationParams<T>& alpha,
                                              const BaseKernelBank<T>& bank) {
  check_alpha(alpha, bank);
  const Tensor<T>& a = alpha.alpha;
  const int heads = bank.heads();
  const int taps = bank.taps();
  const int b = bank.num_bases();
  require_shape(grad_maps, Shape{a.n(), heads * taps, a.h(), a.w()},
                "construct_maps_backward grad_maps");
  const std::size_t P = a.shape().plane();
  const int N = a.n();

  ConstructMapsGrads<T> g;
  g.alpha = Tensor<T>(a.shape());
  g.weight.assign(bank.weight_storage().size(), T(0));
  if (bank.pos_enabled()) g.bias.assign(static_cast<std::size_t>(heads) * taps, T(0));

  // d alpha: each (sample, group) sums over the heads it feeds.
  const int jobs = N * alpha.groups;
#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const int n = job / alpha.groups;
    const int grp = job % alpha.groups;
    const int h0 = alpha.groups == 1 ? 0 : grp;
    const int h1 = alpha.groups == 1 ? heads : grp + 1;
    for (int i = 0; i < b; ++i) {
      T* dst = g.alpha.plane(n, grp * b + i);
      for (int h = h0; h < h1; ++h) {
        for (int t = 0; t < taps; ++t) {
          const T k = bank.base_tap(h, i, t);
          const T* src = grad_maps.plane(n, h * taps + t);
          for (std::size_t p = 0; p < P; ++p) dst[p] += k * src[p];
        }
      }
    }
  }

  // d bank: one row (head, tap) per job, samples in index order.
  const int rows = heads * taps;
#pragma omp parallel for schedule(static)
  for (int row = 0; row < rows; ++row) {
    const int h = row / taps;
    const int grp = alpha.groups == 1 ? 0 : h;
    T* gw = g.weight.data() + static_cast<std::size_t>(row) * b;
    T bias_acc = T(0);
    for (int n = 0; n < N; ++n) {
      const T* gm = grad_maps.plane(n, row);
      for (std::size_t p = 0; p < P; ++p) bias_acc += gm[p];
      for (int i = 0; i < b; ++i) {
        const T* src = a.plane(n, grp * b + i);
        T s = T(0);
        for (std::size_t p = 0; p < P; ++p) s += gm[p] * src[p];
        gw[i] += s;
      }
    }
    if (!g.bias.empty()) g.bias[row] = bias_acc;
  }
  return g;
}

// ---------------------------------------------------------------------------

int aggregate_out_extent(int in, int kernel_size, int stride) {
  return (in + 2 * (kernel_size / 2) - kernel_size) / stride + 1;
}

int aggregate_kernel_size(const Shape& input, const Shape& maps, int channels_per_head,
                          int stride) {
  if (channels_per_head <= 0 || input.c % channels_per_head != 0) {
    throw ConfigError("aggregate: channels per head " + std::to_string(channels_per_head) +
                      " must divide C=" + std::to_string(input.c));
  }
  if (stride <= 0) throw ConfigError("aggregate: stride must be positive");
  const int heads = input.c / channels_per_head;
  if (maps.c % heads != 0) {
    throw ConfigError("aggregate: maps channels " + std::to_string(maps.c) +
                      " not divisible by heads=" + std::to_string(heads));
  }
  const int taps = maps.c / heads;
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(taps))));
  if (g * g != taps || g % 2 == 0) {
    throw ConfigError("aggregate: maps hold " + std::to_string(taps) +
                      " taps per head; an odd square kernel is required");
  }
  const Shape expected{input.n, maps.c, aggregate_out_extent(input.h, g, stride),
                       aggregate_out_extent(input.w, g, stride)};
  if (maps != expected) {
    throw ConfigError("aggregate: maps shape " + maps.str() + " does not match expected " +
                      expected.str());
  }
  return g;
}

namespace {

// Output positions o in [0, out) whose sample o*stride + offset lies in [0, in).
inline void valid_span(int in, int out, int stride, int offset, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const int last = in - 1 - offset;
  hi = last < 0 ? -1 : std::min(out - 1, last / stride);
}

// out[y,x] += k[y,x] * in[y*s + ky - pad, x*s + kx - pad] over valid positions;
// `kernel_step` 0 broadcasts a scalar tap instead of a per-location map.
template <typename T>
inline void accumulate_tap(const T* in, int h, int w, const T* k, std::size_t kernel_step, T* out,
                           int ho, int wo, int stride, int oy_off, int ox_off) {
  int ylo, yhi, xlo, xhi;
  valid_span(h, ho, stride, oy_off, ylo, yhi);
  valid_span(w, wo, stride, ox_off, xlo, xhi);
  for (int oy = ylo; oy <= yhi; ++oy) {
    const T* irow = in + static_cast<std::size_t>(oy * stride + oy_off) * w + ox_off;
    T* orow = out + static_cast<std::size_t>(oy) * wo;
    const T* krow = k + kernel_step * oy * wo;
    if (stride == 1) {
      for (int ox = xlo; ox <= xhi; ++ox) orow[ox] += krow[kernel_step * ox] * irow[ox];
    } else {
      for (int ox = xlo; ox <= xhi; ++ox) orow[ox] += krow[kernel_step * ox] * irow[ox * stride];
    }
  }
}

// Adjoint of accumulate_tap with respect to the input.
template <typename T>
inline void scatter_tap(T* gin, int h, int w, const T* k, std::size_t kernel_step, const T* gout,
                        int ho, int wo, int stride, int oy_off, int ox_off) {
  int ylo, yhi, xlo, xhi;
  valid_span(h, ho, stride, oy_off, ylo, yhi);
  valid_span(w, wo, stride, ox_off, xlo, xhi);
  for (int oy = ylo; oy <= yhi; ++oy) {
    T* irow = gin + static_cast<std::size_t>(oy * stride + oy_off) * w + ox_off;
    const T* grow = gout + static_cast<std::size_t>(oy) * wo;
    const T* krow = k + kernel_step * oy * wo;
    for (int ox = xlo; ox <= xhi; ++ox) irow[ox * stride] += krow[kernel_step * ox] * grow[ox];
  }
}

// Correlation of the output gradient with the shifted input: per-location
// (map gradient) when `gk` advances, summed into one scalar otherwise.
template <typename T>
inline void correlate_tap(const T* in, int h, int w, const T* gout, T* gk, int ho, int wo,
                          int stride, int oy_off, int ox_off) {
  int ylo, yhi, xlo, xhi;
  valid_span(h, ho, stride, oy_off, ylo, yhi);
  valid_span(w, wo, stride, ox_off, xlo, xhi);
  for (int oy = ylo; oy <= yhi; ++oy) {
    const T* irow = in + static_cast<std::size_t>(oy * stride + oy_off) * w + ox_off;
    const T* grow = gout + static_cast<std::size_t>(oy) * wo;
    T* krow = gk + static_cast<std::size_t>(oy) * wo;
    for (int ox = xlo; ox <= xhi; ++ox) krow[ox] += grow[ox] * irow[ox * stride];
  }
}

template <typename T>
T correlate_tap_sum(const T* in, int h, int w, const T* gout, int ho, int wo, int stride,
                    int oy_off, int ox_off) {
  int ylo, yhi, xlo, xhi;
  valid_span(h, ho, stride, oy_off, ylo, yhi);
  valid_span(w, wo, stride, ox_off, xlo, xhi);
  T s = T(0);
  for (int oy = ylo; oy <= yhi; ++oy) {
    const T* irow = in + static_cast<std::size_t>(oy * stride + oy_off) * w + ox_off;
    const T* grow = gout + static_cast<std::size_t>(oy) * wo;
    for (int ox = xlo; ox <= xhi; ++ox) s += grow[ox] * irow[ox * stride];
  }
  return s;
}

}  // namespace

template <typename T>
Tensor<T> aggregate(const Tensor<T>& input, const Tensor<T>& maps, int channels_per_head,
                    int stride) {
  const int G = aggregate_kernel_size(input.shape(), maps.shape(), channels_per_head, stride);
  const int pad = G / 2;
  const int taps = G * G;
  const int ho = maps.h(), wo = maps.w();
  Tensor<T> out(Shape{input.n(), input.c(), ho, wo});
  const int jobs = input.n() * input.c();

#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const int n = job / input.c();
    const int c = job % input.c();
    const int head = c / channels_per_head;
    for (int ky = 0; ky < G; ++ky) {
      for (int kx = 0; kx < G; ++kx) {
        accumulate_tap(input.plane(n, c), input.h(), input.w(),
                       maps.plane(n, head * taps + ky * G + kx), 1, out.plane(n, c), ho, wo,
                       stride, ky - pad, kx - pad);
      }
    }
  }
  return out;
}

template <typename T>
AggregateGrads<T> aggregate_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                     const Tensor<T>& maps, int channels_per_head, int stride) {
  const int G = aggregate_kernel_size(input.shape(), maps.shape(), channels_per_head, stride);
  const int pad = G / 2;
  const int taps = G * G;
  const int ho = maps.h(), wo = maps.w();
  require_shape(grad_out, Shape{input.n(), input.c(), ho, wo}, "aggregate_backward grad_out");
  AggregateGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(maps.shape())};

  const int channel_jobs = input.n() * input.c();
#pragma omp parallel for schedule(static)
  for (int job = 0; job < channel_jobs; ++job) {
    const int n = job / input.c();
    const int c = job % input.c();
    const int head = c / channels_per_head;
    for (int ky = 0; ky < G; ++ky) {
      for (int kx = 0; kx < G; ++kx) {
        scatter_tap(g.input.plane(n, c), input.h(), input.w(),
                    maps.plane(n, head * taps + ky * G + kx), 1, grad_out.plane(n, c), ho, wo,
                    stride, ky - pad, kx - pad);
      }
    }
  }

  const int heads = input.c() / channels_per_head;
  const int head_jobs = input.n() * heads;
#pragma omp parallel for schedule(static)
  for (int job = 0; job < head_jobs; ++job) {
    const int n = job / heads;
    const int head = job % heads;
    for (int ky = 0; ky < G; ++ky) {
      for (int kx = 0; kx < G; ++kx) {
        T* gm = g.maps.plane(n, head * taps + ky * G + kx);
        for (int c = head * channels_per_head; c < (head + 1) * channels_per_head; ++c) {
          correlate_tap(input.plane(n, c), input.h(), input.w(), grad_out.plane(n, c), gm, ho, wo,
                        stride, ky - pad, kx - pad);
        }
      }
    }
  }
  return g;
}

namespace {

int check_dw_weight(const Shape& input, const Shape& weight, int channels_per_head, int stride) {
  if (channels_per_head <= 0 || input.c % channels_per_head != 0) {
    throw ConfigError("mh_dw_conv: channels per head " + std::to_string(channels_per_head) +
                      " must divide C=" + std::to_string(input.c));
  }
  if (stride <= 0) throw ConfigError("mh_dw_conv: stride must be positive");
  const int heads = input.c / channels_per_head;
  if (weight.n != heads || weight.c != 1 || weight.h != weight.w || weight.h % 2 == 0) {
    throw ConfigError("mh_dw_conv: weight " + weight.str() + " must be (" +
                      std::to_string(heads) + ",1,G,G) with odd G");
  }
  return weight.h;
}

}  // namespace

template <typename T>
Tensor<T> mh_dw_conv(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias,
                     int channels_per_head, int stride) {
  const int G = check_dw_weight(input.shape(), weight.shape(), channels_per_head, stride);
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(input.c())) {
    throw ConfigError("mh_dw_conv: bias length must equal C");
  }
  const int pad = G / 2;
  const int ho = aggregate_out_extent(input.h(), G, stride);
  const int wo = aggregate_out_extent(input.w(), G, stride);
  if (ho < 1 || wo < 1) throw ConfigError("mh_dw_conv: input too small");
  Tensor<T> out(Shape{input.n(), input.c(), ho, wo});
  const int jobs = input.n() * input.c();

#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const int n = job / input.c();
    const int c = job % input.c();
    const int head = c / channels_per_head;
    T* dst = out.plane(n, c);
    if (!bias.empty()) std::fill(dst, dst + static_cast<std::size_t>(ho) * wo, bias[c]);
    const T* k = weight.plane(head, 0);
    for (int ky = 0; ky < G; ++ky) {
      for (int kx = 0; kx < G; ++kx) {
        accumulate_tap(input.plane(n, c), input.h(), input.w(), k + ky * G + kx, 0, dst, ho, wo,
                       stride, ky - pad, kx - pad);
      }
    }
  }
  return out;
}

template <typename T>
MhDwConvGrads<T> mh_dw_conv_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                     const Tensor<T>& weight, bool has_bias,
                                     int channels_per_head, int stride, bool need_input_grad) {
  const int G = check_dw_weight(input.shape(), weight.shape(), channels_per_head, stride);
  const int pad = G / 2;
  const int ho = aggregate_out_extent(input.h(), G, stride);
  const int wo = aggregate_out_extent(input.w(), G, stride);
  require_shape(grad_out, Shape{input.n(), input.c(), ho, wo}, "mh_dw_conv_backward grad_out");
  MhDwConvGrads<T> g;
  g.weight = Tensor<T>(weight.shape());
  const std::size_t P = static_cast<std::size_t>(ho) * wo;

  if (has_bias) {
    g.bias.assign(input.c(), T(0));
    for (int c = 0; c < input.c(); ++c) {
      T s = T(0);
      for (int n = 0; n < input.n(); ++n) {
        const T* go = grad_out.plane(n, c);
        for (std::size_t p = 0; p < P; ++p) s += go[p];
      }
      g.bias[c] = s;
    }
  }

  const int heads = weight.n();
#pragma omp parallel for schedule(static)
  for (int head = 0; head < heads; ++head) {
    T* gk = g.weight.plane(head, 0);
    for (int ky = 0; ky < G; ++ky) {
      for (int kx = 0; kx < G; ++kx) {
        T s = T(0);
        for (int n = 0; n < input.n(); ++n) {
          for (int c = head * channels_per_head; c < (head + 1) * channels_per_head; ++c) {
            s += correlate_tap_sum(input.plane(n, c), input.h(), input.w(), grad_out.plane(n, c),
                                   ho, wo, stride, ky - pad, kx - pad);
          }
        }
        gk[ky * G + kx] = s;
      }
    }
  }

  if (need_input_grad) {
    g.input = Tensor<T>(input.shape());
    const int jobs = input.n() * input.c();
#pragma omp parallel for schedule(static)
    for (int job = 0; job < jobs; ++job) {
      const int n = job / input.c();
      const int c = job % input.c();
      const T* k = weight.plane(c / channels_per_head, 0);
      for (int ky = 0; ky < G; ++ky) {
        for (int kx = 0; kx < G; ++kx) {
          scatter_tap(g.input.plane(n, c), input.h(), input.w(), k + ky * G + kx, 0,
                      grad_out.plane(n, c), ho, wo, stride, ky - pad, kx - pad);
        }
      }
    }
  }
  return g;
}

#define CADA_INSTANTIATE_ATTENTION(T)                                                             \
  template class BaseKernelBank<T>;                                                               \
  template struct KernelBankStorage<T>;                                                           \
  template Tensor<T> construct_maps<T>(const AccumulationParams<T>&, const BaseKernelBank<T>&);   \
  template ConstructMapsGrads<T> construct_maps_backward<T>(                                      \
      const Tensor<T>&, const AccumulationParams<T>&, const BaseKernelBank<T>&);                  \
  template Tensor<T> aggregate<T>(const Tensor<T>&, const Tensor<T>&, int, int);                  \
  template AggregateGrads<T> aggregate_backward<T>(const Tensor<T>&, const Tensor<T>&,            \
                                                   const Tensor<T>&, int, int);                   \
  template Tensor<T> mh_dw_conv<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>, int,   \
                                   int);                                                          \
  template MhDwConvGrads<T> mh_dw_conv_backward<T>(const Tensor<T>&, const Tensor<T>&,            \
                                                   const Tensor<T>&, bool, int, int, bool);

CADA_INSTANTIATE_ATTENTION(float)
CADA_INSTANTIATE_ATTENTION(double)

}  // namespace cada
