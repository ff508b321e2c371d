#include "cada/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace cada {

namespace {

template <typename T>
inline void axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

struct ConvDims {
  int cin_g, cout_g, kh, kw, h, w, ho, wo;
  std::size_t k() const { return static_cast<std::size_t>(cin_g) * kh * kw; }
  std::size_t p() const { return static_cast<std::size_t>(ho) * wo; }
};

inline bool is_pointwise(const ConvDims& d, const ConvGeometry& g) {
  return d.kh == 1 && d.kw == 1 && g.stride == 1 && g.padding == 0;
}

// Unfolds one group of one sample into a (cin_g*kh*kw) x (ho*wo) matrix.
template <typename T>
void im2col(const T* in, const ConvDims& d, const ConvGeometry& g, T* col) {
  const std::size_t p = d.p();
  for (int c = 0; c < d.cin_g; ++c) {
    const T* src = in + static_cast<std::size_t>(c) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        T* dst = col + ((static_cast<std::size_t>(c) * d.kh + ky) * d.kw + kx) * p;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          T* row = dst + static_cast<std::size_t>(oy) * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill(row, row + d.wo, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            row[ox] = (ix >= 0 && ix < d.w) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, const ConvGeometry& g, T* out) {
  const std::size_t p = d.p();
  for (int c = 0; c < d.cin_g; ++c) {
    T* dst = out + static_cast<std::size_t>(c) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const T* src = col + ((static_cast<std::size_t>(c) * d.kh + ky) * d.kw + kx) * p;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= d.h) continue;
          T* drow = dst + static_cast<std::size_t>(iy) * d.w;
          const T* srow = src + static_cast<std::size_t>(oy) * d.wo;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < d.w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

ConvDims conv_dims(const Shape& in, const Shape& weight, const Shape& out, const ConvGeometry& g) {
  return ConvDims{in.c / g.groups, weight.n / g.groups, weight.h, weight.w, in.h, in.w, out.h,
                  out.w};
}

}  // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& weight, const ConvGeometry& g) {
  if (g.groups <= 0 || g.stride <= 0 || g.padding < 0) {
    throw ConfigError("conv2d: groups and stride must be positive, padding non-negative");
  }
  if (input.c % g.groups != 0 || weight.n % g.groups != 0) {
    throw ConfigError("conv2d: groups=" + std::to_string(g.groups) + " must divide C_in=" +
                      std::to_string(input.c) + " and C_out=" + std::to_string(weight.n));
  }
  if (weight.c != input.c / g.groups) {
    throw ConfigError("conv2d: weight " + weight.str() + " expects " +
                      std::to_string(weight.c * g.groups) + " input channels, got " +
                      std::to_string(input.c));
  }
  const int ho = conv_out_extent(input.h, weight.h, g.stride, g.padding);
  const int wo = conv_out_extent(input.w, weight.w, g.stride, g.padding);
  if (input.h < 1 || input.w < 1 || ho < 1 || wo < 1) {
    throw ConfigError("conv2d: input " + input.str() + " too small for kernel " + weight.str());
  }
  return Shape{input.n, weight.n, ho, wo};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias,
                 const ConvGeometry& g) {
  const Shape out_shape = conv2d_output_shape(input.shape(), weight.shape(), g);
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(weight.n())) {
    throw ConfigError("conv2d: bias length must equal C_out");
  }
  Tensor<T> out(out_shape);
  const ConvDims d = conv_dims(input.shape(), weight.shape(), out_shape, g);
  const std::size_t K = d.k();
  const std::size_t P = d.p();
  const bool pointwise = is_pointwise(d, g);
  const int N = input.n();

#pragma omp parallel
  {
    std::vector<T> col(pointwise ? 0 : K * P);
#pragma omp for schedule(static)
    for (int n = 0; n < N; ++n) {
      for (int grp = 0; grp < g.groups; ++grp) {
        const T* in = input.plane(n, grp * d.cin_g);
        const T* cols = in;
        if (!pointwise) {
          im2col(in, d, g, col.data());
          cols = col.data();
        }
        for (int oc = 0; oc < d.cout_g; ++oc) {
          const int co = grp * d.cout_g + oc;
          T* dst = out.plane(n, co);
          std::fill(dst, dst + P, bias.empty() ? T(0) : bias[co]);
          const T* wrow = weight.ptr() + static_cast<std::size_t>(co) * K;
          for (std::size_t k = 0; k < K; ++k) axpy(wrow[k], cols + k * P, dst, P);
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& weight, bool has_bias, const ConvGeometry& g,
                             bool need_input_grad) {
  const Shape out_shape = conv2d_output_shape(input.shape(), weight.shape(), g);
  require_shape(grad_out, out_shape, "conv2d_backward grad_out");
  const ConvDims d = conv_dims(input.shape(), weight.shape(), out_shape, g);
  const std::size_t K = d.k();
  const std::size_t P = d.p();
  const bool pointwise = is_pointwise(d, g);
  const int N = input.n();
  const int cout = weight.n();

  ConvGrads<T> grads;
  grads.weight = Tensor<T>(weight.shape());
  if (has_bias) {
    grads.bias.assign(cout, T(0));
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
      T s = T(0);
      for (int n = 0; n < N; ++n) {
        const T* go = grad_out.plane(n, co);
        for (std::size_t i = 0; i < P; ++i) s += go[i];
      }
      grads.bias[co] = s;
    }
  }

  // Weight gradient: unfold a chunk of samples, then let each output channel
  // accumulate over samples in index order.
  const int chunk = pointwise ? N : std::max(1, std::min(N, 16));
  const std::size_t per_sample = static_cast<std::size_t>(g.groups) * K * P;
  std::vector<T> cols(pointwise ? 0 : per_sample * chunk);
  for (int n0 = 0; n0 < N; n0 += chunk) {
    const int n1 = std::min(N, n0 + chunk);
    if (!pointwise) {
#pragma omp parallel for schedule(static)
      for (int n = n0; n < n1; ++n) {
        for (int grp = 0; grp < g.groups; ++grp) {
          im2col(input.plane(n, grp * d.cin_g), d, g,
                 cols.data() + (n - n0) * per_sample + grp * K * P);
        }
      }
    }
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
      const int grp = co / d.cout_g;
      T* gw = grads.weight.ptr() + static_cast<std::size_t>(co) * K;
      for (int n = n0; n < n1; ++n) {
        const T* go = grad_out.plane(n, co);
        const T* c = pointwise ? input.plane(n, grp * d.cin_g)
                               : cols.data() + (n - n0) * per_sample + grp * K * P;
        for (std::size_t k = 0; k < K; ++k) gw[k] += dot(go, c + k * P, P);
      }
    }
  }

  if (need_input_grad) {
    grads.input = Tensor<T>(input.shape());
#pragma omp parallel
    {
      std::vector<T> colgrad(pointwise ? 0 : K * P);
#pragma omp for schedule(static)
      for (int n = 0; n < N; ++n) {
        for (int grp = 0; grp < g.groups; ++grp) {
          T* gin = grads.input.plane(n, grp * d.cin_g);
          T* target = gin;
          if (!pointwise) {
            std::fill(colgrad.begin(), colgrad.end(), T(0));
            target = colgrad.data();
          }
          for (int oc = 0; oc < d.cout_g; ++oc) {
            const int co = grp * d.cout_g + oc;
            const T* go = grad_out.plane(n, co);
            const T* wrow = weight.ptr() + static_cast<std::size_t>(co) * K;
            for (std::size_t k = 0; k < K; ++k) axpy(wrow[k], go, target + k * P, P);
          }
          if (!pointwise) col2im_add(colgrad.data(), d, g, gin);
        }
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, std::span<const T> scale, std::span<const T> shift,
                     BatchNormStats<T> stats, Mode mode, BatchNormCache<T>* cache,
                     bool update_stats) {
  const int C = input.c();
  const auto uc = static_cast<std::size_t>(C);
  if (scale.size() != uc || shift.size() != uc || stats.running_mean.size() != uc ||
      stats.running_var.size() != uc) {
    throw ConfigError("batch_norm: per-channel parameter length must equal C=" +
                      std::to_string(C));
  }
  const int N = input.n();
  const std::size_t HW = input.shape().plane();
  const std::size_t count = static_cast<std::size_t>(N) * HW;
  Tensor<T> out(input.shape());
  std::vector<T> mean(C), inv_std(C);

#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double mu, var;
    if (mode == Mode::kTrain) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* x = input.plane(n, c);
        for (std::size_t i = 0; i < HW; ++i) s += x[i];
      }
      mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* x = input.plane(n, c);
        for (std::size_t i = 0; i < HW; ++i) {
          const double dx = x[i] - mu;
          ss += dx * dx;
        }
      }
      var = ss / static_cast<double>(count);
      if (update_stats) {
        const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
        stats.running_mean[c] = static_cast<T>((1.0 - kBatchNormMomentum) * stats.running_mean[c] +
                                               kBatchNormMomentum * mu);
        stats.running_var[c] = static_cast<T>((1.0 - kBatchNormMomentum) * stats.running_var[c] +
                                              kBatchNormMomentum * unbiased);
      }
    } else {
      mu = stats.running_mean[c];
      var = stats.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + kBatchNormEps);
    mean[c] = static_cast<T>(mu);
    inv_std[c] = static_cast<T>(is);
    const T a = static_cast<T>(scale[c] * is);
    const T b = static_cast<T>(shift[c] - scale[c] * mu * is);
    for (int n = 0; n < N; ++n) {
      const T* x = input.plane(n, c);
      T* y = out.plane(n, c);
      for (std::size_t i = 0; i < HW; ++i) y[i] = a * x[i] + b;
    }
  }
  if (cache != nullptr) {
    cache->mode = mode;
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                      std::span<const T> scale, const BatchNormCache<T>& cache) {
  require_shape(grad_out, input.shape(), "batch_norm_backward grad_out");
  const int C = input.c();
  const int N = input.n();
  const std::size_t HW = input.shape().plane();
  const double count = static_cast<double>(N) * static_cast<double>(HW);
  BatchNormGrads<T> g{Tensor<T>(input.shape()), std::vector<T>(C), std::vector<T>(C)};

#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const double mu = cache.mean[c];
    const double is = cache.inv_std[c];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* x = input.plane(n, c);
      const T* dy = grad_out.plane(n, c);
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (x[i] - mu) * is;
      }
    }
    g.shift[c] = static_cast<T>(sum_dy);
    g.scale[c] = static_cast<T>(sum_dy_xhat);
    const double gamma = scale[c];
    for (int n = 0; n < N; ++n) {
      const T* x = input.plane(n, c);
      const T* dy = grad_out.plane(n, c);
      T* dx = g.input.plane(n, c);
      if (cache.mode == Mode::kTrain) {
        for (std::size_t i = 0; i < HW; ++i) {
          const double xhat = (x[i] - mu) * is;
          dx[i] = static_cast<T>(gamma * is / count *
                                 (count * dy[i] - sum_dy - xhat * sum_dy_xhat));
        }
      } else {
        for (std::size_t i = 0; i < HW; ++i) dx[i] = static_cast<T>(gamma * is * dy[i]);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const std::size_t n = input.size();
  const T* x = input.ptr();
  T* y = out.ptr();
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input) {
  require_shape(grad_out, input.shape(), "relu_backward grad_out");
  Tensor<T> out(input.shape());
  const std::size_t n = input.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return out;
}

namespace {

Shape pool_output_shape(const Shape& in, int k, int stride, int pad, const char* op) {
  if (k <= 0 || stride <= 0 || pad < 0 || pad >= k) {
    throw ConfigError(std::string(op) + ": invalid window k=" + std::to_string(k) +
                      " stride=" + std::to_string(stride) + " pad=" + std::to_string(pad));
  }
  const int ho = conv_out_extent(in.h, k, stride, pad);
  const int wo = conv_out_extent(in.w, k, stride, pad);
  if (ho < 1 || wo < 1) {
    throw ConfigError(std::string(op) + ": input " + in.str() + " too small for window " +
                      std::to_string(k));
  }
  return Shape{in.n, in.c, ho, wo};
}

}  // namespace

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& input, int k, int stride, int pad) {
  const Shape os = pool_output_shape(input.shape(), k, stride, pad, "avg_pool");
  Tensor<T> out(os);
  const T inv = T(1) / static_cast<T>(k * k);
  const int planes = os.n * os.c;
#pragma omp parallel for schedule(static)
  for (int pc = 0; pc < planes; ++pc) {
    const T* x = input.ptr() + static_cast<std::size_t>(pc) * input.shape().plane();
    T* y = out.ptr() + static_cast<std::size_t>(pc) * os.plane();
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        T s = T(0);
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= input.h()) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < input.w()) s += x[iy * input.w() + ix];
          }
        }
        y[oy * os.w + ox] = s * inv;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape, int k, int stride,
                            int pad) {
  const Shape os = pool_output_shape(input_shape, k, stride, pad, "avg_pool_backward");
  require_shape(grad_out, os, "avg_pool_backward grad_out");
  Tensor<T> gin(input_shape);
  const T inv = T(1) / static_cast<T>(k * k);
  const int planes = os.n * os.c;
#pragma omp parallel for schedule(static)
  for (int pc = 0; pc < planes; ++pc) {
    const T* gy = grad_out.ptr() + static_cast<std::size_t>(pc) * os.plane();
    T* gx = gin.ptr() + static_cast<std::size_t>(pc) * input_shape.plane();
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        const T v = gy[oy * os.w + ox] * inv;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= input_shape.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < input_shape.w) gx[iy * input_shape.w + ix] += v;
          }
        }
      }
    }
  }
  return gin;
}

namespace {

template <typename T>
int max_pool_argmax(const T* x, int h, int w, int oy, int ox, int k, int stride, int pad) {
  int best = -1;
  T best_v = -std::numeric_limits<T>::infinity();
  for (int ky = 0; ky < k; ++ky) {
    const int iy = oy * stride - pad + ky;
    if (iy < 0 || iy >= h) continue;
    for (int kx = 0; kx < k; ++kx) {
      const int ix = ox * stride - pad + kx;
      if (ix < 0 || ix >= w) continue;
      const T v = x[iy * w + ix];
      if (best < 0 || v > best_v) {
        best = iy * w + ix;
        best_v = v;
      }
    }
  }
  return best;
}

}  // namespace

template <typename T>
Tensor<T> max_pool(const Tensor<T>& input, int k, int stride, int pad) {
  const Shape os = pool_output_shape(input.shape(), k, stride, pad, "max_pool");
  Tensor<T> out(os);
  const int planes = os.n * os.c;
#pragma omp parallel for schedule(static)
  for (int pc = 0; pc < planes; ++pc) {
    const T* x = input.ptr() + static_cast<std::size_t>(pc) * input.shape().plane();
    T* y = out.ptr() + static_cast<std::size_t>(pc) * os.plane();
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        y[oy * os.w + ox] = x[max_pool_argmax(x, input.h(), input.w(), oy, ox, k, stride, pad)];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> max_pool_backward(const Tensor<T>& grad_out, const Tensor<T>& input, int k, int stride,
                            int pad) {
  const Shape os = pool_output_shape(input.shape(), k, stride, pad, "max_pool_backward");
  require_shape(grad_out, os, "max_pool_backward grad_out");
  Tensor<T> gin(input.shape());
  const int planes = os.n * os.c;
#pragma omp parallel for schedule(static)
  for (int pc = 0; pc < planes; ++pc) {
    const T* x = input.ptr() + static_cast<std::size_t>(pc) * input.shape().plane();
    const T* gy = grad_out.ptr() + static_cast<std::size_t>(pc) * os.plane();
    T* gx = gin.ptr() + static_cast<std::size_t>(pc) * input.shape().plane();
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        gx[max_pool_argmax(x, input.h(), input.w(), oy, ox, k, stride, pad)] +=
            gy[oy * os.w + ox];
      }
    }
  }
  return gin;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  Tensor<T> out(Shape{input.n(), input.c(), 1, 1});
  const std::size_t hw = input.shape().plane();
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      const T* x = input.plane(n, c);
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += x[i];
      out(n, c, 0, 0) = static_cast<T>(s / static_cast<double>(hw));
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
  require_shape(grad_out, Shape{input_shape.n, input_shape.c, 1, 1},
                "global_avg_pool_backward grad_out");
  Tensor<T> gin(input_shape);
  const std::size_t hw = input_shape.plane();
  const T inv = T(1) / static_cast<T>(hw);
  for (int n = 0; n < input_shape.n; ++n) {
    for (int c = 0; c < input_shape.c; ++c) {
      const T v = grad_out(n, c, 0, 0) * inv;
      T* gx = gin.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) gx[i] = v;
    }
  }
  return gin;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias) {
  const std::size_t features = input.size() / std::max(1, input.n());
  if (weight.c() * static_cast<std::size_t>(weight.h()) * weight.w() != features) {
    throw ConfigError("linear: weight " + weight.shape().str() + " does not accept " +
                      std::to_string(features) + " features");
  }
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(weight.n())) {
    throw ConfigError("linear: bias length must equal output features");
  }
  const int out_f = weight.n();
  Tensor<T> out(Shape{input.n(), out_f, 1, 1});
  for (int n = 0; n < input.n(); ++n) {
    const T* x = input.ptr() + n * features;
    for (int o = 0; o < out_f; ++o) {
      out(n, o, 0, 0) = dot(weight.ptr() + o * features, x, features) + (bias.empty() ? T(0) : bias[o]);
    }
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weight) {
  const std::size_t features = input.size() / std::max(1, input.n());
  const int out_f = weight.n();
  require_shape(grad_out, Shape{input.n(), out_f, 1, 1}, "linear_backward grad_out");
  LinearGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), std::vector<T>(out_f)};
  for (int n = 0; n < input.n(); ++n) {
    const T* x = input.ptr() + n * features;
    T* gx = g.input.ptr() + n * features;
    for (int o = 0; o < out_f; ++o) {
      const T go = grad_out(n, o, 0, 0);
      g.bias[o] += go;
      axpy(go, x, g.weight.ptr() + o * features, features);
      axpy(go, weight.ptr() + o * features, gx, features);
    }
  }
  return g;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const int N = logits.n();
  const int K = logits.c() * logits.h() * logits.w();
  if (labels.size() != static_cast<std::size_t>(N)) {
    throw ConfigError("softmax_cross_entropy: label count must equal batch size");
  }
  if (N == 0) throw ConfigError("softmax_cross_entropy: empty batch");
  LossResult<T> r{0.0, Tensor<T>(logits.shape())};
  for (int n = 0; n < N; ++n) {
    if (labels[n] < 0 || labels[n] >= K) {
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(labels[n]) +
                        " out of range [0," + std::to_string(K) + ")");
    }
    const T* z = logits.ptr() + static_cast<std::size_t>(n) * K;
    T* g = r.grad.ptr() + static_cast<std::size_t>(n) * K;
    double zmax = z[0];
    for (int k = 1; k < K; ++k) zmax = std::max<double>(zmax, z[k]);
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(z[k] - zmax);
    const double lse = zmax + std::log(sum);
    r.loss += lse - z[labels[n]];
    for (int k = 0; k < K; ++k) {
      const double p = std::exp(z[k] - lse);
      g[k] = static_cast<T>((p - (k == labels[n] ? 1.0 : 0.0)) / N);
    }
  }
  r.loss /= N;
  return r;
}

template <typename T>
std::vector<int> argmax_classes(const Tensor<T>& logits) {
  const int K = logits.c() * logits.h() * logits.w();
  std::vector<int> out(logits.n());
  for (int n = 0; n < logits.n(); ++n) {
    const T* z = logits.ptr() + static_cast<std::size_t>(n) * K;
    out[n] = static_cast<int>(std::max_element(z, z + K) - z);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

using cd = std::complex<double>;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place 1-D transform of `n` samples at `stride`; sign -1 forward, +1 inverse.
void dft1d(cd* data, int n, std::size_t stride, int sign, std::vector<cd>& scratch) {
  scratch.resize(n);
  for (int i = 0; i < n; ++i) scratch[i] = data[i * stride];
  if (is_pow2(n)) {
    for (int i = 1, j = 0; i < n; ++i) {
      int bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(scratch[i], scratch[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
      for (int i = 0; i < n; i += len) {
        for (int k = 0; k < len / 2; ++k) {
          const double ang = sign * 2.0 * std::numbers::pi * k / len;
          const cd wk(std::cos(ang), std::sin(ang));
          const cd u = scratch[i + k];
          const cd v = scratch[i + k + len / 2] * wk;
          scratch[i + k] = u + v;
          scratch[i + k + len / 2] = u - v;
        }
      }
    }
    for (int i = 0; i < n; ++i) data[i * stride] = scratch[i];
    return;
  }
  for (int k = 0; k < n; ++k) {
    cd s(0.0, 0.0);
    for (int j = 0; j < n; ++j) {
      const long long m = (static_cast<long long>(j) * k) % n;
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(m) / n;
      s += scratch[j] * cd(std::cos(ang), std::sin(ang));
    }
    data[k * stride] = s;
  }
}

ComplexGrid transform(ComplexGrid g, int sign) {
  std::vector<cd> scratch;
  for (int y = 0; y < g.h; ++y) dft1d(g.v.data() + static_cast<std::size_t>(y) * g.w, g.w, 1, sign, scratch);
  for (int x = 0; x < g.w; ++x) dft1d(g.v.data() + x, g.h, g.w, sign, scratch);
  const double scale = 1.0 / std::sqrt(static_cast<double>(g.h) * g.w);
  for (cd& v : g.v) v *= scale;
  return g;
}

}  // namespace

ComplexGrid fft2(std::span<const double> image, int h, int w) {
  if (h < 1 || w < 1 || image.size() != static_cast<std::size_t>(h) * w) {
    throw ConfigError("fft2: image length does not match " + std::to_string(h) + "x" +
                      std::to_string(w));
  }
  ComplexGrid g{h, w, std::vector<cd>(image.begin(), image.end())};
  return transform(std::move(g), -1);
}

ComplexGrid fft2(const ComplexGrid& grid) { return transform(grid, -1); }

ComplexGrid ifft2(const ComplexGrid& spectrum) { return transform(spectrum, +1); }

// ---------------------------------------------------------------------------

#define CADA_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>,             \
                               const ConvGeometry&);                                               \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                           bool, const ConvGeometry&, bool);                       \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,       \
                                   BatchNormStats<T>, Mode, BatchNormCache<T>*, bool);             \
  template BatchNormGrads<T> batch_norm_backward<T>(const Tensor<T>&, const Tensor<T>&,            \
                                                    std::span<const T>, const BatchNormCache<T>&); \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                    \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> avg_pool<T>(const Tensor<T>&, int, int, int);                                 \
  template Tensor<T> avg_pool_backward<T>(const Tensor<T>&, const Shape&, int, int, int);          \
  template Tensor<T> max_pool<T>(const Tensor<T>&, int, int, int);                                 \
  template Tensor<T> max_pool_backward<T>(const Tensor<T>&, const Tensor<T>&, int, int, int);      \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                         \
  template Tensor<T> global_avg_pool_backward<T>(const Tensor<T>&, const Shape&);                  \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>);            \
  template LinearGrads<T> linear_backward<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                             const Tensor<T>&);                                    \
  template LossResult<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);         \
  template std::vector<int> argmax_classes<T>(const Tensor<T>&);

CADA_INSTANTIATE_OPS(float)
CADA_INSTANTIATE_OPS(double)

}  // namespace cada
