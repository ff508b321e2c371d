#pragma once

#include <string>
#include <vector>

#include "cada/ca_networks.hpp"
#include "cada/module.hpp"

namespace cada {

enum class DownsampleKind { kNone, kIdeal, kBox, kBinomial3, kAvgPool, kDwConv, kCadaSp };

const char* to_string(DownsampleKind k);

/// Low-pass filter placed before a stride-2 stage. All kinds keep the
/// channel count and spatial size.
struct DownsampleConfig {
  DownsampleKind kind = DownsampleKind::kNone;
  int kernel = 3;             // AvgPool k, DwConv k, CADAsp G
  int channels_per_head = 1;  // DwConv heads; CADAsp defaults to one head
  int ca_kernel = 3;          // CADAsp T
  int num_bases = 4;          // CADAsp b

  void validate(const std::string& where) const;
};

/// Half-band masks over DFT bins, per axis. Ideal passes |w| < pi/2; box
/// also keeps the |w| == pi/2 bins, giving a slightly wider square.
enum class LowpassMask { kIdeal, kBox };

/// True when bin k of an n-point DFT passes the mask.
bool lowpass_passes(int k, int n, LowpassMask mask);

/// Per-channel FFT, mask, inverse FFT, real part. Linear and self-adjoint.
template <typename T>
Tensor<T> fft_lowpass(const Tensor<T>& input, LowpassMask mask);

template <typename T>
Tensor<T> ideal_lowpass(const Tensor<T>& input) {
  return fft_lowpass(input, LowpassMask::kIdeal);
}

template <typename T>
Tensor<T> box_lowpass(const Tensor<T>& input) {
  return fft_lowpass(input, LowpassMask::kBox);
}

/// Row k of Pascal's triangle outer product, normalized to sum 1.
std::vector<double> binomial_kernel(int k);

/// Depthwise 3x3 binomial blur, zero pad 1, stride 1.
template <typename T>
Tensor<T> binomial3(const Tensor<T>& input);

/// k x k box average with stride 1 and output size equal to input size.
/// Even k pads (k-1)/2 before and k/2 after; the divisor is always k*k.
template <typename T>
Tensor<T> avg_pool_same(const Tensor<T>& input, int k);

template <typename T>
Tensor<T> avg_pool_same_backward(const Tensor<T>& grad_out, int k);

struct Spectrum {
  int grid = 0;
  std::vector<double> magnitude;  // grid x grid, row-major, DC at (grid/2, grid/2)
  bool degenerate = false;        // all-zero kernel; magnitudes left unnormalized

  double at(int y, int x) const { return magnitude[static_cast<std::size_t>(y) * grid + x]; }
};

/// Magnitude of the zero-padded DFT of a square kernel, max-normalized.
/// Row i holds angular frequency 2*pi*(i - grid/2)/grid.
Spectrum spectrum(std::span<const double> kernel, int kernel_size, int grid);

double spectrum_frequency(int index, int grid);

// ---------------------------------------------------------------------------
// Modules

template <typename T>
class FftLowpass : public Module<T> {
 public:
  FftLowpass(std::string name, LowpassMask mask) : Module<T>(std::move(name)), mask_(mask) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;

 private:
  LowpassMask mask_;
};

template <typename T>
class Binomial3 : public Module<T> {
 public:
  explicit Binomial3(std::string name) : Module<T>(std::move(name)) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;
};

template <typename T>
class AvgPoolSame : public Module<T> {
 public:
  AvgPoolSame(std::string name, int k);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape profile(const Shape& in, ProfileReport& report) const override;

 private:
  int k_;
};

/// Trainable multi-head depthwise filter that starts as a binomial blur.
template <typename T>
class BinomialDwConv : public MhDwConv<T> {
 public:
  BinomialDwConv(std::string name, int channels, int channels_per_head, int k)
      : MhDwConv<T>(std::move(name), channels, channels_per_head, k, 1, false) {}
  void reset_parameters(Rng& rng) override;
};

/// Builds the configured filter for `channels` features; nullptr for kNone.
template <typename T>
ModulePtr<T> make_downsample(const std::string& name, const DownsampleConfig& cfg, int channels);

}  // namespace cada
