#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cada/backbone.hpp"

namespace cada::verify {

// ---------------------------------------------------------------------------
// Nested-loop references, written independently of the optimized kernels.

Tensor<double> naive_conv2d(const Tensor<double>& input, const Tensor<double>& weight,
                            std::span<const double> bias, int stride, int padding, int groups);

/// maps indexed as (n, head*G*G + ky*G + kx, y, x); zero padding G/2.
Tensor<double> naive_aggregate(const Tensor<double>& input, const Tensor<double>& maps,
                               int channels_per_head, int stride);

/// base[h][i] and pos[h] are row-major G*G kernels; alpha is
/// (N, groups*b, H, W) with groups 1 (shared) or heads.
Tensor<double> naive_construct_maps(const Tensor<double>& alpha, int groups,
                                    const std::vector<std::vector<std::vector<double>>>& base,
                                    const std::vector<std::vector<double>>& pos);

/// Direct O(n^4) unitary DFT of an h x w image.
ComplexGrid naive_dft2(std::span<const double> image, int h, int w);

// ---------------------------------------------------------------------------
// Finite differences

inline constexpr double kFdStep = 1e-5;

/// max|a - n| / max(max|a|, max|n|); 0 when both are identically zero.
double scale_relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Central differences of `loss` with respect to every element of `x`
/// (or `samples` evenly spaced elements when positive).
std::vector<double> numeric_gradient(Tensor<double>& x, const std::function<double()>& loss,
                                     int samples = 0);

struct CheckResult {
  std::string name;
  double error = 0.0;
  bool passed = false;
  std::string detail;
};

struct SuiteReport {
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  double max_error() const;
  bool passed() const;
  std::size_t failures() const;
};

/// Finite-difference checks of every differentiable layer across the
/// matrix C_h {1,2,4} x b {1,2,4} x T {1,3} x G {3,5} x stride {1,2}.
SuiteReport gradient_suite(std::uint64_t seed, double tolerance = 1e-5);

/// Cross-implementation equalities: loops vs optimized kernels, fused vs
/// explicit maps, and the depthwise reduction chain.
SuiteReport oracle_suite(std::uint64_t seed, double tolerance = 1e-12);

/// Frequency-domain properties of the fixed downsampling filters:
/// binomial3 response vs ((1+cos wx)/2)((1+cos wy)/2) (1e-10), energy
/// left above the ideal cutoff (1e-8 relative), and the Nyquist
/// checkerboard through each filter (1e-10; binomial3 judged away from the
/// zero-padded border).
SuiteReport spectral_suite(std::uint64_t seed);

/// End-to-end check of the model's loss gradient in 64-bit, train-mode BN
/// with frozen running statistics. `samples` coordinates per tensor (0 for
/// all of them). Coordinates on a ReLU/max-pool kink are skipped and counted
/// in `detail`.
CheckResult backbone_gradcheck(const BackboneConfig& cfg, std::uint64_t seed, int batch,
                               int samples, double tolerance);

}  // namespace cada::verify
