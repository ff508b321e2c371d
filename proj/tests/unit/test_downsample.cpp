#include <numbers>

#include "cada/downsample.hpp"
#include "helpers.hpp"

using namespace cada;
using namespace cada::test;

namespace {

TensorD checkerboard(int n) {
  TensorD t(Shape{1, 1, n, n});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) t(0, 0, y, x) = (x + y) % 2 == 0 ? 1.0 : -1.0;
  return t;
}

}  // namespace

TEST_CASE("ideal and box low-pass") {
  for (LowpassMask mask : {LowpassMask::kIdeal, LowpassMask::kBox}) {
    const TensorD c(Shape{1, 2, 8, 8}, 0.75);
    CHECK(max_abs_diff(fft_lowpass(c, mask), c) < 1e-10);
    const TensorD y = fft_lowpass(checkerboard(8), mask);
    for (double v : y.data()) CHECK(std::abs(v) < 1e-10);
  }

  Rng rng(41);
  const TensorD x = random_tensor({1, 1, 8, 8}, rng);
  const TensorD y = ideal_lowpass(x);
  const auto f = verify::naive_dft2(y.data(), 8, 8);
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      if (lowpass_passes(u, 8, LowpassMask::kIdeal) && lowpass_passes(v, 8, LowpassMask::kIdeal)) continue;
      CHECK(std::abs(f.at(u, v)) < 1e-10);
    }

  // Bins 0, +-1 pass the ideal half-band of an 8-point grid; box adds +-2.
  CHECK(lowpass_passes(1, 8, LowpassMask::kIdeal));
  CHECK_FALSE(lowpass_passes(2, 8, LowpassMask::kIdeal));
  CHECK(lowpass_passes(2, 8, LowpassMask::kBox));
  CHECK(lowpass_passes(6, 8, LowpassMask::kBox));
  CHECK_FALSE(lowpass_passes(4, 8, LowpassMask::kBox));
}

TEST_CASE("binomial blur") {
  const auto k = binomial_kernel(3);
  const std::vector<double> ref{1, 2, 1, 2, 4, 2, 1, 2, 1};
  for (int i = 0; i < 9; ++i) CHECK(k[i] == doctest::Approx(ref[i] / 16).epsilon(1e-15));

  const TensorD c(Shape{1, 1, 6, 6}, 2.0);
  const TensorD b = binomial3(c);
  for (int y = 1; y < 5; ++y)
    for (int x = 1; x < 5; ++x) CHECK(b(0, 0, y, x) == doctest::Approx(2.0).epsilon(1e-15));

  // 1-D response (1 + cos w) / 2 vanishes at Nyquist: row sums with alternating sign.
  for (int r = 0; r < 3; ++r) CHECK(std::abs(k[r * 3] - k[r * 3 + 1] + k[r * 3 + 2]) < 1e-12);

  Rng rng(42);
  const TensorD x = random_tensor({2, 3, 6, 7}, rng);
  TensorD w(Shape{3, 1, 3, 3});
  for (int c2 = 0; c2 < 3; ++c2)
    for (int i = 0; i < 9; ++i) w[c2 * 9 + i] = k[i];
  CHECK(max_abs_diff(binomial3(x), verify::naive_conv2d(x, w, {}, 1, 1, 3)) <= 1e-12);
}

TEST_CASE("same-size average pooling") {
  Rng rng(43);
  const TensorD x = random_tensor({1, 2, 5, 6}, rng);
  for (int k : {2, 3, 5}) {
    const TensorD y = avg_pool_same(x, k);
    CHECK(y.shape() == x.shape());
  }
  // k = 2 pads nothing before and one row/column after.
  const TensorD y = avg_pool_same(x, 2);
  CHECK(y(0, 1, 0, 0) == doctest::Approx((x(0, 1, 0, 0) + x(0, 1, 0, 1) + x(0, 1, 1, 0) + x(0, 1, 1, 1)) / 4));
  CHECK(y(0, 1, 4, 5) == doctest::Approx(x(0, 1, 4, 5) / 4));

  DownsampleConfig cfg;
  cfg.kind = DownsampleKind::kAvgPool;
  cfg.kernel = 4;
  CHECK_THROWS_AS(cfg.validate("d"), ConfigError);
  cfg.kind = DownsampleKind::kDwConv;
  CHECK_THROWS_AS(cfg.validate("d"), ConfigError);
}

TEST_CASE("kernel spectra") {
  const std::vector<double> delta{0, 0, 0, 0, 1, 0, 0, 0, 0};
  const Spectrum d = spectrum(delta, 3, 16);
  for (double v : d.magnitude) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));

  const Spectrum b = spectrum(binomial_kernel(3), 3, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double wy = spectrum_frequency(y, 32), wx = spectrum_frequency(x, 32);
      CHECK(std::abs(b.at(y, x) - 0.25 * (1 + std::cos(wy)) * (1 + std::cos(wx))) < 1e-10);
    }
  CHECK(b.at(16, 16) == doctest::Approx(1.0));
  CHECK(b.at(0, 16) < 1e-15);

  // 2x2 box against a direct DFT of the zero-padded kernel.
  const std::vector<double> box{0.25, 0.25, 0.25, 0.25};
  const Spectrum s = spectrum(box, 2, 8);
  std::vector<double> padded(64, 0.0);
  padded[0] = padded[1] = padded[8] = padded[9] = 0.25;
  const auto ref = verify::naive_dft2(padded, 8, 8);
  const double peak = std::abs(ref.at(0, 0));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const double r = std::abs(ref.at((y + 4) % 8, (x + 4) % 8)) / peak;
      CHECK(std::abs(s.at(y, x) - r) < 1e-12);
    }

  const Spectrum z = spectrum(std::vector<double>(9, 0.0), 3, 8);
  CHECK(z.degenerate);
  for (double v : z.magnitude) CHECK(v == 0.0);
}

TEST_CASE("downsampling modules") {
  Rng rng(44);
  const TensorD x = random_tensor({2, 4, 8, 8}, rng);
  for (DownsampleKind k : {DownsampleKind::kIdeal, DownsampleKind::kBox, DownsampleKind::kBinomial3,
                           DownsampleKind::kAvgPool, DownsampleKind::kDwConv, DownsampleKind::kCadaSp}) {
    CAPTURE(to_string(k));
    DownsampleConfig cfg;
    cfg.kind = k;
    auto m = make_downsample<double>("ds", cfg, 4);
    REQUIRE(m);
    m->reset_parameters(rng);
    CHECK(m->forward(x, Mode::kTrain).shape() == x.shape());
  }
  DownsampleConfig none;
  CHECK(make_downsample<double>("ds", none, 4) == nullptr);

  DownsampleConfig dw;
  dw.kind = DownsampleKind::kDwConv;
  auto m = make_downsample<double>("ds", dw, 4);
  m->reset_parameters(rng);
  CHECK(max_abs_diff(m->forward(x, Mode::kEval), binomial3(x)) <= 1e-15);
}
