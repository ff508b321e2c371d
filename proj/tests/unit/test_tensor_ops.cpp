#include <numbers>

#include "cada/ops.hpp"
#include "helpers.hpp"

using namespace cada;
using namespace cada::test;

TEST_CASE("tensor extents and errors") {
  Tensor<float> t(Shape{2, 3, 4, 5});
  CHECK(t.size() == 120);
  CHECK(t.index(1, 2, 3, 4) == 119);
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 2, 2, 2}, std::vector<float>(7)), ConfigError);
  CHECK_THROWS_AS(t.reshape({1, 1, 1, 7}), ConfigError);
  t.reshape({6, 4, 5, 1});
  CHECK(t.shape() == Shape{6, 4, 5, 1});
  CHECK(t.all_finite());
  t[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("conv2d identity and constant counting") {
  Rng rng(3);
  const TensorD x = random_tensor({2, 4, 5, 6}, rng);
  TensorD eye(Shape{4, 4, 1, 1});
  for (int c = 0; c < 4; ++c) eye(c, c, 0, 0) = 1.0;
  CHECK(max_abs_diff(conv2d<double>(x, eye, {}, {1, 0, 1}), x) == 0.0);

  TensorD c(Shape{1, 1, 5, 5}, 2.5);
  const TensorD ones(Shape{1, 1, 3, 3}, 1.0);
  const TensorD y = conv2d<double>(c, ones, {}, {1, 1, 1});
  CHECK(y(0, 0, 2, 2) == doctest::Approx(22.5));
  CHECK(y(0, 0, 0, 0) == doctest::Approx(10.0));
  CHECK(y(0, 0, 4, 4) == doctest::Approx(10.0));
  CHECK(y(0, 0, 0, 2) == doctest::Approx(15.0));
}

TEST_CASE("conv2d grouped matches loop reference") {
  Rng rng(4);
  const TensorD x = random_tensor({2, 3, 5, 5}, rng);
  const TensorD w = random_tensor({6, 1, 3, 3}, rng);
  const std::vector<double> b{0.1, -0.2, 0.3, 0.4, -0.5, 0.6};
  const TensorD y = conv2d<double>(x, w, b, {1, 1, 3});
  CHECK(max_abs_diff(y, verify::naive_conv2d(x, w, b, 1, 1, 3)) <= 1e-12);
  const TensorD y2 = conv2d<double>(x, w, b, {2, 0, 3});
  CHECK(max_abs_diff(y2, verify::naive_conv2d(x, w, b, 2, 0, 3)) <= 1e-12);
}

TEST_CASE("conv2d errors") {
  const TensorD x(Shape{1, 4, 5, 5});
  CHECK_THROWS_AS(conv2d<double>(x, TensorD(Shape{4, 3, 3, 3}), {}, {1, 1, 1}), ConfigError);
  CHECK_THROWS_AS(conv2d<double>(x, TensorD(Shape{3, 2, 3, 3}), {}, {1, 1, 2}), ConfigError);
  CHECK_THROWS_AS(conv2d<double>(x, TensorD(Shape{6, 4, 3, 3}), {}, {1, 1, 3}), ConfigError);
  CHECK_THROWS_AS(conv2d<double>(x, TensorD(Shape{4, 4, 1, 1}), std::vector<double>(3), {1, 0, 1}),
                  ConfigError);
}

TEST_CASE("conv2d backward") {
  Rng rng(5);
  TensorD x = random_tensor({2, 4, 5, 5}, rng);
  TensorD w = random_tensor({4, 2, 3, 3}, rng);
  const ConvGeometry g{2, 1, 2};

  const auto zero = conv2d_backward<double>(TensorD(conv2d_output_shape(x.shape(), w.shape(), g)), x, w, true, g);
  for (double v : zero.input.data()) CHECK(v == 0.0);
  for (double v : zero.weight.data()) CHECK(v == 0.0);
  for (double v : zero.bias) CHECK(v == 0.0);

  TensorD eye(Shape{4, 4, 1, 1});
  for (int c = 0; c < 4; ++c) eye(c, c, 0, 0) = 1.0;
  const TensorD go = random_tensor({2, 4, 5, 5}, rng);
  CHECK(max_abs_diff(conv2d_backward<double>(go, x, eye, false, {1, 0, 1}).input, go) == 0.0);

  const TensorD wsum = random_tensor(conv2d_output_shape(x.shape(), w.shape(), g), rng);
  const auto grads = conv2d_backward<double>(wsum, x, w, false, g);
  CHECK(fd_error(x, wsum, [&] { return conv2d<double>(x, w, {}, g); }, grads.input.data()) < 1e-6);
  CHECK(fd_error(w, wsum, [&] { return conv2d<double>(x, w, {}, g); }, grads.weight.data()) < 1e-6);
}

TEST_CASE("batch norm forward formulas") {
  Rng rng(6);
  TensorD x(Shape{4, 2, 3, 3});
  fill_normal(x, rng, 0.0, 1.0);
  // Standardize each channel exactly (biased variance).
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) m += x.plane(n, c)[i];
    m /= 36;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) v += (x.plane(n, c)[i] - m) * (x.plane(n, c)[i] - m);
    v /= 36;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) x.plane(n, c)[i] = (x.plane(n, c)[i] - m) / std::sqrt(v);
  }
  std::vector<double> scale{1, 1}, shift{0, 0}, rm{0, 0}, rv{1, 1};
  const TensorD y = batch_norm<double>(x, scale, shift, {rm, rv}, Mode::kTrain);
  // The only deviation left is the eps in the denominator.
  const double shrink = 1.0 / std::sqrt(1.0 + 1e-5);
  double max_x = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(y.data()[i] - shrink * x.data()[i]) < 1e-12);
    max_x = std::max(max_x, std::abs(x.data()[i]));
  }
  CHECK(max_abs_diff(y, x) < 1e-5 * max_x);

  scale = {2.0, 0.5};
  shift = {0.3, -0.7};
  rm = {0.4, -0.1};
  rv = {2.0, 0.25};
  const TensorD e = batch_norm<double>(x, scale, shift, {rm, rv}, Mode::kEval);
  for (int c = 0; c < 2; ++c) {
    const double ref = scale[c] * (x(1, c, 2, 1) - rm[c]) / std::sqrt(rv[c] + kBatchNormEps) + shift[c];
    CHECK(e(1, c, 2, 1) == doctest::Approx(ref).epsilon(1e-14));
  }
  CHECK_THROWS_AS(batch_norm<double>(x, std::vector<double>(3), shift, {rm, rv}, Mode::kEval), ConfigError);
}

TEST_CASE("running statistics update") {
  TensorD x(Shape{2, 1, 1, 2}, std::vector<double>{1, 2, 3, 4});
  std::vector<double> scale{1}, shift{0}, rm{0}, rv{1};
  batch_norm<double>(x, scale, shift, {rm, rv}, Mode::kTrain);
  CHECK(rm[0] == doctest::Approx(0.9 * 0 + 0.1 * 2.5));
  CHECK(rv[0] == doctest::Approx(0.9 * 1 + 0.1 * (5.0 / 3.0)));
  batch_norm<double>(x, scale, shift, {rm, rv}, Mode::kTrain, nullptr, false);
  CHECK(rm[0] == doctest::Approx(0.25));
}

TEST_CASE("pointwise, pooling and loss") {
  const TensorD r = relu(TensorD(Shape{1, 1, 1, 3}, std::vector<double>{-1, 0, 2}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  const TensorD c(Shape{1, 2, 4, 6}, 1.75);
  const TensorD p = avg_pool(c, 2, 2, 0);
  CHECK(p.shape() == Shape{1, 2, 2, 3});
  for (double v : p.data()) CHECK(v == 1.75);

  TensorD m(Shape{1, 1, 2, 2}, std::vector<double>{1, 5, 3, 2});
  CHECK(max_pool(m, 2, 2, 0)[0] == 5.0);
  CHECK(global_avg_pool(m)[0] == doctest::Approx(2.75));

  const TensorD logits(Shape{3, 10, 1, 1}, 0.7);
  const std::vector<int> labels{0, 4, 9};
  const auto ce = softmax_cross_entropy<double>(logits, labels);
  CHECK(ce.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(ce.grad(1, 4, 0, 0) == doctest::Approx((0.1 - 1.0) / 3));
  CHECK(argmax_classes(TensorD(Shape{1, 3, 1, 1}, std::vector<double>{0.1, 0.9, 0.9}))[0] == 1);
  CHECK_THROWS_AS(softmax_cross_entropy<double>(logits, std::vector<int>{0, 1}), ConfigError);
  CHECK_THROWS_AS(softmax_cross_entropy<double>(logits, std::vector<int>{0, 1, 10}), ConfigError);
}

TEST_CASE("linear layer") {
  TensorD x(Shape{1, 2, 1, 1}, std::vector<double>{1, 2});
  TensorD w(Shape{2, 2, 1, 1}, std::vector<double>{1, 0, 3, -1});
  const TensorD y = linear<double>(x, w, std::vector<double>{0.5, 0});
  CHECK(y[0] == 1.5);
  CHECK(y[1] == 1.0);
  CHECK_THROWS_AS(linear<double>(TensorD(Shape{1, 3, 1, 1}), w, {}), ConfigError);
}

TEST_CASE("fft") {
  std::vector<double> delta(20, 0.0);
  delta[0] = 1.0;
  const auto d = fft2(delta, 4, 5);
  for (const auto& v : d.v) CHECK(std::abs(v) == doctest::Approx(1.0 / std::sqrt(20.0)));

  const std::vector<double> flat(32, 3.0);
  const auto f = fft2(flat, 4, 8);
  CHECK(std::abs(f.at(0, 0)) == doctest::Approx(3.0 * std::sqrt(32.0)));
  for (std::size_t i = 1; i < f.v.size(); ++i) CHECK(std::abs(f.v[i]) < 1e-12);

  Rng rng(7);
  std::vector<double> img(35);
  for (double& v : img) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto spec = fft2(img, 5, 7);
  const auto ref = verify::naive_dft2(img, 5, 7);
  double err = 0.0;
  for (std::size_t i = 0; i < ref.v.size(); ++i) err = std::max(err, std::abs(spec.v[i] - ref.v[i]));
  CHECK(err < 1e-12);
  const auto back = ifft2(spec);
  err = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) err = std::max(err, std::abs(back.v[i] - img[i]));
  CHECK(err < 1e-10);
}
