#include "cada/ca_networks.hpp"
#include "helpers.hpp"

using namespace cada;
using namespace cada::test;

namespace {

AttentionConfig make(AttentionKind kind, int width, int ch, int b, int t, int g, int stride, bool pos) {
  AttentionConfig c;
  c.kind = kind;
  c.width = width;
  c.channels_per_head = ch;
  c.num_bases = b;
  c.ca_kernel = t;
  c.kernel_size = g;
  c.stride = stride;
  c.pos_enabled = pos;
  return c;
}

}  // namespace

TEST_CASE("configuration rules") {
  CHECK_THROWS_AS(make(AttentionKind::kCada, 8, 3, 2, 3, 3, 1, true).validate("x"), ConfigError);
  CHECK_THROWS_AS(make(AttentionKind::kCada, 8, 4, 2, 2, 3, 1, true).validate("x"), ConfigError);
  CHECK_THROWS_AS(make(AttentionKind::kCada, 8, 4, 2, 3, 4, 1, true).validate("x"), ConfigError);
  CHECK_THROWS_AS(make(AttentionKind::kCada, 8, 4, 0, 3, 3, 1, true).validate("x"), ConfigError);
  CHECK_THROWS_AS(DecomposedAttention<double>("bad", make(AttentionKind::kCada, 6, 4, 2, 3, 3, 1, true)),
                  ConfigError);
  const auto c = make(AttentionKind::kCadaSp, 8, 4, 2, 3, 3, 1, true);
  CHECK(c.heads() == 2);
  CHECK(c.groups() == 1);
  CHECK(make(AttentionKind::kDa, 8, 4, 2, 3, 3, 1, true).groups() == 2);
}

TEST_CASE("context-aware maps, degenerate inputs") {
  Rng rng(21);
  const TensorD zero(Shape{2, 8, 5, 5});
  SUBCASE("no position encoding gives zero maps") {
    DecomposedAttention<double> layer("a", make(AttentionKind::kCada, 8, 4, 3, 3, 3, 1, false));
    layer.reset_parameters(rng);
    const TensorD maps = layer.maps(zero, Mode::kEval);
    for (double v : maps.data()) CHECK(v == 0.0);
  }
  SUBCASE("position encoding alone") {
    DecomposedAttention<double> layer("a", make(AttentionKind::kCadaSp, 8, 4, 3, 3, 3, 2, true));
    layer.reset_parameters(rng);
    fill_uniform(layer.accumulation_conv().bias().value, rng);
    const TensorD maps = layer.maps(zero, Mode::kEval);
    CHECK(maps.shape() == Shape{2, 18, 3, 3});
    const auto bank = layer.bank();
    for (int n = 0; n < 2; ++n)
      for (int k = 0; k < 18; ++k)
        for (int i = 0; i < 9; ++i) CHECK(maps.plane(n, k)[i] == bank.pos_tap(k / 9, k % 9));
  }
}

TEST_CASE("fused accumulation equals explicit construction") {
  Rng rng(22);
  for (AttentionKind kind : {AttentionKind::kCada, AttentionKind::kCadaSp}) {
    DecomposedAttention<double> layer("a", make(kind, 8, 4, 3, 3, 3, 1, true));
    layer.reset_parameters(rng);
    fill_uniform(layer.accumulation_conv().bias().value, rng);
    fill_uniform(layer.norm()->running_mean().value, rng);
    fill_uniform(layer.norm()->running_var().value, rng, 0.5, 2.0);
    const TensorD x = random_tensor({2, 8, 6, 6}, rng);
    CHECK(max_abs_diff(layer.maps_fused(x, Mode::kEval), layer.maps(x, Mode::kEval)) <= 1e-12);
  }
}

TEST_CASE("decomposed attention maps") {
  Rng rng(23);
  SUBCASE("zero seed without position encoding") {
    DecomposedAttention<double> layer("d", make(AttentionKind::kDa, 8, 2, 3, 3, 3, 1, false));
    layer.reset_parameters(rng);
    layer.seed()->value.fill(0.0);
    const auto maps = layer.da_maps(2, 4, 4);
    for (double v : maps.data()) CHECK(v == 0.0);
  }
  SUBCASE("maps do not depend on the input") {
    DecomposedAttention<double> layer("d", make(AttentionKind::kDaSp, 8, 2, 3, 3, 5, 1, true));
    layer.reset_parameters(rng);
    const TensorD a = layer.maps(random_tensor({2, 8, 5, 5}, rng), Mode::kTrain);
    const TensorD b = layer.maps(random_tensor({2, 8, 5, 5}, rng), Mode::kTrain);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  }
  SUBCASE("training loss reaches the seed") {
    DecomposedAttention<double> layer("d", make(AttentionKind::kDa, 8, 2, 3, 3, 3, 1, true));
    layer.reset_parameters(rng);
    const TensorD x = random_tensor({2, 8, 5, 5}, rng);
    const std::vector<int> labels{1, 3};
    auto loss = [&] {
      const TensorD y = layer.forward(x, Mode::kTrain);
      return softmax_cross_entropy<double>(TensorD(Shape{2, 200, 1, 1}, y.storage()), labels).loss;
    };
    const auto num = verify::numeric_gradient(layer.seed()->value, loss);
    double m = 0.0;
    for (double v : num) m = std::max(m, std::abs(v));
    CHECK(m > 1e-6);
  }
}

TEST_CASE("bank is a live view of the accumulation conv") {
  Rng rng(24);
  DecomposedAttention<double> layer("a", make(AttentionKind::kCada, 8, 4, 3, 3, 3, 1, true));
  layer.reset_parameters(rng);
  layer.accumulation_conv().weight().value.fill(0.0);
  auto bank = layer.bank();
  for (int h = 0; h < 2; ++h)
    for (int i = 0; i < 3; ++i)
      for (double v : bank.base_kernel(h, i)) CHECK(v == 0.0);

  const TensorD x = random_tensor({1, 8, 5, 5}, rng);
  const TensorD before = layer.forward(x, Mode::kEval);
  bank.base(0, 1, 2, 2) = 1.5;
  CHECK(layer.accumulation_conv().weight().value[(0 * 9 + 8) * 3 + 1] == 1.5);
  const TensorD after = layer.forward(x, Mode::kEval);
  CHECK(max_abs_diff(before, after) > 0.0);
}

TEST_CASE("profile matches a hand count") {
  // width 8, C_h 4 (2 heads), b 3, T 3, G 3, 8x8 input.
  DecomposedAttention<double> layer("a", make(AttentionKind::kCada, 8, 4, 3, 3, 3, 1, true));
  ProfileReport r;
  const Shape out = layer.profile({1, 8, 8, 8}, r);
  CHECK(out == Shape{1, 8, 8, 8});
  CHECK(r.total_params() == 6 * 4 * 9 + 2 * 6 + 18 * 3 + 18);
  CHECK(r.total_flops() == 6 * 4 * 9 * 64 + 18 * 3 * 64 + 8 * 64 * 9);

  DecomposedAttention<double> da("d", make(AttentionKind::kDaSp, 8, 4, 3, 3, 3, 2, false));
  ProfileReport rd;
  CHECK(da.profile({1, 8, 8, 8}, rd) == Shape{1, 8, 4, 4});
  CHECK(rd.total_params() == 8 * 9 + 3 * 8 * 9 + 18 * 3);
  CHECK(rd.total_flops() == 3 * 8 * 9 + 18 * 3 + 8 * 16 * 9);
}
