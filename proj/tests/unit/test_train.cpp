#include <filesystem>
#include <fstream>
#include <numbers>

#include "cada/train.hpp"
#include "helpers.hpp"

using namespace cada;
using namespace cada::test;

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 0.4) == 0.4);
  CHECK(cosine_lr(100, 100, 0.4) == 0.0);
  CHECK(cosine_lr(50, 100, 0.4) == 0.2);
  CHECK(cosine_lr(2, 7, 1.0) == doctest::Approx((1 + std::cos(std::numbers::pi * 2 / 7)) / 2).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_lr(0, 0, 0.1), ConfigError);
  CHECK_THROWS_AS(cosine_lr(8, 7, 0.1), ConfigError);
}

TEST_CASE("momentum SGD") {
  SUBCASE("zero gradient and decay") {
    std::vector<double> p{1.0, -2.0}, g{0.0, 0.0}, v{0.5, -1.0};
    sgd_update<double>(p, g, v, 0.1, 0.9, 0.0);
    CHECK(v[0] == doctest::Approx(0.45));
    CHECK(v[1] == doctest::Approx(-0.9));
    // The decayed velocity still moves the parameters.
    CHECK(p[0] == doctest::Approx(1.0 - 0.045));
    std::vector<double> q{1.0}, z{0.0}, w{0.0};
    sgd_update<double>(q, z, w, 0.1, 0.9, 0.0);
    CHECK(q[0] == 1.0);
    CHECK(w[0] == 0.0);
  }
  SUBCASE("plain gradient descent") {
    std::vector<double> p{1.0}, g{0.5}, v{0.0};
    sgd_update<double>(p, g, v, 0.2, 0.0, 0.0);
    CHECK(p[0] == doctest::Approx(0.9));
    sgd_update<double>(p, g, v, 0.2, 0.0, 0.0);
    CHECK(p[0] == doctest::Approx(0.8));
  }
  SUBCASE("two steps by hand") {
    std::vector<double> p{1.0}, v{0.0};
    sgd_update<double>(p, std::vector<double>{0.5}, v, 0.1, 0.9, 0.01);
    CHECK(std::abs(v[0] - 0.51) < 1e-12);
    CHECK(std::abs(p[0] - 0.949) < 1e-12);
    sgd_update<double>(p, std::vector<double>{-0.25}, v, 0.1, 0.9, 0.01);
    CHECK(std::abs(v[0] - 0.21849) < 1e-12);
    CHECK(std::abs(p[0] - 0.927151) < 1e-12);
  }
  std::vector<double> p2(2), g3(3), v2(2);
  CHECK_THROWS_AS(sgd_update<double>(p2, g3, v2, 0.1, 0.9, 0.0), ConfigError);
}

TEST_CASE("weight decay exemption for norm and position parameters") {
  for (bool decay : {true, false}) {
    BatchNorm2d<double> bn("bn", 2);
    bn.scale().value.fill(1.0);
    zero_grads<double>(bn);
    Sgd<double> opt(0.0, 0.5, decay);
    opt.step(bn, 1.0);
    CHECK(bn.scale().value[0] == (decay ? 0.5 : 1.0));
  }
}

TEST_CASE("synthetic data") {
  DatasetConfig cfg;
  cfg.train_samples = 12;
  cfg.val_samples = 8;
  cfg.image_hw = 8;
  const auto [a, va] = load_datasets(cfg, 7);
  const auto [b, vb] = load_datasets(cfg, 7);
  CHECK(a.size() == 12);
  CHECK(va.size() == 8);
  CHECK(a.images == b.images);
  CHECK(va.images == vb.images);
  CHECK(a.images != va.images);
  for (int i = 0; i < a.size(); ++i) CHECK(a.labels[i] == i % 4);
  const auto [c, vc] = load_datasets(cfg, 8);
  CHECK(a.images != c.images);

  DatasetConfig bad = cfg;
  bad.classes = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("batch assembly") {
  Dataset d;
  d.hw = 2;
  d.classes = 2;
  d.images = {0, 0.25f, 0.5f, 0.75f, 1, 1, 1, 1, 0, 0, 0, 0};
  d.labels = {1};
  AugmentConfig aug;
  const std::vector<int> idx{0};
  const auto t = make_batch<double>(d, idx, aug, nullptr);
  CHECK(t(0, 0, 0, 1) == doctest::Approx(-1.0));
  CHECK(t(0, 0, 1, 1) == doctest::Approx(1.0));
  CHECK(t(0, 2, 0, 0) == doctest::Approx(-2.0));
  aug.normalize = false;
  const auto raw = make_batch<double>(d, idx, aug, nullptr);
  CHECK(raw(0, 0, 1, 0) == doctest::Approx(0.5));
}

TEST_CASE("cifar binary records") {
  const auto path = std::filesystem::temp_directory_path() / "cada_test_cifar.bin";
  {
    std::ofstream f(path, std::ios::binary);
    for (int r = 0; r < 2; ++r) {
      f.put(static_cast<char>(r + 1));
      for (int p = 0; p < 3072; ++p) f.put(static_cast<char>(r == 0 ? 255 : 0));
    }
  }
  const Dataset d = load_cifar_binary(path, 10);
  CHECK(d.size() == 2);
  CHECK(d.labels[1] == 2);
  CHECK(d.image(0)[100] == 1.0f);
  CHECK(d.image(1)[100] == 0.0f);
  CHECK_THROWS_AS(load_cifar_binary(path, 2), IoError);
  std::filesystem::remove(path);
  try {
    load_cifar_binary(path, 10);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(path.string()) != std::string::npos);
  }
}

TEST_CASE("evaluate on one correctly classified sample") {
  BackboneConfig c;
  c.stem_width = 8;
  c.expansion = 2;
  c.num_classes = 3;
  c.input_hw = 16;
  c.stages.resize(1);
  c.stages[0].width = 4;
  c.stages[0].blocks = 1;
  Model<float> m(c, true, 4);
  DatasetConfig dc;
  dc.train_samples = 1;
  dc.val_samples = 1;
  dc.image_hw = 16;
  dc.classes = 3;
  Dataset d = make_synthetic(dc, 1, 0);
  AugmentConfig aug;
  const std::vector<int> idx{0};
  d.labels[0] = argmax_classes(m.forward(make_batch<float>(d, idx, aug, nullptr), Mode::kEval))[0];
  CHECK(evaluate(m, d, aug, 8) == 1.0);
  d.labels[0] = (d.labels[0] + 1) % 3;
  CHECK(evaluate(m, d, aug, 8) == 0.0);
}

TEST_CASE("short training runs are reproducible") {
  BackboneConfig c;
  c.stem_width = 8;
  c.expansion = 2;
  c.num_classes = 4;
  c.input_hw = 16;
  c.stages.resize(2);
  c.stages[0].width = 4;
  c.stages[1].width = 8;
  c.stages[1].stride = 2;
  for (auto& s : c.stages) {
    s.filter = FilterKind::kCadaSp;
    s.channels_per_head = 2;
  }
  DatasetConfig dc;
  dc.train_samples = 32;
  dc.val_samples = 16;
  dc.image_hw = 16;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  const auto out = std::filesystem::temp_directory_path() / "cada_test_train";
  std::vector<std::vector<double>> curves;
  for (int run = 0; run < 2; ++run) {
    Model<float> m(c, true, 9);
    const auto [tr, va] = load_datasets(dc, 9);
    const auto h = train_loop(m, tr, va, tc, 9, out, "");
    std::vector<double> curve{h.initial_loss};
    for (const auto& e : h.epochs) curve.push_back(e.train_loss);
    curves.push_back(curve);
  }
  CHECK(curves[0] == curves[1]);
  std::ifstream csv(out / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "epoch,train_loss,val_top1,lr");
  CHECK(std::filesystem::exists(out / "checkpoint_epoch2.bin"));
  std::filesystem::remove_all(out);
}
