#include <filesystem>
#include <fstream>

#include "cada/analysis.hpp"
#include "helpers.hpp"

using namespace cada;
using namespace cada::test;

namespace fs = std::filesystem;

namespace {

BackboneConfig tiny(FilterKind f) {
  BackboneConfig c;
  c.stem_width = 8;
  c.expansion = 2;
  c.num_classes = 3;
  c.input_hw = 16;
  c.stages.resize(2);
  c.stages[0].width = 4;
  c.stages[1].width = 8;
  c.stages[1].stride = 2;
  for (auto& s : c.stages) {
    s.filter = f;
    s.channels_per_head = 2;
    s.num_bases = 3;
  }
  return c;
}

Dataset val_set(int n) {
  DatasetConfig dc;
  dc.val_samples = n;
  dc.image_hw = 16;
  dc.classes = 3;
  return make_synthetic(dc, 3, 1);
}

// Two-pass-free sums formula, independent of the implementation's form.
double pearson_sums(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    sab += a[i] * b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
  }
  return (n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb));
}

}  // namespace

TEST_CASE("profile of a single pointwise conv") {
  Conv2d<float> conv("c", 4, 4, 1, 1, 0);
  ProfileReport r;
  conv.profile({1, 4, 8, 8}, r);
  CHECK(r.total_params() == 16);
  CHECK(r.total_flops() == 1024);
}

TEST_CASE("profile report output") {
  ProfileReport r;
  r.add("a", 3, 10);
  r.add("b", 4, 20);
  CHECK(r.total_params() == 7);
  CHECK(r.total_flops() == 30);
  const auto path = fs::temp_directory_path() / "cada_test_profile.csv";
  write_profile_csv(r, path);
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  CHECK(ss.str() == "layer,params,flops\na,3,10\nb,4,20\ntotal,7,30\n");
  fs::remove(path);
  CHECK(profile_table(r).find("total") != std::string::npos);
}

TEST_CASE("profile ignores parameter values") {
  const auto c = tiny(FilterKind::kCada);
  Model<float> a(c, true, 1), b(c, false);
  const auto pa = a.profile(), pb = b.profile();
  CHECK(pa.total_params() == pb.total_params());
  CHECK(pa.total_flops() == pb.total_flops());
  std::int64_t trainable = 0;
  a.visit_params([&](Parameter<float>& p) {
    if (p.trainable()) trainable += static_cast<std::int64_t>(p.value.size());
  });
  CHECK(pa.total_params() == trainable);
}

TEST_CASE("pearson correlation") {
  const std::vector<double> a{1, 3, -2, 0.5, 4};
  std::vector<double> neg(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) neg[i] = -2 * a[i] + 1;
  CHECK(pearson(a, a).value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(a, neg).value == doctest::Approx(-1.0).epsilon(1e-15));
  const auto d = pearson(a, std::vector<double>(5, 2.0));
  CHECK(d.degenerate);
  CHECK(d.value == 0.0);
  CHECK_THROWS_AS(pearson(a, std::vector<double>(4)), ConfigError);
}

TEST_CASE("kernel correlation of a bank") {
  Rng rng(51);
  KernelBankStorage<double> s(2, 4, 3, true);
  for (double& v : s.weight) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  for (double& v : s.bias) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto bank = s.view();
  const auto hc = kernel_correlation(bank);
  REQUIRE(hc.size() == 2);
  for (int h = 0; h < 2; ++h) {
    for (int i = 0; i < 4; ++i) {
      CHECK(hc[h].at(i, i).value == doctest::Approx(1.0).epsilon(1e-14));
      for (int j = 0; j < 4; ++j) {
        CHECK(hc[h].at(i, j).value == hc[h].at(j, i).value);
        const double ref = pearson_sums(bank.base_kernel(h, i), bank.base_kernel(h, j));
        CHECK(std::abs(hc[h].at(i, j).value - ref) < 1e-12);
      }
      const double ref = pearson_sums(bank.base_kernel(h, i), bank.pos_kernel(h));
      CHECK(std::abs(hc[h].with_pos[i].value - ref) < 1e-12);
    }
  }
}

TEST_CASE("pruning") {
  Model<float> m(tiny(FilterKind::kCada), true, 2);
  const Dataset val = val_set(24);
  AugmentConfig aug;

  SUBCASE("an exactly-zero kernel is always removed") {
    m.attention_layers()[1]->bank().zero_base(2, 1);
    const double before = evaluate(m, val, aug, 8);
    const auto r = l1_prune(m, val, aug, 8, 0.0);
    CHECK(r.removed >= 1);
    CHECK(r.accuracy_before == before);
    CHECK(r.accuracy_after >= r.accuracy_before);
    CHECK(r.layers[1].survivors[2] < 3);
    for (const auto& l : r.layers)
      for (int v : l.survivors) CHECK(v <= l.num_bases);
  }
  SUBCASE("survivors shrink as the tolerance grows") {
    int last = std::numeric_limits<int>::max();
    for (double tol : {0.0, 0.05, 0.5}) {
      Model<float> fresh(tiny(FilterKind::kCada), true, 2);
      const auto r = l1_prune(fresh, val, aug, 8, tol);
      CHECK(r.accuracy_before - r.accuracy_after <= tol + 1e-12);
      CHECK(r.total_survivors() <= last);
      last = r.total_survivors();
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(l1_prune(m, Dataset{}, aug, 8, 0.0), ConfigError);
    Model<float> plain(tiny(FilterKind::kConv3x3), true, 2);
    CHECK_THROWS_AS(l1_prune(plain, val, aug, 8, 0.0), ConfigError);
  }
}

TEST_CASE("prune report csv") {
  PruneReport r;
  r.tolerance = 0.001;
  r.accuracy_before = 0.5;
  r.accuracy_after = 0.5;
  r.removed = 2;
  r.layers.push_back({"stage1.block0.filter", 4, {3, 1}});
  const auto path = fs::temp_directory_path() / "cada_test_prune.csv";
  write_prune_csv(r, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line.rfind("# tolerance=0.001", 0) == 0);
  std::getline(f, line);
  CHECK(line == "layer,head,survivors,b");
  std::getline(f, line);
  CHECK(line == "stage1.block0.filter,0,3,4");
  fs::remove(path);
  CHECK(r.layers[0].mean_survivors() == 2.0);
  CHECK(r.total_survivors() == 4);
}

TEST_CASE("spectrum files round-trip") {
  Rng rng(52);
  std::vector<double> k(25);
  for (double& v : k) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const Spectrum s = spectrum(k, 5, 16);
  const auto dir = fs::temp_directory_path() / "cada_test_spectra";
  write_spectrum_csv(s, dir / "k.csv");
  const Spectrum back = read_spectrum_csv(dir / "k.csv");
  CHECK(back.grid == 16);
  CHECK(back.magnitude == s.magnitude);
  write_spectrum_pgm(s, dir / "a.pgm");
  write_spectrum_pgm(back, dir / "b.pgm");
  std::ifstream a(dir / "a.pgm", std::ios::binary), b(dir / "b.pgm", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  CHECK(sa.rfind("P5\n16 16\n255\n", 0) == 0);
  fs::remove_all(dir);
  CHECK_THROWS_AS(read_spectrum_csv(dir / "missing.csv"), IoError);
}

TEST_CASE("exported spectra of initialized kernels") {
  BackboneConfig c = tiny(FilterKind::kMhDwConv);
  c.variant = Variant::kE;
  c.downsample.kind = DownsampleKind::kDwConv;
  Model<float> m(c, true, 5);
  // Delta-initialize the first spatial filter.
  auto dws = m.depthwise_layers();
  REQUIRE(!dws.empty());
  MhDwConv<float>* spatial = nullptr;
  for (auto* d : dws)
    if (d->name().find("downsample") == std::string::npos) spatial = d;
  REQUIRE(spatial);
  auto& w = spatial->weight().value;
  w.fill(0.0f);
  const int g = spatial->kernel_size();
  for (int h = 0; h < w.n(); ++h) w(h, 0, g / 2, g / 2) = 1.0f;

  const auto dir = fs::temp_directory_path() / "cada_test_export";
  const auto items = export_spectra(m, dir, 16);
  bool saw_binomial = false, saw_delta = false;
  for (const auto& it : items) {
    const Spectrum s = read_spectrum_csv(it.csv);
    if (it.kernel.find("downsample") != std::string::npos) {
      saw_binomial = true;
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const double wy = spectrum_frequency(y, 16), wx = spectrum_frequency(x, 16);
          CHECK(std::abs(s.at(y, x) - 0.25 * (1 + std::cos(wy)) * (1 + std::cos(wx))) < 1e-6);
        }
    } else if (it.kernel.find(spatial->name()) == 0) {
      saw_delta = true;
      for (double v : s.magnitude) CHECK(v == doctest::Approx(1.0));
    }
  }
  CHECK(saw_binomial);
  CHECK(saw_delta);
  CHECK(fs::exists(dir / "spectra.csv"));
  fs::remove_all(dir);

  Model<float> plain(tiny(FilterKind::kConv3x3), true, 1);
  CHECK_THROWS_AS(export_spectra(plain, dir, 16), ConfigError);
}
