// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "cada/analysis.hpp"
#include "cada/checkpoint.hpp"
#include "cada/config.hpp"
#include "cada/verify.hpp"

namespace fs = std::filesystem;
using namespace cada;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Criterion {
  int id;
  std::string name;
  bool passed = true;
  std::string detail;
};

void report(const Criterion& c) {
  std::printf("%s criterion %d %s: %s\n", c.passed ? "PASS" : "FAIL", c.id, c.name.c_str(),
              c.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

struct ProfileTarget {
  const char* config;
  double params_m;  // 0 when not targeted
  double flops_g;
};

Criterion profiles(const fs::path& configs) {
  Criterion c{1, "profile", true, {}};
  const ProfileTarget targets[] = {
      {"resnet50-d-conv3x3.cfg", 25.58, 4.37},
      {"resnet50-d-dw7-nohead.cfg", 14.44, 2.58},
      {"resnet50-d-cada-b4.cfg", 14.45, 2.64},
      {"resnet50-d-cada-b8-64.cfg", 15.96, 2.86},
      {"resnet50-d-cadasp9-b128.cfg", 21.10, 5.12},
      {"resnet50-original.cfg", 0.0, 3.9},
      {"resnet50-b.cfg", 0.0, 4.1},
  };
  constexpr double kTol = 0.02;
  int bad = 0;
  for (const auto& t : targets) {
    const ExperimentConfig cfg = load_config(configs / t.config);
    const ProfileReport r = profile(cfg.model);
    const double p = static_cast<double>(r.total_params()) / 1e6;
    const double f = static_cast<double>(r.total_flops()) / 1e9;
    const double dp = t.params_m > 0 ? p / t.params_m - 1.0 : 0.0;
    const double df = f / t.flops_g - 1.0;
    const bool ok = std::abs(dp) <= kTol && std::abs(df) <= kTol;
    bad += !ok;
    std::printf("  %-4s %-28s params=%.3fM", ok ? "ok" : "off", t.config, p);
    if (t.params_m > 0) std::printf(" (target %.2fM, %+.2f%%)", t.params_m, 100 * dp);
    std::printf(" flops=%.3fG (target %.2fG, %+.2f%%)\n", f, t.flops_g, 100 * df);
  }
  c.passed = bad == 0;
  c.detail = fmt("%d of %zu models outside +-2%%", bad, std::size(targets));
  return c;
}

Criterion gradients() {
  Criterion c{2, "gradient suite", true, {}};
  const auto r = verify::gradient_suite(1, 1e-5);
  c.passed = r.passed() && r.seconds < 300.0;
  c.detail = fmt("%zu checks, %zu failed, max rel err %.3g (< 1e-5), %.1f s (< 300 s)",
                 r.checks.size(), r.failures(), r.max_error(), r.seconds);
  for (const auto& f : r.checks)
    if (!f.passed) std::printf("  failed %s err=%.3g %s\n", f.name.c_str(), f.error, f.detail.c_str());
  return c;
}

Criterion oracles() {
  Criterion c{3, "oracle suite", true, {}};
  const auto r = verify::oracle_suite(1, 1e-12);
  std::size_t conv = 0, agg = 0;
  for (const auto& k : r.checks) {
    conv += k.name.starts_with("conv2d");
    agg += k.name.starts_with("aggregate");
  }
  c.passed = r.passed() && conv >= 100 && agg >= 100;
  c.detail = fmt("%zu checks (%zu conv2d, %zu aggregate), %zu failed, max err %.3g (<= 1e-12)",
                 r.checks.size(), conv, agg, r.failures(), r.max_error());
  for (const auto& f : r.checks)
    if (!f.passed) std::printf("  failed %s err=%.3g %s\n", f.name.c_str(), f.error, f.detail.c_str());
  return c;
}

Criterion spectra() {
  Criterion c{4, "spectral suite", true, {}};
  const auto r = verify::spectral_suite(1);
  c.passed = r.passed();
  c.detail = fmt("%zu checks, %zu failed, max err %.3g", r.checks.size(), r.failures(), r.max_error());
  for (const auto& f : r.checks)
    if (!f.passed) std::printf("  failed %s err=%.3g %s\n", f.name.c_str(), f.error, f.detail.c_str());
  return c;
}

// ---------------------------------------------------------------------------

struct ToyRun {
  TrainHistory history;
  Checkpoint checkpoint;
};

ToyRun train_toy(const ExperimentConfig& cfg, const fs::path& out) {
  Model<float> model(cfg.model, true, cfg.run.seed);
  const auto [train, val] = load_datasets(cfg.data, cfg.run.seed);
  ToyRun r;
  r.history = train_loop(model, train, val, cfg.train, cfg.run.seed, out, to_text(cfg));
  r.checkpoint = capture(model, to_text(cfg));
  return r;
}

std::vector<double> curve(const TrainHistory& h) {
  std::vector<double> v{h.initial_loss};
  for (const auto& e : h.epochs) v.push_back(e.train_loss);
  return v;
}

Criterion training(const ExperimentConfig& cfg, const fs::path& work, Checkpoint& trained) {
  Criterion c{5, "training smoke", true, {}};
  const auto t0 = Clock::now();
  const ToyRun a = train_toy(cfg, work / "run_a");
  const double secs = seconds_since(t0);
  const ToyRun b = train_toy(cfg, work / "run_b");
  trained = a.checkpoint;

  const auto ca = curve(a.history), cb = curve(b.history);
  const double ratio = ca.back() / ca.front();
  const bool bitwise = ca.size() == cb.size() &&
                       std::memcmp(ca.data(), cb.data(), ca.size() * sizeof(double)) == 0;
  c.passed = cfg.train.epochs <= 5 && ratio <= 0.3 && bitwise && secs < 600.0;
  c.detail = fmt("loss %.4f -> %.4f (%.1f%% reduction, need >= 70%%) in %d epochs, %.1f s; rerun %s",
                 ca.front(), ca.back(), 100 * (1 - ratio), cfg.train.epochs, secs,
                 bitwise ? "bitwise identical" : "differs");
  return c;
}

Criterion pruning(const ExperimentConfig& cfg, const Checkpoint& trained) {
  Criterion c{6, "pruning contract", true, {}};
  const auto [train, val] = load_datasets(cfg.data, cfg.run.seed);
  const double tolerances[] = {0.0, 0.001, 0.01};
  int previous = -1;
  std::vector<std::string> problems;
  std::string counts;
  for (double tol : tolerances) {
    Model<float> model(cfg.model, false);
    restore(model, trained);
    const PruneReport r = l1_prune(model, val, cfg.train.augment, cfg.train.batch_size, tol);
    const double drop = r.accuracy_before - r.accuracy_after;
    if (drop > tol + 1e-12) problems.push_back(fmt("drop %.4f > %.4f", drop, tol));
    for (const auto& l : r.layers)
      for (int s : l.survivors)
        if (s > l.num_bases) problems.push_back(l.layer + " survivors exceed b");
    const int total = r.total_survivors();
    if (previous >= 0 && total > previous) problems.push_back(fmt("survivors grew at tol %.3f", tol));
    previous = total;
    counts += fmt("%s%g:%d(drop %.4f)", counts.empty() ? "" : " ", tol, total, drop);
  }
  c.passed = problems.empty();
  c.detail = "survivors by tolerance " + counts;
  for (const auto& p : problems) c.detail += "; " + p;
  return c;
}

Criterion schedule() {
  Criterion c{7, "schedule and optimizer", true, {}};
  const double base = 0.4;
  const bool ends = cosine_lr(0, 100, base) == base && cosine_lr(100, 100, base) == 0.0 &&
                    cosine_lr(50, 100, base) == base / 2;
  // v1 = 0.5 + 0.01*1 = 0.51, p1 = 1 - 0.1*0.51 = 0.949
  // v2 = 0.9*0.51 - 0.25 + 0.01*0.949 = 0.21849, p2 = 0.949 - 0.021849 = 0.927151
  std::vector<double> p{1.0}, v{0.0};
  const std::vector<double> g1{0.5}, g2{-0.25};
  sgd_update<double>(p, g1, v, 0.1, 0.9, 0.01);
  double err = std::max(std::abs(v[0] - 0.51), std::abs(p[0] - 0.949));
  sgd_update<double>(p, g2, v, 0.1, 0.9, 0.01);
  err = std::max({err, std::abs(v[0] - 0.21849), std::abs(p[0] - 0.927151)});
  c.passed = ends && err <= 1e-12;
  c.detail = fmt("cosine endpoints/midpoint %s; two-step SGD max err %.3g (<= 1e-12)",
                 ends ? "exact" : "inexact", err);
  return c;
}

Criterion round_trip(const ExperimentConfig& cfg, const Checkpoint& trained, const fs::path& work) {
  Criterion c{8, "checkpoint round trip", true, {}};
  Model<float> a(cfg.model, false);
  restore(a, trained);
  const fs::path path = work / "roundtrip.bin";
  write_checkpoint(capture(a, trained.config_text), path);

  const Checkpoint loaded = read_checkpoint(path);
  Model<float> b(parse_config(loaded.config_text).model, false);
  restore(b, loaded);

  const auto [train, val] = load_datasets(cfg.data, cfg.run.seed);
  std::vector<int> idx(16);
  for (int i = 0; i < 16; ++i) idx[i] = i;
  const Tensor<float> x = make_batch<float>(val, idx, cfg.train.augment, nullptr);
  const Tensor<float> la = a.forward(x, Mode::kEval);
  const Tensor<float> lb = b.forward(x, Mode::kEval);
  const bool same = la.shape() == lb.shape() &&
                    std::memcmp(la.data().data(), lb.data().data(), la.size() * sizeof(float)) == 0;
  c.passed = same;
  c.detail = fmt("%zu logits %s", la.size(), same ? "bitwise identical" : "differ");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path configs = CADA_CONFIG_DIR;
  fs::path work = fs::temp_directory_path() / "cada_acceptance";
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::strcmp(argv[i], "--configs") == 0) configs = argv[i + 1];
    else if (std::strcmp(argv[i], "--work") == 0) work = argv[i + 1];
  }
  fs::create_directories(work);

  int failed = 0;
  auto run = [&](const Criterion& c) {
    report(c);
    failed += !c.passed;
  };
  auto guarded = [&](int id, const char* name, auto&& fn) {
    try {
      run(fn());
    } catch (const std::exception& e) {
      run(Criterion{id, name, false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, "profile", [&] { return profiles(configs); });
  guarded(2, "gradient suite", [] { return gradients(); });
  guarded(3, "oracle suite", [] { return oracles(); });
  guarded(4, "spectral suite", [] { return spectra(); });

  ExperimentConfig toy;
  Checkpoint trained;
  bool have_model = false;
  guarded(5, "training smoke", [&] {
    toy = load_config(configs / "toy-cadasp.cfg");
    auto c = training(toy, work, trained);
    have_model = true;
    return c;
  });
  auto needs_model = [&](int id, const char* name, auto&& fn) {
    if (!have_model) run(Criterion{id, name, false, "no trained toy model"});
    else guarded(id, name, fn);
  };
  needs_model(6, "pruning contract", [&] { return pruning(toy, trained); });
  guarded(7, "schedule and optimizer", [] { return schedule(); });
  needs_model(8, "checkpoint round trip", [&] { return round_trip(toy, trained, work); });

  fs::remove_all(work);
  std::printf("%d of 8 criteria failed\n", failed);
  return failed;
}
