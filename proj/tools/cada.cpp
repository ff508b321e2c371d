#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cada/analysis.hpp"
#include "cada/checkpoint.hpp"
#include "cada/config.hpp"
#include "cada/parallel.hpp"
#include "cada/verify.hpp"

namespace fs = std::filesystem;
using namespace cada;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config file");
  cmd->add_option("--seed", c.seed, "overrides run.seed");
  cmd->add_option("--out", c.out, "overrides run.out_dir");
  cmd->add_option("overrides", c.overrides, "key=value config overrides");
}

ExperimentConfig resolve(const Common& c, const std::string& base_text = {}) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config);
  } else if (!base_text.empty()) {
    cfg = parse_config(base_text);
  }
  apply_overrides(cfg, c.overrides);
  if (c.seed) cfg.run.seed = *c.seed;
  if (!c.out.empty()) cfg.run.out_dir = c.out;
  return cfg;
}

fs::path prepare_out(const ExperimentConfig& cfg) {
  const fs::path out = cfg.run.out_dir;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  std::ofstream f(out / "resolved.cfg");
  f << to_text(cfg);
  if (!f) throw IoError("cannot write " + (out / "resolved.cfg").string());
  return out;
}

fs::path checkpoint_path(const std::string& given, const ExperimentConfig& cfg) {
  return given.empty() ? fs::path(cfg.run.out_dir) / "checkpoint.bin" : fs::path(given);
}

/// Model architecture always comes from the checkpoint itself.
std::unique_ptr<Model<float>> load_model(const Checkpoint& ckpt) {
  const ExperimentConfig saved = parse_config(ckpt.config_text);
  auto model = std::make_unique<Model<float>>(saved.model, false, saved.run.seed);
  restore(*model, ckpt);
  return model;
}

void write_suite_csv(const std::vector<verify::CheckResult>& checks, const fs::path& path) {
  std::ofstream f(path);
  f << "check,error,passed\n";
  char buf[64];
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof buf, "%.6g", c.error);
    f << c.name << ',' << buf << ',' << (c.passed ? 1 : 0) << '\n';
  }
  if (!f) throw IoError("cannot write " + path.string());
}

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

int cmd_train(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  cfg.train.validate();
  cfg.data.validate();
  const fs::path out = prepare_out(cfg);
  Model<float> model(cfg.model, true, cfg.run.seed);
  const auto [train, val] = load_datasets(cfg.data, cfg.run.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainHistory h = train_loop(model, train, val, cfg.train, cfg.run.seed, out, to_text(cfg));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("initial_loss=%.6f\n", h.initial_loss);
  for (const auto& e : h.epochs) {
    std::printf("epoch=%d train_loss=%.6f val_top1=%.4f lr=%.6g\n", e.epoch, e.train_loss, e.val_top1, e.lr);
  }
  std::printf("seconds=%.1f out=%s\n", secs, out.string().c_str());
  return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt_arg) {
  const ExperimentConfig cfg = resolve(c);
  const Checkpoint ckpt = read_checkpoint(checkpoint_path(ckpt_arg, cfg));
  const fs::path out = prepare_out(cfg);
  auto model_ptr = load_model(ckpt);
  Model<float>& model = *model_ptr;
  const auto [train, val] = load_datasets(cfg.data, cfg.run.seed);
  const double tr = evaluate(model, train, cfg.train.augment, cfg.train.batch_size);
  const double va = evaluate(model, val, cfg.train.augment, cfg.train.batch_size);
  std::ofstream f(out / "eval.csv");
  f << "split,top1\ntrain," << tr << "\nval," << va << '\n';
  if (!f) throw IoError("cannot write " + (out / "eval.csv").string());
  std::printf("train_top1=%.4f val_top1=%.4f\n", tr, va);
  return 0;
}

int cmd_profile(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const fs::path out = prepare_out(cfg);
  const ProfileReport r = profile(cfg.model);
  write_profile_csv(r, out / "profile.csv");
  std::fputs(profile_table(r).c_str(), stdout);
  std::printf("params=%lld flops=%lld\n", static_cast<long long>(r.total_params()),
              static_cast<long long>(r.total_flops()));
  return 0;
}

int cmd_gradcheck(const Common& c, int samples, int batch) {
  const ExperimentConfig cfg = resolve(c);
  const fs::path out = prepare_out(cfg);
  constexpr double kTol = 1e-5;
  verify::SuiteReport rep = verify::gradient_suite(cfg.run.seed, kTol);
  const auto t0 = std::chrono::steady_clock::now();
  rep.checks.push_back(verify::backbone_gradcheck(cfg.model, cfg.run.seed, batch, samples, kTol));
  rep.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_suite_csv(rep.checks, out / "gradcheck.csv");
  for (const auto& ch : rep.checks) {
    if (!ch.passed) std::printf("failed %s error=%.3g\n", ch.name.c_str(), ch.error);
  }
  std::printf("backbone: %s\n", rep.checks.back().detail.c_str());
  std::printf("checks=%zu failures=%zu max_rel_error=%.3g seconds=%.1f\n", rep.checks.size(), rep.failures(),
              rep.max_error(), rep.seconds);
  if (!rep.passed()) throw std::runtime_error("gradient check failed");
  return 0;
}

int cmd_prune(const Common& c, const std::string& ckpt_arg, std::optional<double> tolerance) {
  ExperimentConfig cfg = resolve(c);
  if (tolerance) cfg.prune.tolerance = *tolerance;
  const Checkpoint ckpt = read_checkpoint(checkpoint_path(ckpt_arg, cfg));
  const fs::path out = prepare_out(cfg);
  auto model_ptr = load_model(ckpt);
  Model<float>& model = *model_ptr;
  const auto [train, val] = load_datasets(cfg.data, cfg.run.seed);
  const PruneReport r = l1_prune(model, val, cfg.train.augment, cfg.train.batch_size, cfg.prune.tolerance);
  write_prune_csv(r, out / "prune.csv");
  write_checkpoint(capture(model, ckpt.config_text), out / "checkpoint_pruned.bin");
  for (const auto& l : r.layers) {
    std::printf("%-28s b=%-3d mean_survivors=%.2f\n", l.layer.c_str(), l.num_bases, l.mean_survivors());
  }
  std::printf("tolerance=%g accuracy_before=%.4f accuracy_after=%.4f removed=%d survivors=%d\n", r.tolerance,
              r.accuracy_before, r.accuracy_after, r.removed, r.total_survivors());
  return 0;
}

int cmd_spectra(const Common& c, const std::string& ckpt_arg, int grid) {
  const Checkpoint ckpt = [&] {
    // The checkpoint supplies the config when none is given.
    return read_checkpoint(checkpoint_path(ckpt_arg, resolve(c)));
  }();
  const ExperimentConfig cfg = resolve(c, ckpt.config_text);
  const fs::path out = prepare_out(cfg);
  auto model_ptr = load_model(ckpt);
  Model<float>& model = *model_ptr;
  const auto items = export_spectra(model, out / "spectra", grid);
  std::size_t degenerate = 0;
  for (const auto& s : items) degenerate += s.degenerate;
  std::printf("kernels=%zu degenerate=%zu out=%s\n", items.size(), degenerate, (out / "spectra").string().c_str());
  return 0;
}

int cmd_oracle(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const fs::path out = prepare_out(cfg);
  verify::SuiteReport rep = verify::oracle_suite(cfg.run.seed);
  const verify::SuiteReport spec = verify::spectral_suite(cfg.run.seed);
  rep.checks.insert(rep.checks.end(), spec.checks.begin(), spec.checks.end());
  rep.seconds += spec.seconds;
  write_suite_csv(rep.checks, out / "oracle.csv");
  for (const auto& ch : rep.checks) {
    if (!ch.passed) std::printf("failed %s error=%.3g\n", ch.name.c_str(), ch.error);
  }
  std::printf("checks=%zu failures=%zu max_abs_error=%.3g seconds=%.1f\n", rep.checks.size(), rep.failures(),
              rep.max_error(), rep.seconds);
  if (!rep.passed()) throw std::runtime_error("oracle suite failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decomposed-attention CNN experiments"};
  app.require_subcommand(1);

  Common common;
  std::string checkpoint;
  std::optional<double> tolerance;
  int samples = 8, batch = 4, grid = 64;

  auto* train = app.add_subcommand("train", "train a model; writes metrics.csv and checkpoints");
  auto* eval = app.add_subcommand("eval", "top-1 of a checkpoint on the configured data");
  auto* prof = app.add_subcommand("profile", "parameter and FLOP counts per layer");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every layer and the model");
  auto* prune = app.add_subcommand("prune", "greedy L1 pruning of base kernels");
  auto* spectra = app.add_subcommand("spectra", "frequency responses of learned kernels");
  auto* oracle = app.add_subcommand("oracle", "reference-implementation and spectral checks");
  for (auto* cmd : {train, eval, prof, grad, prune, spectra, oracle}) add_common(cmd, common);
  for (auto* cmd : {eval, prune, spectra}) {
    cmd->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/checkpoint.bin)");
  }
  prune->add_option("--tolerance", tolerance, "allowed top-1 drop as a fraction (overrides prune.tolerance)");
  spectra->add_option("--grid", grid, "DFT grid size")->check(CLI::PositiveNumber);
  grad->add_option("--samples", samples, "coordinates per tensor in the model check (0 = all)")
      ->check(CLI::NonNegativeNumber);
  grad->add_option("--batch", batch, "batch size of the model check")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::printf("error kind=usage message=\"%s\"\n", one_line(e.what()).c_str());
    return 2;
  }

  try {
    configure_threads_from_env();
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, checkpoint);
    if (*prof) return cmd_profile(common);
    if (*grad) return cmd_gradcheck(common, samples, batch);
    if (*prune) return cmd_prune(common, checkpoint, tolerance);
    if (*spectra) return cmd_spectra(common, checkpoint, grid);
    if (*oracle) return cmd_oracle(common);
  } catch (const ConfigParseError& e) {
    std::printf("error kind=config key=%s line=%d message=\"%s\"\n", e.key().c_str(), e.line(),
                one_line(e.what()).c_str());
    return 2;
  } catch (const ConfigError& e) {
    std::printf("error kind=config message=\"%s\"\n", one_line(e.what()).c_str());
    return 2;
  } catch (const CheckpointVersionError& e) {
    std::printf("error kind=checkpoint-version message=\"%s\"\n", one_line(e.what()).c_str());
    return 3;
  } catch (const IoError& e) {
    std::printf("error kind=io message=\"%s\"\n", one_line(e.what()).c_str());
    return 1;
  } catch (const std::exception& e) {
    std::printf("error kind=runtime message=\"%s\"\n", one_line(e.what()).c_str());
    return 1;
  }
  return 1;
}
