#include "cada/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "cada/checkpoint.hpp"

namespace cada {

const char* to_string(DatasetKind k) {
  return k == DatasetKind::kSynthetic ? "synthetic" : "cifar-binary";
}

void TrainConfig::validate() const {
  if (base_lr < 0) throw ConfigError("train.base_lr must be non-negative");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
  if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (augment.crop_pad < 0) throw ConfigError("train.crop_pad must be non-negative");
  for (double s : augment.std) {
    if (!(s > 0)) throw ConfigError("train.std entries must be positive");
  }
}

void DatasetConfig::validate() const {
  if (classes < 1) throw ConfigError("data.classes must be positive");
  if (kind == DatasetKind::kSynthetic) {
    if (train_samples < 1 || val_samples < 1) throw ConfigError("data sample counts must be positive");
    if (image_hw < 1) throw ConfigError("data.image_hw must be positive");
    if (noise < 0) throw ConfigError("data.noise must be non-negative");
  }
}

// ---------------------------------------------------------------------------
// Data

Dataset load_cifar_binary(const std::filesystem::path& path, int classes) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read dataset " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % (kPixels + 1) != 0) {
    throw IoError("dataset " + path.string() + " is not a whole number of 3073-byte records");
  }
  Dataset d;
  d.hw = 32;
  d.classes = classes;
  const std::size_t n = bytes.size() / (kPixels + 1);
  d.labels.resize(n);
  d.images.resize(n * kPixels);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * (kPixels + 1);
    if (rec[0] >= classes) {
      throw IoError("dataset " + path.string() + ": record " + std::to_string(i) + " has label " +
                    std::to_string(rec[0]) + " outside [0," + std::to_string(classes) + ")");
    }
    d.labels[i] = rec[0];
    for (std::size_t p = 0; p < kPixels; ++p) d.images[i * kPixels + p] = rec[1 + p] / 255.0f;
  }
  return d;
}

Dataset make_synthetic(const DatasetConfig& cfg, std::uint64_t seed, int split) {
  const int hw = cfg.image_hw;
  const std::size_t plane = static_cast<std::size_t>(hw) * hw;
  const std::size_t image = 3 * plane;

  // Templates depend only on the seed, so both splits share them.
  Rng trng(seed ^ 0x5eedc1a55ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> templates(static_cast<std::size_t>(cfg.classes) * image);
  for (int k = 0; k < cfg.classes; ++k) {
    for (int c = 0; c < 3; ++c) {
      double* t = templates.data() + k * image + c * plane;
      const double offset = 0.3 * (unit(trng) - 0.5);
      for (int wave = 0; wave < 3; ++wave) {
        const double fy = 1.0 + std::floor(3.0 * unit(trng));
        const double fx = 1.0 + std::floor(3.0 * unit(trng));
        const double ph = 2.0 * std::numbers::pi * unit(trng);
        const double amp = 0.1 + 0.1 * unit(trng);
        for (int y = 0; y < hw; ++y) {
          for (int x = 0; x < hw; ++x) {
            t[y * hw + x] += amp * std::sin(2.0 * std::numbers::pi * (fy * y + fx * x) / hw + ph);
          }
        }
      }
      for (std::size_t p = 0; p < plane; ++p) t[p] += 0.5 + offset;
    }
  }

  std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(split), 0xda7au};
  Rng rng(sseq);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  Dataset d;
  d.hw = hw;
  d.classes = cfg.classes;
  const int n = split == 0 ? cfg.train_samples : cfg.val_samples;
  d.labels.resize(n);
  d.images.resize(static_cast<std::size_t>(n) * image);
  for (int i = 0; i < n; ++i) {
    const int k = i % cfg.classes;
    d.labels[i] = k;
    const double* t = templates.data() + k * image;
    float* dst = d.images.data() + static_cast<std::size_t>(i) * image;
    for (std::size_t p = 0; p < image; ++p) dst[p] = static_cast<float>(t[p] + noise(rng));
  }
  return d;
}

std::pair<Dataset, Dataset> load_datasets(const DatasetConfig& cfg, std::uint64_t seed) {
  if (cfg.kind == DatasetKind::kSynthetic) {
    return {make_synthetic(cfg, seed, 0), make_synthetic(cfg, seed, 1)};
  }
  return {load_cifar_binary(cfg.train_path, cfg.classes),
          load_cifar_binary(cfg.val_path, cfg.classes)};
}

template <typename T>
Tensor<T> make_batch(const Dataset& d, std::span<const int> indices, const AugmentConfig& aug,
                     Rng* rng) {
  const int hw = d.hw;
  const int n = static_cast<int>(indices.size());
  Tensor<T> out(Shape{n, 3, hw, hw});
  const int pad = rng != nullptr ? aug.crop_pad : 0;
  for (int b = 0; b < n; ++b) {
    int dy = 0, dx = 0;
    bool flip = false;
    if (pad > 0) {
      std::uniform_int_distribution<int> off(-pad, pad);
      dy = off(*rng);
      dx = off(*rng);
    }
    if (rng != nullptr && aug.hflip) flip = std::uniform_int_distribution<int>(0, 1)(*rng) == 1;
    const float* src = d.image(indices[b]);
    for (int c = 0; c < 3; ++c) {
      const double m = aug.normalize ? aug.mean[c] : 0.0;
      const double s = aug.normalize ? aug.std[c] : 1.0;
      T* dst = out.plane(b, c);
      const float* sp = src + static_cast<std::size_t>(c) * hw * hw;
      for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
          const int sy = y + dy;
          const int sx0 = x + dx;
          const int sx = flip ? hw - 1 - sx0 : sx0;
          // Out-of-frame pixels are the zero padding, before normalization.
          const double v = (sy < 0 || sy >= hw || sx0 < 0 || sx0 >= hw) ? 0.0 : sp[sy * hw + sx];
          dst[y * hw + x] = static_cast<T>((v - m) / s);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

double cosine_lr(long step, long total_steps, double base_lr) {
  if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) throw ConfigError("cosine_lr: step outside [0, total_steps]");
  if (2 * step == total_steps) return base_lr / 2;
  if (step == total_steps) return 0.0;
  return base_lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                   static_cast<double>(total_steps))) /
         2.0;
}

template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr,
                double momentum, double weight_decay) {
  if (grad.size() != param.size() || velocity.size() != param.size()) {
    throw ConfigError("sgd_update: parameter, gradient and velocity lengths differ");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = static_cast<T>(momentum * velocity[i] + grad[i] + weight_decay * param[i]);
    param[i] = static_cast<T>(param[i] - lr * velocity[i]);
  }
}

template <typename T>
void Sgd<T>::step(Module<T>& m, double lr) {
  std::size_t slot = 0;
  m.visit_params([&](Parameter<T>& p) {
    if (!p.trainable()) return;
    if (slot == velocity_.size()) velocity_.emplace_back(p.value.size(), T(0));
    auto& v = velocity_[slot++];
    const bool exempt = !decay_norm_pos_ &&
                        (p.role == ParamRole::kNormAffine || p.role == ParamRole::kPosition);
    sgd_update<T>(p.value.data(), p.grad.data(), v, lr, momentum_, exempt ? 0.0 : wd_);
  });
}

// ---------------------------------------------------------------------------
// Loops

namespace {

std::vector<int> slice(const std::vector<int>& order, int begin, int end) {
  return std::vector<int>(order.begin() + begin, order.begin() + end);
}

std::vector<int> labels_of(const Dataset& d, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(d.labels[i]);
  return out;
}

void save(Model<float>& model, const std::filesystem::path& path, const std::string& config_text) {
  write_checkpoint(capture(model, config_text), path);
}

}  // namespace

double dataset_loss(Model<float>& model, const Dataset& d, const TrainConfig& cfg) {
  if (d.size() == 0) throw ConfigError("dataset_loss: empty dataset");
  std::vector<int> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  model.set_bn_update_stats(false);
  double sum = 0.0;
  for (int b = 0; b < d.size(); b += cfg.batch_size) {
    const auto idx = slice(order, b, std::min(d.size(), b + cfg.batch_size));
    const auto x = make_batch<float>(d, idx, cfg.augment, nullptr);
    const auto labels = labels_of(d, idx);
    sum += softmax_cross_entropy(model.forward(x, Mode::kTrain), labels).loss * idx.size();
  }
  model.set_bn_update_stats(true);
  return sum / d.size();
}

template <typename T>
double evaluate(Model<T>& model, const Dataset& d, const AugmentConfig& aug, int batch_size) {
  if (d.size() == 0) throw ConfigError("evaluate: empty dataset");
  std::vector<int> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  int correct = 0;
  for (int b = 0; b < d.size(); b += batch_size) {
    const auto idx = slice(order, b, std::min(d.size(), b + batch_size));
    const auto pred = argmax_classes(model.forward(make_batch<T>(d, idx, aug, nullptr), Mode::kEval));
    for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == d.labels[idx[i]];
  }
  return static_cast<double>(correct) / d.size();
}

TrainHistory train_loop(Model<float>& model, const Dataset& train, const Dataset& val,
                        const TrainConfig& cfg, std::uint64_t seed,
                        const std::filesystem::path& out_dir, const std::string& config_text) {
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw ConfigError("train_loop: empty dataset");
  std::filesystem::create_directories(out_dir);
  const auto csv_path = out_dir / "metrics.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "epoch,train_loss,val_top1,lr\n";
  csv.flush();
  save(model, out_dir / "checkpoint_epoch0.bin", config_text);
  save(model, out_dir / "checkpoint.bin", config_text);

  TrainHistory hist;
  hist.initial_loss = dataset_loss(model, train, cfg);
  const long steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const long total = steps_per_epoch * cfg.epochs;
  std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x7a1cu};
  Rng rng(sseq);
  Sgd<float> opt(cfg.momentum, cfg.weight_decay, cfg.decay_norm_and_pos);
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (int b = 0; b < train.size(); b += cfg.batch_size) {
      const auto idx = slice(order, b, std::min(train.size(), b + cfg.batch_size));
      const auto x = make_batch<float>(train, idx, cfg.augment, &rng);
      const auto labels = labels_of(train, idx);
      model.zero_grad();
      const auto res = softmax_cross_entropy(model.forward(x, Mode::kTrain), labels);
      model.backward(res.grad);
      lr = cosine_lr(step++, total, cfg.base_lr);
      opt.step(model.net(), lr);
      loss_sum += res.loss * idx.size();
    }
    EpochMetrics m{epoch, loss_sum / train.size(), evaluate(model, val, cfg.augment, cfg.batch_size), lr};
    hist.epochs.push_back(m);
    char row[128];
    std::snprintf(row, sizeof row, "%d,%.9g,%.6f,%.9g\n", m.epoch, m.train_loss, m.val_top1, m.lr);
    csv << row;
    csv.flush();
    if (!csv) throw IoError("failed writing " + csv_path.string());
    save(model, out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".bin"), config_text);
    save(model, out_dir / "checkpoint.bin", config_text);
  }
  return hist;
}

template Tensor<float> make_batch<float>(const Dataset&, std::span<const int>, const AugmentConfig&, Rng*);
template Tensor<double> make_batch<double>(const Dataset&, std::span<const int>, const AugmentConfig&, Rng*);
template void sgd_update<float>(std::span<float>, std::span<const float>, std::span<float>, double, double, double);
template void sgd_update<double>(std::span<double>, std::span<const double>, std::span<double>, double, double, double);
template class Sgd<float>;
template class Sgd<double>;
template double evaluate<float>(Model<float>&, const Dataset&, const AugmentConfig&, int);
template double evaluate<double>(Model<double>&, const Dataset&, const AugmentConfig&, int);

}  // namespace cada
