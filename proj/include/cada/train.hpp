#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cada/backbone.hpp"

namespace cada {

struct AugmentConfig {
  int crop_pad = 4;  // zero-pad then random crop back; 0 disables
  bool hflip = true;
  bool normalize = true;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.25, 0.25, 0.25};
};

struct TrainConfig {
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool decay_norm_and_pos = true;  // weight decay on BN affine and position biases
  int epochs = 5;
  int batch_size = 32;
  AugmentConfig augment;

  void validate() const;
};

enum class DatasetKind { kSynthetic, kCifarBinary };

const char* to_string(DatasetKind k);

struct DatasetConfig {
  DatasetKind kind = DatasetKind::kSynthetic;
  std::string train_path;
  std::string val_path;
  int classes = 4;
  int train_samples = 256;
  int val_samples = 128;
  int image_hw = 32;
  double noise = 0.3;

  void validate() const;
};

/// RGB images in [0, 1], stored (N, 3, hw, hw).
struct Dataset {
  int hw = 0;
  int classes = 0;
  std::vector<float> images;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  const float* image(int i) const { return images.data() + static_cast<std::size_t>(i) * 3 * hw * hw; }
};

/// Records of 1 label byte + 3072 pixel bytes (channel-major 32x32).
Dataset load_cifar_binary(const std::filesystem::path& path, int classes);

/// Per-class smooth templates plus Gaussian noise; `split` decorrelates the
/// train and validation draws under one seed.
Dataset make_synthetic(const DatasetConfig& cfg, std::uint64_t seed, int split);

/// Loads or generates the train (split 0) and validation (split 1) sets.
std::pair<Dataset, Dataset> load_datasets(const DatasetConfig& cfg, std::uint64_t seed);

/// Assembles a batch. `rng` drives crop and flip; nullptr disables them.
template <typename T>
Tensor<T> make_batch(const Dataset& d, std::span<const int> indices, const AugmentConfig& aug,
                     Rng* rng);

/// base * (1 + cos(pi * step / total)) / 2.
double cosine_lr(long step, long total_steps, double base_lr);

/// v = momentum*v + g + wd*p;  p -= lr*v.
template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr,
                double momentum, double weight_decay);

/// Momentum SGD over a module's trainable parameters, in visit order.
template <typename T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay, bool decay_norm_and_pos)
      : momentum_(momentum), wd_(weight_decay), decay_norm_pos_(decay_norm_and_pos) {}

  void step(Module<T>& m, double lr);

 private:
  double momentum_, wd_;
  bool decay_norm_pos_;
  std::vector<std::vector<T>> velocity_;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
  double lr = 0.0;  // rate used by the epoch's final step
};

struct TrainHistory {
  double initial_loss = 0.0;
  std::vector<EpochMetrics> epochs;
};

/// Mean loss over the set in train-mode normalization without touching
/// running statistics, no augmentation.
double dataset_loss(Model<float>& model, const Dataset& d, const TrainConfig& cfg);

/// Top-1 accuracy in eval mode, no augmentation beyond normalization.
template <typename T>
double evaluate(Model<T>& model, const Dataset& d, const AugmentConfig& aug, int batch_size);

/// Writes metrics.csv and per-epoch checkpoints (including epoch 0) under
/// out_dir. `config_text` is embedded in each checkpoint.
TrainHistory train_loop(Model<float>& model, const Dataset& train, const Dataset& val,
                        const TrainConfig& cfg, std::uint64_t seed,
                        const std::filesystem::path& out_dir, const std::string& config_text);

}  // namespace cada
