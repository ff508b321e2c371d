#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cada/backbone.hpp"
#include "cada/downsample.hpp"
#include "cada/profile.hpp"
#include "cada/train.hpp"

namespace cada {

// ---------------------------------------------------------------------------
// Profile

/// Header: layer,params,flops; a final `total` row carries the sums.
void write_profile_csv(const ProfileReport& r, const std::filesystem::path& path);
std::string profile_table(const ProfileReport& r);
ProfileReport profile(const BackboneConfig& cfg);

// ---------------------------------------------------------------------------
// Pruning

struct PruneLayer {
  std::string layer;
  int num_bases = 0;
  std::vector<int> survivors;  // per head

  double mean_survivors() const;
};

struct PruneReport {
  double tolerance = 0.0;
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  int removed = 0;
  std::vector<PruneLayer> layers;

  int total_survivors() const;
};

/// Removes base kernels one at a time in ascending global L1 order,
/// re-evaluating top-1 after each removal, and stops before the first
/// removal that would drop accuracy by more than `tolerance`. Removal
/// zeroes the kernel, which cancels its coefficient's contribution.
template <typename T>
PruneReport l1_prune(Model<T>& model, const Dataset& val, const AugmentConfig& aug,
                     int batch_size, double tolerance);

/// Header: layer,head,survivors,b; summary rows are prefixed with `#`.
void write_prune_csv(const PruneReport& r, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Kernel correlation

struct Correlation {
  double value = 0.0;
  bool degenerate = false;  // a zero-variance operand; value is 0
};

Correlation pearson(std::span<const double> a, std::span<const double> b);

struct HeadCorrelation {
  int b = 0;
  std::vector<Correlation> pairwise;  // b x b, row-major
  std::vector<Correlation> with_pos;  // b

  const Correlation& at(int i, int j) const { return pairwise[static_cast<std::size_t>(i) * b + j]; }
};

template <typename T>
std::vector<HeadCorrelation> kernel_correlation(const BaseKernelBank<T>& bank);

// ---------------------------------------------------------------------------
// Spectra

struct SpectrumExport {
  std::string kernel;
  std::filesystem::path csv;
  std::filesystem::path pgm;
  bool degenerate = false;
};

void write_spectrum_csv(const Spectrum& s, const std::filesystem::path& path);
Spectrum read_spectrum_csv(const std::filesystem::path& path);
/// 8-bit binary PGM, magnitude 1 maps to 255.
void write_spectrum_pgm(const Spectrum& s, const std::filesystem::path& path);

/// One CSV and PGM per depthwise kernel and per attention-bank kernel,
/// plus an index file spectra.csv. Throws if the model has none.
template <typename T>
std::vector<SpectrumExport> export_spectra(Model<T>& model, const std::filesystem::path& out_dir,
                                           int grid);

}  // namespace cada
