#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cada/backbone.hpp"
#include "cada/train.hpp"

namespace cada {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
};

struct PruneConfig {
  double tolerance = 0.001;  // allowed top-1 drop, as a fraction
};

/// Everything a subcommand needs. Text form is flat `section.key = value`
/// lines; `#` starts a comment. Per-stage keys take one value for every
/// stage or a comma list with one value per stage.
struct ExperimentConfig {
  BackboneConfig model = BackboneConfig::resnet50();
  TrainConfig train;
  DatasetConfig data;
  RunConfig run;
  PruneConfig prune;
};

/// Parses text; throws ConfigParseError carrying the key and 1-based line.
/// Unknown keys are errors. The model section is validated after parsing.
ExperimentConfig parse_config(const std::string& text);

ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies `key=value` overrides (reported as line 0 on error).
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides);

/// Every key in a fixed order; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& cfg);

/// All recognized keys, in canonical order.
const std::vector<std::string>& config_keys();

}  // namespace cada
