#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cada/backbone.hpp"

namespace cada {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): "CADA", u32 version, u32 length + config text,
/// u32 blob count, then per blob: u32 name length, name, 4 x u32 shape,
/// f32 data. Blobs follow parameter visit order, running stats included.
struct Checkpoint {
  struct Blob {
    std::string name;
    Shape shape;
    std::vector<float> data;
  };
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<Blob> blobs;
};

template <typename T>
Checkpoint capture(Model<T>& model, const std::string& config_text);

/// Copies blobs into the model; names and shapes must match exactly.
template <typename T>
void restore(Model<T>& model, const Checkpoint& ckpt);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws CheckpointVersionError on a version mismatch, IoError otherwise.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace cada
