#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cada {

/// One profiled layer. FLOPs are multiply-accumulates at batch size 1.
struct ProfileRow {
  std::string name;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

struct ProfileReport {
  std::vector<ProfileRow> rows;

  void add(std::string name, std::int64_t params, std::int64_t flops) {
    rows.push_back({std::move(name), params, flops});
  }
  std::int64_t total_params() const {
    std::int64_t s = 0;
    for (const auto& r : rows) s += r.params;
    return s;
  }
  std::int64_t total_flops() const {
    std::int64_t s = 0;
    for (const auto& r : rows) s += r.flops;
    return s;
  }
};

}  // namespace cada
