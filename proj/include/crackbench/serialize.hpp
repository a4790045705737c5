#pragma once

// Parameter snapshot files.
//
// JSON object:
//   {
//     "format": "crackbench.snapshot", "version": 1,
//     "iteration": <int>, "val_aiu": <number|null>,
//     "config": { "stage_channels": [5], "convs_per_stage": [5], "merge_channels": [4],
//                 "input_channels": 1|3, "preset": "tiny"|"paper", "pyramid": bool, "init_std": <number>,
//                 "he_backbone": bool, "input_mean": <number> },
//     "params": [ { "name": str, "shape": [n,c,h,w], "learnable": bool, "data": [float, ...] }, ... ]
//   }
// "params" lists every parameter in ModelParams::all() order. Floats are written
// with shortest round-trip formatting, so reloading is exact.

#include "crackbench/model.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace crackbench {

struct Snapshot {
  int iteration = 0;
  ModelParams<float> params;
  std::optional<double> val_aiu;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

std::string snapshot_to_json(const Snapshot& snapshot);
Snapshot snapshot_from_json(const std::string& text);

void save_snapshot(const std::filesystem::path& path, const Snapshot& snapshot);
Snapshot load_snapshot(const std::filesystem::path& path);

}  // namespace crackbench
