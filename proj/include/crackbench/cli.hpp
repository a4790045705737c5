#pragma once

// Batch front end: crackbench train|predict|eval|curves|synth --config <file>.
//
// Config file (JSON; every section optional, unknown keys rejected):
//   {
//     "seed": 0,
//     "run_dir": "name",            // relative to $CRACKBENCH_RUN_ROOT (default ./runs)
//     "model":   { "preset": "tiny"|"paper", "pyramid": bool, "stage_channels": [..], ... },
//     "train":   { "preset": "tiny"|"paper", "batch_size": .., "lr": .., "total_iters": ..,
//                  "boosting": bool, "detach_weights": bool, "normalize_weights": bool, ... },
//     "metrics": { "tolerance": 0.0075, "tolerance_mode": "diag"|"abs" },
//     "manifest": "path",           // train / predict
//     "predict": { "snapshot": "path", "split": "test", "inputs": ["img.png", ..],
//                  "sides": bool, "float_sidecar": bool },
//     "datasets": [ { "name": .., "manifest": .., "split": "test", "predictions": "dir",
//                     "format": "png"|"pfm" } ],     // eval / curves
//     "synth":   { "size": 64, "train": 8, "val": 2, "test": 2, "width": 3, ... }
//   }
// Relative input paths resolve against the config file's directory.

#include "crackbench/data_io.hpp"
#include "crackbench/loss.hpp"
#include "crackbench/metrics.hpp"
#include "crackbench/model.hpp"
#include "crackbench/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace crackbench::cli {

namespace fs = std::filesystem;

/// Bad or incomplete configuration; reported with exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  std::string name;
  fs::path manifest;
  Split split = Split::test;
  fs::path predictions;
  std::string format = "png";
};

struct SynthSpec {
  int size = 64;
  int n_train = 8, n_val = 2, n_test = 2;
  SynthParams params;
};

struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  fs::path run_dir;
  std::string model_preset = "tiny";
  ModelConfig model;
  std::string train_preset = "tiny";
  TrainConfig train = TrainConfig::tiny();
  LossOptions loss;
  metrics::Tolerance tolerance;
  fs::path manifest;
  fs::path snapshot;
  Split predict_split = Split::test;
  std::vector<fs::path> inputs;
  bool sides = false;
  bool float_sidecar = false;
  std::vector<DatasetSpec> datasets;
  SynthSpec synth;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  bool sides = false;
  std::optional<std::string> tolerance_mode;
};

/// Parses config text; `base_dir` anchors relative paths, `run_root` relative run dirs.
RunConfig resolve_config(const std::string& command, const std::string& config_text, const fs::path& base_dir,
                         const fs::path& run_root, const Overrides& overrides = {});

/// Run-directory root from CRACKBENCH_RUN_ROOT, falling back to ./runs.
fs::path run_root_from_env();

/// Fully resolved config as JSON; written to <run_dir>/resolved_config.json.
std::string resolved_json(const RunConfig& config);

void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_predict(const RunConfig& config, std::ostream& log);
void cmd_eval(const RunConfig& config, std::ostream& log, bool curves_only = false);
void cmd_synth(const RunConfig& config, std::ostream& log);

/// Entry point used by the executable. Exit codes: 0 ok, 1 runtime failure,
/// 2 bad config or usage, 3 training diverged.
int run(int argc, char** argv);

}  // namespace crackbench::cli
