#pragma once

#include "korol/envs.hpp"
#include "korol/model_io.hpp"
#include "korol/trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace korol::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitDivergence = 4,
};

// JSON object whose keys mirror TrainConfig. Unknown keys and wrong types
// raise ConfigError. "refresh_period" accepts an integer, null or "inf".
TrainConfig parse_config(std::string_view json_text);
TrainConfig load_config(const fs::path& path);
std::string config_to_json(const TrainConfig& config);

// Exclusive "<path>.lock" held for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& target);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path lock_;
};

void write_metrics_csv(const fs::path& path, const TrainMetrics& metrics);
// Binary (P5) 8-bit PGM; values are clamped to [0, 1] and scaled to 0..255.
void write_pgm(const fs::path& path, const RowMat& image);

// Writes demo_000000.kdt ... into out_dir.
std::vector<fs::path> cmd_gen_demos(TaskId task, int count, std::uint64_t seed, const fs::path& out_dir);

struct TrainArgs {
  fs::path config;  // empty: defaults
  std::vector<fs::path> data;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<bool> use_frequency;
  bool oracle_features = false;
};

// Trains (or fits the GT-state baseline with oracle_features) and writes
// the model plus "<out>.metrics.csv".
ModelFile cmd_train(const TrainArgs& args);

struct EvalArgs {
  fs::path model;
  std::optional<TaskId> task;
  int episodes = 200;
  std::uint64_t seed = 0;
  bool closed_loop = false;
  fs::path csv;  // appended when non-empty
};

EvalResult cmd_eval(const EvalArgs& args);

// One heatmap per frame of the trajectory: frame_000.pgm, ...
std::vector<fs::path> cmd_viz(const fs::path& model, const fs::path& trajectory, const fs::path& out_dir);

struct TaskEval {
  TaskId task;
  EvalResult result;
};

// Pooled training over one data directory per task, then per-task
// evaluation on `episodes` unseen placements.
std::vector<TaskEval> cmd_multitask(const TrainArgs& args, int episodes, std::uint64_t eval_seed);

// Parses argv, dispatches, and maps errors onto exit codes.
int run(int argc, char** argv);

}  // namespace korol::cli
