#pragma once

#include "korol/featnet.hpp"
#include "korol/image.hpp"
#include "korol/koopman.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace korol {

enum class TaskId : std::uint32_t {
  kPointReach = 0,
  kHandleSlide = 1,
};

std::string_view task_name(TaskId id);
TaskId parse_task(std::string_view name);

// Desk-scale manipulation task on the unit workspace [0, 1]^2.
//
// point_reach: robot = planar tip (x, y); object = goal position. The tip
//   follows the cubic attractor
//     x' = x + a (g - x) + b ((g - c)^3 - (x - c)^3)
//   which is exactly linear in the polynomial observables.
// handle_slide: robot = (x, y, aperture); object = handle position on the
//   vertical track x = 0.7. The aperture closes on a logistic clock, the tip
//   approaches the handle, grasps it, and slides it down by `slide`.
struct TaskSpec {
  TaskId id = TaskId::kPointReach;
  int robot_dim = 2;
  int object_dim = 2;
  int horizon = 60;  // T
  int image_side = 32;
  int channels = 2;  // object channel, robot channel

  double start_x = 0.1;
  double start_y = 0.1;
  double goal_lo = 0.2;  // point_reach goal range on both axes
  double goal_hi = 0.8;
  double track_x = 0.7;  // handle_slide
  double handle_lo = 0.3;
  double handle_hi = 0.7;

  double attraction = 0.2;       // a
  double cubic_gain = 0.6;       // b
  double cubic_center = 0.5;     // c
  double close_rate = 0.4;       // logistic rate of the aperture clock
  double initial_closure = 5e-4; // 1 - aperture at t = 1
  double slide = 0.2;
  double grasp_radius = 0.05;

  double disk_radius_px = 3.0;
  // point_reach: final tip-goal distance below this; handle_slide: handle
  // displacement at least this.
  double success_threshold = 0.05;
};

TaskSpec make_task(TaskId id);

struct EnvState {
  Vec robot;
  Vec object;  // ground-truth object state
};

// A demonstration. GT object states are kept for oracle baselines only; the
// learned-feature pipeline consumes `training_view()`.
struct Demonstration {
  RowMat robot;                    // T x n
  std::vector<ImageStack> frames;  // T spatial stacks
};

struct Trajectory {
  TaskId task = TaskId::kPointReach;
  std::uint64_t seed = 0;
  RowMat robot;   // T x n
  RowMat object;  // T x m_gt
  std::vector<ImageStack> frames;

  int length() const noexcept { return static_cast<int>(robot.rows()); }
  Demonstration training_view() const { return {robot, frames}; }
};

// Anti-aliased disks: object in channel 0, robot tip in channel 1. The tip
// intensity encodes the aperture for handle_slide.
ImageStack render(const TaskSpec& task, const EnvState& state);

// Deterministic scripted demonstration.
Trajectory gen_demo(const TaskSpec& task, std::uint64_t seed);

// Seed of the i-th demonstration of a `gen-demos` run.
std::uint64_t demo_seed(std::uint64_t base_seed, std::uint64_t index);

// Object placement used by gen_demo and evaluation episodes.
Vec sample_placement(const TaskSpec& task, std::uint64_t seed, bool evaluation);

// Executes reference robot states on the position-controlled environment.
class Environment {
 public:
  Environment(TaskSpec task, Vec placement);

  const EnvState& state() const noexcept { return state_; }
  // Moves the robot to `reference` (first robot_dim entries are used).
  void execute(const Eigen::Ref<const Vec>& reference);
  bool success() const;
  double handle_displacement() const;

 private:
  TaskSpec task_;
  Vec placement_;
  EnvState state_;
  bool grasped_ = false;
};

// Ground-truth-state Koopman fit (the oracle baseline), robot states padded
// with zeros to `robot_dim` when larger than the task's.
KoopmanModel fit_oracle(std::span<const Trajectory> dataset, double ridge = kDefaultRidge, int robot_dim = 0);

struct EvalOptions {
  int episodes = 200;
  std::uint64_t seed = 0;
  bool use_frequency = false;
  // Re-predict the feature from a fresh image every step instead of one
  // open-loop rollout.
  bool closed_loop = false;
  Propagation propagation = Propagation::kLifted;
};

struct EvalResult {
  double success_rate = 0.0;
  int successes = 0;
  int episodes = 0;
  int diverged = 0;
};

EvalResult evaluate(const TaskSpec& task, const FeatNetParams& params, const KoopmanModel& model,
                    const EvalOptions& opts);

// Same protocol with the GT object state standing in for the learned feature.
EvalResult evaluate_oracle(const TaskSpec& task, const KoopmanModel& model, const EvalOptions& opts);

}  // namespace korol
