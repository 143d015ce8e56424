#include "korol/envs.hpp"

#include "korol/dct.hpp"
#include "korol/errors.hpp"
#include "korol/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace korol {
namespace {

constexpr std::uint64_t kDemoStream = 0x64656d6fULL;  // "demo"
constexpr std::uint64_t kEvalStream = 0x6576616cULL;  // "eval"

void draw_disk(ImageStack& img, int channel, double cx, double cy, double radius_px, double intensity) {
  const int side = img.height;
  for (int y = 0; y < side; ++y) {
    const double py = (y + 0.5) / side;
    for (int x = 0; x < img.width; ++x) {
      const double px = (x + 0.5) / img.width;
      const double d = std::hypot(px - cx, py - cy) * side;
      const double cover = std::clamp(radius_px + 0.5 - d, 0.0, 1.0);
      double& v = img.at(channel, y, x);
      v = std::max(v, intensity * cover);
    }
  }
}

Vec pad_robot(const Eigen::Ref<const Vec>& robot, int dim) {
  Vec out = Vec::Zero(std::max<Eigen::Index>(dim, robot.size()));
  out.head(robot.size()) = robot;
  return out;
}

Vec initial_robot(const TaskSpec& task) {
  Vec r(task.robot_dim);
  r[0] = task.start_x;
  r[1] = task.start_y;
  if (task.id == TaskId::kHandleSlide) r[2] = 1.0 - task.initial_closure;
  return r;
}

// One step of the scripted expert.
Vec expert_step(const TaskSpec& task, const Vec& placement, const Vec& robot) {
  Vec next = robot;
  if (task.id == TaskId::kPointReach) {
    const double c = task.cubic_center;
    for (int i = 0; i < 2; ++i) {
      const double g = placement[i];
      const double x = robot[i];
      next[i] = x + task.attraction * (g - x) + task.cubic_gain * (std::pow(g - c, 3) - std::pow(x - c, 3));
    }
  } else {
    const double closure = 1.0 - robot[2];
    const double target_y = placement[0] - task.slide * closure * closure * closure;
    next[0] = robot[0] + task.attraction * (task.track_x - robot[0]);
    next[1] = robot[1] + task.attraction * (target_y - robot[1]);
    next[2] = robot[2] - task.close_rate * closure * robot[2];
  }
  return next;
}

void check_model(const TaskSpec& task, const KoopmanModel& model) {
  if (model.spec.n() < task.robot_dim)
    throw DimensionError("evaluate: model robot dimension is smaller than the task's");
}

template <class FeatureFn>
EvalResult run_episodes(const TaskSpec& task, const KoopmanModel& model, const EvalOptions& opts, FeatureFn&& feature) {
  if (opts.episodes < 1) throw ConfigError("evaluate: episodes must be >= 1");
  check_model(task, model);
  const int n = model.spec.n();
  EvalResult res;
  res.episodes = opts.episodes;
  for (int e = 0; e < opts.episodes; ++e) {
    Environment env(task, sample_placement(task, derive_seed(opts.seed, static_cast<std::uint64_t>(e)), true));
    bool failed = false;
    if (!opts.closed_loop) {
      State x0{pad_robot(env.state().robot, n), feature(env.state())};
      const Rollout ro = rollout(model, x0, task.horizon - 1, opts.propagation);
      if (ro.diverged) {
        failed = true;
        ++res.diverged;
      } else {
        for (const auto& s : ro.states) env.execute(s.robot);
      }
    } else {
      for (int t = 1; t < task.horizon && !failed; ++t) {
        const State next = step(model, {pad_robot(env.state().robot, n), feature(env.state())});
        if (!next.robot.allFinite() || next.robot.cwiseAbs().maxCoeff() > kDivergenceBound) {
          failed = true;
          ++res.diverged;
          break;
        }
        env.execute(next.robot);
      }
    }
    if (!failed && env.success()) ++res.successes;
  }
  res.success_rate = static_cast<double>(res.successes) / res.episodes;
  return res;
}

}  // namespace

std::string_view task_name(TaskId id) {
  switch (id) {
    case TaskId::kPointReach:
      return "point_reach";
    case TaskId::kHandleSlide:
      return "handle_slide";
  }
  throw ConfigError("unknown task id");
}

TaskId parse_task(std::string_view name) {
  if (name == "point_reach") return TaskId::kPointReach;
  if (name == "handle_slide") return TaskId::kHandleSlide;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected point_reach or handle_slide)");
}

TaskSpec make_task(TaskId id) {
  TaskSpec t;
  t.id = id;
  if (id == TaskId::kHandleSlide) {
    t.robot_dim = 3;
    t.object_dim = 2;
    t.success_threshold = 0.15;
  } else if (id != TaskId::kPointReach) {
    throw ConfigError("unknown task id");
  }
  return t;
}

ImageStack render(const TaskSpec& task, const EnvState& state) {
  ImageStack img(task.channels, task.image_side, task.image_side);
  draw_disk(img, 0, state.object[0], state.object[1], task.disk_radius_px, 1.0);
  double tip = 1.0;
  if (task.id == TaskId::kHandleSlide) tip = 0.5 + 0.5 * std::clamp(state.robot[2], 0.0, 1.0);
  draw_disk(img, 1, state.robot[0], state.robot[1], task.disk_radius_px, tip);
  return img;
}

std::uint64_t demo_seed(std::uint64_t base_seed, std::uint64_t index) { return derive_seed(base_seed, index); }

Vec sample_placement(const TaskSpec& task, std::uint64_t seed, bool evaluation) {
  Pcg32 rng(seed, evaluation ? kEvalStream : kDemoStream);
  if (task.id == TaskId::kPointReach) {
    Vec g(2);
    g[0] = rng.uniform(task.goal_lo, task.goal_hi);
    g[1] = rng.uniform(task.goal_lo, task.goal_hi);
    return g;
  }
  Vec h(1);
  h[0] = rng.uniform(task.handle_lo, task.handle_hi);
  return h;
}

Environment::Environment(TaskSpec task, Vec placement) : task_(std::move(task)), placement_(std::move(placement)) {
  state_.robot = initial_robot(task_);
  state_.object.resize(task_.object_dim);
  if (task_.id == TaskId::kPointReach) {
    state_.object = placement_;
  } else {
    state_.object << task_.track_x, placement_[0];
  }
}

void Environment::execute(const Eigen::Ref<const Vec>& reference) {
  if (reference.size() < task_.robot_dim) throw DimensionError("execute: reference robot state too short");
  state_.robot = reference.head(task_.robot_dim);
  if (task_.id != TaskId::kHandleSlide) return;
  const double aperture = state_.robot[2];
  if (aperture >= 0.5) {
    grasped_ = false;
  } else if (!grasped_) {
    const double d = std::hypot(state_.robot[0] - state_.object[0], state_.robot[1] - state_.object[1]);
    grasped_ = d < task_.grasp_radius;
  }
  if (grasped_) state_.object[1] = std::clamp(state_.robot[1], 0.0, 1.0);
}

double Environment::handle_displacement() const {
  if (task_.id != TaskId::kHandleSlide) return 0.0;
  return placement_[0] - state_.object[1];
}

bool Environment::success() const {
  if (task_.id == TaskId::kPointReach) {
    return (state_.robot - state_.object).norm() < task_.success_threshold;
  }
  return handle_displacement() >= task_.success_threshold;
}

Trajectory gen_demo(const TaskSpec& task, std::uint64_t seed) {
  if (task.horizon < 2) throw ConfigError("gen_demo: horizon must be >= 2");
  const Vec placement = sample_placement(task, seed, false);
  Environment env(task, placement);
  Trajectory tr;
  tr.task = task.id;
  tr.seed = seed;
  tr.robot.resize(task.horizon, task.robot_dim);
  tr.object.resize(task.horizon, task.object_dim);
  tr.frames.reserve(static_cast<std::size_t>(task.horizon));
  for (int t = 0; t < task.horizon; ++t) {
    if (t > 0) env.execute(expert_step(task, placement, env.state().robot));
    tr.robot.row(t) = env.state().robot.transpose();
    tr.object.row(t) = env.state().object.transpose();
    tr.frames.push_back(render(task, env.state()));
  }
  return tr;
}

KoopmanModel fit_oracle(std::span<const Trajectory> dataset, double ridge, int robot_dim) {
  if (dataset.empty()) throw DataError("fit_oracle: empty dataset");
  const int n = std::max<int>(robot_dim, static_cast<int>(dataset.front().robot.cols()));
  const int m = static_cast<int>(dataset.front().object.cols());
  StatePairAccumulator acc(lift_dim(n, m));
  for (const auto& tr : dataset) {
    if (tr.object.cols() != m) throw DimensionError("fit_oracle: inconsistent object dimensions");
    StateSequence seq;
    for (int t = 0; t < tr.length(); ++t)
      seq.push_back({pad_robot(tr.robot.row(t).transpose(), n), tr.object.row(t).transpose()});
    acc.accumulate(seq);
  }
  return fit(acc, ridge);
}

EvalResult evaluate(const TaskSpec& task, const FeatNetParams& params, const KoopmanModel& model,
                    const EvalOptions& opts) {
  if (params.arch.feature_dim != model.spec.m())
    throw DimensionError("evaluate: feature dimension does not match the Koopman model");
  return run_episodes(task, model, opts, [&](const EnvState& s) {
    return predict(params, make_input_stack(render(task, s), opts.use_frequency));
  });
}

EvalResult evaluate_oracle(const TaskSpec& task, const KoopmanModel& model, const EvalOptions& opts) {
  if (model.spec.m() != task.object_dim)
    throw DimensionError("evaluate_oracle: model object dimension does not match the task");
  return run_episodes(task, model, opts, [](const EnvState& s) { return s.object; });
}

}  // namespace korol
