#include "commands.hpp"

#include "korol/dct.hpp"
#include "korol/errors.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace korol::cli {
namespace {

using nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Propagation parse_propagation(const std::string& s) {
  if (s == "lifted") return Propagation::kLifted;
  if (s == "relift") return Propagation::kRelift;
  throw ConfigError("propagation must be \"lifted\" or \"relift\", got \"" + s + "\"");
}

Pooling parse_pooling(const std::string& s) {
  if (s == "flatten") return Pooling::kFlatten;
  if (s == "gap") return Pooling::kGlobalAverage;
  throw ConfigError("pooling must be \"flatten\" or \"gap\", got \"" + s + "\"");
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key \"" + key + "\" has the wrong type");
  }
}

std::vector<Trajectory> load_dir(const fs::path& dir) {
  auto trajs = read_trajectory_dir(dir);
  if (trajs.empty()) throw DataError("no .kdt files in " + dir.string());
  for (const auto& t : trajs)
    if (t.task != trajs.front().task) throw DataError(dir.string() + " mixes trajectories of several tasks");
  return trajs;
}

std::vector<Demonstration> training_views(const std::vector<Trajectory>& trajs) {
  std::vector<Demonstration> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) out.push_back(t.training_view());
  return out;
}

TrainConfig resolve_config(const TrainArgs& args) {
  TrainConfig config = args.config.empty() ? TrainConfig{} : load_config(args.config);
  if (args.seed) config.seed = *args.seed;
  if (args.use_frequency) config.use_frequency = *args.use_frequency;
  config.validate();
  return config;
}

EvalOptions eval_options(const ModelFile& file, int episodes, std::uint64_t seed, bool closed_loop) {
  EvalOptions opts;
  opts.episodes = episodes;
  opts.seed = seed;
  opts.closed_loop = closed_loop;
  opts.use_frequency = file.config.use_frequency;
  opts.propagation = file.config.propagation;
  return opts;
}

EvalResult evaluate_file(const ModelFile& file, TaskId task, const EvalOptions& opts) {
  const TaskSpec spec = make_task(task);
  if (file.source == FeatureSource::kOracle) return evaluate_oracle(spec, file.model, opts);
  return evaluate(spec, file.params, file.model, opts);
}

}  // namespace

TrainConfig parse_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, v] : doc.items()) {
    if (key == "horizon") c.horizon = get_as<int>(v, key);
    else if (key == "refresh_period") {
      if (v.is_null() || (v.is_string() && v.get<std::string>() == "inf")) c.refresh_period.reset();
      else c.refresh_period = get_as<int>(v, key);
    } else if (key == "max_epochs") c.max_epochs = get_as<int>(v, key);
    else if (key == "batch_size") c.batch_size = get_as<int>(v, key);
    else if (key == "windows_per_trajectory") c.windows_per_trajectory = get_as<int>(v, key);
    else if (key == "learning_rate") c.learning_rate = get_as<double>(v, key);
    else if (key == "beta1") c.beta1 = get_as<double>(v, key);
    else if (key == "beta2") c.beta2 = get_as<double>(v, key);
    else if (key == "adam_eps") c.adam_eps = get_as<double>(v, key);
    else if (key == "ridge") c.ridge = get_as<double>(v, key);
    else if (key == "oracle_ridge") c.oracle_ridge = get_as<double>(v, key);
    else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
    else if (key == "use_frequency") c.use_frequency = get_as<bool>(v, key);
    else if (key == "feature_dim") c.feature_dim = get_as<int>(v, key);
    else if (key == "validation_fraction") c.validation_fraction = get_as<double>(v, key);
    else if (key == "propagation") c.propagation = parse_propagation(get_as<std::string>(v, key));
    else if (key == "pooling") c.pooling = parse_pooling(get_as<std::string>(v, key));
    else if (key == "threads") c.threads = get_as<int>(v, key);
    else throw ConfigError("unknown config key \"" + key + "\"");
  }
  c.validate();
  return c;
}

TrainConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const TrainConfig& c) {
  json doc;
  doc["horizon"] = c.horizon;
  doc["refresh_period"] = c.refresh_period ? json(*c.refresh_period) : json(nullptr);
  doc["max_epochs"] = c.max_epochs;
  doc["batch_size"] = c.batch_size;
  doc["windows_per_trajectory"] = c.windows_per_trajectory;
  doc["learning_rate"] = c.learning_rate;
  doc["beta1"] = c.beta1;
  doc["beta2"] = c.beta2;
  doc["adam_eps"] = c.adam_eps;
  doc["ridge"] = c.ridge;
  doc["oracle_ridge"] = c.oracle_ridge;
  doc["seed"] = c.seed;
  doc["use_frequency"] = c.use_frequency;
  doc["feature_dim"] = c.feature_dim;
  doc["validation_fraction"] = c.validation_fraction;
  doc["propagation"] = c.propagation == Propagation::kLifted ? "lifted" : "relift";
  doc["pooling"] = c.pooling == Pooling::kFlatten ? "flatten" : "gap";
  doc["threads"] = c.threads;
  return doc.dump(2);
}

OutputLock::OutputLock(const fs::path& target) : lock_(target) {
  lock_ += ".lock";
  const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw DataError("output is locked or unwritable: " + lock_.string());
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(lock_, ec);
}

void write_metrics_csv(const fs::path& path, const TrainMetrics& metrics) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,refreshed,seconds\n";
  for (const auto& e : metrics.epochs)
    out << e.epoch << ',' << fmt_double(e.train_loss) << ',' << fmt_double(e.val_loss) << ','
        << (e.refreshed ? 1 : 0) << ',' << fmt_double(e.seconds) << '\n';
  const auto s = out.str();
  write_file(path, {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

void write_pgm(const fs::path& path, const RowMat& image) {
  std::string s = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  for (Eigen::Index y = 0; y < image.rows(); ++y)
    for (Eigen::Index x = 0; x < image.cols(); ++x) {
      const double v = std::isfinite(image(y, x)) ? std::clamp(image(y, x), 0.0, 1.0) : 0.0;
      s.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  write_file(path, {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

std::vector<fs::path> cmd_gen_demos(TaskId task, int count, std::uint64_t seed, const fs::path& out_dir) {
  if (count < 0) throw ConfigError("count must be >= 0");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw DataError("cannot create " + out_dir.string());
  OutputLock lock(out_dir);
  const TaskSpec spec = make_task(task);
  std::vector<fs::path> written;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "demo_%06d.kdt", i);
    const auto path = out_dir / name;
    write_trajectory(path, gen_demo(spec, demo_seed(seed, static_cast<std::uint64_t>(i))));
    written.push_back(path);
  }
  return written;
}

ModelFile cmd_train(const TrainArgs& args) {
  if (args.data.size() != 1) throw ConfigError("train takes exactly one data directory");
  if (args.out.empty()) throw ConfigError("train needs an output path");
  const TrainConfig config = resolve_config(args);
  OutputLock lock(args.out);
  const auto trajs = load_dir(args.data.front());

  ModelFile file;
  file.tasks = {trajs.front().task};
  file.config = config;
  TrainMetrics metrics;
  if (args.oracle_features) {
    file.source = FeatureSource::kOracle;
    file.model = fit_oracle(trajs, config.oracle_ridge);
  } else {
    auto result = train(config, training_views(trajs));
    file.params = std::move(result.params);
    file.model = std::move(result.model);
    metrics = std::move(result.metrics);
  }
  save_model(args.out, file);
  auto csv = args.out;
  csv += ".metrics.csv";
  write_metrics_csv(csv, metrics);
  return file;
}

EvalResult cmd_eval(const EvalArgs& args) {
  const ModelFile file = load_model(args.model);
  TaskId task;
  if (args.task) {
    if (std::find(file.tasks.begin(), file.tasks.end(), *args.task) == file.tasks.end())
      throw ConfigError("model was not trained on task " + std::string(task_name(*args.task)));
    task = *args.task;
  } else {
    if (file.tasks.size() != 1) throw ConfigError("model covers several tasks; pass --task");
    task = file.tasks.front();
  }
  const auto res = evaluate_file(file, task, eval_options(file, args.episodes, args.seed, args.closed_loop));
  if (!args.csv.empty()) {
    const bool fresh = !fs::exists(args.csv);
    std::ofstream out(args.csv, std::ios::app);
    if (!out) throw DataError("cannot write " + args.csv.string());
    if (fresh) out << "model,task,episodes,seed,closed_loop,successes,success_rate,diverged\n";
    out << args.model.string() << ',' << task_name(task) << ',' << res.episodes << ',' << args.seed << ','
        << (args.closed_loop ? 1 : 0) << ',' << res.successes << ',' << fmt_double(res.success_rate) << ','
        << res.diverged << '\n';
  }
  return res;
}

std::vector<fs::path> cmd_viz(const fs::path& model, const fs::path& trajectory, const fs::path& out_dir) {
  const ModelFile file = load_model(model);
  if (file.source != FeatureSource::kLearned) throw ConfigError("viz needs a model with a learned feature network");
  const Trajectory traj = read_trajectory(trajectory);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw DataError("cannot create " + out_dir.string());
  OutputLock lock(out_dir);
  std::vector<fs::path> written;
  for (int t = 0; t < traj.length(); ++t) {
    const auto input = make_input_stack(traj.frames[static_cast<std::size_t>(t)], file.config.use_frequency);
    if (input.channels != file.params.arch.in_channels || input.height != file.params.arch.side)
      throw DataError("trajectory images do not match the model input");
    const auto fwd = forward(file.params, input);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03d.pgm", t);
    write_pgm(out_dir / name, activation_heatmap(fwd.cache));
    written.push_back(out_dir / name);
  }
  return written;
}

std::vector<TaskEval> cmd_multitask(const TrainArgs& args, int episodes, std::uint64_t eval_seed) {
  if (args.data.empty()) throw ConfigError("multitask needs at least one data directory");
  if (args.out.empty()) throw ConfigError("multitask needs an output path");
  if (args.oracle_features) throw ConfigError("multitask trains learned features only");
  const TrainConfig config = resolve_config(args);
  OutputLock lock(args.out);

  std::vector<std::vector<Demonstration>> per_task;
  ModelFile file;
  file.config = config;
  for (const auto& dir : args.data) {
    const auto trajs = load_dir(dir);
    if (std::find(file.tasks.begin(), file.tasks.end(), trajs.front().task) != file.tasks.end())
      throw DataError("task " + std::string(task_name(trajs.front().task)) + " given twice");
    file.tasks.push_back(trajs.front().task);
    per_task.push_back(training_views(trajs));
  }
  auto result = train_multitask(config, per_task);
  file.params = std::move(result.params);
  file.model = std::move(result.model);
  save_model(args.out, file);
  auto csv = args.out;
  csv += ".metrics.csv";
  write_metrics_csv(csv, result.metrics);

  std::vector<TaskEval> rows;
  const auto opts = eval_options(file, episodes, eval_seed, false);
  for (auto task : file.tasks) rows.push_back({task, evaluate_file(file, task, opts)});
  return rows;
}

namespace {

void print_eval(TaskId task, const EvalResult& r) {
  std::printf("%s,%d,%d,%.4f,%d\n", std::string(task_name(task)).c_str(), r.successes, r.episodes, r.success_rate,
              r.diverged);
}

TaskId task_from_flag(const std::string& s) {
  try {
    return parse_task(s);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Koopman rollout-loss object feature learning"};
  app.require_subcommand(1);

  std::string task = "point_reach";
  int count = 50;
  std::uint64_t seed = 0;
  std::string out, config, model, trajectory;
  std::vector<std::string> data;
  int episodes = 200;
  bool oracle = false, closed_loop = false;
  std::optional<bool> use_frequency;
  std::string csv;
  bool seed_given = false;

  auto* gen = app.add_subcommand("gen-demos", "Write scripted demonstrations as .kdt files");
  gen->add_option("--task", task, "point_reach or handle_slide");
  gen->add_option("--count", count, "Number of demonstrations")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", seed, "Base seed");
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a feature network and Koopman operator");
  tr->add_option("--config", config, "JSON training config");
  tr->add_option("--data", data, "Directory of .kdt demonstrations")->required();
  tr->add_option("--out", out, "Output model file")->required();
  auto* tr_seed = tr->add_option("--seed", seed, "Overrides the config seed");
  tr->add_option("--use-frequency", use_frequency, "Append DCT channels (overrides config)");
  tr->add_flag("--oracle-features", oracle, "Fit the GT-object-state baseline instead");

  auto* ev = app.add_subcommand("eval", "Success rate on unseen placements");
  ev->add_option("--model", model, "Model file")->required();
  ev->add_option("--task", task, "Task to evaluate");
  auto* ev_task = ev->get_option("--task");
  ev->add_option("--episodes", episodes, "Number of episodes")->check(CLI::PositiveNumber);
  ev->add_option("--seed", seed, "Evaluation seed");
  ev->add_flag("--closed-loop", closed_loop, "Re-predict features from fresh images every step");
  ev->add_option("--out", csv, "Append a CSV row to this file");

  auto* vz = app.add_subcommand("viz", "Activation heatmaps (PGM) for every frame of a trajectory");
  vz->add_option("--model", model, "Model file")->required();
  vz->add_option("--data", trajectory, ".kdt trajectory")->required();
  vz->add_option("--out", out, "Output directory")->required();

  auto* mt = app.add_subcommand("multitask", "Pooled training over several tasks");
  mt->add_option("--config", config, "JSON training config");
  mt->add_option("--data", data, "One .kdt directory per task")->required();
  mt->add_option("--out", out, "Output model file")->required();
  auto* mt_seed = mt->add_option("--seed", seed, "Overrides the config seed");
  mt->add_option("--use-frequency", use_frequency, "Append DCT channels (overrides config)");
  mt->add_option("--episodes", episodes, "Evaluation episodes per task")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  seed_given = tr_seed->count() > 0 || mt_seed->count() > 0;

  auto train_args = [&] {
    TrainArgs a;
    a.config = config;
    for (const auto& d : data) a.data.emplace_back(d);
    a.out = out;
    if (seed_given) a.seed = seed;
    a.use_frequency = use_frequency;
    a.oracle_features = oracle;
    return a;
  };

  try {
    if (gen->parsed()) {
      const auto files = cmd_gen_demos(task_from_flag(task), count, seed, out);
      std::printf("wrote %zu demonstrations to %s\n", files.size(), out.c_str());
    } else if (tr->parsed()) {
      const auto file = cmd_train(train_args());
      std::printf("model %s checksum %08x\n", out.c_str(), model_checksum(file));
    } else if (ev->parsed()) {
      EvalArgs a;
      a.model = model;
      if (ev_task->count() > 0) a.task = task_from_flag(task);
      a.episodes = episodes;
      a.seed = seed;
      a.closed_loop = closed_loop;
      a.csv = csv;
      const auto r = cmd_eval(a);
      std::printf("success_rate %.4f (%d/%d, diverged %d)\n", r.success_rate, r.successes, r.episodes, r.diverged);
    } else if (vz->parsed()) {
      const auto files = cmd_viz(model, trajectory, out);
      std::printf("wrote %zu heatmaps to %s\n", files.size(), out.c_str());
    } else if (mt->parsed()) {
      std::printf("task,successes,episodes,success_rate,diverged\n");
      for (const auto& row : cmd_multitask(train_args(), episodes, seed)) print_eval(row.task, row.result);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "diverged at epoch %d: %s\n", e.epoch(), e.what());
    return kExitDivergence;
  } catch (const Error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace korol::cli
