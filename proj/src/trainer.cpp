#include "korol/trainer.hpp"

#include "korol/dct.hpp"
#include "korol/errors.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <thread>

namespace korol {
namespace {

constexpr std::uint64_t kWindowStream = 0x77696e646f77ULL;  // "window"

State window_start(const PreparedDemo& demo, const Window& w, Vec feature) {
  return {demo.robot.row(w.t0).transpose(), std::move(feature)};
}

std::vector<Vec> window_targets(const PreparedDemo& demo, const Window& w) {
  std::vector<Vec> gt;
  gt.reserve(static_cast<std::size_t>(w.horizon));
  for (int i = 1; i <= w.horizon; ++i) gt.push_back(demo.robot.row(w.t0 + i).transpose());
  return gt;
}

// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
// handled by exactly one worker; callers reduce results in index order.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
}

}  // namespace

void TrainConfig::validate() const {
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (refresh_period && *refresh_period < 1) throw ConfigError("refresh_period must be >= 1 or infinite");
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (windows_per_trajectory < 1) throw ConfigError("windows_per_trajectory must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(ridge >= 0.0)) throw ConfigError("ridge must be >= 0");
  if (!(oracle_ridge >= 0.0)) throw ConfigError("oracle_ridge must be >= 0");
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in [0, 1)");
}

int resolve_threads(int requested) {
  int cap = 0;
  if (const char* env = std::getenv("KOROL_THREADS")) cap = std::max(0, std::atoi(env));
  if (requested > 0) return cap > 0 ? std::min(requested, cap) : requested;
  return cap > 0 ? cap : 1;
}

std::vector<PreparedDemo> prepare_dataset(std::span<const Demonstration> demos, bool use_frequency, int robot_dim) {
  std::vector<PreparedDemo> out;
  out.reserve(demos.size());
  int n = robot_dim;
  for (const auto& d : demos) n = std::max<int>(n, static_cast<int>(d.robot.cols()));
  for (const auto& d : demos) {
    if (d.robot.rows() < 2) throw DataError("trajectory shorter than 2 steps");
    if (static_cast<std::size_t>(d.robot.rows()) != d.frames.size())
      throw DataError("trajectory has mismatched robot-state and frame counts");
    PreparedDemo p;
    p.robot = RowMat::Zero(d.robot.rows(), n);
    p.robot.leftCols(d.robot.cols()) = d.robot;
    p.inputs.reserve(d.frames.size());
    for (const auto& f : d.frames) p.inputs.push_back(make_input_stack(f, use_frequency));
    if (!out.empty()) {
      const auto& a = out.front().inputs.front();
      const auto& b = p.inputs.front();
      if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw DataError("trajectories have incompatible image shapes");
    }
    out.push_back(std::move(p));
  }
  return out;
}

Window sample_window(std::span<const PreparedDemo> dataset, int horizon, Pcg32& rng) {
  if (dataset.empty()) throw DataError("sample_window: empty dataset");
  Window w;
  w.trajectory = rng.below(static_cast<std::uint32_t>(dataset.size()));
  const int T = static_cast<int>(dataset[w.trajectory].robot.rows());
  if (T < 2) throw DataError("sample_window: trajectory shorter than 2 steps");
  const int last = std::max(0, T - 1 - horizon);
  w.t0 = static_cast<int>(rng.below(static_cast<std::uint32_t>(last + 1)));
  w.horizon = std::min(horizon, T - 1 - w.t0);
  return w;
}

KoopmanModel refresh_koopman(std::span<const PreparedDemo> dataset, int feature_dim, const FeatureFn& features,
                             double ridge) {
  if (dataset.empty()) throw DataError("refresh_koopman: empty dataset");
  StatePairAccumulator acc(lift_dim(static_cast<int>(dataset.front().robot.cols()), feature_dim));
  for (std::size_t k = 0; k < dataset.size(); ++k) {
    const auto& demo = dataset[k];
    StateSequence seq;
    seq.reserve(static_cast<std::size_t>(demo.robot.rows()));
    for (int t = 0; t < demo.robot.rows(); ++t) seq.push_back({demo.robot.row(t).transpose(), features(k, t)});
    acc.accumulate(seq);
  }
  return fit(acc, ridge);
}

KoopmanModel refresh_koopman(const FeatNetParams& params, std::span<const PreparedDemo> dataset, double ridge) {
  return refresh_koopman(dataset, params.arch.feature_dim,
                         [&](std::size_t k, int t) { return predict(params, dataset[k].inputs[static_cast<std::size_t>(t)]); },
                         ridge);
}

WindowGradient window_gradient(const FeatNetParams& params, const KoopmanModel& model, const PreparedDemo& demo,
                               const Window& w, Propagation mode) {
  auto fwd = forward(params, demo.inputs[static_cast<std::size_t>(w.t0)]);
  const auto gt = window_targets(demo, w);
  const RolloutGradient rg = rollout_backward(model, window_start(demo, w, fwd.feature), gt, mode);
  WindowGradient out{rg.loss, rg.diverged, backward(params, fwd.cache, rg.d_object).grads};
  return out;
}

double window_loss(const FeatNetParams& params, const KoopmanModel& model, const PreparedDemo& demo, const Window& w,
                   Propagation mode) {
  const Vec z = predict(params, demo.inputs[static_cast<std::size_t>(w.t0)]);
  const auto gt = window_targets(demo, w);
  return rollout_loss(model, window_start(demo, w, z), gt, mode).loss;
}

void split_validation(std::size_t count, double fraction, std::vector<std::size_t>& train, std::vector<std::size_t>& val) {
  train.clear();
  val.clear();
  const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count)));
  if (n_val == 0) {
    for (std::size_t i = 0; i < count; ++i) train.push_back(i);
    return;
  }
  const std::size_t stride = count / n_val;
  for (std::size_t i = 0; i < count; ++i) {
    if ((i + 1) % stride == 0 && val.size() < n_val)
      val.push_back(i);
    else
      train.push_back(i);
  }
}

TrainResult train(const TrainConfig& config, std::span<const Demonstration> dataset) {
  config.validate();
  const auto prepared = prepare_dataset(dataset, config.use_frequency);
  return train_prepared(config, prepared);
}

TrainResult train_multitask(const TrainConfig& config, std::span<const std::vector<Demonstration>> tasks) {
  config.validate();
  if (tasks.empty()) throw DataError("train_multitask: no tasks");
  std::vector<Demonstration> pooled;
  std::size_t longest = 0;
  for (const auto& t : tasks) longest = std::max(longest, t.size());
  for (std::size_t i = 0; i < longest; ++i)
    for (const auto& t : tasks)
      if (i < t.size()) pooled.push_back(t[i]);
  const auto prepared = prepare_dataset(pooled, config.use_frequency);
  return train_prepared(config, prepared);
}

TrainResult train_prepared(const TrainConfig& config, std::span<const PreparedDemo> dataset) {
  config.validate();
  if (dataset.empty()) throw DataError("train: empty dataset");
  for (const auto& d : dataset)
    if (d.robot.rows() < 2) throw DataError("train: trajectory shorter than 2 steps");

  std::vector<std::size_t> train_idx, val_idx;
  split_validation(dataset.size(), config.validation_fraction, train_idx, val_idx);
  std::vector<PreparedDemo> train_set, val_set;
  for (auto i : train_idx) train_set.push_back(dataset[i]);
  for (auto i : val_idx) val_set.push_back(dataset[i]);

  const auto& first = train_set.front().inputs.front();
  Architecture arch;
  arch.in_channels = first.channels;
  arch.side = first.height;
  arch.feature_dim = config.feature_dim;
  arch.pooling = config.pooling;
  if (first.height != first.width) throw DataError("train: images must be square");

  FeatNetParams params = init_params(config.seed, arch);
  AdamState adam = AdamState::zeros_like(params);
  AdamOptions opts{config.learning_rate, config.beta1, config.beta2, config.adam_eps};
  Pcg32 rng(config.seed, kWindowStream);
  const int threads = resolve_threads(config.threads);

  KoopmanModel model = refresh_koopman(params, train_set, config.ridge);
  TrainMetrics metrics;
  metrics.initial_residual = model.stats.residual;

  const std::size_t windows = train_set.size() * static_cast<std::size_t>(config.windows_per_trajectory);
  const std::size_t batches = (windows + config.batch_size - 1) / config.batch_size;
  const auto bsz = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    opts.lr = config.learning_rate * (1.0 - static_cast<double>(epoch - 1) / config.max_epochs);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<Window> windows(bsz);
      for (auto& w : windows) w = sample_window(train_set, config.horizon, rng);
      std::vector<WindowGradient> items(bsz);
      parallel_for(bsz, threads, [&](std::size_t i) {
        items[i] = window_gradient(params, model, train_set[windows[i].trajectory], windows[i], config.propagation);
      });
      FeatNetGrads grads = FeatNetParams::zeros(arch);
      double batch_loss = 0.0;
      for (const auto& it : items) {
        add_grads(grads, it.grads, 1.0 / static_cast<double>(bsz));
        batch_loss += it.loss;
      }
      batch_loss /= static_cast<double>(bsz);
      if (!std::isfinite(batch_loss))
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch), epoch);
      epoch_loss += batch_loss;
      adam_step(params, grads, adam, opts);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(batches);
    rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    if (!val_set.empty()) {
      double v = 0.0;
      for (const auto& demo : val_set) {
        const Window w{0, 0, std::min(config.horizon, static_cast<int>(demo.robot.rows()) - 1)};
        v += window_loss(params, model, demo, w, config.propagation);
      }
      rec.val_loss = v / static_cast<double>(val_set.size());
    }
    if (config.refreshes_at(epoch)) {
      model = refresh_koopman(params, train_set, config.ridge);
      rec.refreshed = true;
      metrics.refresh_epochs.push_back(epoch);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    metrics.epochs.push_back(rec);
  }
  return {std::move(params), std::move(model), std::move(metrics)};
}

}  // namespace korol
