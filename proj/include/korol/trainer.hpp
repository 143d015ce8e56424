#pragma once

#include "korol/envs.hpp"
#include "korol/featnet.hpp"
#include "korol/koopman.hpp"
#include "korol/rng.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace korol {

struct TrainConfig {
  int horizon = 40;                  // N
  std::optional<int> refresh_period = 50;  // M in epochs; nullopt never refreshes
  int max_epochs = 300;
  int batch_size = 8;
  int windows_per_trajectory = 4;  // sampled windows per training trajectory per epoch
  double learning_rate = 1e-4;       // decays linearly to 0 at max_epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Learned features are noisier than GT states; a heavier ridge keeps the
  // refit K contractive.
  double ridge = 1e-4;
  double oracle_ridge = kDefaultRidge;  // GT-state baseline fits
  std::uint64_t seed = 0;
  bool use_frequency = true;
  int feature_dim = 8;
  double validation_fraction = 0.1;
  Propagation propagation = Propagation::kLifted;
  Pooling pooling = Pooling::kFlatten;
  int threads = 0;  // 0: KOROL_THREADS or 1

  void validate() const;
  bool refreshes_at(int epoch) const noexcept { return refresh_period && epoch % *refresh_period == 0; }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation split
  bool refreshed = false;
  double seconds = 0.0;
};

struct TrainMetrics {
  std::vector<EpochRecord> epochs;
  std::vector<int> refresh_epochs;
  double initial_residual = 0.0;
};

struct TrainResult {
  FeatNetParams params;
  KoopmanModel model;
  TrainMetrics metrics;
};

// Network inputs for one demonstration (DCT channels appended when enabled),
// with robot states zero-padded to the common robot dimension.
struct PreparedDemo {
  RowMat robot;
  std::vector<ImageStack> inputs;
};

std::vector<PreparedDemo> prepare_dataset(std::span<const Demonstration> demos, bool use_frequency, int robot_dim = 0);

struct Window {
  std::size_t trajectory = 0;
  int t0 = 0;
  int horizon = 0;
};

// Uniform trajectory, uniform t0 in [0, max(0, T-1-N)], horizon min(N, T-1-t0).
Window sample_window(std::span<const PreparedDemo> dataset, int horizon, Pcg32& rng);

using FeatureFn = std::function<Vec(std::size_t trajectory, int t)>;

// Predicts features for every frame and fits K on (x_r, features).
KoopmanModel refresh_koopman(std::span<const PreparedDemo> dataset, int feature_dim, const FeatureFn& features,
                             double ridge);
KoopmanModel refresh_koopman(const FeatNetParams& params, std::span<const PreparedDemo> dataset, double ridge);

// Rollout loss of one window and its gradient with respect to the network
// parameters (featnet backward composed with the Koopman rollout backward).
struct WindowGradient {
  double loss = 0.0;
  bool diverged = false;
  FeatNetGrads grads;
};
WindowGradient window_gradient(const FeatNetParams& params, const KoopmanModel& model, const PreparedDemo& demo,
                               const Window& w, Propagation mode);

// Loss of one window without gradients.
double window_loss(const FeatNetParams& params, const KoopmanModel& model, const PreparedDemo& demo, const Window& w,
                   Propagation mode);

// Splits every 1/fraction-th trajectory into validation (deterministic).
void split_validation(std::size_t count, double fraction, std::vector<std::size_t>& train, std::vector<std::size_t>& val);

// Feature-learning loop with deferred Koopman refresh. Per epoch,
// ceil(windows_per_trajectory * |train| / batch) Adam steps on batch-mean rollout losses; K is refit
// on freshly predicted features whenever epoch % M == 0.
TrainResult train(const TrainConfig& config, std::span<const Demonstration> dataset);
TrainResult train_prepared(const TrainConfig& config, std::span<const PreparedDemo> dataset);

// One network and one K over every task's demonstrations. Robot states are
// zero-padded to the largest robot dimension; trajectories are interleaved
// across tasks so the validation split draws from all of them.
TrainResult train_multitask(const TrainConfig& config, std::span<const std::vector<Demonstration>> tasks);

int resolve_threads(int requested);

}  // namespace korol
