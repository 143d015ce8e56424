#pragma once

#include "korol/lifting.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace korol {

inline constexpr double kDefaultRidge = 1e-8;
// Rollouts are truncated once any state entry exceeds this magnitude.
inline constexpr double kDivergenceBound = 1e6;

// Robot state and object state (or learned object feature) at one instant.
struct State {
  Vec robot;
  Vec object;
};

using StateSequence = std::vector<State>;

struct FitStats {
  std::size_t pairs = 0;
  // Mean squared one-step residual in lifted space.
  double residual = 0.0;
};

struct KoopmanModel {
  LiftSpec spec;
  Mat K;
  double ridge = kDefaultRidge;
  FitStats stats;

  explicit KoopmanModel(LiftSpec s) : spec(std::move(s)), K(Mat::Zero(spec.dim(), spec.dim())) {}
  KoopmanModel(LiftSpec s, Mat k);
};

// Normal-equation statistics of the EDMD objective
//   J(K) = sum_t || phi(x_{t+1}) - K phi(x_t) ||^2 .
class StatePairAccumulator {
 public:
  explicit StatePairAccumulator(LiftSpec spec);

  // Adds the T-1 consecutive lifted pairs of one sequence.
  void accumulate(std::span<const State> sequence);
  void add_pair(const Eigen::Ref<const Vec>& phi_now, const Eigen::Ref<const Vec>& phi_next);
  // Adds another accumulator's statistics (same spec).
  void merge(const StatePairAccumulator& other);

  const LiftSpec& spec() const noexcept { return spec_; }
  const Mat& gram() const noexcept { return G_; }        // sum phi_t phi_t^T
  const Mat& cross() const noexcept { return A_; }       // sum phi_{t+1} phi_t^T
  double target_energy() const noexcept { return target_energy_; }  // sum |phi_{t+1}|^2
  std::size_t count() const noexcept { return count_; }

 private:
  LiftSpec spec_;
  Mat G_;
  Mat A_;
  double target_energy_ = 0.0;
  std::size_t count_ = 0;
};

// Solves K (G + lambda I) = A with lambda = ridge * trace(G) / p.
KoopmanModel fit(const StatePairAccumulator& acc, double ridge = kDefaultRidge);

// Pools every sequence of every task into one accumulator, in order.
KoopmanModel fit_multitask(const LiftSpec& spec, std::span<const std::vector<StateSequence>> tasks,
                           double ridge = kDefaultRidge);

// Gradient of the ridge-regularized objective at K: 2(K G - A) + 2 lambda K.
Mat fit_objective_gradient(const StatePairAccumulator& acc, const Mat& K, double ridge);

// How a rollout advances from one step to the next.
enum class Propagation {
  // x_{i+1} = unlift(K lift(x_i)): observables are rebuilt from the states.
  kRelift,
  // g_{i+1} = K g_i entirely in lifted space; states are read off g.
  kLifted,
};

State step(const KoopmanModel& model, const State& x);

struct Rollout {
  std::vector<State> states;  // x_1 .. x_N (fewer when diverged)
  bool diverged = false;
};

Rollout rollout(const KoopmanModel& model, const State& x0, int steps,
                Propagation mode = Propagation::kRelift);

struct RolloutLoss {
  double loss = 0.0;
  int steps = 0;  // steps that contributed before truncation
  bool diverged = false;
};

// Sum over i of |x_r(i) - xhat_r(i)|^2 for the rollout of length gt.size().
RolloutLoss rollout_loss(const KoopmanModel& model, const State& x0, std::span<const Vec> gt,
                         Propagation mode = Propagation::kRelift);

struct RolloutGradient {
  Vec d_object;  // dL / d x_o(0)
  double loss = 0.0;
  int steps = 0;
  bool diverged = false;
};

// Reverse-mode gradient of rollout_loss with respect to the initial object
// feature. K is held constant.
RolloutGradient rollout_backward(const KoopmanModel& model, const State& x0, std::span<const Vec> gt,
                                 Propagation mode = Propagation::kRelift);

}  // namespace korol
