#include "korol/koopman.hpp"

#include "korol/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace korol {
namespace {

Vec concat(const State& x) {
  Vec s(x.robot.size() + x.object.size());
  s << x.robot, x.object;
  return s;
}

void check_state(const LiftSpec& spec, const State& x, const char* who) {
  if (x.robot.size() != spec.n() || x.object.size() != spec.m()) {
    throw DimensionError(std::string(who) + ": state sizes (" + std::to_string(x.robot.size()) + ", " +
                         std::to_string(x.object.size()) + ") do not match spec (" +
                         std::to_string(spec.n()) + ", " + std::to_string(spec.m()) + ")");
  }
}

// Reads the state blocks of an observable into a concatenated state vector.
void extract_state(const LiftSpec& spec, const Eigen::Ref<const Vec>& g, Eigen::Ref<Vec> s) {
  s.head(spec.n()) = g.segment(spec.robot_offset(), spec.n());
  s.tail(spec.m()) = g.segment(spec.object_offset(), spec.m());
}

bool out_of_bounds(const Eigen::Ref<const Vec>& s) {
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!std::isfinite(s[i]) || std::abs(s[i]) > kDivergenceBound) return true;
  return false;
}

// Forward trajectory of concatenated states s_0..s_k (k <= steps) plus the
// lifted vectors used to produce each of s_1..s_k.
struct Trace {
  std::vector<Vec> states;
  std::vector<Vec> lifted;  // lifted[i] produced states[i+1]
  bool diverged = false;
};

Trace run(const KoopmanModel& model, const State& x0, int steps, Propagation mode) {
  const auto& spec = model.spec;
  Trace tr;
  tr.states.reserve(static_cast<std::size_t>(steps) + 1);
  tr.states.push_back(concat(x0));
  Vec g(spec.dim());
  lift_state(spec, tr.states.back(), g);
  for (int i = 0; i < steps; ++i) {
    if (mode == Propagation::kRelift && i > 0) lift_state(spec, tr.states.back(), g);
    tr.lifted.push_back(g);
    Vec next_g = model.K * g;
    Vec s(spec.state_dim());
    extract_state(spec, next_g, s);
    if (out_of_bounds(s) || (mode == Propagation::kLifted && !next_g.allFinite())) {
      tr.lifted.pop_back();
      tr.diverged = true;
      break;
    }
    tr.states.push_back(std::move(s));
    g = std::move(next_g);
  }
  return tr;
}

}  // namespace

KoopmanModel::KoopmanModel(LiftSpec s, Mat k) : spec(std::move(s)), K(std::move(k)) {
  if (K.rows() != spec.dim() || K.cols() != spec.dim())
    throw DimensionError("KoopmanModel: K must be " + std::to_string(spec.dim()) + " x " +
                         std::to_string(spec.dim()));
}

StatePairAccumulator::StatePairAccumulator(LiftSpec spec)
    : spec_(std::move(spec)), G_(Mat::Zero(spec_.dim(), spec_.dim())), A_(Mat::Zero(spec_.dim(), spec_.dim())) {}

void StatePairAccumulator::add_pair(const Eigen::Ref<const Vec>& phi_now, const Eigen::Ref<const Vec>& phi_next) {
  if (phi_now.size() != spec_.dim() || phi_next.size() != spec_.dim())
    throw DimensionError("accumulate: observable length mismatch");
  G_.noalias() += phi_now * phi_now.transpose();
  A_.noalias() += phi_next * phi_now.transpose();
  target_energy_ += phi_next.squaredNorm();
  ++count_;
}

void StatePairAccumulator::accumulate(std::span<const State> sequence) {
  if (sequence.size() < 2) throw DataError("accumulate: sequence needs at least 2 states");
  for (const auto& x : sequence) check_state(spec_, x, "accumulate");
  Vec prev = lift(spec_, sequence[0].robot, sequence[0].object);
  for (std::size_t t = 1; t < sequence.size(); ++t) {
    Vec next = lift(spec_, sequence[t].robot, sequence[t].object);
    add_pair(prev, next);
    prev = std::move(next);
  }
}

void StatePairAccumulator::merge(const StatePairAccumulator& other) {
  if (!(other.spec_ == spec_)) throw DimensionError("merge: accumulator specs differ");
  G_ += other.G_;
  A_ += other.A_;
  target_energy_ += other.target_energy_;
  count_ += other.count_;
}

KoopmanModel fit(const StatePairAccumulator& acc, double ridge) {
  if (acc.count() == 0) throw DataError("fit: accumulator holds no state pairs");
  if (!(ridge >= 0.0)) throw ConfigError("fit: ridge must be non-negative");
  const int p = acc.spec().dim();
  Mat G = acc.gram().selfadjointView<Eigen::Lower>();
  const double lambda = ridge * G.trace() / p;
  Mat reg = G;
  reg.diagonal().array() += lambda;

  // K reg = A  <=>  reg K^T = A^T (reg is symmetric).
  Eigen::LLT<Mat> llt(reg);
  Mat Kt;
  if (llt.info() == Eigen::Success) {
    Kt = llt.solve(acc.cross().transpose());
  } else {
    Eigen::LDLT<Mat> ldlt(reg);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff()))
      throw RankDeficientError(
          "fit: regularized normal equations are singular (rank-deficient data); use a positive ridge");
    Kt = ldlt.solve(acc.cross().transpose());
  }
  if (!Kt.allFinite())
    throw RankDeficientError("fit: solve produced non-finite entries; use a positive ridge");

  KoopmanModel model(acc.spec(), Kt.transpose());
  model.ridge = ridge;
  model.stats.pairs = acc.count();
  // sum |phi' - K phi|^2 = tr(C) - 2 tr(K A^T) + tr(K G K^T)
  const double sse = acc.target_energy() - 2.0 * (model.K.cwiseProduct(acc.cross())).sum() +
                     (model.K * G).cwiseProduct(model.K).sum();
  model.stats.residual = std::max(0.0, sse / static_cast<double>(acc.count()));
  return model;
}

KoopmanModel fit_multitask(const LiftSpec& spec, std::span<const std::vector<StateSequence>> tasks, double ridge) {
  StatePairAccumulator acc(spec);
  for (const auto& task : tasks)
    for (const auto& seq : task) acc.accumulate(seq);
  return fit(acc, ridge);
}

Mat fit_objective_gradient(const StatePairAccumulator& acc, const Mat& K, double ridge) {
  Mat G = acc.gram().selfadjointView<Eigen::Lower>();
  const double lambda = ridge * G.trace() / acc.spec().dim();
  return 2.0 * (K * G - acc.cross()) + 2.0 * lambda * K;
}

State step(const KoopmanModel& model, const State& x) {
  check_state(model.spec, x, "step");
  Vec g = model.K * lift(model.spec, x.robot, x.object);
  auto [r, o] = unlift(model.spec, g);
  return {std::move(r), std::move(o)};
}

Rollout rollout(const KoopmanModel& model, const State& x0, int steps, Propagation mode) {
  check_state(model.spec, x0, "rollout");
  if (steps < 1) throw DimensionError("rollout: steps must be >= 1");
  const auto& spec = model.spec;
  Trace tr = run(model, x0, steps, mode);
  Rollout out;
  out.diverged = tr.diverged;
  for (std::size_t i = 1; i < tr.states.size(); ++i)
    out.states.push_back({tr.states[i].head(spec.n()), tr.states[i].tail(spec.m())});
  return out;
}

RolloutLoss rollout_loss(const KoopmanModel& model, const State& x0, std::span<const Vec> gt, Propagation mode) {
  check_state(model.spec, x0, "rollout_loss");
  if (gt.empty()) throw DimensionError("rollout_loss: horizon must be >= 1");
  const int n = model.spec.n();
  for (const auto& v : gt)
    if (v.size() != n) throw DimensionError("rollout_loss: ground-truth robot state has wrong length");
  Trace tr = run(model, x0, static_cast<int>(gt.size()), mode);
  RolloutLoss out;
  out.diverged = tr.diverged;
  out.steps = static_cast<int>(tr.states.size()) - 1;
  for (int i = 1; i <= out.steps; ++i) out.loss += (gt[i - 1] - tr.states[i].head(n)).squaredNorm();
  return out;
}

RolloutGradient rollout_backward(const KoopmanModel& model, const State& x0, std::span<const Vec> gt,
                                 Propagation mode) {
  check_state(model.spec, x0, "rollout_backward");
  if (gt.empty()) throw DimensionError("rollout_backward: horizon must be >= 1");
  const auto& spec = model.spec;
  const int n = spec.n();
  const int d = spec.state_dim();
  const int p = spec.dim();
  for (const auto& v : gt)
    if (v.size() != n) throw DimensionError("rollout_backward: ground-truth robot state has wrong length");

  Trace tr = run(model, x0, static_cast<int>(gt.size()), mode);
  RolloutGradient out;
  out.diverged = tr.diverged;
  out.steps = static_cast<int>(tr.states.size()) - 1;
  out.d_object = Vec::Zero(spec.m());
  for (int i = 1; i <= out.steps; ++i) out.loss += (gt[i - 1] - tr.states[i].head(n)).squaredNorm();
  if (out.steps == 0) return out;

  const Mat Kt = model.K.transpose();
  // Scatters an adjoint over the state blocks into lifted coordinates.
  auto to_lifted = [&](const Vec& adj_state) {
    Vec v = Vec::Zero(p);
    v.segment(spec.robot_offset(), n) = adj_state.head(n);
    v.segment(spec.object_offset(), spec.m()) = adj_state.tail(spec.m());
    return v;
  };

  if (mode == Propagation::kRelift) {
    Vec adj = Vec::Zero(d);  // dL / d s_{i}
    Vec tmp(d);
    for (int i = out.steps; i >= 1; --i) {
      adj.head(n) -= 2.0 * (gt[i - 1] - tr.states[i].head(n));
      // s_i = U K phi(s_{i-1})  =>  dL/ds_{i-1} += J(s_{i-1})^T K^T U^T adj
      const Vec w = Kt * to_lifted(adj);
      lift_jacobian_transpose_apply(spec, tr.states[i - 1], w, tmp);
      adj = tmp;
    }
    out.d_object = adj.tail(spec.m());
  } else {
    Vec adj_g = Vec::Zero(p);  // dL / d g_i
    for (int i = out.steps; i >= 1; --i) {
      adj_g.segment(spec.robot_offset(), n) -= 2.0 * (gt[i - 1] - tr.states[i].head(n));
      adj_g = Kt * adj_g;
    }
    Vec tmp(d);
    lift_jacobian_transpose_apply(spec, tr.states[0], adj_g, tmp);
    out.d_object = tmp.tail(spec.m());
  }
  return out;
}

}  // namespace korol
