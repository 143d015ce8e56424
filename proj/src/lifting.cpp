#include "korol/lifting.hpp"

#include "korol/errors.hpp"

#include <string>

namespace korol {
namespace {

Monomial mono(int a, int b = -1, int c = -1) {
  Monomial out;
  out.factors = {a, b, c};
  out.degree = 1 + (b >= 0) + (c >= 0);
  return out;
}

void check_state(const LiftSpec& spec, Eigen::Index nr, Eigen::Index no) {
  if (nr != spec.n() || no != spec.m()) {
    throw DimensionError("lift: expected state sizes (" + std::to_string(spec.n()) + ", " +
                         std::to_string(spec.m()) + "), got (" + std::to_string(nr) + ", " +
                         std::to_string(no) + ")");
  }
}

}  // namespace

LiftSpec::LiftSpec(int n, int m) : n_(n), m_(m) {
  if (n < 1) throw DimensionError("lift_dim: robot state dimension must be >= 1");
  if (m < 0) throw DimensionError("lift_dim: object feature dimension must be >= 0");
  n_lift_ = 2 * n + n * (n - 1) / 2;
  m_lift_ = m + m * m + m * (m - 1) / 2;

  monomials_.reserve(static_cast<std::size_t>(closed_form_dim(n, m)));
  for (int i = 0; i < n; ++i) monomials_.push_back(mono(i));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) monomials_.push_back(mono(i, j));
  for (int i = 0; i < n; ++i) monomials_.push_back(mono(i, i));
  for (int i = 0; i < n; ++i) monomials_.push_back(mono(i, i, i));

  const int o = n;  // object entries start after x_r in the state vector
  for (int i = 0; i < m; ++i) monomials_.push_back(mono(o + i));
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) monomials_.push_back(mono(o + i, o + j));
  for (int i = 0; i < m; ++i) monomials_.push_back(mono(o + i, o + i));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) monomials_.push_back(mono(o + i, o + i, o + j));
}

LiftSpec lift_dim(int n, int m) { return LiftSpec(n, m); }

void lift_state(const LiftSpec& spec, const Eigen::Ref<const Vec>& state, Eigen::Ref<Vec> out) {
  if (state.size() != spec.state_dim() || out.size() != spec.dim())
    throw DimensionError("lift_state: size mismatch");
  const auto monos = spec.monomials();
  for (std::size_t k = 0; k < monos.size(); ++k) {
    const auto& f = monos[k].factors;
    double v = state[f[0]];
    if (f[1] >= 0) v *= state[f[1]];
    if (f[2] >= 0) v *= state[f[2]];
    out[static_cast<Eigen::Index>(k)] = v;
  }
}

Vec lift(const LiftSpec& spec, const Eigen::Ref<const Vec>& x_r, const Eigen::Ref<const Vec>& x_o) {
  check_state(spec, x_r.size(), x_o.size());
  Vec state(spec.state_dim());
  state << x_r, x_o;
  Vec out(spec.dim());
  lift_state(spec, state, out);
  return out;
}

std::pair<Vec, Vec> unlift(const LiftSpec& spec, const Eigen::Ref<const Vec>& observable) {
  if (observable.size() != spec.dim()) {
    throw DimensionError("unlift: observable has length " + std::to_string(observable.size()) +
                         ", spec expects " + std::to_string(spec.dim()));
  }
  return {observable.segment(spec.robot_offset(), spec.n()),
          observable.segment(spec.object_offset(), spec.m())};
}

Mat lift_jacobian(const LiftSpec& spec, const Eigen::Ref<const Vec>& x_r, const Eigen::Ref<const Vec>& x_o) {
  check_state(spec, x_r.size(), x_o.size());
  Vec s(spec.state_dim());
  s << x_r, x_o;
  Mat jac = Mat::Zero(spec.dim(), spec.state_dim());
  const auto monos = spec.monomials();
  for (std::size_t k = 0; k < monos.size(); ++k) {
    const auto& f = monos[k].factors;
    const auto row = static_cast<Eigen::Index>(k);
    // Product rule: d(a b c)/ds_j sums over every factor slot equal to j.
    for (int slot = 0; slot < monos[k].degree; ++slot) {
      double rest = 1.0;
      for (int other = 0; other < monos[k].degree; ++other)
        if (other != slot) rest *= s[f[other]];
      jac(row, f[slot]) += rest;
    }
  }
  return jac;
}

void lift_jacobian_transpose_apply(const LiftSpec& spec, const Eigen::Ref<const Vec>& s,
                                   const Eigen::Ref<const Vec>& v, Eigen::Ref<Vec> out) {
  out.setZero();
  const auto monos = spec.monomials();
  for (std::size_t k = 0; k < monos.size(); ++k) {
    const auto& f = monos[k].factors;
    const double w = v[static_cast<Eigen::Index>(k)];
    if (w == 0.0) continue;
    switch (monos[k].degree) {
      case 1:
        out[f[0]] += w;
        break;
      case 2:
        out[f[0]] += w * s[f[1]];
        out[f[1]] += w * s[f[0]];
        break;
      default:
        out[f[0]] += w * s[f[1]] * s[f[2]];
        out[f[1]] += w * s[f[0]] * s[f[2]];
        out[f[2]] += w * s[f[0]] * s[f[1]];
        break;
    }
  }
}

}  // namespace korol
