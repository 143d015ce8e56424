#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace korol {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// One entry of the observable vector: the product of up to three entries of
// the concatenated state [x_r; x_o]. Unused factor slots hold -1.
struct Monomial {
  std::array<int, 3> factors{-1, -1, -1};
  int degree = 0;
};

// Dimensions and index layout of the polynomial observable
//
//   phi = [ x_r | psi_r(x_r) | x_o | psi_o(x_o) ]
//
// psi_r: x_i x_j (i<j), x_i^2, x_i^3.
// psi_o: x_i x_j (i<j), x_i^2, x_i^2 x_j for all (i, j) in row-major order.
//
// The (i, i) terms of psi_o are cubes and are kept, so that
// p = 3n + 2m + m^2 + n(n-1)/2 + m(m-1)/2.
class LiftSpec {
 public:
  // Bumped whenever the monomial order changes; persisted with models.
  static constexpr std::uint32_t kOrderingVersion = 1;

  LiftSpec(int n, int m);

  int n() const noexcept { return n_; }
  int m() const noexcept { return m_; }
  int robot_lift_dim() const noexcept { return n_lift_; }
  int object_lift_dim() const noexcept { return m_lift_; }
  int dim() const noexcept { return static_cast<int>(monomials_.size()); }
  int state_dim() const noexcept { return n_ + m_; }

  int robot_offset() const noexcept { return 0; }
  int robot_lift_offset() const noexcept { return n_; }
  int object_offset() const noexcept { return n_ + n_lift_; }
  int object_lift_offset() const noexcept { return n_ + n_lift_ + m_; }

  std::span<const Monomial> monomials() const noexcept { return monomials_; }

  static int closed_form_dim(int n, int m) noexcept {
    return 3 * n + 2 * m + m * m + n * (n - 1) / 2 + m * (m - 1) / 2;
  }

  friend bool operator==(const LiftSpec& a, const LiftSpec& b) noexcept {
    return a.n_ == b.n_ && a.m_ == b.m_;
  }

 private:
  int n_;
  int m_;
  int n_lift_;
  int m_lift_;
  std::vector<Monomial> monomials_;
};

// Validates (n, m) and enumerates the monomial table.
LiftSpec lift_dim(int n, int m);

Vec lift(const LiftSpec& spec, const Eigen::Ref<const Vec>& x_r, const Eigen::Ref<const Vec>& x_o);

// Allocation-free variant; `state` is [x_r; x_o] and `out` must have length p.
void lift_state(const LiftSpec& spec, const Eigen::Ref<const Vec>& state, Eigen::Ref<Vec> out);

std::pair<Vec, Vec> unlift(const LiftSpec& spec, const Eigen::Ref<const Vec>& observable);

// d phi / d [x_r; x_o], shape p x (n + m).
Mat lift_jacobian(const LiftSpec& spec, const Eigen::Ref<const Vec>& x_r, const Eigen::Ref<const Vec>& x_o);

// Computes out = J(state)^T v without forming J. `out` has length n + m.
void lift_jacobian_transpose_apply(const LiftSpec& spec, const Eigen::Ref<const Vec>& state,
                                   const Eigen::Ref<const Vec>& v, Eigen::Ref<Vec> out);

}  // namespace korol
