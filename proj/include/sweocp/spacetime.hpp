#ifndef SWEOCP_SPACETIME_HPP
#define SWEOCP_SPACETIME_HPP

/**
 * @file
 * @brief All-at-once space-time optimality system for the controlled shallow water equations.
 *
 * Unknown ordering: w = [v; h; u; chi; lambda], each block time-major over the
 * steps t_1 .. t_Nt. The residual is the gradient of the discrete Lagrangian
 *
 *   L = 1/2 sum_k dt |x_k - x_d,k|_M^2 + alpha/2 sum_k dt |u_k|_M^2 + p^T S(x),
 *
 * with S the backward Euler state equations, so residual rows are ordered
 * [adjoint-v; adjoint-h; optimality; state-v; state-h], aligned with w. The
 * Jacobian is the Lagrangian Hessian [[A, B^T], [B, 0]], where B is the
 * linearized state operator and the adjoint block is B^T by construction.
 *
 * Dirichlet dofs of v and chi are handled by masking: every equation reads
 * the masked fields (boundary entries zero) and each constrained row is
 * replaced by the raw boundary value, so the residual stays a smooth function
 * of all entries and its derivative is exactly the assembled Jacobian.
 */

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "sweocp/error.hpp"
#include "sweocp/geometry.hpp"
#include "sweocp/linear_solver.hpp"
#include "sweocp/operators.hpp"

namespace sweocp {

struct Parameters
{
  double mu1   = 0.1;  // diffusion
  double mu2   = 0.5;  // advection
  double mu3   = 1.0;  // desired-profile scale
  double alpha = 0.1;  // control penalization
  double T     = 0.8;
  int nt       = 8;

  double dt() const { return T / nt; }

  void validate() const
  {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
    if (nt < 1) throw ConfigError("nt must be >= 1");
    if (!(T > 0.0)) throw ConfigError("T must be positive");
    if (!(mu1 >= 0.0) || !(mu2 >= 0.0)) throw ConfigError("mu1 and mu2 must be nonnegative");
  }
};

/// Box of admissible (mu1, mu2, mu3).
struct ParameterBox
{
  std::array<double, 3> lo{1e-5, 0.01, 0.1};
  std::array<double, 3> hi{1.0, 0.5, 1.0};

  bool contains(const std::array<double, 3> & mu) const
  {
    for (int i = 0; i < 3; ++i)
      if (mu[i] < lo[i] || mu[i] > hi[i]) return false;
    return true;
  }

  void validate() const
  {
    for (int i = 0; i < 3; ++i)
      if (!(hi[i] > lo[i])) throw ConfigError("parameter box is empty in component " + std::to_string(i + 1));
  }
};

enum class Var { V = 0, H = 1, U = 2, Chi = 3, Lambda = 4 };

inline const char * var_name(Var v)
{
  switch (v) {
  case Var::V: return "v";
  case Var::H: return "h";
  case Var::U: return "u";
  case Var::Chi: return "chi";
  case Var::Lambda: return "lambda";
  }
  return "?";
}

inline constexpr std::array<Var, 5> all_vars{Var::V, Var::H, Var::U, Var::Chi, Var::Lambda};

struct SpaceTimeLayout
{
  int nt = 0;
  int nv = 0;  // velocity dofs per step
  int nh = 0;  // height dofs per step
  int nu = 0;  // control dofs per step

  int spatial(Var var) const
  {
    switch (var) {
    case Var::V:
    case Var::Chi: return nv;
    case Var::H:
    case Var::Lambda: return nh;
    case Var::U: return nu;
    }
    return 0;
  }
  Eigen::Index length(Var var) const { return static_cast<Eigen::Index>(nt) * spatial(var); }
  Eigen::Index offset(Var var) const
  {
    Eigen::Index off = 0;
    for (Var w : all_vars) {
      if (w == var) return off;
      off += length(w);
    }
    return off;
  }
  Eigen::Index state_length() const { return length(Var::V) + length(Var::H) + length(Var::U); }
  Eigen::Index adjoint_length() const { return length(Var::Chi) + length(Var::Lambda); }
  Eigen::Index total() const { return state_length() + adjoint_length(); }

  bool operator==(const SpaceTimeLayout &) const = default;
};

inline SpaceTimeLayout make_layout(const AffineOperatorSet & ops, int nt)
{
  return SpaceTimeLayout{nt, ops.nv(), ops.nh(), ops.nu()};
}

namespace detail {
/// Counts full-order space-time vector constructions; the online phase must not move it.
inline std::int64_t & full_order_allocations()
{
  static thread_local std::int64_t counter = 0;
  return counter;
}
}  // namespace detail

inline std::int64_t full_order_allocation_count() { return detail::full_order_allocations(); }

/// The all-at-once unknown w = [v; h; u; chi; lambda].
class SpaceTimeVector
{
public:
  SpaceTimeVector() = default;

  explicit SpaceTimeVector(const SpaceTimeLayout & layout)
      : layout_(layout), data_(Eigen::VectorXd::Zero(layout.total()))
  {
    ++detail::full_order_allocations();
  }

  SpaceTimeVector(const SpaceTimeLayout & layout, Eigen::VectorXd data) : layout_(layout), data_(std::move(data))
  {
    if (data_.size() != layout_.total()) throw DimensionError("SpaceTimeVector: data length mismatch");
    ++detail::full_order_allocations();
  }

  const SpaceTimeLayout & layout() const { return layout_; }
  Eigen::VectorXd & data() { return data_; }
  const Eigen::VectorXd & data() const { return data_; }

  auto block(Var var) { return data_.segment(layout_.offset(var), layout_.length(var)); }
  auto block(Var var) const { return data_.segment(layout_.offset(var), layout_.length(var)); }

  /// Coefficients of `var` at step k (0-based, i.e. time t_{k+1}).
  auto step(Var var, int k)
  {
    const int n = layout_.spatial(var);
    return data_.segment(layout_.offset(var) + static_cast<Eigen::Index>(k) * n, n);
  }
  auto step(Var var, int k) const
  {
    const int n = layout_.spatial(var);
    return data_.segment(layout_.offset(var) + static_cast<Eigen::Index>(k) * n, n);
  }

private:
  SpaceTimeLayout layout_;
  Eigen::VectorXd data_;
};

/// Velocity/height trajectory over t_1 .. t_Nt, time-major.
struct StateTrajectory
{
  int nt = 0;
  Eigen::VectorXd v;
  Eigen::VectorXd h;

  auto v_step(int k, int nv) const { return v.segment(static_cast<Eigen::Index>(k) * nv, nv); }
  auto h_step(int k, int nh) const { return h.segment(static_cast<Eigen::Index>(k) * nh, nh); }
};

struct ProblemData
{
  Eigen::VectorXd v0;
  Eigen::VectorXd h0;
  /// Desired trajectory, already scaled by mu3.
  Eigen::VectorXd vd;
  Eigen::VectorXd hd;
};

struct InitialState
{
  Eigen::VectorXd v0;
  Eigen::VectorXd h0;
};

/// v0 = 0, h0 = 0.2 (1 + 5 exp(1 - (x-5)^2 - (y-5)^2)).
inline InitialState initial_conditions(const Mesh & mesh)
{
  InitialState ic;
  ic.v0 = Eigen::VectorXd::Zero(2 * mesh.num_vertices());
  ic.h0 = mesh.interpolate([](double x, double y) {
    return 0.2 * (1.0 + 5.0 * std::exp(-(x - 5.0) * (x - 5.0) - (y - 5.0) * (y - 5.0) + 1.0));
  });
  return ic;
}

/// Initial state of the desired profile: v = 0, h = 2 exp(1 - (x-5)^2 - (y-5)^2).
inline InitialState desired_initial_conditions(const Mesh & mesh)
{
  InitialState ic;
  ic.v0 = Eigen::VectorXd::Zero(2 * mesh.num_vertices());
  ic.h0 = mesh.interpolate(
      [](double x, double y) { return 2.0 * std::exp(-(x - 5.0) * (x - 5.0) - (y - 5.0) * (y - 5.0) + 1.0); });
  return ic;
}

struct NewtonSettings
{
  double tol_abs = 1e-10;
  double tol_rel = 1e-8;
  int max_iterations = 20;
  /// Per-step tolerances of the forward (uncontrolled) solver.
  double step_tol_abs = 1e-12;
  double step_tol_rel = 1e-12;
  int step_max_iterations = 30;
  int max_halvings = 8;
};

namespace detail {

inline Eigen::VectorXd masked(const Eigen::Ref<const Eigen::VectorXd> & x, const std::vector<int> & dofs)
{
  Eigen::VectorXd out = x;
  for (int d : dofs) out[d] = 0.0;
  return out;
}

/// Append s * M shifted by (r0, c0), skipping masked rows and columns.
inline void add_block(std::vector<Triplet> & trips, const SparseMatrix & M, Eigen::Index r0, Eigen::Index c0,
                      double s, const std::vector<char> * row_skip = nullptr,
                      const std::vector<char> * col_skip = nullptr)
{
  for (int col = 0; col < M.outerSize(); ++col) {
    if (col_skip && (*col_skip)[static_cast<std::size_t>(col)]) continue;
    for (SparseMatrix::InnerIterator it(M, col); it; ++it) {
      if (row_skip && (*row_skip)[static_cast<std::size_t>(it.row())]) continue;
      trips.emplace_back(static_cast<int>(r0 + it.row()), static_cast<int>(c0 + col), s * it.value());
    }
  }
}

/**
 * Residual of one backward Euler step of the state equations. Row layout
 * [momentum (nv); continuity (nh)].
 */
inline Eigen::VectorXd state_step_residual(const AffineOperatorSet & ops, const Parameters & p,
                                           const Eigen::Ref<const Eigen::VectorXd> & v,
                                           const Eigen::Ref<const Eigen::VectorXd> & h,
                                           const Eigen::Ref<const Eigen::VectorXd> & v_prev,
                                           const Eigen::Ref<const Eigen::VectorXd> & h_prev,
                                           const Eigen::Ref<const Eigen::VectorXd> & u)
{
  const double dt = p.dt();
  const auto & bc = ops.v_space.dirichlet_dofs;
  const Eigen::VectorXd vm  = masked(v, bc);
  const Eigen::VectorXd vpm = masked(v_prev, bc);
  Eigen::VectorXd r(ops.nv() + ops.nh());
  auto rv = r.head(ops.nv());
  rv = ops.M_v * (vm - vpm) + dt * p.mu1 * (ops.K * vm) + dt * p.mu2 * ops.T_adv.apply(Axis::Test, vm, vm) +
       dt * (ops.D * h) - dt * (ops.M_u * u);
  for (int d : bc) rv[d] = v[d];
  r.tail(ops.nh()) = ops.M_h * (h - h_prev) + dt * ops.T_div.apply(Axis::Test, h, vm);
  return r;
}

/**
 * Linearized state operator of one step (columns of the current step only),
 * written into `trips` with the given offsets. Constrained momentum rows get
 * a unit entry on the matching velocity column.
 */
inline void state_step_jacobian(std::vector<Triplet> & trips, const AffineOperatorSet & ops, const Parameters & p,
                                const Eigen::Ref<const Eigen::VectorXd> & v,
                                const Eigen::Ref<const Eigen::VectorXd> & h, Eigen::Index row_v, Eigen::Index row_h,
                                Eigen::Index col_v, Eigen::Index col_h, const std::vector<char> & bc_mask)
{
  const double dt = p.dt();
  const Eigen::VectorXd vm = masked(v, ops.v_space.dirichlet_dofs);
  SparseMatrix Svv = ops.M_v + dt * p.mu1 * ops.K;
  if (p.mu2 != 0.0) Svv += dt * p.mu2 * (ops.H(vm) + ops.Hbar(vm));
  add_block(trips, Svv, row_v, col_v, 1.0, &bc_mask, &bc_mask);
  add_block(trips, ops.D, row_v, col_h, dt, &bc_mask, nullptr);
  for (int d : ops.v_space.dirichlet_dofs) trips.emplace_back(static_cast<int>(row_v + d), static_cast<int>(col_v + d), 1.0);
  add_block(trips, ops.F(h), row_h, col_v, dt, nullptr, &bc_mask);
  SparseMatrix Shh = ops.M_h + dt * ops.G(vm);
  add_block(trips, Shh, row_h, col_h, 1.0);
}

}  // namespace detail

struct ForwardResult
{
  StateTrajectory trajectory;
  std::vector<int> step_iterations;
};

/**
 * March the state equations forward with a given control (time-major, may be
 * empty for u = 0). Each step is a quadratic system solved by Newton.
 */
inline ForwardResult forward_solve(const AffineOperatorSet & ops, const Parameters & p, const InitialState & ic,
                                   const Eigen::VectorXd & control = {}, const NewtonSettings & settings = {})
{
  p.validate();
  const int nv = ops.nv(), nh = ops.nh(), nu = ops.nu(), nt = p.nt;
  if (ic.v0.size() != nv || ic.h0.size() != nh) throw DimensionError("forward_solve: initial state size mismatch");
  if (control.size() != 0 && control.size() != static_cast<Eigen::Index>(nt) * nu)
    throw DimensionError("forward_solve: control length mismatch");

  const auto bc_mask = ops.v_space.dirichlet_mask();
  ForwardResult out;
  out.trajectory.nt = nt;
  out.trajectory.v.resize(static_cast<Eigen::Index>(nt) * nv);
  out.trajectory.h.resize(static_cast<Eigen::Index>(nt) * nh);
  const Eigen::VectorXd zero_u = Eigen::VectorXd::Zero(nu);

  Eigen::VectorXd v_prev = detail::masked(ic.v0, ops.v_space.dirichlet_dofs);
  Eigen::VectorXd h_prev = ic.h0;
  SparseDirectSolver lu;
  for (int k = 0; k < nt; ++k) {
    const Eigen::VectorXd u = control.size() ? Eigen::VectorXd(control.segment(static_cast<Eigen::Index>(k) * nu, nu))
                                             : zero_u;
    Eigen::VectorXd v = v_prev, h = h_prev;
    Eigen::VectorXd r = detail::state_step_residual(ops, p, v, h, v_prev, h_prev, u);
    const double r0 = r.norm();
    double rn       = r0;
    int it          = 0;
    while (rn > settings.step_tol_abs + settings.step_tol_rel * r0) {
      if (it == settings.step_max_iterations) {
        throw NonConvergenceError("forward solve: Newton did not converge at step " + std::to_string(k + 1), rn);
      }
      std::vector<Triplet> trips;
      detail::state_step_jacobian(trips, ops, p, v, h, 0, nv, 0, nv, bc_mask);
      SparseMatrix J(nv + nh, nv + nh);
      J.setFromTriplets(trips.begin(), trips.end());
      lu.factorize(J);
      const Eigen::VectorXd delta = lu.solve(-r);
      v += delta.head(nv);
      h += delta.tail(nh);
      r  = detail::state_step_residual(ops, p, v, h, v_prev, h_prev, u);
      rn = r.norm();
      ++it;
      if (!std::isfinite(rn))
        throw NonConvergenceError("forward solve: Newton diverged at step " + std::to_string(k + 1), rn);
    }
    out.step_iterations.push_back(it);
    out.trajectory.v.segment(static_cast<Eigen::Index>(k) * nv, nv) = v;
    out.trajectory.h.segment(static_cast<Eigen::Index>(k) * nh, nh) = h;
    v_prev = v;
    h_prev = h;
  }
  return out;
}

inline StateTrajectory uncontrolled_forward_solve(const AffineOperatorSet & ops, const Parameters & p,
                                                  const InitialState & ic, const NewtonSettings & settings = {})
{
  return forward_solve(ops, p, ic, {}, settings).trajectory;
}

/// Uncontrolled trajectory from the desired initial state, scaled by mu3.
inline StateTrajectory desired_profile(const AffineOperatorSet & ops, const Mesh & mesh, const Parameters & p,
                                       const NewtonSettings & settings = {})
{
  StateTrajectory t = uncontrolled_forward_solve(ops, p, desired_initial_conditions(mesh), settings);
  t.v *= p.mu3;
  t.h *= p.mu3;
  return t;
}

inline ProblemData make_problem(const InitialState & ic, const StateTrajectory & desired)
{
  return ProblemData{ic.v0, ic.h0, desired.v, desired.h};
}

inline void check_problem(const SpaceTimeLayout & L, const ProblemData & data)
{
  if (data.v0.size() != L.nv || data.h0.size() != L.nh || data.vd.size() != L.length(Var::V) ||
      data.hd.size() != L.length(Var::H))
    throw DimensionError("problem data does not match the space-time layout");
}

/// Right-hand side f = [dt M vd; dt M hd; 0; M v0 (first step); M h0 (first step)].
inline Eigen::VectorXd rhs_vector(const AffineOperatorSet & ops, const Parameters & p, const ProblemData & data)
{
  const SpaceTimeLayout L = make_layout(ops, p.nt);
  check_problem(L, data);
  const double dt = p.dt();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(L.total());
  for (int k = 0; k < L.nt; ++k) {
    f.segment(L.offset(Var::V) + k * L.nv, L.nv) = dt * (ops.M_v * data.vd.segment(k * L.nv, L.nv));
    f.segment(L.offset(Var::H) + k * L.nh, L.nh) = dt * (ops.M_h * data.hd.segment(k * L.nh, L.nh));
  }
  auto fv = f.segment(L.offset(Var::Chi), L.nv);
  fv      = ops.M_v * detail::masked(data.v0, ops.v_space.dirichlet_dofs);
  for (int d : ops.v_space.dirichlet_dofs) fv[d] = 0.0;
  f.segment(L.offset(Var::Lambda), L.nh) = ops.M_h * data.h0;
  for (int k = 0; k < L.nt; ++k)
    for (int d : ops.v_space.dirichlet_dofs) f[L.offset(Var::V) + k * L.nv + d] = 0.0;
  return f;
}

/// R(w) = G(w) w - f, rows [adjoint-v; adjoint-h; optimality; state-v; state-h].
inline Eigen::VectorXd assemble_residual(const AffineOperatorSet & ops, const SpaceTimeVector & w,
                                         const Parameters & p, const ProblemData & data)
{
  const SpaceTimeLayout L = make_layout(ops, p.nt);
  if (!(w.layout() == L)) throw DimensionError("assemble_residual: vector layout mismatch");
  check_problem(L, data);
  const double dt = p.dt();
  const auto & bc = ops.v_space.dirichlet_dofs;
  const int nt = L.nt, nv = L.nv, nh = L.nh, nu = L.nu;

  std::vector<Eigen::VectorXd> vm(static_cast<std::size_t>(nt)), cm(static_cast<std::size_t>(nt));
  for (int k = 0; k < nt; ++k) {
    vm[k] = detail::masked(w.step(Var::V, k), bc);
    cm[k] = detail::masked(w.step(Var::Chi, k), bc);
  }
  const Eigen::VectorXd v0m = detail::masked(data.v0, bc);

  Eigen::VectorXd R(L.total());
  for (int k = 0; k < nt; ++k) {
    const auto h   = w.step(Var::H, k);
    const auto u   = w.step(Var::U, k);
    const auto lam = w.step(Var::Lambda, k);

    // adjoint-v
    Eigen::VectorXd rv = dt * (ops.M_v * (vm[k] - data.vd.segment(k * nv, nv)));
    rv += ops.M_v * cm[k] + dt * p.mu1 * (ops.K * cm[k]);
    if (k + 1 < nt) rv -= ops.M_v * cm[k + 1];
    rv += dt * p.mu2 * (ops.T_adv.apply(Axis::Trial, cm[k], vm[k]) + ops.T_adv.apply(Axis::Coeff, cm[k], vm[k]));
    rv += dt * ops.T_div.apply(Axis::Coeff, lam, h);
    for (int d : bc) rv[d] = w.step(Var::Chi, k)[d];
    R.segment(L.offset(Var::V) + k * nv, nv) = rv;

    // adjoint-h
    Eigen::VectorXd rh = dt * (ops.M_h * (h - data.hd.segment(k * nh, nh)));
    rh += dt * (ops.D.transpose() * cm[k]) + ops.M_h * lam;
    if (k + 1 < nt) rh -= ops.M_h * w.step(Var::Lambda, k + 1);
    rh += dt * ops.T_div.apply(Axis::Trial, lam, vm[k]);
    R.segment(L.offset(Var::H) + k * nh, nh) = rh;

    // optimality
    R.segment(L.offset(Var::U) + k * nu, nu) = p.alpha * dt * (ops.M_u * u) - dt * (ops.M_u.transpose() * cm[k]);

    // state
    const Eigen::VectorXd & vprev = k == 0 ? v0m : vm[k - 1];
    const Eigen::VectorXd hprev   = k == 0 ? data.h0 : Eigen::VectorXd(w.step(Var::H, k - 1));
    Eigen::VectorXd sv = ops.M_v * (vm[k] - vprev) + dt * p.mu1 * (ops.K * vm[k]) +
                         dt * p.mu2 * ops.T_adv.apply(Axis::Test, vm[k], vm[k]) + dt * (ops.D * h) -
                         dt * (ops.M_u * u);
    for (int d : bc) sv[d] = w.step(Var::V, k)[d];
    R.segment(L.offset(Var::Chi) + k * nv, nv)   = sv;
    R.segment(L.offset(Var::Lambda) + k * nh, nh) = ops.M_h * (h - hprev) + dt * ops.T_div.apply(Axis::Test, h, vm[k]);
  }
  return R;
}

/// Generalized saddle-point Newton matrix [[A, B^T], [B, 0]].
struct SaddlePointMatrix
{
  SparseMatrix A;  // state-control Hessian block (n_x x n_x)
  SparseMatrix B;  // linearized state operator (n_p x n_x)

  Eigen::Index nx() const { return A.rows(); }
  Eigen::Index np() const { return B.rows(); }

  SparseMatrix assemble() const
  {
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(A.nonZeros() + 2 * B.nonZeros()));
    detail::add_block(trips, A, 0, 0, 1.0);
    const SparseMatrix Bt = B.transpose();
    detail::add_block(trips, Bt, 0, nx(), 1.0);
    detail::add_block(trips, B, nx(), 0, 1.0);
    SparseMatrix J(nx() + np(), nx() + np());
    J.setFromTriplets(trips.begin(), trips.end());
    return J;
  }
};

inline SaddlePointMatrix assemble_jacobian(const AffineOperatorSet & ops, const SpaceTimeVector & w,
                                           const Parameters & p)
{
  const SpaceTimeLayout L = make_layout(ops, p.nt);
  if (!(w.layout() == L)) throw DimensionError("assemble_jacobian: vector layout mismatch");
  const double dt = p.dt();
  const auto & bc    = ops.v_space.dirichlet_dofs;
  const auto bc_mask = ops.v_space.dirichlet_mask();
  const int nt = L.nt, nv = L.nv, nh = L.nh, nu = L.nu;
  const Eigen::Index xv = L.offset(Var::V), xh = L.offset(Var::H), xu = L.offset(Var::U);
  // adjoint blocks indexed from zero inside B's row space
  const Eigen::Index pv = 0, ph = L.length(Var::Chi);

  std::vector<Triplet> a_trips, b_trips;
  for (int k = 0; k < nt; ++k) {
    const Eigen::VectorXd vk  = w.step(Var::V, k);
    const Eigen::VectorXd hk  = w.step(Var::H, k);
    const Eigen::VectorXd cmk = detail::masked(w.step(Var::Chi, k), bc);
    const Eigen::VectorXd lk  = w.step(Var::Lambda, k);

    // A: Hessian of the Lagrangian in (v, h, u)
    SparseMatrix Avv = dt * ops.M_v;
    if (p.mu2 != 0.0) {
      const SparseMatrix C = ops.T_adv.contract(Axis::Test, cmk);
      Avv += dt * p.mu2 * (C + SparseMatrix(C.transpose()));
    }
    detail::add_block(a_trips, Avv, xv + k * nv, xv + k * nv, 1.0, &bc_mask, &bc_mask);
    const SparseMatrix E = ops.T_div.contract(Axis::Test, lk);  // (h x v)
    detail::add_block(a_trips, E, xh + k * nh, xv + k * nv, dt, nullptr, &bc_mask);
    detail::add_block(a_trips, SparseMatrix(E.transpose()), xv + k * nv, xh + k * nh, dt, &bc_mask, nullptr);
    detail::add_block(a_trips, ops.M_h, xh + k * nh, xh + k * nh, dt);
    detail::add_block(a_trips, ops.M_u, xu + k * nu, xu + k * nu, p.alpha * dt);

    // B: linearized state equations
    detail::state_step_jacobian(b_trips, ops, p, vk, hk, pv + k * nv, ph + k * nh, xv + k * nv, xh + k * nh,
                                bc_mask);
    detail::add_block(b_trips, ops.M_u, pv + k * nv, xu + k * nu, -dt, &bc_mask, nullptr);
    if (k > 0) {
      detail::add_block(b_trips, ops.M_v, pv + k * nv, xv + (k - 1) * nv, -1.0, &bc_mask, &bc_mask);
      detail::add_block(b_trips, ops.M_h, ph + k * nh, xh + (k - 1) * nh, -1.0);
    }
  }
  SaddlePointMatrix J;
  J.A.resize(L.state_length(), L.state_length());
  J.A.setFromTriplets(a_trips.begin(), a_trips.end());
  J.B.resize(L.adjoint_length(), L.state_length());
  J.B.setFromTriplets(b_trips.begin(), b_trips.end());
  return J;
}

/// J = 1/2 sum_k dt (|v_k - vd_k|^2_M + |h_k - hd_k|^2_M + alpha |u_k|^2_M).
inline double evaluate_cost(const AffineOperatorSet & ops, const SpaceTimeVector & w, const Parameters & p,
                            const ProblemData & data)
{
  const SpaceTimeLayout L = make_layout(ops, p.nt);
  if (!(w.layout() == L)) throw DimensionError("evaluate_cost: vector layout mismatch");
  check_problem(L, data);
  const double dt = p.dt();
  double cost = 0.0;
  for (int k = 0; k < L.nt; ++k) {
    const Eigen::VectorXd ev = w.step(Var::V, k) - data.vd.segment(k * L.nv, L.nv);
    const Eigen::VectorXd eh = w.step(Var::H, k) - data.hd.segment(k * L.nh, L.nh);
    const auto u             = w.step(Var::U, k);
    cost += 0.5 * dt * (ev.dot(ops.M_v * ev) + eh.dot(ops.M_h * eh) + p.alpha * u.dot(ops.M_u * u));
  }
  return cost;
}

/**
 * Solves J dw = -R for the saddle-point Newton matrix without factorizing J
 * itself. Constrained velocity and adjoint-velocity dofs decouple (their rows
 * are unit rows), and the optimality rows give
 *   du = chi_int / alpha - (alpha dt M_u)^{-1} R_u,
 * so eliminating both leaves the quasi-definite system
 *   [A'  B'^T       ] [dx']   [-R_x'                  ]
 *   [B'  -dt/alpha M] [dp'] = [-R_p' - P R_u / alpha  ]
 * on interior velocity, height and the matching adjoints. The step is the
 * same as the one from J, only cheaper to factorize.
 */
class CondensedKktSolver
{
public:
  CondensedKktSolver(const AffineOperatorSet & ops, const Parameters & p) : L_(make_layout(ops, p.nt)), p_(p)
  {
    const auto mask = ops.v_space.dirichlet_mask();
    for (int i = 0; i < L_.nv; ++i)
      (mask[static_cast<std::size_t>(i)] ? bnd_ : interior_).push_back(i);

    // state-side unknowns: interior v, then h, all steps
    x_map_.assign(static_cast<std::size_t>(L_.state_length()), -1);
    int n = 0;
    for (int k = 0; k < L_.nt; ++k)
      for (int i : interior_) x_map_[static_cast<std::size_t>(L_.offset(Var::V) + k * L_.nv + i)] = n++;
    for (Eigen::Index i = 0; i < L_.length(Var::H); ++i) x_map_[static_cast<std::size_t>(L_.offset(Var::H) + i)] = n++;
    nx_ = n;
    // adjoint-side unknowns, indexed inside the adjoint block
    p_map_.assign(static_cast<std::size_t>(L_.adjoint_length()), -1);
    n = 0;
    for (int k = 0; k < L_.nt; ++k)
      for (int i : interior_) p_map_[static_cast<std::size_t>(k * L_.nv + i)] = n++;
    for (Eigen::Index i = 0; i < L_.length(Var::Lambda); ++i)
      p_map_[static_cast<std::size_t>(L_.length(Var::Chi) + i)] = n++;
    np_ = n;

    M_u_ = ops.M_u;
    mass_u_.compute(M_u_);
    if (mass_u_.info() != Eigen::Success) throw FactorizationError("control mass matrix is not positive definite");
  }

  void factorize(const SaddlePointMatrix & S)
  {
    if (S.nx() != L_.state_length() || S.np() != L_.adjoint_length())
      throw DimensionError("CondensedKktSolver: Jacobian does not match the layout");
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(S.A.nonZeros() + 2 * S.B.nonZeros()));
    for (int c = 0; c < S.A.outerSize(); ++c) {
      const int cc = x_map_[static_cast<std::size_t>(c)];
      if (cc < 0) continue;
      for (SparseMatrix::InnerIterator it(S.A, c); it; ++it) {
        const int rr = x_map_[static_cast<std::size_t>(it.row())];
        if (rr >= 0) trips.emplace_back(rr, cc, it.value());
      }
    }
    for (int c = 0; c < S.B.outerSize(); ++c) {
      const int cc = x_map_[static_cast<std::size_t>(c)];
      if (cc < 0) continue;
      for (SparseMatrix::InnerIterator it(S.B, c); it; ++it) {
        const int rr = p_map_[static_cast<std::size_t>(it.row())];
        if (rr < 0) continue;
        trips.emplace_back(nx_ + rr, cc, it.value());
        trips.emplace_back(cc, nx_ + rr, it.value());
      }
    }
    const double s = -p_.dt() / p_.alpha;
    for (int k = 0; k < L_.nt; ++k) {
      for (int c = 0; c < M_u_.outerSize(); ++c) {
        const int cc = p_map_[static_cast<std::size_t>(k * L_.nv + c)];
        if (cc < 0) continue;
        for (SparseMatrix::InnerIterator it(M_u_, c); it; ++it) {
          const int rr = p_map_[static_cast<std::size_t>(k * L_.nv + it.row())];
          if (rr >= 0) trips.emplace_back(nx_ + rr, nx_ + cc, s * it.value());
        }
      }
    }
    SparseMatrix K(nx_ + np_, nx_ + np_);
    K.setFromTriplets(trips.begin(), trips.end());
    lu_.factorize(K);
  }

  /// Newton step dw with J dw = -R.
  Eigen::VectorXd step(const Eigen::VectorXd & R) const
  {
    const Eigen::Index xs = L_.state_length();
    const Eigen::Index ou = L_.offset(Var::U);
    Eigen::VectorXd rhs(nx_ + np_);
    for (Eigen::Index i = 0; i < xs; ++i) {
      const int m = x_map_[static_cast<std::size_t>(i)];
      if (m >= 0) rhs[m] = -R[i];
    }
    for (Eigen::Index i = 0; i < L_.adjoint_length(); ++i) {
      const int m = p_map_[static_cast<std::size_t>(i)];
      if (m >= 0) rhs[nx_ + m] = -R[xs + i];
    }
    // fold the optimality residual into the interior state-velocity rows
    for (int k = 0; k < L_.nt; ++k)
      for (int i : interior_) rhs[nx_ + p_map_[static_cast<std::size_t>(k * L_.nv + i)]] -= R[ou + k * L_.nu + i] / p_.alpha;

    const Eigen::VectorXd y = lu_.solve(rhs);
    Eigen::VectorXd dw      = Eigen::VectorXd::Zero(L_.total());
    for (Eigen::Index i = 0; i < xs; ++i) {
      const int m = x_map_[static_cast<std::size_t>(i)];
      if (m >= 0) dw[i] = y[m];
    }
    for (Eigen::Index i = 0; i < L_.adjoint_length(); ++i) {
      const int m = p_map_[static_cast<std::size_t>(i)];
      if (m >= 0) dw[xs + i] = y[nx_ + m];
    }
    // unit rows: constrained adjoint-v rows fix chi_b, constrained state-v rows fix v_b
    for (int k = 0; k < L_.nt; ++k)
      for (int d : bnd_) {
        dw[L_.offset(Var::V) + k * L_.nv + d]   = -R[xs + k * L_.nv + d];
        dw[L_.offset(Var::Chi) + k * L_.nv + d] = -R[L_.offset(Var::V) + k * L_.nv + d];
      }
    const double scale = 1.0 / (p_.alpha * p_.dt());
    for (int k = 0; k < L_.nt; ++k) {
      Eigen::VectorXd chi = dw.segment(L_.offset(Var::Chi) + k * L_.nv, L_.nv);
      for (int d : bnd_) chi[d] = 0.0;
      const Eigen::VectorXd corr = mass_u_.solve(Eigen::VectorXd(R.segment(ou + k * L_.nu, L_.nu)));
      dw.segment(ou + k * L_.nu, L_.nu) = chi / p_.alpha - scale * corr;
    }
    return dw;
  }

  Eigen::Index condensed_size() const { return nx_ + np_; }

private:
  SpaceTimeLayout L_;
  Parameters p_;
  std::vector<int> interior_, bnd_;
  std::vector<int> x_map_, p_map_;
  int nx_ = 0, np_ = 0;
  SparseMatrix M_u_;
  Eigen::SimplicialLDLT<SparseMatrix> mass_u_;
  SparseDirectSolver lu_;
};

struct TruthResult
{
  SpaceTimeVector w;
  int iterations = 0;
  std::vector<double> residual_history;
  double min_height = 0.0;
};

/// State from an uncontrolled forward solve, zero control and adjoint.
inline SpaceTimeVector default_initial_guess(const AffineOperatorSet & ops, const Parameters & p,
                                             const ProblemData & data, const NewtonSettings & settings = {})
{
  SpaceTimeVector w(make_layout(ops, p.nt));
  const StateTrajectory s = uncontrolled_forward_solve(ops, p, InitialState{data.v0, data.h0}, settings);
  w.block(Var::V) = s.v;
  w.block(Var::H) = s.h;
  return w;
}

/**
 * Newton on the full optimality system. Converged when
 * |R| <= tol_abs + tol_rel |R(w0)|. A step that increases the residual is
 * halved until it does not (or the halving budget is used up).
 */
inline TruthResult truth_newton_solve(const AffineOperatorSet & ops, const Parameters & p, const ProblemData & data,
                                      const SpaceTimeVector * init = nullptr, const NewtonSettings & settings = {},
                                      std::ostream * warn = &std::cerr)
{
  p.validate();
  TruthResult res;
  res.w = init ? *init : default_initial_guess(ops, p, data, settings);
  SpaceTimeVector & w = res.w;
  Eigen::VectorXd R   = assemble_residual(ops, w, p, data);
  double rn           = R.norm();
  const double tol    = settings.tol_abs + settings.tol_rel * rn;
  res.residual_history.push_back(rn);

  CondensedKktSolver kkt(ops, p);
  while (rn > tol) {
    if (res.iterations == settings.max_iterations) {
      throw NonConvergenceError("truth Newton: no convergence in " + std::to_string(settings.max_iterations) +
                                    " iterations",
                                rn);
    }
    kkt.factorize(assemble_jacobian(ops, w, p));
    const Eigen::VectorXd delta = kkt.step(R);

    double step = 1.0;
    SpaceTimeVector trial(w.layout(), w.data() + delta);
    Eigen::VectorXd Rt = assemble_residual(ops, trial, p, data);
    for (int n = 0; n < settings.max_halvings && !(Rt.norm() < rn); ++n) {
      step *= 0.5;
      trial.data() = w.data() + step * delta;
      Rt           = assemble_residual(ops, trial, p, data);
    }
    w  = std::move(trial);
    R  = std::move(Rt);
    rn = R.norm();
    ++res.iterations;
    res.residual_history.push_back(rn);
    if (!std::isfinite(rn)) throw NonConvergenceError("truth Newton: residual is not finite", rn);
  }
  res.min_height = w.block(Var::H).minCoeff();
  if (res.min_height <= 0.0 && warn) {
    *warn << "warning: water depth reaches " << res.min_height
          << " in the converged truth solution; the model assumes h > 0\n";
  }
  return res;
}

/// Per-step CSV dump `<prefix>_t<k>.csv` with k = 1 .. Nt.
inline void write_solution_csv(const std::string & prefix, const Mesh & mesh, const SpaceTimeVector & w)
{
  const auto & L = w.layout();
  for (int k = 0; k < L.nt; ++k) {
    const std::string path = prefix + "_t" + std::to_string(k + 1) + ".csv";
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path);
    os.precision(12);
    os << "x,y,vx,vy,h,ux,uy,chix,chiy,lambda\n";
    const auto v = w.step(Var::V, k), h = w.step(Var::H, k), u = w.step(Var::U, k), c = w.step(Var::Chi, k),
               l = w.step(Var::Lambda, k);
    for (int n = 0; n < mesh.num_vertices(); ++n) {
      os << mesh.vertices[n].x() << ',' << mesh.vertices[n].y() << ',' << v[2 * n] << ',' << v[2 * n + 1] << ','
         << h[n] << ',' << u[2 * n] << ',' << u[2 * n + 1] << ',' << c[2 * n] << ',' << c[2 * n + 1] << ',' << l[n]
         << '\n';
    }
  }
}

}  // namespace sweocp

#endif  // SWEOCP_SPACETIME_HPP
