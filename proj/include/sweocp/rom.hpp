#ifndef SWEOCP_ROM_HPP
#define SWEOCP_ROM_HPP

/**
 * @file
 * @brief Aggregated reduced spaces, offline Galerkin projection and the online
 * reduced Newton solver.
 *
 * Reduced unknown y = [a; b; e; c; d] with
 *   v = Z_V a, h = Z_H b, u = Z_U e, chi = Z_V c, lambda = Z_H d,
 * where Z_V spans the velocity and adjoint-velocity modes and Z_H the height
 * and adjoint-height modes. Every reduced quantity is obtained from the
 * parameter-independent operators once; online, the parameters enter only as
 * scalar weights and the reduced tensors are contracted densely.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "sweocp/error.hpp"
#include "sweocp/io.hpp"
#include "sweocp/operators.hpp"
#include "sweocp/pod.hpp"
#include "sweocp/spacetime.hpp"

namespace sweocp {

/// Dense (d0 x d1 x d2) tensor; slice l over the last index is a contiguous column-major d0 x d1 matrix.
class DenseTensor3
{
public:
  DenseTensor3() = default;
  DenseTensor3(int d0, int d1, int d2) : d_{d0, d1, d2}, data_(static_cast<std::size_t>(d0) * d1 * d2, 0.0) {}

  int dim(int a) const { return d_[a]; }
  double & operator()(int i, int j, int l) { return data_[index(i, j, l)]; }
  double operator()(int i, int j, int l) const { return data_[index(i, j, l)]; }

  Eigen::Map<Eigen::MatrixXd> slice(int l) { return {data_.data() + static_cast<std::size_t>(l) * d_[0] * d_[1], d_[0], d_[1]}; }
  Eigen::Map<const Eigen::MatrixXd> slice(int l) const
  {
    return {data_.data() + static_cast<std::size_t>(l) * d_[0] * d_[1], d_[0], d_[1]};
  }

  /// sum_l x_l T[:, :, l]  (d0 x d1)
  Eigen::MatrixXd contract_coeff(const Eigen::Ref<const Eigen::VectorXd> & x) const
  {
    check(x, 2);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d_[0], d_[1]);
    for (int l = 0; l < d_[2]; ++l)
      if (x[l] != 0.0) out.noalias() += x[l] * slice(l);
    return out;
  }
  /// sum_j x_j T[:, j, :]  (d0 x d2)
  Eigen::MatrixXd contract_trial(const Eigen::Ref<const Eigen::VectorXd> & x) const
  {
    check(x, 1);
    Eigen::MatrixXd out(d_[0], d_[2]);
    for (int l = 0; l < d_[2]; ++l) out.col(l).noalias() = slice(l) * x;
    return out;
  }
  /// sum_i x_i T[i, :, :]  (d1 x d2)
  Eigen::MatrixXd contract_test(const Eigen::Ref<const Eigen::VectorXd> & x) const
  {
    check(x, 0);
    Eigen::MatrixXd out(d_[1], d_[2]);
    for (int l = 0; l < d_[2]; ++l) out.col(l).noalias() = slice(l).transpose() * x;
    return out;
  }

  /// Leading sub-tensor.
  DenseTensor3 leading(int e0, int e1, int e2) const
  {
    if (e0 > d_[0] || e1 > d_[1] || e2 > d_[2]) throw DimensionError("DenseTensor3::leading: extent too large");
    DenseTensor3 out(e0, e1, e2);
    for (int l = 0; l < e2; ++l) out.slice(l) = slice(l).topLeftCorner(e0, e1);
    return out;
  }

  /// Stored as a d0 x (d1 d2) matrix for the binary container.
  Eigen::MatrixXd flat() const { return Eigen::Map<const Eigen::MatrixXd>(data_.data(), d_[0], d_[1] * d_[2]); }
  static DenseTensor3 from_flat(const Eigen::MatrixXd & M, int d1, int d2)
  {
    if (M.cols() != static_cast<Eigen::Index>(d1) * d2) throw IoError("tensor section has the wrong shape");
    DenseTensor3 t(static_cast<int>(M.rows()), d1, d2);
    std::copy(M.data(), M.data() + M.size(), t.data_.begin());
    return t;
  }

private:
  std::size_t index(int i, int j, int l) const
  {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(d_[0]) * (j + static_cast<std::size_t>(d_[1]) * l);
  }
  void check(const Eigen::Ref<const Eigen::VectorXd> & x, int axis) const
  {
    if (x.size() != d_[axis]) throw DimensionError("DenseTensor3: coefficient length mismatch");
  }

  std::array<int, 3> d_{0, 0, 0};
  std::vector<double> data_;
};

/**
 * Velocity-type (Z_V), height-type (Z_H) and control (Z_U) reduced bases.
 * State and adjoint modes are interleaved before orthonormalization, so the
 * aggregated space for any N is spanned by a leading block of columns:
 * prefix_v[N] and prefix_h[N] give its width.
 */
struct AggregatedBases
{
  Eigen::MatrixXd ZV, ZH, ZU;
  std::vector<int> prefix_v, prefix_h;

  int max_N() const { return static_cast<int>(ZU.cols()); }
  int nV(int N) const { return prefix_v.at(static_cast<std::size_t>(N)); }
  int nH(int N) const { return prefix_h.at(static_cast<std::size_t>(N)); }
  int total(int N) const { return 2 * nV(N) + 2 * nH(N) + N; }
};

namespace detail {

/// Interleave [a_1, b_1, a_2, b_2, ...] and orthonormalize, recording prefix widths.
inline Eigen::MatrixXd aggregate_pair(const Eigen::MatrixXd & A, const Eigen::MatrixXd & B,
                                      const SpaceTimeInnerProduct & ip, std::vector<int> & prefix)
{
  const Eigen::Index N = A.cols();
  Eigen::MatrixXd inter(A.rows(), 2 * N);
  for (Eigen::Index n = 0; n < N; ++n) {
    inter.col(2 * n)     = A.col(n);
    inter.col(2 * n + 1) = B.col(n);
  }
  std::vector<int> kept;
  // adjoint modes nearly inside the state span are dropped, not amplified
  Eigen::MatrixXd Q = orthonormalize(inter, ip, 1e-10, &kept);
  prefix.assign(static_cast<std::size_t>(N + 1), 0);
  for (int c : kept) prefix[static_cast<std::size_t>(c / 2 + 1)]++;
  for (std::size_t n = 1; n < prefix.size(); ++n) prefix[n] += prefix[n - 1];
  return Q;
}

inline void zero_constrained_rows(Eigen::MatrixXd & Z, const std::vector<int> & dofs, int nv, int nt)
{
  for (int k = 0; k < nt; ++k)
    for (int d : dofs) Z.row(static_cast<Eigen::Index>(k) * nv + d).setZero();
}

}  // namespace detail

/// pods ordered as all_vars: v, h, u, chi, lambda.
inline AggregatedBases aggregate_spaces(const std::array<PodBasis, 5> & pods, const AffineOperatorSet & ops, int nt,
                                        double dt)
{
  const int N = pods[0].size();
  for (const auto & b : pods)
    if (b.size() != N) throw ConfigError("aggregate_spaces: all variables need the same number of modes");

  Eigen::MatrixXd zv = pods[static_cast<int>(Var::V)].Z, zc = pods[static_cast<int>(Var::Chi)].Z;
  detail::zero_constrained_rows(zv, ops.v_space.dirichlet_dofs, ops.nv(), nt);
  detail::zero_constrained_rows(zc, ops.v_space.dirichlet_dofs, ops.nv(), nt);

  AggregatedBases Z;
  Z.ZV = detail::aggregate_pair(zv, zc, make_inner_product(ops, Var::V, nt, dt), Z.prefix_v);
  Z.ZH = detail::aggregate_pair(pods[static_cast<int>(Var::H)].Z, pods[static_cast<int>(Var::Lambda)].Z,
                                make_inner_product(ops, Var::H, nt, dt), Z.prefix_h);
  Z.ZU = pods[static_cast<int>(Var::U)].Z;
  return Z;
}

/// Sizes of one reduced vector [a; b; e; c; d].
struct ReducedLayout
{
  int nV = 0, nH = 0, nU = 0;

  int nx() const { return nV + nH + nU; }
  int np() const { return nV + nH; }
  int total() const { return nx() + np(); }
  int a() const { return 0; }
  int b() const { return nV; }
  int e() const { return nV + nH; }
  int c() const { return nx(); }
  int d() const { return nx() + nV; }
};

/**
 * Reduced operators for one basis size. Chains hold sum_k Z_k^T M Z_k minus
 * the sub-diagonal time coupling sum_k Z_k^T M Z_{k-1}; tensors are summed
 * over time steps with index order (test, trial, coefficient).
 */
struct RomOperators
{
  int N  = 0;
  int nt = 0;
  double T = 0.0;
  ReducedLayout layout;
  std::vector<int> prefix_v, prefix_h;

  Eigen::MatrixXd MV, MchainV, KV, DVH, MUV, MU, MH, MchainH;
  DenseTensor3 Tadv;  // (V, V, V)
  DenseTensor3 Tdiv;  // (H, H, V)
  Eigen::VectorXd f0V, f0H;  // initial-condition terms of the first step
  Eigen::VectorXd gV, gH;    // dt Z^T M (desired base), scaled by mu3 online

  double dt() const { return T / nt; }

  /// Operators of the aggregated space of size n <= N (leading blocks).
  RomOperators truncate(int n) const
  {
    if (n < 1 || n > N) throw DimensionError("RomOperators::truncate: N out of range");
    RomOperators r;
    r.N        = n;
    r.nt       = nt;
    r.T        = T;
    r.prefix_v = std::vector<int>(prefix_v.begin(), prefix_v.begin() + n + 1);
    r.prefix_h = std::vector<int>(prefix_h.begin(), prefix_h.begin() + n + 1);
    const int v = prefix_v[static_cast<std::size_t>(n)], h = prefix_h[static_cast<std::size_t>(n)];
    r.layout  = ReducedLayout{v, h, n};
    r.MV      = MV.topLeftCorner(v, v);
    r.MchainV = MchainV.topLeftCorner(v, v);
    r.KV      = KV.topLeftCorner(v, v);
    r.DVH     = DVH.topLeftCorner(v, h);
    r.MUV     = MUV.topLeftCorner(v, n);
    r.MU      = MU.topLeftCorner(n, n);
    r.MH      = MH.topLeftCorner(h, h);
    r.MchainH = MchainH.topLeftCorner(h, h);
    r.Tadv    = Tadv.leading(v, v, v);
    r.Tdiv    = Tdiv.leading(h, h, v);
    r.f0V     = f0V.head(v);
    r.f0H     = f0H.head(h);
    r.gV      = gV.head(v);
    r.gH      = gH.head(h);
    return r;
  }

  io::Archive to_archive() const
  {
    io::Archive a;
    a.put_scalar("N", N);
    a.put_scalar("nt", nt);
    a.put_scalar("T", T);
    a.put("prefix_v", Eigen::Map<const Eigen::VectorXi>(prefix_v.data(), static_cast<Eigen::Index>(prefix_v.size())).cast<double>());
    a.put("prefix_h", Eigen::Map<const Eigen::VectorXi>(prefix_h.data(), static_cast<Eigen::Index>(prefix_h.size())).cast<double>());
    a.put("MV", MV);
    a.put("MchainV", MchainV);
    a.put("KV", KV);
    a.put("DVH", DVH);
    a.put("MUV", MUV);
    a.put("MU", MU);
    a.put("MH", MH);
    a.put("MchainH", MchainH);
    a.put("Tadv", Tadv.flat());
    a.put("Tdiv", Tdiv.flat());
    a.put("f0V", f0V);
    a.put("f0H", f0H);
    a.put("gV", gV);
    a.put("gH", gH);
    return a;
  }

  static RomOperators from_archive(const io::Archive & a)
  {
    RomOperators r;
    r.N  = static_cast<int>(a.get_scalar("N"));
    r.nt = static_cast<int>(a.get_scalar("nt"));
    r.T  = a.get_scalar("T");
    auto ints = [&](const std::string & tag) {
      const Eigen::MatrixXd & m = a.get(tag);
      std::vector<int> out(static_cast<std::size_t>(m.size()));
      for (Eigen::Index i = 0; i < m.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(m.data()[i]);
      return out;
    };
    r.prefix_v = ints("prefix_v");
    r.prefix_h = ints("prefix_h");
    if (r.prefix_v.size() != static_cast<std::size_t>(r.N + 1) || r.prefix_h.size() != r.prefix_v.size())
      throw IoError("reduced operators: inconsistent prefix tables");
    const int v = r.prefix_v.back(), h = r.prefix_h.back();
    r.layout    = ReducedLayout{v, h, r.N};
    r.MV        = a.get("MV");
    r.MchainV   = a.get("MchainV");
    r.KV        = a.get("KV");
    r.DVH       = a.get("DVH");
    r.MUV       = a.get("MUV");
    r.MU        = a.get("MU");
    r.MH        = a.get("MH");
    r.MchainH   = a.get("MchainH");
    r.Tadv      = DenseTensor3::from_flat(a.get("Tadv"), v, v);
    r.Tdiv      = DenseTensor3::from_flat(a.get("Tdiv"), h, v);
    r.f0V       = a.get("f0V");
    r.f0H       = a.get("f0H");
    r.gV        = a.get("gV");
    r.gH        = a.get("gH");
    if (r.MV.rows() != v || r.MH.rows() != h || r.Tadv.dim(0) != v || r.Tdiv.dim(0) != h)
      throw IoError("reduced operators: section sizes do not match the prefix tables");
    return r;
  }
};

namespace detail {

inline Eigen::MatrixXd step_rows(const Eigen::MatrixXd & Z, int k, int n)
{
  return Z.middleRows(static_cast<Eigen::Index>(k) * n, n);
}

/// sum_k Z1_k^T A Z2_{k+shift}, shift in {0, -1}.
inline Eigen::MatrixXd project_blocks(const Eigen::MatrixXd & Z1, const SparseMatrix & A, const Eigen::MatrixXd & Z2,
                                      int nt, int shift = 0)
{
  const int n1 = static_cast<int>(A.rows()), n2 = static_cast<int>(A.cols());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(Z1.cols(), Z2.cols());
  for (int k = 0; k < nt; ++k) {
    const int k2 = k + shift;
    if (k2 < 0 || k2 >= nt) continue;
    out.noalias() += step_rows(Z1, k, n1).transpose() * (A * step_rows(Z2, k2, n2));
  }
  return out;
}

}  // namespace detail

/**
 * Offline projection. `desired_base` is the desired trajectory with the mu3
 * factor removed; `ic` is the shared initial state.
 */
inline RomOperators project_operators(const AffineOperatorSet & ops, const AggregatedBases & Z, const Parameters & p,
                                      const InitialState & ic, const StateTrajectory & desired_base)
{
  const int nt = p.nt, nv = ops.nv(), nh = ops.nh(), nu = ops.nu();
  const double dt = p.dt();
  if (Z.ZV.rows() != static_cast<Eigen::Index>(nt) * nv || Z.ZH.rows() != static_cast<Eigen::Index>(nt) * nh ||
      Z.ZU.rows() != static_cast<Eigen::Index>(nt) * nu)
    throw DimensionError("project_operators: bases do not match the space-time layout");

  RomOperators r;
  r.N        = Z.max_N();
  r.nt       = nt;
  r.T        = p.T;
  r.prefix_v = Z.prefix_v;
  r.prefix_h = Z.prefix_h;
  const int V = static_cast<int>(Z.ZV.cols()), H = static_cast<int>(Z.ZH.cols()), U = static_cast<int>(Z.ZU.cols());
  r.layout = ReducedLayout{V, H, U};

  r.MV      = detail::project_blocks(Z.ZV, ops.M_v, Z.ZV, nt);
  r.MchainV = r.MV - detail::project_blocks(Z.ZV, ops.M_v, Z.ZV, nt, -1);
  r.KV      = detail::project_blocks(Z.ZV, ops.K, Z.ZV, nt);
  r.DVH     = detail::project_blocks(Z.ZV, ops.D, Z.ZH, nt);
  r.MUV     = detail::project_blocks(Z.ZV, ops.M_u, Z.ZU, nt);
  r.MU      = detail::project_blocks(Z.ZU, ops.M_u, Z.ZU, nt);
  r.MH      = detail::project_blocks(Z.ZH, ops.M_h, Z.ZH, nt);
  r.MchainH = r.MH - detail::project_blocks(Z.ZH, ops.M_h, Z.ZH, nt, -1);

  r.Tadv = DenseTensor3(V, V, V);
  r.Tdiv = DenseTensor3(H, H, V);
  for (int k = 0; k < nt; ++k) {
    const Eigen::MatrixXd zv = detail::step_rows(Z.ZV, k, nv);
    const Eigen::MatrixXd zh = detail::step_rows(Z.ZH, k, nh);
    for (int l = 0; l < V; ++l) {
      const SparseMatrix Hl = ops.T_adv.contract(Axis::Coeff, zv.col(l));
      r.Tadv.slice(l) += zv.transpose() * (Hl * zv);
      const SparseMatrix Gl = ops.T_div.contract(Axis::Coeff, zv.col(l));
      r.Tdiv.slice(l) += zh.transpose() * (Gl * zh);
    }
  }

  const Eigen::VectorXd v0m = detail::masked(ic.v0, ops.v_space.dirichlet_dofs);
  r.f0V = detail::step_rows(Z.ZV, 0, nv).transpose() * (ops.M_v * v0m);
  r.f0H = detail::step_rows(Z.ZH, 0, nh).transpose() * (ops.M_h * ic.h0);
  r.gV  = Eigen::VectorXd::Zero(V);
  r.gH  = Eigen::VectorXd::Zero(H);
  for (int k = 0; k < nt; ++k) {
    r.gV += dt * (detail::step_rows(Z.ZV, k, nv).transpose() * (ops.M_v * desired_base.v_step(k, nv)));
    r.gH += dt * (detail::step_rows(Z.ZH, k, nh).transpose() * (ops.M_h * desired_base.h_step(k, nh)));
  }
  return r;
}

struct ReducedSaddle
{
  Eigen::MatrixXd A;  // nx x nx
  Eigen::MatrixXd B;  // np x nx

  Eigen::MatrixXd assemble() const
  {
    const Eigen::Index nx = A.rows(), np = B.rows();
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(nx + np, nx + np);
    J.topLeftCorner(nx, nx)     = A;
    J.topRightCorner(nx, np)    = B.transpose();
    J.bottomLeftCorner(np, nx)  = B;
    return J;
  }
};

namespace detail {
inline void check_rom_params(const RomOperators & rom, const Parameters & p)
{
  if (p.nt != rom.nt || std::abs(p.T - rom.T) > 1e-14 * rom.T)
    throw DimensionError("reduced operators were built for a different time grid");
}
}  // namespace detail

/// Reduced residual, equal to Z^T R(Z y) for the blockdiagonal lift Z.
inline Eigen::VectorXd reduced_residual(const RomOperators & rom, const Eigen::Ref<const Eigen::VectorXd> & y,
                                        const Parameters & p)
{
  detail::check_rom_params(rom, p);
  const ReducedLayout & L = rom.layout;
  if (y.size() != L.total()) throw DimensionError("reduced_residual: vector length mismatch");
  const double dt = p.dt();
  const auto a = y.segment(L.a(), L.nV), b = y.segment(L.b(), L.nH), e = y.segment(L.e(), L.nU),
             c = y.segment(L.c(), L.nV), d = y.segment(L.d(), L.nH);

  const Eigen::MatrixXd Ha = rom.Tadv.contract_coeff(a);  // (V x V)
  const Eigen::MatrixXd Ct = rom.Tadv.contract_test(c);   // (V x V)
  const Eigen::MatrixXd Ga = rom.Tdiv.contract_coeff(a);  // (H x H)
  const Eigen::MatrixXd Dt = rom.Tdiv.contract_test(d);   // (H x V)

  Eigen::VectorXd r(L.total());
  r.segment(L.a(), L.nV) = dt * (rom.MV * a) - p.mu3 * rom.gV + rom.MchainV.transpose() * c +
                           dt * p.mu1 * (rom.KV.transpose() * c) + dt * p.mu2 * (Ct * a + Ct.transpose() * a) +
                           dt * (Dt.transpose() * b);
  r.segment(L.b(), L.nH) = dt * (rom.MH * b) - p.mu3 * rom.gH + dt * (rom.DVH.transpose() * c) +
                           rom.MchainH.transpose() * d + dt * (Dt * a);
  r.segment(L.e(), L.nU) = p.alpha * dt * (rom.MU * e) - dt * (rom.MUV.transpose() * c);
  r.segment(L.c(), L.nV) = rom.MchainV * a + dt * p.mu1 * (rom.KV * a) + dt * p.mu2 * (Ha * a) + dt * (rom.DVH * b) -
                           dt * (rom.MUV * e) - rom.f0V;
  r.segment(L.d(), L.nH) = rom.MchainH * b + dt * (Ga * b) - rom.f0H;
  return r;
}

/// Reduced Jacobian [[A, B^T], [B, 0]], equal to Z^T J(Z y) Z.
inline ReducedSaddle reduced_jacobian(const RomOperators & rom, const Eigen::Ref<const Eigen::VectorXd> & y,
                                      const Parameters & p)
{
  detail::check_rom_params(rom, p);
  const ReducedLayout & L = rom.layout;
  if (y.size() != L.total()) throw DimensionError("reduced_jacobian: vector length mismatch");
  const double dt = p.dt();
  const auto a = y.segment(L.a(), L.nV), b = y.segment(L.b(), L.nH), c = y.segment(L.c(), L.nV),
             d = y.segment(L.d(), L.nH);

  ReducedSaddle S;
  S.A = Eigen::MatrixXd::Zero(L.nx(), L.nx());
  S.B = Eigen::MatrixXd::Zero(L.np(), L.nx());

  const Eigen::MatrixXd Ct = rom.Tadv.contract_test(c);
  const Eigen::MatrixXd Dt = rom.Tdiv.contract_test(d);
  S.A.block(L.a(), L.a(), L.nV, L.nV) = dt * rom.MV + dt * p.mu2 * (Ct + Ct.transpose());
  S.A.block(L.a(), L.b(), L.nV, L.nH) = dt * Dt.transpose();
  S.A.block(L.b(), L.a(), L.nH, L.nV) = dt * Dt;
  S.A.block(L.b(), L.b(), L.nH, L.nH) = dt * rom.MH;
  S.A.block(L.e(), L.e(), L.nU, L.nU) = p.alpha * dt * rom.MU;

  const Eigen::MatrixXd Ha  = rom.Tadv.contract_coeff(a);
  const Eigen::MatrixXd Hba = rom.Tadv.contract_trial(a);
  const Eigen::MatrixXd Ga  = rom.Tdiv.contract_coeff(a);
  const Eigen::MatrixXd Fb  = rom.Tdiv.contract_trial(b);
  S.B.block(0, L.a(), L.nV, L.nV)    = rom.MchainV + dt * p.mu1 * rom.KV + dt * p.mu2 * (Ha + Hba);
  S.B.block(0, L.b(), L.nV, L.nH)    = dt * rom.DVH;
  S.B.block(0, L.e(), L.nV, L.nU)    = -dt * rom.MUV;
  S.B.block(L.nV, L.a(), L.nH, L.nV) = dt * Fb;
  S.B.block(L.nV, L.b(), L.nH, L.nH) = rom.MchainH + dt * Ga;
  return S;
}

struct OnlineResult
{
  Eigen::VectorXd y;
  int iterations = 0;
  std::vector<double> residual_history;
};

/// Reduced uncontrolled forward problem: state rows only, e = 0, adjoints zero.
inline Eigen::VectorXd reduced_initial_guess(const RomOperators & rom, const Parameters & p,
                                             const NewtonSettings & settings = {})
{
  const ReducedLayout & L = rom.layout;
  Eigen::VectorXd y       = Eigen::VectorXd::Zero(L.total());
  const int ns            = L.nV + L.nH;
  for (int it = 0; it < settings.step_max_iterations; ++it) {
    const Eigen::VectorXd r  = reduced_residual(rom, y, p).tail(ns);
    const ReducedSaddle S    = reduced_jacobian(rom, y, p);
    if (it > 0 && r.norm() <= settings.tol_abs) break;
    const Eigen::VectorXd dx = S.B.leftCols(ns).partialPivLu().solve(-r);
    if (!dx.allFinite()) break;
    y.head(ns) += dx;
    if (dx.norm() <= 1e-13 * (1.0 + y.head(ns).norm())) break;
  }
  return y;
}

/// Newton on the reduced optimality system with dense LU of the 2(nV+nH)+nU matrix.
inline OnlineResult online_solve(const RomOperators & rom, const Parameters & p, const NewtonSettings & settings = {},
                                 const Eigen::VectorXd * init = nullptr)
{
  p.validate();
  OnlineResult res;
  res.y            = init ? *init : reduced_initial_guess(rom, p, settings);
  Eigen::VectorXd R = reduced_residual(rom, res.y, p);
  double rn        = R.norm();
  const double tol = settings.tol_abs + settings.tol_rel * rn;
  res.residual_history.push_back(rn);
  while (rn > tol) {
    if (res.iterations == settings.max_iterations) {
      std::string hist;
      for (double h : res.residual_history) hist += (hist.empty() ? "" : ", ") + std::to_string(h);
      throw NonConvergenceError("online Newton: no convergence in " + std::to_string(settings.max_iterations) +
                                    " iterations; residuals " + hist,
                                rn);
    }
    const Eigen::VectorXd delta = reduced_jacobian(rom, res.y, p).assemble().partialPivLu().solve(-R);
    if (!delta.allFinite()) throw FactorizationError("online Newton: singular reduced Jacobian");
    double step       = 1.0;
    Eigen::VectorXd t = res.y + delta;
    Eigen::VectorXd Rt = reduced_residual(rom, t, p);
    for (int n = 0; n < settings.max_halvings && !(Rt.norm() < rn); ++n) {
      step *= 0.5;
      t  = res.y + step * delta;
      Rt = reduced_residual(rom, t, p);
    }
    res.y = std::move(t);
    R     = std::move(Rt);
    rn    = R.norm();
    ++res.iterations;
    res.residual_history.push_back(rn);
    if (!std::isfinite(rn)) throw NonConvergenceError("online Newton: residual is not finite", rn);
  }
  return res;
}

/// Lift y to the full space-time vector (Z_V a, Z_H b, Z_U e, Z_V c, Z_H d).
inline SpaceTimeVector reconstruct(const Eigen::Ref<const Eigen::VectorXd> & y, const AggregatedBases & Z,
                                   const ReducedLayout & L, const SpaceTimeLayout & full)
{
  if (y.size() != L.total()) throw DimensionError("reconstruct: reduced vector length mismatch");
  if (L.nV > Z.ZV.cols() || L.nH > Z.ZH.cols() || L.nU > Z.ZU.cols())
    throw DimensionError("reconstruct: reduced layout exceeds the bases");
  SpaceTimeVector w(full);
  w.block(Var::V)      = Z.ZV.leftCols(L.nV) * y.segment(L.a(), L.nV);
  w.block(Var::H)      = Z.ZH.leftCols(L.nH) * y.segment(L.b(), L.nH);
  w.block(Var::U)      = Z.ZU.leftCols(L.nU) * y.segment(L.e(), L.nU);
  w.block(Var::Chi)    = Z.ZV.leftCols(L.nV) * y.segment(L.c(), L.nV);
  w.block(Var::Lambda) = Z.ZH.leftCols(L.nH) * y.segment(L.d(), L.nH);
  return w;
}

/// Galerkin coefficients of a full vector (orthogonal projection in each block's inner product).
inline Eigen::VectorXd project_vector(const SpaceTimeVector & w, const AggregatedBases & Z, const ReducedLayout & L,
                                      const AffineOperatorSet & ops, const Parameters & p)
{
  Eigen::VectorXd y(L.total());
  auto proj = [&](Var var, const Eigen::MatrixXd & B, int n, int off) {
    const auto ip = make_inner_product(ops, var, p.nt, p.dt());
    y.segment(off, n) = ip.gram(B.leftCols(n), w.block(var));
  };
  proj(Var::V, Z.ZV, L.nV, L.a());
  proj(Var::H, Z.ZH, L.nH, L.b());
  proj(Var::U, Z.ZU, L.nU, L.e());
  proj(Var::Chi, Z.ZV, L.nV, L.c());
  proj(Var::Lambda, Z.ZH, L.nH, L.d());
  return y;
}

/// Blockdiagonal lift matrix, for oracle checks on small problems.
inline Eigen::MatrixXd lift_matrix(const AggregatedBases & Z, const ReducedLayout & L, const SpaceTimeLayout & full)
{
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(full.total(), L.total());
  P.block(full.offset(Var::V), L.a(), full.length(Var::V), L.nV)           = Z.ZV.leftCols(L.nV);
  P.block(full.offset(Var::H), L.b(), full.length(Var::H), L.nH)           = Z.ZH.leftCols(L.nH);
  P.block(full.offset(Var::U), L.e(), full.length(Var::U), L.nU)           = Z.ZU.leftCols(L.nU);
  P.block(full.offset(Var::Chi), L.c(), full.length(Var::Chi), L.nV)       = Z.ZV.leftCols(L.nV);
  P.block(full.offset(Var::Lambda), L.d(), full.length(Var::Lambda), L.nH) = Z.ZH.leftCols(L.nH);
  return P;
}

}  // namespace sweocp

#endif  // SWEOCP_ROM_HPP
