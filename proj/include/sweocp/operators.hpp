#ifndef SWEOCP_OPERATORS_HPP
#define SWEOCP_OPERATORS_HPP

/**
 * @file
 * @brief Parameter-independent P1 operators of the shallow water optimality system.
 *
 * Every matrix that depends on the current state (advection, divergence and
 * their linearizations) is a single contraction of one of four sparse
 * third-order tensors. Index convention for a tensor T[i, j, k]:
 *   i = test function, j = trial function, k = coefficient field.
 *
 *   T_adv[i,j,k]      = int phi_i . (phi_k . grad) phi_j
 *   T_div[i,j,k]      = int psi_i div(psi_j phi_k)
 *   T_gradscal[i,j,k] = int psi_i (phi_k . grad psi_j)
 *   T_hgrad[i,j,k]    = int (phi_i . grad psi_j) psi_k
 *
 * with phi the vector P1 basis and psi the scalar P1 basis. All integrands
 * are polynomials of degree <= 2 on each element and are evaluated in closed
 * form.
 */

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <cstdint>
#include <ostream>
#include <span>
#include <tuple>
#include <vector>

#include "sweocp/error.hpp"
#include "sweocp/geometry.hpp"

namespace sweocp {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet      = Eigen::Triplet<double>;

enum class Axis { Test = 0, Trial = 1, Coeff = 2 };

/// Sparse third-order tensor stored as lexicographically sorted (i, j, k) entries.
class Tensor3
{
public:
  struct Entry
  {
    int i, j, k;
    double value;
  };

  Tensor3() = default;

  /// Sorts the entries and sums duplicates.
  Tensor3(std::array<int, 3> dims, std::vector<Entry> entries) : dims_(dims), entries_(std::move(entries))
  {
    for (const auto & e : entries_) {
      if (e.i < 0 || e.i >= dims_[0] || e.j < 0 || e.j >= dims_[1] || e.k < 0 || e.k >= dims_[2])
        throw IndexError("Tensor3: entry index out of range");
    }
    std::sort(entries_.begin(), entries_.end(), [](const Entry & a, const Entry & b) {
      return std::tie(a.i, a.j, a.k) < std::tie(b.i, b.j, b.k);
    });
    std::vector<Entry> merged;
    merged.reserve(entries_.size());
    for (const auto & e : entries_) {
      if (!merged.empty() && merged.back().i == e.i && merged.back().j == e.j && merged.back().k == e.k) {
        merged.back().value += e.value;
      } else {
        merged.push_back(e);
      }
    }
    entries_ = std::move(merged);
  }

  const std::array<int, 3> & dims() const { return dims_; }
  int dim(Axis a) const { return dims_[static_cast<int>(a)]; }
  const std::vector<Entry> & entries() const { return entries_; }
  std::size_t nnz() const { return entries_.size(); }

  /**
   * Contract one axis with a coefficient vector. The result is indexed by the
   * two remaining axes in their original order, e.g. contracting Coeff gives a
   * (test x trial) matrix and contracting Test gives a (trial x coeff) matrix.
   */
  SparseMatrix contract(Axis axis, const Eigen::Ref<const Eigen::VectorXd> & w, double sign = 1.0) const
  {
    const int ax = static_cast<int>(axis);
    if (w.size() != dims_[ax]) throw DimensionError("Tensor3::contract: coefficient length mismatch");
    const int r = ax == 0 ? 1 : 0;
    const int c = ax == 2 ? 1 : 2;
    std::vector<Triplet> trips;
    trips.reserve(entries_.size());
    for (const auto & e : entries_) {
      const std::array<int, 3> idx{e.i, e.j, e.k};
      const double wv = w[idx[ax]];
      if (wv != 0.0) trips.emplace_back(idx[r], idx[c], sign * e.value * wv);
    }
    SparseMatrix out(dims_[r], dims_[c]);
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
  }

  /**
   * Contract two axes with vectors and return the vector over the remaining
   * one: out[free] = sum T[...] x[a1] y[a2], where a1 < a2 are the other two
   * axes in their natural order.
   */
  Eigen::VectorXd apply(Axis free, const Eigen::Ref<const Eigen::VectorXd> & x,
                        const Eigen::Ref<const Eigen::VectorXd> & y) const
  {
    const int f  = static_cast<int>(free);
    const int a1 = f == 0 ? 1 : 0;
    const int a2 = f == 2 ? 1 : 2;
    if (x.size() != dims_[a1] || y.size() != dims_[a2])
      throw DimensionError("Tensor3::apply: coefficient length mismatch");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dims_[f]);
    for (const auto & e : entries_) {
      const std::array<int, 3> idx{e.i, e.j, e.k};
      out[idx[f]] += e.value * x[idx[a1]] * y[idx[a2]];
    }
    return out;
  }

private:
  std::array<int, 3> dims_{0, 0, 0};
  std::vector<Entry> entries_;
};

namespace detail {

/// int_T lambda_a lambda_b
inline double p1_mass(const ElementGeometry & g, int a, int b) { return g.area * (a == b ? 2.0 : 1.0) / 12.0; }

}  // namespace detail

inline SparseMatrix assemble_mass(const Mesh & mesh, const FeSpace & space)
{
  const int nc = space.components();
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(mesh.num_triangles() * 9 * nc));
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto g   = mesh.element(t);
    const auto & tri = mesh.triangles[t];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < nc; ++c)
          trips.emplace_back(space.dof(tri[a], c), space.dof(tri[b], c), detail::p1_mass(g, a, b));
  }
  SparseMatrix m(space.dof_count, space.dof_count);
  m.setFromTriplets(trips.begin(), trips.end());
  return m;
}

/// K_ij = int grad phi_i : grad phi_j on a vector P1 space.
inline SparseMatrix assemble_stiffness(const Mesh & mesh, const FeSpace & space)
{
  const int nc = space.components();
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(mesh.num_triangles() * 9 * nc));
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto g   = mesh.element(t);
    const auto & tri = mesh.triangles[t];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < nc; ++c)
          trips.emplace_back(space.dof(tri[a], c), space.dof(tri[b], c), g.area * g.grad[a].dot(g.grad[b]));
  }
  SparseMatrix k(space.dof_count, space.dof_count);
  k.setFromTriplets(trips.begin(), trips.end());
  return k;
}

/// D_ij = g int phi_i . grad psi_j, velocity-test rows and height-trial columns.
inline SparseMatrix assemble_pressure_gradient(const Mesh & mesh, const FeSpace & v_space, const FeSpace & h_space,
                                               double gravity)
{
  if (!(gravity > 0.0)) throw ConfigError("gravity must be positive");
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(mesh.num_triangles() * 18));
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto g   = mesh.element(t);
    const auto & tri = mesh.triangles[t];
    for (int a = 0; a < 3; ++a)
      for (int c = 0; c < 2; ++c)
        for (int b = 0; b < 3; ++b)
          trips.emplace_back(v_space.dof(tri[a], c), h_space.dof(tri[b]), gravity * g.grad[b][c] * g.area / 3.0);
  }
  SparseMatrix d(v_space.dof_count, h_space.dof_count);
  d.setFromTriplets(trips.begin(), trips.end());
  return d;
}

struct NonlinearTensors
{
  Tensor3 adv;
  Tensor3 div;
  Tensor3 gradscal;
  Tensor3 hgrad;
};

inline NonlinearTensors assemble_nonlinear_tensors(const Mesh & mesh, const FeSpace & v_space, const FeSpace & h_space)
{
  const int nv = v_space.dof_count, nh = h_space.dof_count;
  std::vector<Tensor3::Entry> adv, div, gradscal, hgrad;
  const auto nt = static_cast<std::size_t>(mesh.num_triangles());
  adv.reserve(nt * 108);
  div.reserve(nt * 54);
  gradscal.reserve(nt * 54);
  hgrad.reserve(nt * 54);

  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto g   = mesh.element(t);
    const auto & tri = mesh.triangles[t];
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        for (int e = 0; e < 3; ++e) {
          const double mae = detail::p1_mass(g, a, e);
          const double mab = detail::p1_mass(g, a, b);
          for (int f = 0; f < 2; ++f) {
            const int coeff_v = v_space.dof(tri[e], f);
            // (phi_k . grad) phi_j with phi_j = lambda_b e_c, tested against lambda_a e_c
            for (int c = 0; c < 2; ++c)
              adv.push_back({v_space.dof(tri[a], c), v_space.dof(tri[b], c), coeff_v, g.grad[b][f] * mae});
            div.push_back({h_space.dof(tri[a]), h_space.dof(tri[b]), coeff_v,
                           g.grad[b][f] * mae + g.grad[e][f] * mab});
            gradscal.push_back({h_space.dof(tri[a]), h_space.dof(tri[b]), coeff_v, g.grad[b][f] * mae});
            hgrad.push_back({v_space.dof(tri[a], f), h_space.dof(tri[b]), h_space.dof(tri[e]), g.grad[b][f] * mae});
          }
        }
      }
    }
  }
  return NonlinearTensors{Tensor3({nv, nv, nv}, std::move(adv)), Tensor3({nh, nh, nv}, std::move(div)),
                          Tensor3({nh, nh, nv}, std::move(gradscal)), Tensor3({nv, nh, nh}, std::move(hgrad))};
}

inline SparseMatrix contract_tensor(const Tensor3 & t, Axis axis, const Eigen::Ref<const Eigen::VectorXd> & w,
                                    double sign = 1.0)
{
  return t.contract(axis, w, sign);
}

/// All affine building blocks of the optimality system on one mesh.
struct AffineOperatorSet
{
  FeSpace v_space;  // velocity and adjoint velocity, Dirichlet on the boundary
  FeSpace h_space;  // height and adjoint height
  FeSpace u_space;  // control, unconstrained
  double gravity = 9.81;

  SparseMatrix M_v, M_h, M_u;
  SparseMatrix K;
  SparseMatrix D;
  Tensor3 T_adv, T_div, T_gradscal, T_hgrad;

  int nv() const { return v_space.dof_count; }
  int nh() const { return h_space.dof_count; }
  int nu() const { return u_space.dof_count; }

  // Contraction table for the state-dependent matrices.

  /// H(v)_ij = int phi_i . (v . grad) phi_j
  SparseMatrix H(const Eigen::Ref<const Eigen::VectorXd> & v) const { return T_adv.contract(Axis::Coeff, v); }
  /// Hbar(v)_ij = int phi_i . (phi_j . grad) v
  SparseMatrix Hbar(const Eigen::Ref<const Eigen::VectorXd> & v) const { return T_adv.contract(Axis::Trial, v); }
  /// H*(chi)_ij = -int (phi_i . grad) chi . phi_j
  SparseMatrix Hstar(const Eigen::Ref<const Eigen::VectorXd> & chi) const
  {
    return SparseMatrix(T_adv.contract(Axis::Trial, chi, -1.0).transpose());
  }
  /// G(v)_ij = int psi_i div(psi_j v)
  SparseMatrix G(const Eigen::Ref<const Eigen::VectorXd> & v) const { return T_div.contract(Axis::Coeff, v); }
  /// F(h)_ij = int psi_i div(h phi_j)
  SparseMatrix F(const Eigen::Ref<const Eigen::VectorXd> & h) const { return T_div.contract(Axis::Trial, h); }
  /// G*(v)_ij = -int psi_i v . grad psi_j
  SparseMatrix Gstar(const Eigen::Ref<const Eigen::VectorXd> & v) const
  {
    return T_gradscal.contract(Axis::Coeff, v, -1.0);
  }
  /// F*(h)_ij = -int h phi_i . grad psi_j
  SparseMatrix Fstar(const Eigen::Ref<const Eigen::VectorXd> & h) const
  {
    return T_hgrad.contract(Axis::Coeff, h, -1.0);
  }
  /// Fbar(lambda)_ij = -int (phi_i . grad lambda) psi_j, velocity rows and height columns
  SparseMatrix Fbar(const Eigen::Ref<const Eigen::VectorXd> & lambda) const
  {
    return T_hgrad.contract(Axis::Trial, lambda, -1.0);
  }
  /// Gbar(lambda)_ij = -int psi_i (phi_j . grad lambda), height rows and velocity columns
  SparseMatrix Gbar(const Eigen::Ref<const Eigen::VectorXd> & lambda) const
  {
    return T_gradscal.contract(Axis::Trial, lambda, -1.0);
  }
};

inline AffineOperatorSet assemble_operators(const Mesh & mesh, double gravity = 9.81)
{
  AffineOperatorSet ops;
  ops.v_space = mark_dirichlet(make_space(mesh, SpaceKind::VectorP1), mesh);
  ops.h_space = mark_dirichlet(make_space(mesh, SpaceKind::ScalarP1), mesh);
  ops.u_space = mark_dirichlet(make_space(mesh, SpaceKind::VectorP1), mesh, false);
  ops.gravity = gravity;
  ops.M_v     = assemble_mass(mesh, ops.v_space);
  ops.M_h     = assemble_mass(mesh, ops.h_space);
  ops.M_u     = assemble_mass(mesh, ops.u_space);
  ops.K       = assemble_stiffness(mesh, ops.v_space);
  ops.D       = assemble_pressure_gradient(mesh, ops.v_space, ops.h_space, gravity);
  auto t      = assemble_nonlinear_tensors(mesh, ops.v_space, ops.h_space);
  ops.T_adv      = std::move(t.adv);
  ops.T_div      = std::move(t.div);
  ops.T_gradscal = std::move(t.gradscal);
  ops.T_hgrad    = std::move(t.hgrad);
  return ops;
}

/**
 * Impose prescribed values on a set of dofs. Constrained rows and columns are
 * cleared with a unit diagonal; the cleared column entries are moved to the
 * right-hand side, so symmetric inputs stay symmetric.
 */
inline std::pair<SparseMatrix, Eigen::VectorXd> apply_dirichlet(const SparseMatrix & A, const Eigen::VectorXd & rhs,
                                                                std::span<const int> dofs,
                                                                const Eigen::VectorXd & values)
{
  if (A.rows() != A.cols() || A.rows() != rhs.size()) throw DimensionError("apply_dirichlet: size mismatch");
  if (values.size() != static_cast<Eigen::Index>(dofs.size()))
    throw DimensionError("apply_dirichlet: one value per constrained dof required");
  std::vector<char> fixed(static_cast<std::size_t>(A.rows()), 0);
  Eigen::VectorXd prescribed = Eigen::VectorXd::Zero(A.rows());
  for (std::size_t n = 0; n < dofs.size(); ++n) {
    const int d = dofs[n];
    if (d < 0 || d >= A.rows()) throw IndexError("apply_dirichlet: dof out of range");
    fixed[static_cast<std::size_t>(d)] = 1;
    prescribed[d] = values[static_cast<Eigen::Index>(n)];
  }

  Eigen::VectorXd b = rhs;
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(A.nonZeros()));
  for (int col = 0; col < A.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(A, col); it; ++it) {
      const auto r = it.row(), c = it.col();
      if (fixed[static_cast<std::size_t>(r)]) continue;
      if (fixed[static_cast<std::size_t>(c)]) {
        b[r] -= it.value() * prescribed[c];
        continue;
      }
      trips.emplace_back(r, c, it.value());
    }
  }
  for (std::size_t d = 0; d < fixed.size(); ++d) {
    if (fixed[d]) {
      trips.emplace_back(static_cast<int>(d), static_cast<int>(d), 1.0);
      b[static_cast<Eigen::Index>(d)] = prescribed[static_cast<Eigen::Index>(d)];
    }
  }
  SparseMatrix out(A.rows(), A.cols());
  out.setFromTriplets(trips.begin(), trips.end());
  return {std::move(out), std::move(b)};
}

/// Debug dump, one `i j value` line per stored entry in lexicographic order.
inline void write_triplets(std::ostream & os, const SparseMatrix & A)
{
  std::vector<std::tuple<int, int, double>> e;
  e.reserve(static_cast<std::size_t>(A.nonZeros()));
  for (int col = 0; col < A.outerSize(); ++col)
    for (SparseMatrix::InnerIterator it(A, col); it; ++it)
      e.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  std::sort(e.begin(), e.end());
  os.precision(17);
  for (const auto & [i, j, v] : e) os << i << ' ' << j << ' ' << v << '\n';
}

inline void write_triplets(std::ostream & os, const Tensor3 & T)
{
  os.precision(17);
  for (const auto & e : T.entries()) os << e.i << ' ' << e.j << ' ' << e.k << ' ' << e.value << '\n';
}

}  // namespace sweocp

#endif  // SWEOCP_OPERATORS_HPP
