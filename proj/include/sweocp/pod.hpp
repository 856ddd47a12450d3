#ifndef SWEOCP_POD_HPP
#define SWEOCP_POD_HPP

/**
 * @file
 * @brief Partitioned POD of space-time snapshots: one correlation matrix,
 * eigenproblem and basis per variable.
 */

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "sweocp/error.hpp"
#include "sweocp/operators.hpp"
#include "sweocp/spacetime.hpp"

namespace sweocp {

using ParamPoint = std::array<double, 3>;

struct TrainingSet
{
  std::vector<ParamPoint> mu;
  std::string sampling = "uniform";
  std::uint64_t seed   = 0;

  std::size_t size() const { return mu.size(); }
};

/// Reproducible i.i.d. uniform draws from the box.
inline TrainingSet sample_parameters(int n_max, const ParameterBox & box, std::uint64_t seed)
{
  if (n_max < 1) throw ConfigError("sample_parameters: N_max must be >= 1");
  box.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TrainingSet set;
  set.seed = seed;
  set.mu.reserve(static_cast<std::size_t>(n_max));
  for (int m = 0; m < n_max; ++m) {
    ParamPoint p;
    for (int i = 0; i < 3; ++i) p[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * unit(rng);
    set.mu.push_back(p);
  }
  return set;
}

enum class NormKind { H1, L2 };

inline NormKind norm_kind(Var var) { return (var == Var::V || var == Var::Chi) ? NormKind::H1 : NormKind::L2; }

/**
 * Time-discrete inner product sum_k dt (a_k, b_k)_X on space-time blocks,
 * with X = mass + stiffness for velocity-type variables and mass otherwise.
 */
class SpaceTimeInnerProduct
{
public:
  SpaceTimeInnerProduct() = default;
  SpaceTimeInnerProduct(SparseMatrix X, int nt, double dt) : X_(std::move(X)), nt_(nt), dt_(dt)
  {
    if (X_.rows() != X_.cols()) throw DimensionError("inner product matrix must be square");
  }

  Eigen::Index spatial() const { return X_.rows(); }
  Eigen::Index length() const { return X_.rows() * nt_; }
  int nt() const { return nt_; }
  double dt() const { return dt_; }
  const SparseMatrix & spatial_matrix() const { return X_; }

  /// Weighted action X_st a, column by column.
  Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd> & a) const
  {
    if (a.rows() != length()) throw DimensionError("inner product: length mismatch");
    Eigen::MatrixXd out(a.rows(), a.cols());
    const Eigen::Index n = spatial();
    for (int k = 0; k < nt_; ++k) out.middleRows(k * n, n) = dt_ * (X_ * a.middleRows(k * n, n));
    return out;
  }

  double dot(const Eigen::Ref<const Eigen::VectorXd> & a, const Eigen::Ref<const Eigen::VectorXd> & b) const
  {
    if (a.size() != length() || b.size() != length()) throw DimensionError("inner product: length mismatch");
    const Eigen::Index n = spatial();
    double s = 0.0;
    for (int k = 0; k < nt_; ++k) s += a.segment(k * n, n).dot(X_ * b.segment(k * n, n));
    return dt_ * s;
  }

  double norm(const Eigen::Ref<const Eigen::VectorXd> & a) const { return std::sqrt(std::max(0.0, dot(a, a))); }

  /// Square-root factor F a with (F a)^T (F b) = a^T X_st b, via a sparse Cholesky of X.
  Eigen::MatrixXd factor(const Eigen::Ref<const Eigen::MatrixXd> & a) const
  {
    if (a.rows() != length()) throw DimensionError("inner product: length mismatch");
    Eigen::SimplicialLLT<SparseMatrix> llt(X_);
    if (llt.info() != Eigen::Success) throw SolverError("inner product matrix is not positive definite");
    const SparseMatrix Lt = SparseMatrix(llt.matrixL()).transpose();
    const Eigen::Index n  = spatial();
    Eigen::MatrixXd out(a.rows(), a.cols());
    for (int k = 0; k < nt_; ++k)
      out.middleRows(k * n, n) = std::sqrt(dt_) * (Lt * (llt.permutationP() * a.middleRows(k * n, n)));
    return out;
  }

  /// Gram matrix A^T X_st B.
  Eigen::MatrixXd gram(const Eigen::Ref<const Eigen::MatrixXd> & A, const Eigen::Ref<const Eigen::MatrixXd> & B) const
  {
    return A.transpose() * apply(B);
  }

private:
  SparseMatrix X_;
  int nt_    = 0;
  double dt_ = 0.0;
};

inline SpaceTimeInnerProduct make_inner_product(const AffineOperatorSet & ops, Var var, int nt, double dt)
{
  switch (var) {
  case Var::V:
  case Var::Chi: return SpaceTimeInnerProduct(SparseMatrix(ops.M_v + ops.K), nt, dt);
  case Var::H:
  case Var::Lambda: return SpaceTimeInnerProduct(ops.M_h, nt, dt);
  case Var::U: return SpaceTimeInnerProduct(ops.M_u, nt, dt);
  }
  throw Error("unknown variable");
}

inline double spacetime_inner_product(const Eigen::Ref<const Eigen::VectorXd> & a,
                                      const Eigen::Ref<const Eigen::VectorXd> & b, const SpaceTimeInnerProduct & ip)
{
  return ip.dot(a, b);
}

/// One matrix per variable, one column per successfully solved parameter.
struct SnapshotSet
{
  std::array<Eigen::MatrixXd, 5> columns;
  std::vector<ParamPoint> mu;
  std::vector<ParamPoint> failed;

  const Eigen::MatrixXd & operator[](Var v) const { return columns[static_cast<int>(v)]; }
  Eigen::MatrixXd & operator[](Var v) { return columns[static_cast<int>(v)]; }
  int count() const { return static_cast<int>(mu.size()); }
};

using TruthSolver = std::function<SpaceTimeVector(const ParamPoint &)>;

/**
 * Solve the truth problem at every training parameter, `jobs` at a time.
 * Failed solves are reported on `log` and dropped.
 */
inline SnapshotSet collect_snapshots(const TrainingSet & set, const TruthSolver & solve, int jobs = 1,
                                     std::ostream * log = &std::cerr)
{
  const std::size_t n = set.size();
  std::vector<std::optional<SpaceTimeVector>> results(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t m = next++; m < n; m = next++) {
      try {
        results[m] = solve(set.mu[m]);
      } catch (const Error & e) {
        errors[m] = e.what();
      }
    }
  };
  const int nthreads = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto & t : pool) t.join();
  }

  SnapshotSet out;
  std::vector<std::size_t> ok;
  for (std::size_t m = 0; m < n; ++m) {
    if (results[m]) {
      ok.push_back(m);
    } else {
      out.failed.push_back(set.mu[m]);
      if (log) {
        *log << "warning: truth solve failed at mu = (" << set.mu[m][0] << ", " << set.mu[m][1] << ", "
             << set.mu[m][2] << "): " << errors[m] << "; parameter excluded\n";
      }
    }
  }
  if (ok.empty()) throw PipelineError("collect_snapshots: every truth solve failed");

  const SpaceTimeLayout & L = results[ok.front()]->layout();
  for (Var var : all_vars) out[var].resize(L.length(var), static_cast<Eigen::Index>(ok.size()));
  for (std::size_t c = 0; c < ok.size(); ++c) {
    const auto & w = *results[ok[c]];
    for (Var var : all_vars) out[var].col(static_cast<Eigen::Index>(c)) = w.block(var);
    out.mu.push_back(set.mu[ok[c]]);
  }
  return out;
}

/// C = (1/n) S^T X S.
inline Eigen::MatrixXd correlation_matrix(const Eigen::Ref<const Eigen::MatrixXd> & S, const SpaceTimeInnerProduct & ip)
{
  if (S.cols() < 1) throw DimensionError("correlation_matrix: no snapshots");
  Eigen::MatrixXd C = ip.gram(S, S) / static_cast<double>(S.cols());
  // exact symmetry, the two triangles differ only by rounding
  return 0.5 * (C + C.transpose());
}

struct PodEigenpairs
{
  Eigen::VectorXd all_eigenvalues;  // descending, full spectrum of C
  Eigen::VectorXd eigenvalues;      // retained, first N
  Eigen::MatrixXd eigenvectors;     // Euclidean-normalized, one per column
  int retainable = 0;
};

namespace detail {

inline PodEigenpairs select_modes(Eigen::VectorXd all, const Eigen::MatrixXd & vectors, int N, double cutoff)
{
  const Eigen::Index n = all.size();
  if (N < 1 || N > n) {
    throw BasisDeficiencyError("pod_eigendecompose: N = " + std::to_string(N) + " exceeds the snapshot count " +
                                   std::to_string(n),
                               static_cast<int>(n));
  }
  PodEigenpairs out;
  out.all_eigenvalues = std::move(all);
  const double theta1 = out.all_eigenvalues[0];
  int keep = 0;
  if (theta1 > 0.0)
    while (keep < n && out.all_eigenvalues[keep] >= cutoff * theta1 && out.all_eigenvalues[keep] > 0.0) ++keep;
  out.retainable = keep;
  if (keep < N) {
    throw BasisDeficiencyError("pod_eigendecompose: only " + std::to_string(keep) +
                                   " modes above the cutoff, " + std::to_string(N) + " requested",
                               keep);
  }
  out.eigenvalues  = out.all_eigenvalues.head(N);
  out.eigenvectors = vectors.leftCols(N);
  return out;
}

}  // namespace detail

/// Top-N eigenpairs of C. Pairs below cutoff * theta_1 are not retainable.
inline PodEigenpairs pod_eigendecompose(const Eigen::Ref<const Eigen::MatrixXd> & C, int N, double cutoff = 1e-12)
{
  if (C.rows() != C.cols()) throw DimensionError("pod_eigendecompose: matrix is not square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  if (es.info() != Eigen::Success) throw SolverError("pod_eigendecompose: eigensolver failed");
  return detail::select_modes(es.eigenvalues().reverse(), es.eigenvectors().rowwise().reverse(), N, cutoff);
}

/**
 * Same eigenpairs as pod_eigendecompose(correlation_matrix(S, ip)), computed
 * from a thin SVD of the weighted snapshots. Small eigenvalues come out with
 * error ~ eps sqrt(theta_1 theta_n) instead of eps theta_1.
 */
inline PodEigenpairs pod_eigendecompose_snapshots(const Eigen::Ref<const Eigen::MatrixXd> & S,
                                                  const SpaceTimeInnerProduct & ip, int N, double cutoff = 1e-12)
{
  if (S.cols() < 1) throw DimensionError("pod_eigendecompose: no snapshots");
  const Eigen::MatrixXd B = ip.factor(S) / std::sqrt(static_cast<double>(S.cols()));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(B, Eigen::ComputeThinV);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(S.cols());
  theta.head(svd.singularValues().size()) = svd.singularValues().array().square().matrix();
  Eigen::MatrixXd V = svd.matrixV();
  if (V.cols() < S.cols()) {
    // more snapshots than space-time dofs: complete V with an orthonormal complement
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(V);
    Eigen::MatrixXd full = qr.householderQ();
    V.conservativeResize(Eigen::NoChange, S.cols());
    V.rightCols(S.cols() - svd.singularValues().size()) = full.rightCols(S.cols() - svd.singularValues().size());
  }
  return detail::select_modes(std::move(theta), V, N, cutoff);
}

/**
 * Modified Gram-Schmidt in the given inner product, two passes per column.
 * Columns whose remaining norm falls below drop_tol times their original
 * norm are discarded; `kept` receives the surviving input indices.
 */
inline Eigen::MatrixXd orthonormalize(const Eigen::Ref<const Eigen::MatrixXd> & A, const SpaceTimeInnerProduct & ip,
                                      double drop_tol = 0.0, std::vector<int> * kept = nullptr)
{
  Eigen::MatrixXd Q(A.rows(), A.cols());
  Eigen::MatrixXd XQ(A.rows(), A.cols());
  Eigen::Index m = 0;
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    Eigen::VectorXd q  = A.col(j);
    const double norm0 = ip.norm(q);
    if (norm0 == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index i = 0; i < m; ++i) q -= XQ.col(i).dot(q) * Q.col(i);
    const double nq = ip.norm(q);
    if (!(nq > drop_tol * norm0) || nq == 0.0) continue;
    Q.col(m)  = q / nq;
    XQ.col(m) = ip.apply(Q.col(m));
    if (kept) kept->push_back(static_cast<int>(j));
    ++m;
  }
  return Q.leftCols(m);
}

struct PodBasis
{
  Var var = Var::V;
  NormKind norm = NormKind::L2;
  Eigen::VectorXd eigenvalues;      // retained, descending
  Eigen::VectorXd all_eigenvalues;  // full spectrum for reports
  Eigen::MatrixXd Z;                // space-time columns, orthonormal in the declared inner product

  int size() const { return static_cast<int>(Z.cols()); }
};

/// zeta_n = sum_m (x_n)_m s_m / sqrt(n_snap theta_n), then re-orthonormalized.
inline PodBasis build_basis(const Eigen::Ref<const Eigen::MatrixXd> & S, const PodEigenpairs & eig,
                            const SpaceTimeInnerProduct & ip, Var var)
{
  if (eig.eigenvectors.rows() != S.cols()) throw DimensionError("build_basis: eigenvectors do not match snapshots");
  const double n = static_cast<double>(S.cols());
  Eigen::MatrixXd raw = S * eig.eigenvectors;
  for (Eigen::Index c = 0; c < raw.cols(); ++c) raw.col(c) /= std::sqrt(n * eig.eigenvalues[c]);
  PodBasis b;
  b.var             = var;
  b.norm            = norm_kind(var);
  b.eigenvalues     = eig.eigenvalues;
  b.all_eigenvalues = eig.all_eigenvalues;
  b.Z               = orthonormalize(raw, ip);
  if (b.Z.cols() != raw.cols())
    throw BasisDeficiencyError("build_basis: POD modes lost independence", static_cast<int>(b.Z.cols()));
  return b;
}

inline PodBasis compute_pod(const Eigen::Ref<const Eigen::MatrixXd> & S, const SpaceTimeInnerProduct & ip, Var var,
                            int N, double cutoff = 1e-12)
{
  return build_basis(S, pod_eigendecompose_snapshots(S, ip, N, cutoff), ip, var);
}

/// Mean squared projection residual (1/n) sum_m |s_m - Pi s_m|^2 onto the first N columns.
inline double projection_residual(const Eigen::Ref<const Eigen::MatrixXd> & S, const Eigen::Ref<const Eigen::MatrixXd> & Z,
                                  const SpaceTimeInnerProduct & ip)
{
  const Eigen::MatrixXd R = S - Z * ip.gram(Z, S);
  double s = 0.0;
  for (Eigen::Index m = 0; m < R.cols(); ++m) s += ip.dot(R.col(m), R.col(m));
  return s / static_cast<double>(S.cols());
}

/// `variable,n,theta_n,cumulative_energy` rows for one basis.
inline void write_eigenvalue_report(std::ostream & os, const PodBasis & b, bool header = true)
{
  if (header) os << "variable,n,theta_n,cumulative_energy\n";
  const double total = b.all_eigenvalues.cwiseMax(0.0).sum();
  double acc = 0.0;
  os.precision(17);
  for (Eigen::Index n = 0; n < b.all_eigenvalues.size(); ++n) {
    acc += std::max(0.0, b.all_eigenvalues[n]);
    os << var_name(b.var) << ',' << n + 1 << ',' << b.all_eigenvalues[n] << ',' << (total > 0 ? acc / total : 0.0)
       << '\n';
  }
}

}  // namespace sweocp

#endif  // SWEOCP_POD_HPP
