#ifndef SWEOCP_LINEAR_SOLVER_HPP
#define SWEOCP_LINEAR_SOLVER_HPP

#include <Eigen/SparseCore>
#ifdef SWEOCP_HAVE_UMFPACK
#include <Eigen/UmfPackSupport>
#else
#include <Eigen/OrderingMethods>
#include <Eigen/SparseLU>
#endif

#include <string>

#include "sweocp/error.hpp"

namespace sweocp {

/**
 * Sparse direct LU for the (generally indefinite, unsymmetric) Newton
 * matrices. The matrix is copied: the UMFPACK wrapper keeps pointers into
 * the factorized matrix for the solve phase.
 */
class SparseDirectSolver
{
public:
  using Matrix = Eigen::SparseMatrix<double>;

  void factorize(const Matrix & A)
  {
    if (A.rows() != A.cols()) throw DimensionError("SparseDirectSolver: matrix is not square");
    A_ = A;
    A_.makeCompressed();
    lu_.compute(A_);
    if (lu_.info() != Eigen::Success) {
      throw FactorizationError("sparse LU factorization failed (matrix singular or ill-formed)");
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd & b) const
  {
    Eigen::VectorXd x = lu_.solve(b);
    if (lu_.info() != Eigen::Success) throw FactorizationError("sparse LU solve failed");
    if (!x.allFinite()) throw FactorizationError("sparse LU produced non-finite solution");
    return x;
  }

  static std::string backend()
  {
#ifdef SWEOCP_HAVE_UMFPACK
    return "umfpack";
#else
    return "eigen-sparselu";
#endif
  }

private:
  Matrix A_;
#ifdef SWEOCP_HAVE_UMFPACK
  Eigen::UmfPackLU<Matrix> lu_;
#else
  Eigen::SparseLU<Matrix, Eigen::COLAMDOrdering<int>> lu_;
#endif
};

}  // namespace sweocp

#endif  // SWEOCP_LINEAR_SOLVER_HPP
