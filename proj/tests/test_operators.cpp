#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "sweocp/operators.hpp"

using namespace sweocp;

namespace {

struct Fixture
{
  Mesh mesh;
  AffineOperatorSet ops;

  explicit Fixture(int nx = 3, int ny = 4)
  {
    MeshConfig c;
    c.nx = nx;
    c.ny = ny;
    mesh = build_structured_mesh(c);
    ops  = assemble_operators(mesh, 9.81);
  }
};

Eigen::MatrixXd dense(const SparseMatrix & A) { return Eigen::MatrixXd(A); }

const Fixture & fx()
{
  static const Fixture f;
  return f;
}

}  // namespace

TEST(Mass, TotalAreaAndSymmetry)
{
  const auto & f = fx();
  EXPECT_NEAR(dense(f.ops.M_h).sum(), 100.0, 1e-10);
  EXPECT_NEAR(dense(f.ops.M_v).sum(), 200.0, 1e-10);
  std::mt19937_64 rng(1);
  const Eigen::VectorXd x = oracle::random_vector(f.ops.nh(), rng);
  EXPECT_LT((f.ops.M_h * x - SparseMatrix(f.ops.M_h.transpose()) * x).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Mass, PositiveDefiniteOnTinyMesh)
{
  MeshConfig c;
  c.nx = c.ny = 2;
  const Mesh m = build_structured_mesh(c);
  const auto M = dense(assemble_mass(m, make_space(m, SpaceKind::ScalarP1)));
  ASSERT_EQ(M.rows(), 9);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}

TEST(Mass, MatchesQuadratureOracle)
{
  const auto & f = fx();
  const auto ref = oracle::assemble(f.mesh, f.ops.v_space, f.ops.v_space, [](const oracle::Point & p, int a, int ca,
                                                                              int b, int cb) {
    return ca == cb ? p.lam[a] * p.lam[b] : 0.0;
  });
  EXPECT_LT(oracle::max_abs(dense(f.ops.M_v) - ref), 1e-12);
}

TEST(Stiffness, KernelSymmetryAndLinearField)
{
  const auto & f = fx();
  Eigen::VectorXd c(f.ops.nv());
  for (int v = 0; v < f.mesh.num_vertices(); ++v) {
    c[2 * v]     = 1.5;
    c[2 * v + 1] = -0.25;
  }
  EXPECT_LT((f.ops.K * c).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(oracle::max_abs(dense(f.ops.K) - dense(f.ops.K).transpose()), 1e-14);

  Eigen::VectorXd lin = Eigen::VectorXd::Zero(f.ops.nv());
  for (int v = 0; v < f.mesh.num_vertices(); ++v) lin[2 * v] = f.mesh.vertices[v].x();
  EXPECT_NEAR(lin.dot(f.ops.K * lin), 100.0, 1e-10);
}

TEST(PressureGradient, ConstantsLinearityAndOracle)
{
  const auto & f = fx();
  EXPECT_LT((f.ops.D * Eigen::VectorXd::Constant(f.ops.nh(), 3.0)).cwiseAbs().maxCoeff(), 1e-12);

  const SparseMatrix D2 = assemble_pressure_gradient(f.mesh, f.ops.v_space, f.ops.h_space, 2 * 9.81);
  EXPECT_EQ(oracle::max_abs(dense(D2) - 2.0 * dense(f.ops.D)), 0.0);

  const auto ref = oracle::assemble(f.mesh, f.ops.v_space, f.ops.h_space,
                                    [](const oracle::Point & p, int a, int ca, int b, int) {
                                      return 9.81 * p.lam[a] * p.grad[b][ca];
                                    });
  EXPECT_LT(oracle::max_abs(dense(f.ops.D) - ref), 1e-12);

  // h = x: (D h)_i = g int phi_i,x
  const Eigen::VectorXd hx = f.mesh.interpolate([](double x, double) { return x; });
  const Eigen::VectorXd Dh = f.ops.D * hx;
  for (int v = 0; v < f.mesh.num_vertices(); ++v) {
    const double ix = oracle::integrate(f.mesh, [&](const oracle::Point & p) {
      double s = 0.0;
      for (int a = 0; a < 3; ++a)
        if (p.vtx[a] == v) s += p.lam[a];
      return s;
    });
    EXPECT_NEAR(Dh[2 * v], 9.81 * ix, 1e-12);
    EXPECT_NEAR(Dh[2 * v + 1], 0.0, 1e-12);
  }
  EXPECT_THROW(assemble_pressure_gradient(f.mesh, f.ops.v_space, f.ops.h_space, 0.0), ConfigError);
}

// Every state-dependent matrix from a single contraction, compared with direct
// quadrature of its defining integral.
class ContractionOracle : public ::testing::Test
{
protected:
  const Fixture & f = fx();
  std::mt19937_64 rng{7};
  Eigen::VectorXd v   = oracle::random_vector(f.ops.nv(), rng);
  Eigen::VectorXd h   = oracle::random_vector(f.ops.nh(), rng);
  Eigen::VectorXd lam = oracle::random_vector(f.ops.nh(), rng);
};

TEST_F(ContractionOracle, AdvectionH)
{
  const auto ref = oracle::assemble(f.mesh, f.ops.v_space, f.ops.v_space,
                                    [&](const oracle::Point & p, int a, int ca, int b, int cb) {
                                      return ca == cb ? p.lam[a] * p.vector(v).dot(p.grad[b]) : 0.0;
                                    });
  EXPECT_LT(oracle::max_abs(dense(f.ops.H(v)) - ref), 1e-12);
}

TEST_F(ContractionOracle, AdvectionHbar)
{
  const auto ref = oracle::assemble(f.mesh, f.ops.v_space, f.ops.v_space,
                                    [&](const oracle::Point & p, int a, int ca, int b, int cb) {
                                      return p.lam[a] * p.lam[b] * p.vector_grad(v)(ca, cb);
                                    });
  EXPECT_LT(oracle::max_abs(dense(f.ops.Hbar(v)) - ref), 1e-12);
}

TEST_F(ContractionOracle, AdvectionHstar)
{
  const auto ref = oracle::assemble(f.mesh, f.ops.v_space, f.ops.v_space,
                                    [&](const oracle::Point & p, int a, int ca, int b, int cb) {
                                      return -p.lam[a] * p.lam[b] * p.vector_grad(v)(cb, ca);
                                    });
  EXPECT_LT(oracle::max_abs(dense(f.ops.Hstar(v)) - ref), 1e-12);
}

TEST_F(ContractionOracle, DivergenceGandF)
{
  const auto refG = oracle::assemble(f.mesh, f.ops.h_space, f.ops.h_space,
                                     [&](const oracle::Point & p, int a, int, int b, int) {
                                       const double divv = p.vector_grad(v).trace();
                                       return p.lam[a] * (p.grad[b].dot(p.vector(v)) + p.lam[b] * divv);
                                     });
  EXPECT_LT(oracle::max_abs(dense(f.ops.G(v)) - refG), 1e-12);

  const auto refF = oracle::assemble(f.mesh, f.ops.h_space, f.ops.v_space,
                                     [&](const oracle::Point & p, int a, int, int b, int cb) {
                                       return p.lam[a] * (p.scalar_grad(h)[cb] * p.lam[b] + p.scalar(h) * p.grad[b][cb]);
                                     });
  EXPECT_LT(oracle::max_abs(dense(f.ops.F(h)) - refF), 1e-12);
}

TEST_F(ContractionOracle, AdjointGstarFstar)
{
  const auto refG = oracle::assemble(f.mesh, f.ops.h_space, f.ops.h_space,
                                     [&](const oracle::Point & p, int a, int, int b, int) {
                                       return -p.lam[a] * p.vector(v).dot(p.grad[b]);
                                     });
  EXPECT_LT(oracle::max_abs(dense(f.ops.Gstar(v)) - refG), 1e-12);

  const auto refF = oracle::assemble(f.mesh, f.ops.v_space, f.ops.h_space,
                                     [&](const oracle::Point & p, int a, int ca, int b, int) {
                                       return -p.scalar(h) * p.lam[a] * p.grad[b][ca];
                                     });
  EXPECT_LT(oracle::max_abs(dense(f.ops.Fstar(h)) - refF), 1e-12);
}

TEST_F(ContractionOracle, AdjointFbarGbar)
{
  const auto refF = oracle::assemble(f.mesh, f.ops.v_space, f.ops.h_space,
                                     [&](const oracle::Point & p, int a, int ca, int b, int) {
                                       return -p.lam[a] * p.scalar_grad(lam)[ca] * p.lam[b];
                                     });
  EXPECT_LT(oracle::max_abs(dense(f.ops.Fbar(lam)) - refF), 1e-12);

  const auto refG = oracle::assemble(f.mesh, f.ops.h_space, f.ops.v_space,
                                     [&](const oracle::Point & p, int a, int, int b, int cb) {
                                       return -p.lam[a] * p.lam[b] * p.scalar_grad(lam)[cb];
                                     });
  EXPECT_LT(oracle::max_abs(dense(f.ops.Gbar(lam)) - refG), 1e-12);
}

TEST_F(ContractionOracle, TransposeIdentities)
{
  // Hbar from the coefficient or the trial slot is the same integral.
  const SparseMatrix hb = f.ops.T_adv.contract(Axis::Trial, v);
  EXPECT_LT(oracle::max_abs(dense(hb) - dense(f.ops.Hbar(v))), 1e-13);
  // With v vanishing on the boundary, G(v)^T = G*(v) (integration by parts).
  Eigen::VectorXd vb = v;
  for (int d : f.ops.v_space.dirichlet_dofs) vb[d] = 0.0;
  EXPECT_LT(oracle::max_abs(dense(f.ops.G(vb)).transpose() - dense(f.ops.Gstar(vb))), 1e-12);
}

TEST_F(ContractionOracle, LinearityAndZero)
{
  for (Axis ax : {Axis::Test, Axis::Trial, Axis::Coeff}) {
    const Eigen::VectorXd a = oracle::random_vector(f.ops.T_adv.dim(ax), rng);
    const Eigen::VectorXd b = oracle::random_vector(f.ops.T_adv.dim(ax), rng);
    const Eigen::MatrixXd sum = dense(f.ops.T_adv.contract(ax, a + b));
    const Eigen::MatrixXd sep = dense(f.ops.T_adv.contract(ax, a)) + dense(f.ops.T_adv.contract(ax, b));
    EXPECT_LT(oracle::max_abs(sum - sep), 1e-13);
    EXPECT_EQ(f.ops.T_adv.contract(ax, Eigen::VectorXd::Zero(a.size())).nonZeros(), 0);
  }
  EXPECT_THROW(f.ops.T_div.contract(Axis::Coeff, Eigen::VectorXd::Zero(3)), DimensionError);
}

TEST_F(ContractionOracle, ApplyMatchesContraction)
{
  const Eigen::VectorXd x = oracle::random_vector(f.ops.nv(), rng);
  EXPECT_LT((f.ops.T_adv.apply(Axis::Test, x, v) - f.ops.H(v) * x).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((f.ops.T_adv.apply(Axis::Coeff, x, v) - SparseMatrix(f.ops.T_adv.contract(Axis::Test, x)).transpose() * v)
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
  EXPECT_LT((f.ops.T_div.apply(Axis::Trial, lam, v) - SparseMatrix(f.ops.G(v).transpose()) * lam).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(Tensors, DivergenceOfBoundaryFreeFluxVanishes)
{
  const auto & f = fx();
  std::mt19937_64 rng(3);
  Eigen::VectorXd v = oracle::random_vector(f.ops.nv(), rng);
  for (int d : f.ops.v_space.dirichlet_dofs) v[d] = 0.0;
  const Eigen::VectorXd h = oracle::random_vector(f.ops.nh(), rng);
  EXPECT_NEAR((f.ops.G(v) * h).sum(), 0.0, 1e-12);
}

TEST(Tensors, LocalityBound)
{
  const auto & f = fx();
  const auto nt  = static_cast<std::size_t>(f.mesh.num_triangles());
  EXPECT_LE(f.ops.T_adv.nnz(), nt * 108);
  EXPECT_LE(f.ops.T_div.nnz(), nt * 54);
  EXPECT_EQ(f.ops.T_adv.contract(Axis::Coeff, Eigen::VectorXd::Zero(f.ops.nv())).nonZeros(), 0);
}

TEST(Dirichlet, ApplyDirichletCases)
{
  const auto & f = fx();
  const SparseMatrix A   = f.ops.M_v + f.ops.K;
  const Eigen::VectorXd b = Eigen::VectorXd::Ones(A.rows());

  auto [A0, b0] = apply_dirichlet(A, b, std::span<const int>(), Eigen::VectorXd());
  EXPECT_EQ(oracle::max_abs(dense(A0) - dense(A)), 0.0);
  EXPECT_EQ((b0 - b).cwiseAbs().maxCoeff(), 0.0);

  const auto & bc = f.ops.v_space.dirichlet_dofs;
  auto [A1, b1]   = apply_dirichlet(A, b, bc, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(bc.size()), 0.3));
  EXPECT_LT(oracle::max_abs(dense(A1) - dense(A1).transpose()), 1e-14);
  const Eigen::VectorXd x = Eigen::PartialPivLU<Eigen::MatrixXd>(dense(A1)).solve(b1);
  for (int d : bc) EXPECT_NEAR(x[d], 0.3, 1e-12);

  std::vector<int> all(static_cast<std::size_t>(A.rows()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  auto [A2, b2] = apply_dirichlet(A, b, all, Eigen::VectorXd::Zero(A.rows()));
  EXPECT_EQ(Eigen::PartialPivLU<Eigen::MatrixXd>(dense(A2)).solve(b2).cwiseAbs().maxCoeff(), 0.0);

  std::vector<int> bad{static_cast<int>(A.rows())};
  EXPECT_THROW(apply_dirichlet(A, b, bad, Eigen::VectorXd::Zero(1)), IndexError);
}

TEST(Dump, TripletFormatSorted)
{
  SparseMatrix A(2, 2);
  A.insert(1, 0) = 2.0;
  A.insert(0, 1) = 1.0;
  A.makeCompressed();
  std::ostringstream os;
  write_triplets(os, A);
  EXPECT_EQ(os.str(), "0 1 1\n1 0 2\n");
}
