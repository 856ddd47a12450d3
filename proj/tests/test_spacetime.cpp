#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <random>

#include "oracles.hpp"
#include "sweocp/spacetime.hpp"

using namespace sweocp;

namespace {

struct Problem
{
  Mesh mesh;
  AffineOperatorSet ops;
  Parameters p;
  InitialState ic;

  Problem(int n, int nt, double mu1 = 0.1, double mu2 = 0.5)
  {
    MeshConfig c;
    c.nx = c.ny = n;
    mesh        = build_structured_mesh(c);
    ops         = assemble_operators(mesh);
    p.nt        = nt;
    p.T         = 0.1 * nt;
    p.mu1       = mu1;
    p.mu2       = mu2;
    ic          = initial_conditions(mesh);
  }

  ProblemData tracking_data(double mu3 = 1.0) const
  {
    Parameters q = p;
    q.mu3        = mu3;
    return make_problem(ic, desired_profile(ops, mesh, q));
  }

  ProblemData trivial_data() const
  {
    return make_problem(ic, uncontrolled_forward_solve(ops, p, ic));
  }

  SpaceTimeVector random_state(std::mt19937_64 & rng, double scale = 0.3) const
  {
    SpaceTimeVector w(make_layout(ops, p.nt));
    w.data() = oracle::random_vector(w.data().size(), rng, scale);
    w.block(Var::H).array() += 1.0;
    for (int k = 0; k < p.nt; ++k)
      for (int d : ops.v_space.dirichlet_dofs) {
        w.step(Var::V, k)[d]   = 0.0;
        w.step(Var::Chi, k)[d] = 0.0;
      }
    return w;
  }
};

double mass(const AffineOperatorSet & ops, const Eigen::VectorXd & h) { return (ops.M_h * h).sum(); }

}  // namespace

TEST(InitialConditions, GaussianMound)
{
  MeshConfig c;
  c.nx = c.ny = 10;
  const Mesh m  = build_structured_mesh(c);
  const auto ic = initial_conditions(m);
  EXPECT_EQ(ic.v0.cwiseAbs().maxCoeff(), 0.0);
  const int center = 5 * 11 + 5;
  EXPECT_NEAR(ic.h0[center], 0.2 * (1 + 5 * std::exp(1.0)), 1e-12);
  EXPECT_NEAR(ic.h0[center], 2.918, 1e-3);
  EXPECT_NEAR(ic.h0[0], 0.2, 1e-12);

  const auto d = desired_initial_conditions(m);
  EXPECT_NEAR(d.h0[center], 2 * std::exp(1.0), 1e-12);
  EXPECT_NEAR(d.h0[center], 5.437, 1e-3);
}

TEST(ForwardSolve, ConstantStateIsFixedPoint)
{
  Problem pr(4, 4);
  InitialState ic{Eigen::VectorXd::Zero(pr.ops.nv()), Eigen::VectorXd::Constant(pr.ops.nh(), 1.7)};
  const auto s = uncontrolled_forward_solve(pr.ops, pr.p, ic);
  EXPECT_LT(s.v.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((s.h.array() - 1.7).abs().maxCoeff(), 1e-10);
}

TEST(ForwardSolve, MassConservedAndPeakDecays)
{
  Problem pr(8, 8);
  const auto s   = uncontrolled_forward_solve(pr.ops, pr.p, pr.ic);
  const double m0 = mass(pr.ops, pr.ic.h0);
  double peak     = pr.ic.h0.maxCoeff();
  for (int k = 0; k < pr.p.nt; ++k) {
    const Eigen::VectorXd hk = s.h_step(k, pr.ops.nh());
    EXPECT_LT(std::abs(mass(pr.ops, hk) - m0) / m0, 1e-10);
    EXPECT_LT(hk.maxCoeff(), peak);
    peak = hk.maxCoeff();
    for (int d : pr.ops.v_space.dirichlet_dofs) EXPECT_EQ(s.v_step(k, pr.ops.nv())[d], 0.0);
  }
}

// Independent implementation of one backward Euler step: operators from the
// quadrature oracle, dense Newton with a finite-difference Jacobian.
TEST(ForwardSolve, MatchesIndependentSmallMeshStepper)
{
  Problem pr(3, 3);
  const auto & ops = pr.ops;
  const auto & mesh = pr.mesh;
  const FeSpace & V = ops.v_space;
  const FeSpace & Hs = ops.h_space;
  const double dt = pr.p.dt(), mu1 = pr.p.mu1, mu2 = pr.p.mu2, g = 9.81;

  const Eigen::MatrixXd Mv = oracle::assemble(mesh, V, V, [](const oracle::Point & q, int a, int ca, int b, int cb) {
    return ca == cb ? q.lam[a] * q.lam[b] : 0.0;
  });
  const Eigen::MatrixXd Mh = oracle::assemble(mesh, Hs, Hs, [](const oracle::Point & q, int a, int, int b, int) {
    return q.lam[a] * q.lam[b];
  });
  const Eigen::MatrixXd K = oracle::assemble(mesh, V, V, [](const oracle::Point & q, int a, int ca, int b, int cb) {
    return ca == cb ? q.grad[a].dot(q.grad[b]) : 0.0;
  });
  const Eigen::MatrixXd D = oracle::assemble(mesh, V, Hs, [&](const oracle::Point & q, int a, int ca, int b, int) {
    return g * q.lam[a] * q.grad[b][ca];
  });
  const int nv = ops.nv(), nh = ops.nh();
  std::vector<char> fixed = V.dirichlet_mask();

  auto residual = [&](const Eigen::VectorXd & x, const Eigen::VectorXd & vp, const Eigen::VectorXd & hp) {
    const Eigen::VectorXd v = x.head(nv), h = x.tail(nh);
    const Eigen::MatrixXd Hv = oracle::assemble(mesh, V, V, [&](const oracle::Point & q, int a, int ca, int b, int cb) {
      return ca == cb ? q.lam[a] * q.vector(v).dot(q.grad[b]) : 0.0;
    });
    const Eigen::MatrixXd Gv = oracle::assemble(mesh, Hs, Hs, [&](const oracle::Point & q, int a, int, int b, int) {
      return q.lam[a] * (q.grad[b].dot(q.vector(v)) + q.lam[b] * q.vector_grad(v).trace());
    });
    Eigen::VectorXd r(nv + nh);
    r.head(nv) = Mv * (v - vp) + dt * (mu1 * K * v + mu2 * Hv * v + D * h);
    r.tail(nh) = Mh * (h - hp) + dt * Gv * h;
    for (int i = 0; i < nv; ++i)
      if (fixed[i]) r[i] = v[i];
    return r;
  };

  const auto s = uncontrolled_forward_solve(ops, pr.p, pr.ic);
  Eigen::VectorXd vp = pr.ic.v0, hp = pr.ic.h0;
  for (int k = 0; k < pr.p.nt; ++k) {
    Eigen::VectorXd x(nv + nh);
    x << vp, hp;
    for (int it = 0; it < 20; ++it) {
      const Eigen::VectorXd r = residual(x, vp, hp);
      if (r.norm() < 1e-12) break;
      Eigen::MatrixXd J(nv + nh, nv + nh);
      for (int j = 0; j < nv + nh; ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(nv + nh);
        e[j]              = 1e-6;
        J.col(j)          = (residual(x + e, vp, hp) - residual(x - e, vp, hp)) / 2e-6;
      }
      x -= J.partialPivLu().solve(r);
    }
    EXPECT_LT((x.head(nv) - s.v_step(k, nv)).cwiseAbs().maxCoeff(), 1e-8) << "step " << k;
    EXPECT_LT((x.tail(nh) - s.h_step(k, nh)).cwiseAbs().maxCoeff(), 1e-8) << "step " << k;
    vp = x.head(nv);
    hp = x.tail(nh);
  }
}

TEST(DesiredProfile, ScalesLinearlyAndMoves)
{
  Problem pr(5, 3);
  Parameters a = pr.p, b = pr.p;
  a.mu3        = 0.3;
  b.mu3        = 0.6;
  const auto da = desired_profile(pr.ops, pr.mesh, a);
  const auto db = desired_profile(pr.ops, pr.mesh, b);
  EXPECT_LT((2.0 * da.h - db.h).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((2.0 * da.v - db.v).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_GT(da.v_step(0, pr.ops.nv()).norm(), 1e-3);
}

TEST(Residual, ZeroStateGivesMinusRhs)
{
  Problem pr(4, 3);
  const auto data = pr.tracking_data(0.7);
  SpaceTimeVector w(make_layout(pr.ops, pr.p.nt));
  const Eigen::VectorXd R = assemble_residual(pr.ops, w, pr.p, data);
  EXPECT_EQ((R + rhs_vector(pr.ops, pr.p, data)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Residual, AffineInControl)
{
  Problem pr(4, 3);
  const auto data = pr.tracking_data();
  std::mt19937_64 rng(5);
  const auto L = make_layout(pr.ops, pr.p.nt);
  SpaceTimeVector du(L);
  du.block(Var::U) = oracle::random_vector(L.length(Var::U), rng);
  Eigen::VectorXd diff0;
  for (int trial = 0; trial < 2; ++trial) {
    const auto w = pr.random_state(rng);
    SpaceTimeVector w2(L, w.data() + du.data());
    const Eigen::VectorXd diff = assemble_residual(pr.ops, w2, pr.p, data) - assemble_residual(pr.ops, w, pr.p, data);
    if (trial == 0)
      diff0 = diff;
    else
      EXPECT_LT((diff - diff0).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Residual, DimensionMismatchThrows)
{
  Problem pr(3, 2);
  const auto data = pr.trivial_data();
  SpaceTimeVector w(make_layout(pr.ops, 3));
  EXPECT_THROW(assemble_residual(pr.ops, w, pr.p, data), DimensionError);
}

TEST(Jacobian, CentralDifferenceOracle)
{
  Problem pr(4, 3);
  std::mt19937_64 rng(11);
  const std::array<std::array<double, 3>, 3> mus{{{0.1, 0.5, 1.0}, {1e-3, 0.05, 0.4}, {0.7, 0.3, 0.2}}};
  for (const auto & mu : mus) {
    Parameters p = pr.p;
    p.mu1        = mu[0];
    p.mu2        = mu[1];
    p.mu3        = mu[2];
    const auto data = make_problem(pr.ic, desired_profile(pr.ops, pr.mesh, p));
    for (int trial = 0; trial < 5; ++trial) {
      const auto w = pr.random_state(rng);
      SpaceTimeVector d(w.layout());
      d.data() = oracle::random_vector(d.data().size(), rng);
      const double eps = 1e-6 * std::max(1.0, w.data().cwiseAbs().maxCoeff());
      const SpaceTimeVector wp(w.layout(), w.data() + eps * d.data());
      const SpaceTimeVector wm(w.layout(), w.data() - eps * d.data());
      const Eigen::VectorXd fd =
          (assemble_residual(pr.ops, wp, p, data) - assemble_residual(pr.ops, wm, p, data)) / (2 * eps);
      const Eigen::VectorXd jd = assemble_jacobian(pr.ops, w, p).assemble() * d.data();
      EXPECT_LT((fd - jd).norm() / jd.norm(), 1e-6);
    }
  }
}

TEST(Jacobian, SaddleStructure)
{
  Problem pr(4, 3);
  std::mt19937_64 rng(2);
  const auto w = pr.random_state(rng);
  const auto S = assemble_jacobian(pr.ops, w, pr.p);
  const SparseMatrix J = S.assemble();
  const Eigen::MatrixXd Jd(J);
  const auto nx = S.nx(), np = S.np();
  EXPECT_EQ(Jd.bottomRightCorner(np, np).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((Jd.topRightCorner(nx, np) - Jd.bottomLeftCorner(np, nx).transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Jacobian, LinearDiffusionChainWithoutAdvection)
{
  Problem pr(3, 3, 0.2, 0.0);
  std::mt19937_64 rng(4);
  const auto w = pr.random_state(rng);
  const auto S = assemble_jacobian(pr.ops, w, pr.p);
  const Eigen::MatrixXd B(S.B);
  const auto L   = make_layout(pr.ops, pr.p.nt);
  const int nv   = L.nv;
  const auto fix = pr.ops.v_space.dirichlet_mask();
  Eigen::MatrixXd diag = Eigen::MatrixXd(pr.ops.M_v) + pr.p.dt() * 0.2 * Eigen::MatrixXd(pr.ops.K);
  Eigen::MatrixXd sub  = -Eigen::MatrixXd(pr.ops.M_v);
  for (int i = 0; i < nv; ++i)
    for (int j = 0; j < nv; ++j)
      if (fix[i] || fix[j]) {
        diag(i, j) = (i == j) ? 1.0 : 0.0;
        sub(i, j)  = 0.0;
      }
  for (int k = 0; k < L.nt; ++k) {
    EXPECT_LT((B.block(k * nv, k * nv, nv, nv) - diag).cwiseAbs().maxCoeff(), 1e-12);
    if (k > 0) EXPECT_LT((B.block(k * nv, (k - 1) * nv, nv, nv) - sub).cwiseAbs().maxCoeff(), 1e-12);
    if (k > 1) EXPECT_EQ(B.block(k * nv, (k - 2) * nv, nv, nv).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Cost, ZeroAtDesiredAndQuadraticInControl)
{
  Problem pr(4, 3);
  const auto data = pr.tracking_data();
  const auto L    = make_layout(pr.ops, pr.p.nt);
  SpaceTimeVector w(L);
  w.block(Var::V) = data.vd;
  w.block(Var::H) = data.hd;
  EXPECT_EQ(evaluate_cost(pr.ops, w, pr.p, data), 0.0);

  std::mt19937_64 rng(8);
  w.block(Var::U) = oracle::random_vector(L.length(Var::U), rng);
  w.block(Var::H).array() += 0.1;
  SpaceTimeVector w2 = w;
  w2.block(Var::U) *= 2.0;
  const double state_part = [&] {
    SpaceTimeVector z = w;
    z.block(Var::U).setZero();
    return evaluate_cost(pr.ops, z, pr.p, data);
  }();
  const double c1 = evaluate_cost(pr.ops, w, pr.p, data) - state_part;
  const double c2 = evaluate_cost(pr.ops, w2, pr.p, data) - state_part;
  EXPECT_NEAR(c2, 4.0 * c1, 1e-12 * c2);

  Parameters p2 = pr.p;
  p2.alpha      = 0.2;
  const double u2 = [&] {
    double s = 0.0;
    for (int k = 0; k < L.nt; ++k) s += pr.p.dt() * w.step(Var::U, k).dot(pr.ops.M_u * w.step(Var::U, k));
    return s;
  }();
  const double jd = evaluate_cost(pr.ops, w, p2, data) - evaluate_cost(pr.ops, w, pr.p, data);
  EXPECT_NEAR(jd, 0.05 * u2, 1e-12 * jd);
}

TEST(TruthNewton, TrivialTrackingHasZeroControl)
{
  Problem pr(6, 4);
  const auto data = pr.trivial_data();
  const auto res  = truth_newton_solve(pr.ops, pr.p, data);
  EXPECT_LT(res.w.block(Var::U).norm(), 1e-8);
  EXPECT_LT(res.w.block(Var::Chi).norm(), 1e-8);
  EXPECT_LT(res.w.block(Var::Lambda).norm(), 1e-8);
  EXPECT_LT(res.residual_history.back(), 1e-9);
}

TEST(TruthNewton, TrackingConvergesAndImprovesOnUncontrolled)
{
  Problem pr(8, 8);
  const auto data = pr.tracking_data();
  const auto res  = truth_newton_solve(pr.ops, pr.p, data);
  EXPECT_LE(res.iterations, 20);
  const double tol = 1e-10 + 1e-8 * res.residual_history.front();
  EXPECT_LE(res.residual_history.back(), tol);

  const auto guess = default_initial_guess(pr.ops, pr.p, data);
  EXPECT_LE(evaluate_cost(pr.ops, res.w, pr.p, data), evaluate_cost(pr.ops, guess, pr.p, data));

  // alpha u = chi and the continuity equation keeps the mass
  const Eigen::VectorXd gap = pr.p.alpha * res.w.block(Var::U) - res.w.block(Var::Chi);
  EXPECT_LT(gap.cwiseAbs().maxCoeff(), 1e-8);
  const double m0 = mass(pr.ops, pr.ic.h0);
  for (int k = 0; k < pr.p.nt; ++k)
    EXPECT_LT(std::abs(mass(pr.ops, res.w.step(Var::H, k)) - m0) / m0, 1e-10);
  EXPECT_GT(res.min_height, 0.0);
}

TEST(TruthNewton, QuadraticPhaseIsMonotone)
{
  Problem pr(6, 4);
  const auto data = pr.tracking_data(0.5);
  const auto res  = truth_newton_solve(pr.ops, pr.p, data);
  const auto & r  = res.residual_history;
  for (std::size_t j = 1; j < r.size(); ++j) EXPECT_LT(r[j], r[j - 1]);
}

TEST(TruthNewton, IterationLimitRaisesWithResidual)
{
  Problem pr(4, 3);
  const auto data = pr.tracking_data();
  NewtonSettings s;
  s.max_iterations = 1;
  s.tol_abs        = 0.0;
  s.tol_rel        = 1e-30;
  try {
    truth_newton_solve(pr.ops, pr.p, data, nullptr, s);
    FAIL() << "expected non-convergence";
  } catch (const NonConvergenceError & e) {
    EXPECT_GT(e.last_residual(), 0.0);
  }
}

TEST(Parameters, Validation)
{
  Parameters p;
  EXPECT_DOUBLE_EQ(p.dt(), 0.1);
  p.alpha = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p.alpha = 1.0;
  EXPECT_NO_THROW(p.validate());
  ParameterBox box;
  EXPECT_TRUE(box.contains({0.1, 0.5, 1.0}));
  EXPECT_FALSE(box.contains({2.0, 0.5, 1.0}));
}

TEST(Jacobian, CondensedStepEqualsFullSolve)
{
  Problem pr(4, 3);
  const auto data = pr.tracking_data(0.8);
  std::mt19937_64 rng(21);
  const auto w = pr.random_state(rng, 0.1);
  const Eigen::VectorXd R = assemble_residual(pr.ops, w, pr.p, data);
  const auto S            = assemble_jacobian(pr.ops, w, pr.p);

  SparseDirectSolver full;
  full.factorize(S.assemble());
  const Eigen::VectorXd ref = full.solve(-R);

  CondensedKktSolver kkt(pr.ops, pr.p);
  kkt.factorize(S);
  const Eigen::VectorXd dw = kkt.step(R);
  EXPECT_LT((dw - ref).cwiseAbs().maxCoeff(), 1e-10 * ref.cwiseAbs().maxCoeff());
  EXPECT_LT(kkt.condensed_size(), S.nx() + S.np());
}
