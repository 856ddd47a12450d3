#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "sweocp/bench.hpp"

using namespace sweocp;

namespace {

struct Small
{
  Mesh mesh;
  AffineOperatorSet ops;
  Parameters p;
  InitialState ic;

  Small()
  {
    MeshConfig c;
    c.nx = c.ny = 5;
    mesh        = build_structured_mesh(c);
    ops         = assemble_operators(mesh);
    p.nt        = 4;
    p.T         = 0.4;
    ic          = initial_conditions(mesh);
  }

  SpaceTimeVector random(std::mt19937_64 & rng) const
  {
    SpaceTimeVector w(make_layout(ops, p.nt));
    w.data() = oracle::random_vector(w.data().size(), rng);
    return w;
  }
};

const Small & small()
{
  static const Small s;
  return s;
}

}  // namespace

TEST(RelativeErrors, IdentityZeroAndScaling)
{
  const auto & s = small();
  std::mt19937_64 rng(1);
  const auto a = s.random(rng), b = s.random(rng);
  for (double e : relative_errors(s.ops, a, a, s.p.dt())) EXPECT_EQ(e, 0.0);
  const SpaceTimeVector zero(a.layout());
  for (double e : relative_errors(s.ops, a, zero, s.p.dt())) EXPECT_NEAR(e, 1.0, 1e-15);
  const auto e1 = relative_errors(s.ops, a, b, s.p.dt());
  const auto e7 = relative_errors(s.ops, SpaceTimeVector(a.layout(), 7 * a.data()),
                                  SpaceTimeVector(a.layout(), 7 * b.data()), s.p.dt());
  for (int i = 0; i < 5; ++i) EXPECT_LT(std::abs(e1[i] - e7[i]), 1e-13);
}

TEST(RelativeErrors, AbsoluteForVanishingTruth)
{
  const auto & s = small();
  std::mt19937_64 rng(2);
  SpaceTimeVector t = s.random(rng);
  t.block(Var::U).setZero();
  SpaceTimeVector r = t;
  r.block(Var::U).setConstant(2.0);
  const auto ip = make_inner_product(s.ops, Var::U, s.p.nt, s.p.dt());
  EXPECT_NEAR(relative_errors(s.ops, t, r, s.p.dt())[2], ip.norm(r.block(Var::U)), 1e-13);
}

TEST(RelativeErrors, LayoutMismatch)
{
  const auto & s = small();
  const SpaceTimeVector a(make_layout(s.ops, 2)), b(make_layout(s.ops, 3));
  EXPECT_THROW(relative_errors(s.ops, a, b, 0.1), DimensionError);
}

TEST(MassConservation, ConstantUncontrolledAndControlled)
{
  const auto & s = small();
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(s.ops.nh(), 1.5);
  EXPECT_EQ(mass_conservation_check(s.ops, c.replicate(s.p.nt, 1), c), 0.0);

  const auto traj = uncontrolled_forward_solve(s.ops, s.p, s.ic);
  EXPECT_LT(mass_conservation_check(s.ops, traj.h, s.ic.h0), 1e-10);

  const auto res = truth_newton_solve(s.ops, s.p, make_problem(s.ic, desired_profile(s.ops, s.mesh, s.p)));
  EXPECT_GT(res.w.block(Var::U).norm(), 1e-3);
  EXPECT_LT(mass_conservation_check(s.ops, res.w.block(Var::H), s.ic.h0), 1e-10);
  EXPECT_THROW(mass_conservation_check(s.ops, c.head(3), c), DimensionError);
}

TEST(ErrorSweep, MeansAreArithmeticMeans)
{
  const auto & s = small();
  std::mt19937_64 rng(3);
  std::vector<TestPoint> pts;
  for (int i = 0; i < 4; ++i) pts.push_back(TestPoint{{0.1 * i, 0.2, 0.3}, s.random(rng), 1.0});
  std::map<std::pair<double, int>, SpaceTimeVector> roms;
  for (const auto & p : pts)
    for (int N : {1, 3}) roms.emplace(std::pair{p.mu[0], N}, s.random(rng));
  const RomEvaluator eval = [&](const ParamPoint & mu, int N) {
    if (mu[0] > 0.25 && N == 3) throw NonConvergenceError("synthetic", 1.0);
    return roms.at({mu[0], N});
  };
  const auto rep = error_sweep(s.ops, pts, {1, 3}, eval, s.p.dt());
  ASSERT_EQ(rep.mean.size(), 2u);
  EXPECT_EQ(rep.per_point[0].size(), 4u);
  EXPECT_EQ(rep.per_point[1].size(), 3u);
  EXPECT_EQ(rep.failures[1].size(), 1u);
  for (std::size_t n = 0; n < 2; ++n)
    for (int i = 0; i < 5; ++i) {
      double m = 0.0;
      for (const auto & e : rep.per_point[n]) m += e[i];
      m /= static_cast<double>(rep.per_point[n].size());
      EXPECT_LT(std::abs(rep.mean[n][i] - m), 1e-14);
    }

  std::ostringstream os;
  write_errors_csv(os, rep);
  const std::string csv = os.str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "N,err_v,err_h,err_u,err_chi,err_lambda");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Timing, SpeedupTable)
{
  std::vector<TestPoint> pts(2);
  pts[0].truth_seconds = 2.0;
  pts[1].truth_seconds = 4.0;
  int calls = 0;
  const auto rows = measure_speedup(pts, {2, 4}, [&](const ParamPoint &, int) { ++calls; }, 3);
  EXPECT_EQ(calls, 12);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].truth_s, 3.0);
  EXPECT_GT(rows[0].online_s, 0.0);
  EXPECT_GT(rows[1].speedup(), 0.0);
  std::ostringstream os;
  write_timings_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "N,truth_s,online_s,speedup");
  EXPECT_THROW(measure_speedup({}, {1}, [](const ParamPoint &, int) {}, 1), PipelineError);
}

TEST(Timing, Median)
{
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_TRUE(std::isnan(median({})));
}
