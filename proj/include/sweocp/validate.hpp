#ifndef SWEOCP_VALIDATE_HPP
#define SWEOCP_VALIDATE_HPP

/**
 * @file
 * @brief Property checks behind the `validate` subcommand.
 *
 * The checks run on a coarsened copy of the configured problem (mesh capped
 * at 6x6, 6 training parameters) so they finish in seconds; the physics,
 * time grid and parameter box are the configured ones.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "sweocp/bench.hpp"
#include "sweocp/pipeline.hpp"

namespace sweocp {

struct CheckResult
{
  std::string name;
  double value     = 0.0;
  double tolerance = 0.0;
  bool passed      = false;
  std::string note;
};

namespace detail {

inline CheckResult below(std::string name, double value, double tol)
{
  return CheckResult{std::move(name), value, tol, std::isfinite(value) && value < tol, {}};
}

/// Max relative error of central differences of the residual against the Jacobian.
inline double fd_jacobian_error(const ProblemSetup & s, const Parameters & p, const SpaceTimeVector & w)
{
  const ProblemData data  = s.problem(p);
  const Eigen::MatrixXd J = Eigen::MatrixXd(assemble_jacobian(s.ops, w, p).assemble());
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  Eigen::VectorXd d(w.data().size());
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = nd(rng);
  const double eps = 1e-6;
  SpaceTimeVector wp(w.layout(), w.data() + eps * d), wm(w.layout(), w.data() - eps * d);
  const Eigen::VectorXd fd = (assemble_residual(s.ops, wp, p, data) - assemble_residual(s.ops, wm, p, data)) / (2 * eps);
  const Eigen::VectorXd an = J * d;
  return (fd - an).norm() / an.norm();
}

}  // namespace detail

inline std::vector<CheckResult> run_validation(const Config & base, std::ostream * log = nullptr)
{
  Config c    = base;
  c.mesh.nx   = std::min(c.mesh.nx, 6);
  c.mesh.ny   = std::min(c.mesh.ny, 6);
  c.N_max     = 6;
  c.N         = 4;
  c.N_var     = {0, 0, 0, 0, 0};
  ProblemSetup s(c);
  std::vector<CheckResult> out;
  const SpaceTimeLayout L = s.layout();
  const double dt         = c.T / c.nt;
  std::mt19937_64 rng(c.seed);

  // trivial tracking: desired = uncontrolled run from the same state
  {
    const Parameters p     = s.parameters({0.1, 0.5, 1.0});
    const ProblemData data = make_problem(s.ic, uncontrolled_forward_solve(s.ops, p, s.ic, c.newton));
    const auto r           = truth_newton_solve(s.ops, p, data, nullptr, c.newton, log);
    const double adj = std::max({r.w.block(Var::U).norm(), r.w.block(Var::Chi).norm(), r.w.block(Var::Lambda).norm()});
    out.push_back(detail::below("trivial tracking: |u|, |chi|, |lambda|", adj, 1e-8));
  }

  // Jacobian against central differences at perturbed optimal states
  {
    double worst = 0.0;
    for (const auto & mu : sample_parameters(3, c.box, rng()).mu) {
      const Parameters p = s.parameters(mu);
      SpaceTimeVector w(L);
      std::uniform_real_distribution<double> u(-0.3, 0.3);
      for (Eigen::Index i = 0; i < w.data().size(); ++i) w.data()[i] = u(rng);
      w.block(Var::H).array() += 1.0;
      worst = std::max(worst, detail::fd_jacobian_error(s, p, w));
    }
    out.push_back(detail::below("jacobian vs central differences (relative)", worst, 1e-6));
  }

  OfflineArtifacts art = run_offline(s, 1, log);

  // POD projection residual equals the eigenvalue tail
  {
    double worst = 0.0;
    for (Var var : all_vars) {
      const auto ip  = make_inner_product(s.ops, var, c.nt, dt);
      const auto eig = pod_eigendecompose_snapshots(art.snapshots[var], ip, 1, c.cutoff);
      for (int N = 1; N <= std::min(3, eig.retainable); ++N) {
        const auto b      = compute_pod(art.snapshots[var], ip, var, N, c.cutoff);
        const double tail = eig.all_eigenvalues.tail(eig.all_eigenvalues.size() - N).sum();
        const double res  = projection_residual(art.snapshots[var], b.Z, ip);
        worst             = std::max(worst, std::abs(res - tail) / std::max(tail, 1e-300));
      }
    }
    out.push_back(detail::below("POD residual vs eigenvalue tail (relative)", worst, 1e-8));
  }

  // reduced system against the projected full system
  {
    const ReducedLayout R   = art.rom.layout;
    const Eigen::MatrixXd P = lift_matrix(art.bases, R, L);
    double worst_r = 0.0, worst_j = 0.0;
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (const auto & mu : sample_parameters(3, c.box, rng()).mu) {
      const Parameters p = s.parameters(mu);
      Eigen::VectorXd y(R.total());
      for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = u(rng);
      const SpaceTimeVector w = reconstruct(y, art.bases, R, L);
      const Eigen::VectorXd rf = P.transpose() * assemble_residual(s.ops, w, p, s.problem(p));
      const Eigen::MatrixXd jf = P.transpose() * (Eigen::MatrixXd(assemble_jacobian(s.ops, w, p).assemble()) * P);
      worst_r = std::max(worst_r, (reduced_residual(art.rom, y, p) - rf).cwiseAbs().maxCoeff());
      worst_j = std::max(worst_j, (reduced_jacobian(art.rom, y, p).assemble() - jf).cwiseAbs().maxCoeff());
    }
    out.push_back(detail::below("reduced residual vs projected residual (max abs)", worst_r, 1e-10));
    out.push_back(detail::below("reduced jacobian vs projected jacobian (max abs)", worst_j, 1e-10));
  }

  // mass conservation and the optimality relation at a controlled optimum
  {
    const Parameters p = s.parameters(art.snapshots.mu.front());
    const auto r       = truth_newton_solve(s.ops, p, s.problem(p), nullptr, c.newton, log);
    out.push_back(detail::below("mass drift at a controlled optimum", mass_conservation_check(s.ops, r.w.block(Var::H), s.ic.h0), 1e-10));
    const auto mask = s.ops.v_space.dirichlet_mask();
    double gap      = 0.0;
    for (int k = 0; k < c.nt; ++k)
      for (int i = 0; i < s.ops.nu(); ++i)
        gap = std::max(gap, std::abs(p.alpha * r.w.step(Var::U, k)[i] - (mask[i] ? 0.0 : r.w.step(Var::Chi, k)[i])));
    out.push_back(detail::below("|alpha u - chi| at the optimum", gap, 1e-8));
  }
  return out;
}

}  // namespace sweocp

#endif  // SWEOCP_VALIDATE_HPP
