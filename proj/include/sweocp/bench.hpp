#ifndef SWEOCP_BENCH_HPP
#define SWEOCP_BENCH_HPP

/**
 * @file
 * @brief Error metrics, error-vs-N sweeps, timing tables and report files.
 */

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "sweocp/error.hpp"
#include "sweocp/pod.hpp"
#include "sweocp/rom.hpp"
#include "sweocp/spacetime.hpp"

namespace sweocp {

using VarErrors = std::array<double, 5>;

/**
 * Relative errors in the Delta t weighted H1 (v, chi) and L2 (h, u, lambda)
 * norms. The absolute error is returned where the truth norm is below 1e-14.
 */
inline VarErrors relative_errors(const AffineOperatorSet & ops, const SpaceTimeVector & truth,
                                 const SpaceTimeVector & rom, double dt)
{
  if (!(truth.layout() == rom.layout())) throw DimensionError("relative_errors: layouts differ");
  VarErrors out{};
  for (Var var : all_vars) {
    const auto ip     = make_inner_product(ops, var, truth.layout().nt, dt);
    const double ref  = ip.norm(truth.block(var));
    const double diff = ip.norm(truth.block(var) - rom.block(var));
    out[static_cast<int>(var)] = ref < 1e-14 ? diff : diff / ref;
  }
  return out;
}

/// max_k |int h_k - int h_0| / |int h_0| over a time-major height trajectory.
inline double mass_conservation_check(const AffineOperatorSet & ops, const Eigen::Ref<const Eigen::VectorXd> & h,
                                      const Eigen::Ref<const Eigen::VectorXd> & h0)
{
  const int nh = ops.nh();
  if (h0.size() != nh || h.size() % nh != 0) throw DimensionError("mass_conservation_check: size mismatch");
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(nh);
  const Eigen::VectorXd w    = ops.M_h * ones;
  const double m0            = w.dot(h0);
  double drift               = 0.0;
  for (Eigen::Index k = 0; k < h.size() / nh; ++k) drift = std::max(drift, std::abs(w.dot(h.segment(k * nh, nh)) - m0));
  return drift / std::abs(m0);
}

/// A test parameter with its truth optimum and truth solve time.
struct TestPoint
{
  ParamPoint mu{};
  SpaceTimeVector truth;
  double truth_seconds = 0.0;
};

struct ErrorReport
{
  std::vector<int> N;
  std::vector<VarErrors> mean;                      // per N
  std::vector<std::vector<VarErrors>> per_point;    // per N, per successful point
  std::vector<std::vector<std::string>> failures;   // per N, diagnostic per failed point
  std::vector<ParamPoint> mu;
};

/// Online reduced solve at mu of size N, lifted to the full space.
using RomEvaluator = std::function<SpaceTimeVector(const ParamPoint &, int N)>;

inline ErrorReport error_sweep(const AffineOperatorSet & ops, const std::vector<TestPoint> & points,
                               const std::vector<int> & N_list, const RomEvaluator & rom, double dt)
{
  ErrorReport rep;
  rep.N = N_list;
  for (const auto & p : points) rep.mu.push_back(p.mu);
  for (int N : N_list) {
    std::vector<VarErrors> errs;
    std::vector<std::string> fails;
    for (const auto & p : points) {
      try {
        errs.push_back(relative_errors(ops, p.truth, rom(p.mu, N), dt));
      } catch (const Error & e) {
        fails.push_back(e.what());
      }
    }
    VarErrors m{};
    for (const auto & e : errs)
      for (int i = 0; i < 5; ++i) m[i] += e[i];
    for (int i = 0; i < 5; ++i)
      m[i] = errs.empty() ? std::numeric_limits<double>::quiet_NaN() : m[i] / static_cast<double>(errs.size());
    rep.mean.push_back(m);
    rep.per_point.push_back(std::move(errs));
    rep.failures.push_back(std::move(fails));
  }
  return rep;
}

struct TimingRow
{
  int N           = 0;
  double truth_s  = 0.0;
  double online_s = 0.0;
  double speedup() const { return truth_s / online_s; }
};

inline double median(std::vector<double> v)
{
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template<typename F>
double wall_seconds(F && f)
{
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/**
 * Mean truth time of the points against the mean (over points) of the median
 * (over repeats) online time per N. Offline work is not counted.
 */
inline std::vector<TimingRow> measure_speedup(const std::vector<TestPoint> & points, const std::vector<int> & N_list,
                                              const std::function<void(const ParamPoint &, int N)> & online,
                                              int repeats)
{
  if (points.empty()) throw PipelineError("measure_speedup: no test points");
  double truth = 0.0;
  for (const auto & p : points) truth += p.truth_seconds;
  truth /= static_cast<double>(points.size());
  std::vector<TimingRow> rows;
  for (int N : N_list) {
    double on = 0.0;
    for (const auto & p : points) {
      std::vector<double> t;
      for (int r = 0; r < repeats; ++r) t.push_back(wall_seconds([&] { online(p.mu, N); }));
      on += median(t);
    }
    rows.push_back(TimingRow{N, truth, on / static_cast<double>(points.size())});
  }
  return rows;
}

inline void write_errors_csv(std::ostream & os, const ErrorReport & rep)
{
  os.precision(17);
  os << "N,err_v,err_h,err_u,err_chi,err_lambda\n";
  for (std::size_t i = 0; i < rep.N.size(); ++i) {
    os << rep.N[i];
    for (double e : rep.mean[i]) os << ',' << e;
    os << '\n';
  }
}

inline void write_timings_csv(std::ostream & os, const std::vector<TimingRow> & rows)
{
  os.precision(6);
  os << "N,truth_s,online_s,speedup\n";
  for (const auto & r : rows) os << r.N << ',' << r.truth_s << ',' << r.online_s << ',' << r.speedup() << '\n';
}

}  // namespace sweocp

#endif  // SWEOCP_BENCH_HPP
