#ifndef SWEOCP_PIPELINE_HPP
#define SWEOCP_PIPELINE_HPP

/**
 * @file
 * @brief Truth / offline / online / bench orchestration and the workdir layout
 *
 *   <workdir>/snapshots/snapshots.bin
 *   <workdir>/basis/pod.bin, basis/aggregated.bin
 *   <workdir>/rom/operators.bin, rom/manifest.txt
 *   <workdir>/reports/eigs.csv, errors.csv, timings.csv, ...
 */

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "sweocp/bench.hpp"
#include "sweocp/config.hpp"
#include "sweocp/error.hpp"
#include "sweocp/geometry.hpp"
#include "sweocp/io.hpp"
#include "sweocp/operators.hpp"
#include "sweocp/pod.hpp"
#include "sweocp/rom.hpp"
#include "sweocp/spacetime.hpp"

namespace sweocp {

namespace fs = std::filesystem;

/// Mesh, operators, initial state and desired base shared by every stage.
struct ProblemSetup
{
  Config cfg;
  Mesh mesh;
  AffineOperatorSet ops;
  InitialState ic;
  StateTrajectory desired_base;  // uncontrolled run from the desired state at the reference (mu1, mu2), mu3 = 1

  explicit ProblemSetup(Config c) : cfg(std::move(c))
  {
    cfg.validate();
    mesh         = build_structured_mesh(cfg.mesh);
    ops          = assemble_operators(mesh, cfg.gravity);
    ic           = initial_conditions(mesh);
    desired_base = desired_profile(ops, mesh, cfg.reference_parameters(), cfg.newton);
  }

  Parameters parameters(const ParamPoint & mu) const { return cfg.parameters(mu); }

  /// mu3 times the shared base, or a desired run at this mu1, mu2 in per-parameter mode.
  StateTrajectory desired(const Parameters & p) const
  {
    if (cfg.desired == DesiredMode::PerParameter) return desired_profile(ops, mesh, p, cfg.newton);
    StateTrajectory t = desired_base;
    t.v *= p.mu3;
    t.h *= p.mu3;
    return t;
  }

  ProblemData problem(const Parameters & p) const { return make_problem(ic, desired(p)); }

  TruthResult truth(const ParamPoint & mu, std::ostream * warn = &std::cerr) const
  {
    const Parameters p = parameters(mu);
    return truth_newton_solve(ops, p, problem(p), nullptr, cfg.newton, warn);
  }

  SpaceTimeLayout layout() const { return make_layout(ops, cfg.nt); }
};

struct OfflineArtifacts
{
  TrainingSet training;
  SnapshotSet snapshots;
  std::array<PodBasis, 5> pods;
  AggregatedBases bases;
  RomOperators rom;
};

inline std::array<PodBasis, 5> build_pod_bases(const ProblemSetup & s, const SnapshotSet & snaps)
{
  std::array<PodBasis, 5> pods;
  const Parameters p = s.cfg.reference_parameters();
  for (Var var : all_vars) {
    const auto ip                  = make_inner_product(s.ops, var, p.nt, p.dt());
    try {
      pods[static_cast<int>(var)] = compute_pod(snaps[var], ip, var, s.cfg.modes(var), s.cfg.cutoff);
    } catch (const BasisDeficiencyError & e) {
      throw BasisDeficiencyError(std::string(var_name(var)) + ": " + e.what() + "; lower [pod] N to at most " +
                                     std::to_string(e.retainable()),
                                 e.retainable());
    }
  }
  return pods;
}

inline OfflineArtifacts build_rom(const ProblemSetup & s, const SnapshotSet & snaps)
{
  OfflineArtifacts art;
  art.snapshots      = snaps;
  art.pods           = build_pod_bases(s, snaps);
  const Parameters p = s.cfg.reference_parameters();
  art.bases          = aggregate_spaces(art.pods, s.ops, p.nt, p.dt());
  art.rom            = project_operators(s.ops, art.bases, p, s.ic, s.desired_base);
  return art;
}

inline SnapshotSet solve_training_set(const ProblemSetup & s, const TrainingSet & training, int jobs = 1,
                                      std::ostream * log = &std::cerr)
{
  SnapshotSet snaps = collect_snapshots(
      training, [&](const ParamPoint & mu) { return s.truth(mu, log).w; }, jobs, log);
  if (log && !snaps.failed.empty())
    *log << "offline: " << snaps.count() << " of " << training.size() << " training solves converged\n";
  return snaps;
}

/// Largest N every variable's POD can deliver from these snapshots.
inline int retainable_modes(const ProblemSetup & s, const SnapshotSet & snaps)
{
  const Parameters p = s.cfg.reference_parameters();
  int n              = snaps.count();
  for (Var var : all_vars) {
    const auto ip = make_inner_product(s.ops, var, p.nt, p.dt());
    n             = std::min(n, pod_eigendecompose_snapshots(snaps[var], ip, 1, s.cfg.cutoff).retainable);
  }
  return n;
}

/// Sample, solve, compress and project.
inline OfflineArtifacts run_offline(const ProblemSetup & s, int jobs = 1, std::ostream * log = &std::cerr)
{
  const TrainingSet training = sample_parameters(s.cfg.N_max, s.cfg.box, s.cfg.seed);
  OfflineArtifacts art       = build_rom(s, solve_training_set(s, training, jobs, log));
  art.training         = training;
  return art;
}

namespace detail {

inline Eigen::MatrixXd params_matrix(const std::vector<ParamPoint> & mu)
{
  Eigen::MatrixXd M(3, static_cast<Eigen::Index>(mu.size()));
  for (std::size_t c = 0; c < mu.size(); ++c)
    for (int i = 0; i < 3; ++i) M(i, static_cast<Eigen::Index>(c)) = mu[c][i];
  return M;
}

inline std::vector<ParamPoint> params_list(const Eigen::MatrixXd & M)
{
  if (M.size() && M.rows() != 3) throw IoError("parameter section must have 3 rows");
  std::vector<ParamPoint> out(static_cast<std::size_t>(M.cols()));
  for (Eigen::Index c = 0; c < M.cols(); ++c)
    for (int i = 0; i < 3; ++i) out[static_cast<std::size_t>(c)][i] = M(i, c);
  return out;
}

inline Eigen::MatrixXd int_column(const std::vector<int> & v)
{
  Eigen::MatrixXd M(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) M(static_cast<Eigen::Index>(i), 0) = v[i];
  return M;
}

inline std::vector<int> int_list(const Eigen::MatrixXd & M)
{
  std::vector<int> out(static_cast<std::size_t>(M.size()));
  for (Eigen::Index i = 0; i < M.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(M.data()[i]);
  return out;
}

inline void ensure_layout(const fs::path & workdir)
{
  for (const char * d : {"snapshots", "basis", "rom", "reports"}) fs::create_directories(workdir / d);
}

}  // namespace detail

inline void save_snapshots(const fs::path & path, const SnapshotSet & s)
{
  io::Archive a;
  for (Var var : all_vars) a.put(var_name(var), s[var]);
  a.put("mu", detail::params_matrix(s.mu));
  a.put("failed", detail::params_matrix(s.failed));
  a.save(path);
}

inline SnapshotSet load_snapshots(const fs::path & path)
{
  const io::Archive a = io::Archive::load(path);
  SnapshotSet s;
  for (Var var : all_vars) s[var] = a.get(var_name(var));
  s.mu     = detail::params_list(a.get("mu"));
  s.failed = detail::params_list(a.get("failed"));
  for (Var var : all_vars)
    if (s[var].cols() != s.count()) throw IoError("snapshot file: column count does not match the parameter list");
  return s;
}

inline void save_bases(const fs::path & basis_dir, const std::array<PodBasis, 5> & pods, const AggregatedBases & Z)
{
  io::Archive a;
  for (Var var : all_vars) {
    const auto & b       = pods[static_cast<int>(var)];
    const std::string nm = var_name(var);
    a.put("Z_" + nm, b.Z);
    a.put("theta_" + nm, b.eigenvalues);
    a.put("spectrum_" + nm, b.all_eigenvalues);
  }
  a.save(basis_dir / "pod.bin");
  io::Archive g;
  g.put("ZV", Z.ZV);
  g.put("ZH", Z.ZH);
  g.put("ZU", Z.ZU);
  g.put("prefix_v", detail::int_column(Z.prefix_v));
  g.put("prefix_h", detail::int_column(Z.prefix_h));
  g.save(basis_dir / "aggregated.bin");
}

inline std::array<PodBasis, 5> load_pod_bases(const fs::path & basis_dir)
{
  const io::Archive a = io::Archive::load(basis_dir / "pod.bin");
  std::array<PodBasis, 5> pods;
  for (Var var : all_vars) {
    auto & b             = pods[static_cast<int>(var)];
    const std::string nm = var_name(var);
    b.var                = var;
    b.norm               = norm_kind(var);
    b.Z                  = a.get("Z_" + nm);
    b.eigenvalues        = a.get("theta_" + nm);
    b.all_eigenvalues    = a.get("spectrum_" + nm);
  }
  return pods;
}

inline AggregatedBases load_aggregated(const fs::path & basis_dir)
{
  const io::Archive g = io::Archive::load(basis_dir / "aggregated.bin");
  AggregatedBases Z;
  Z.ZV       = g.get("ZV");
  Z.ZH       = g.get("ZH");
  Z.ZU       = g.get("ZU");
  Z.prefix_v = detail::int_list(g.get("prefix_v"));
  Z.prefix_h = detail::int_list(g.get("prefix_h"));
  if (Z.prefix_v.size() != static_cast<std::size_t>(Z.max_N() + 1) || Z.prefix_h.size() != Z.prefix_v.size())
    throw IoError("aggregated bases: prefix tables do not match the control basis");
  return Z;
}

inline void write_eigs_csv(std::ostream & os, const std::array<PodBasis, 5> & pods)
{
  bool header = true;
  for (const auto & b : pods) {
    write_eigenvalue_report(os, b, header);
    header = false;
  }
}

inline void save_offline(const Config & cfg, const OfflineArtifacts & art)
{
  const fs::path & w = cfg.workdir;
  detail::ensure_layout(w);
  save_snapshots(w / "snapshots" / "snapshots.bin", art.snapshots);
  save_bases(w / "basis", art.pods, art.bases);
  art.rom.to_archive().save(w / "rom" / "operators.bin");

  std::ofstream man(w / "rom" / "manifest.txt");
  man << "config_hash = " << config_hash(cfg) << '\n'
      << "training_seed = " << cfg.seed << '\n'
      << "training_requested = " << cfg.N_max << '\n'
      << "training_converged = " << art.snapshots.count() << '\n'
      << "N = " << art.rom.N << '\n'
      << "reduced_velocity = " << art.rom.layout.nV << '\n'
      << "reduced_height = " << art.rom.layout.nH << '\n'
      << "reduced_control = " << art.rom.layout.nU << '\n'
      << "reduced_total = " << art.rom.layout.total() << '\n'
      << "nt = " << art.rom.nt << '\n'
      << "T = " << art.rom.T << '\n'
      << "spatial_dofs = " << art.bases.ZV.rows() / art.rom.nt << ',' << art.bases.ZH.rows() / art.rom.nt << ','
      << art.bases.ZU.rows() / art.rom.nt << '\n'
      << "desired = " << (cfg.desired == DesiredMode::Fixed ? "fixed" : "per-parameter") << '\n'
      << "reduced_desired = mu3 x base at mu1 = " << cfg.reference_mu1 << ", mu2 = " << cfg.reference_mu2 << '\n';

  std::ofstream eigs(w / "reports" / "eigs.csv");
  write_eigs_csv(eigs, art.pods);
}

/// Reduced operators and bases; online solves touch only the reduced data.
class OnlineModel
{
public:
  OnlineModel(AggregatedBases Z, RomOperators rom) : Z_(std::move(Z)), rom_(std::move(rom))
  {
    if (rom_.N != Z_.max_N()) throw IoError("reduced operators and bases disagree on N");
  }

  static OnlineModel load(const fs::path & workdir)
  {
    const fs::path ops = workdir / "rom" / "operators.bin";
    if (!fs::exists(ops)) throw MissingArtifactError("no reduced operators in " + workdir.string() + "; run 'offline' first");
    return OnlineModel(load_aggregated(workdir / "basis"), RomOperators::from_archive(io::Archive::load(ops)));
  }

  int max_N() const { return rom_.N; }
  const AggregatedBases & bases() const { return Z_; }
  const RomOperators & operators() const { return rom_; }

  /// Operators for size N; cached so repeated solves pay the slicing once.
  const RomOperators & at(int N) const
  {
    if (N < 1 || N > rom_.N)
      throw ConfigError("N = " + std::to_string(N) + " is outside the offline range [1, " + std::to_string(rom_.N) + "]");
    if (N == rom_.N) return rom_;
    std::lock_guard<std::mutex> lock(*mutex_);
    auto it = cache_.find(N);
    if (it == cache_.end()) it = cache_.emplace(N, std::make_shared<RomOperators>(rom_.truncate(N))).first;
    return *it->second;
  }

  OnlineResult solve(const Parameters & p, int N, const NewtonSettings & settings = {}) const
  {
    return online_solve(at(N), p, settings);
  }

  SpaceTimeVector lift(const OnlineResult & r, int N, const SpaceTimeLayout & full) const
  {
    return reconstruct(r.y, Z_, at(N).layout, full);
  }

private:
  AggregatedBases Z_;
  RomOperators rom_;
  mutable std::map<int, std::shared_ptr<RomOperators>> cache_;
  std::shared_ptr<std::mutex> mutex_ = std::make_shared<std::mutex>();
};

/// Truth optima at the test parameters, each timed on its own.
inline std::vector<TestPoint> solve_test_points(const ProblemSetup & s, const std::vector<ParamPoint> & mus,
                                                std::ostream * log = &std::cerr)
{
  std::vector<TestPoint> pts;
  for (const auto & mu : mus) {
    TestPoint t;
    t.mu = mu;
    try {
      TruthResult r;
      t.truth_seconds = wall_seconds([&] { r = s.truth(mu, log); });
      t.truth         = std::move(r.w);
      pts.push_back(std::move(t));
    } catch (const Error & e) {
      if (log) *log << "warning: truth solve failed at a test parameter: " << e.what() << "; point skipped\n";
    }
  }
  if (pts.empty()) throw PipelineError("every truth solve on the test set failed");
  return pts;
}

struct BenchOutcome
{
  ErrorReport errors;
  std::vector<TimingRow> timings;
  std::vector<double> desired_discrepancy;  // relative, per test point
};

/**
 * Error sweep and timing table over `test_size` fresh parameters. The N list
 * is clipped to the offline size.
 */
inline BenchOutcome run_bench(const ProblemSetup & s, const OnlineModel & model, std::ostream * log = &std::cerr)
{
  const TrainingSet test = sample_parameters(s.cfg.test_size, s.cfg.box, s.cfg.test_seed);
  std::vector<int> N_list;
  for (int n : s.cfg.N_list)
    if (n <= model.max_N()) N_list.push_back(n);
  if (N_list.empty()) throw ConfigError("no entry of N_list is within the offline size");

  BenchOutcome out;
  const auto pts            = solve_test_points(s, test.mu, log);
  const SpaceTimeLayout lay = s.layout();
  const double dt           = s.cfg.T / s.cfg.nt;
  out.errors = error_sweep(
      s.ops, pts, N_list,
      [&](const ParamPoint & mu, int N) { return model.lift(model.solve(s.parameters(mu), N, s.cfg.newton), N, lay); },
      dt);
  out.timings = measure_speedup(
      pts, N_list, [&](const ParamPoint & mu, int N) { model.solve(s.parameters(mu), N, s.cfg.newton); },
      s.cfg.timing_repeats);

  // how far mu3 x base is from a desired run at the point's own mu1, mu2
  const auto ip_v = make_inner_product(s.ops, Var::V, s.cfg.nt, dt);
  const auto ip_h = make_inner_product(s.ops, Var::H, s.cfg.nt, dt);
  for (const auto & t : pts) {
    const Parameters p       = s.parameters(t.mu);
    const StateTrajectory pp = desired_profile(s.ops, s.mesh, p, s.cfg.newton);
    const double num         = std::hypot(ip_v.norm(pp.v - p.mu3 * s.desired_base.v), ip_h.norm(pp.h - p.mu3 * s.desired_base.h));
    const double den         = std::hypot(ip_v.norm(pp.v), ip_h.norm(pp.h));
    out.desired_discrepancy.push_back(num / den);
  }
  return out;
}

inline void save_bench(const fs::path & workdir, const BenchOutcome & b, const Config & cfg)
{
  detail::ensure_layout(workdir);
  std::ofstream e(workdir / "reports" / "errors.csv");
  write_errors_csv(e, b.errors);
  std::ofstream t(workdir / "reports" / "timings.csv");
  write_timings_csv(t, b.timings);
  std::ofstream d(workdir / "reports" / "desired_discrepancy.csv");
  d.precision(12);
  d << "# desired mode " << (cfg.desired == DesiredMode::Fixed ? "fixed" : "per-parameter")
    << "; reduced side always uses mu3 x base\nmu1,mu2,mu3,relative_difference\n";
  for (std::size_t i = 0; i < b.desired_discrepancy.size(); ++i)
    d << b.errors.mu[i][0] << ',' << b.errors.mu[i][1] << ',' << b.errors.mu[i][2] << ',' << b.desired_discrepancy[i]
      << '\n';
}

}  // namespace sweocp

#endif  // SWEOCP_PIPELINE_HPP
