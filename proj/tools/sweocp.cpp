// Command-line driver: truth / offline / online / validate / bench.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "sweocp/pipeline.hpp"
#include "sweocp/validate.hpp"

using namespace sweocp;
namespace fs = std::filesystem;

namespace {

ParamPoint parse_mu(const std::string & text)
{
  ParamPoint mu{};
  std::stringstream ss(text);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 3) throw ConfigError("--mu takes exactly three comma-separated values");
    try {
      std::size_t used = 0;
      mu[i]            = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception &) {
      throw ConfigError("--mu: cannot read '" + item + "' as a number");
    }
    ++i;
  }
  if (i != 3) throw ConfigError("--mu takes exactly three comma-separated values");
  return mu;
}

void check_in_box(const Config & c, const ParamPoint & mu)
{
  if (!c.box.contains(mu)) std::cerr << "warning: mu lies outside the configured parameter box\n";
}

void print_mu(std::ostream & os, const ParamPoint & mu)
{
  os << "mu = (" << mu[0] << ", " << mu[1] << ", " << mu[2] << ")";
}

int cmd_truth(const Config & c, const std::string & mu_text, const std::optional<std::string> & out)
{
  const ParamPoint mu = parse_mu(mu_text);
  check_in_box(c, mu);
  ProblemSetup s(c);
  TruthResult r;
  const double secs  = wall_seconds([&] { r = s.truth(mu); });
  const Parameters p = s.parameters(mu);
  const double J     = evaluate_cost(s.ops, r.w, p, s.problem(p));
  print_mu(std::cout, mu);
  std::cout << "\ntruth: " << r.iterations << " Newton iterations, residual " << r.residual_history.back() << ", "
            << secs << " s\n"
            << "cost " << J << ", min height " << r.min_height << ", mass drift "
            << mass_conservation_check(s.ops, r.w.block(Var::H), s.ic.h0) << '\n';
  const fs::path prefix = out ? fs::path(*out) : c.workdir / "reports" / "truth";
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  write_solution_csv(prefix.string(), s.mesh, r.w);
  std::cout << "wrote " << prefix.string() << "_t1.csv .. _t" << c.nt << ".csv\n";
  return 0;
}

int cmd_offline(const Config & c, int jobs, bool reuse)
{
  ProblemSetup s(c);
  std::cout << "offline: " << c.N_max << " training parameters, seed " << c.seed << ", " << s.ops.nv() + s.ops.nh()
            << " state dofs per step\n";
  const fs::path snap_file = c.workdir / "snapshots" / "snapshots.bin";
  OfflineArtifacts art;
  const double secs = wall_seconds([&] {
    const TrainingSet training = sample_parameters(c.N_max, c.box, c.seed);
    SnapshotSet snaps;
    if (reuse) {
      if (!fs::exists(snap_file)) throw MissingArtifactError("no snapshots in " + c.workdir.string());
      snaps = load_snapshots(snap_file);
      if (snaps[Var::V].rows() != make_layout(s.ops, c.nt).length(Var::V))
        throw ConfigError("stored snapshots do not match the configured mesh and time grid");
      std::cout << "reusing " << snaps.count() << " stored snapshots\n";
    } else {
      snaps = solve_training_set(s, training, jobs);
      fs::create_directories(snap_file.parent_path());
      save_snapshots(snap_file, snaps);
    }
    art          = build_rom(s, snaps);
    art.training = training;
  });
  save_offline(c, art);
  const auto & L = art.rom.layout;
  std::cout << "snapshots " << art.snapshots.count() << ", N = " << art.rom.N << ", reduced sizes v/chi " << L.nV
            << ", h/lambda " << L.nH << ", u " << L.nU << ", total " << L.total() << '\n'
            << "offline time " << secs << " s; artifacts in " << c.workdir.string() << '\n';
  return 0;
}

int cmd_online(const Config & c, const std::string & mu_text, std::optional<int> N_opt,
               const std::optional<std::string> & out)
{
  const ParamPoint mu = parse_mu(mu_text);
  check_in_box(c, mu);
  const OnlineModel model = OnlineModel::load(c.workdir);
  const int N             = N_opt.value_or(std::min(c.N, model.max_N()));
  const Parameters p      = c.parameters(mu);
  OnlineResult r;
  const double secs = wall_seconds([&] { r = model.solve(p, N, c.newton); });
  print_mu(std::cout, mu);
  std::cout << "\nonline: N = " << N << ", reduced dimension " << model.at(N).layout.total() << ", " << r.iterations
            << " Newton iterations, residual " << r.residual_history.back() << ", " << secs << " s\n";
  // lifting needs the mesh for the dump only
  const Mesh mesh       = build_structured_mesh(c.mesh);
  const auto ops        = assemble_operators(mesh, c.gravity);
  const fs::path prefix = out ? fs::path(*out) : c.workdir / "reports" / "online";
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  write_solution_csv(prefix.string(), mesh, model.lift(r, N, make_layout(ops, c.nt)));
  std::cout << "wrote " << prefix.string() << "_t1.csv .. _t" << c.nt << ".csv\n";
  return 0;
}

int cmd_validate(const Config & c)
{
  const auto checks = run_validation(c, nullptr);
  bool ok           = true;
  for (const auto & r : checks) {
    std::printf("%s  %-52s value %.3e  tol %.1e\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.value, r.tolerance);
    ok = ok && r.passed;
  }
  std::cout << (ok ? "all checks passed\n" : "some checks failed\n");
  return ok ? 0 : 1;
}

int cmd_bench(const Config & c)
{
  const OnlineModel model = OnlineModel::load(c.workdir);
  ProblemSetup s(c);
  const BenchOutcome b = run_bench(s, model);
  save_bench(c.workdir, b, c);
  write_errors_csv(std::cout, b.errors);
  write_timings_csv(std::cout, b.timings);
  for (std::size_t i = 0; i < b.errors.N.size(); ++i)
    if (!b.errors.failures[i].empty())
      std::cout << "N = " << b.errors.N[i] << ": " << b.errors.failures[i].size() << " online solves failed\n";
  std::cout << "reports in " << (c.workdir / "reports").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Reduced-order optimal control of the shallow water equations"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "configuration file (defaults when omitted)");
  app.add_option("--seed", seed, "training seed, overrides [pod] seed");

  std::string mu_truth, mu_online;
  std::optional<std::string> out_truth, out_online;
  std::optional<int> N;
  int jobs = 1;
  bool reuse = false;

  auto * truth = app.add_subcommand("truth", "full-order space-time optimal control solve");
  truth->add_option("--mu", mu_truth, "mu1,mu2,mu3")->required();
  truth->add_option("--out", out_truth, "dump prefix");

  auto * offline = app.add_subcommand("offline", "sample, solve, build bases and reduced operators");
  offline->add_option("--jobs", jobs, "parallel truth solves")->check(CLI::PositiveNumber);
  offline->add_flag("--reuse-snapshots", reuse, "rebuild bases and operators from stored snapshots");

  auto * online = app.add_subcommand("online", "reduced solve at one parameter");
  online->add_option("--mu", mu_online, "mu1,mu2,mu3")->required();
  online->add_option("--N", N, "basis size per variable")->check(CLI::PositiveNumber);
  online->add_option("--out", out_online, "dump prefix");

  auto * validate = app.add_subcommand("validate", "oracle and property checks on a coarsened problem");
  auto * bench    = app.add_subcommand("bench", "error sweep and speedup table on a fresh test set");

  CLI11_PARSE(app, argc, argv);

  try {
    Config c;
    if (config_path.empty()) {
      apply_workdir_fallback(c);
    } else {
      c = parse_config(config_path);
    }
    if (seed) c.seed = *seed;
    c.validate();

    if (*truth) return cmd_truth(c, mu_truth, out_truth);
    if (*offline) return cmd_offline(c, jobs, reuse);
    if (*online) return cmd_online(c, mu_online, N, out_online);
    if (*validate) return cmd_validate(c);
    if (*bench) return cmd_bench(c);
  } catch (const MissingArtifactError & e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError & e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const NonConvergenceError & e) {
    std::cerr << "error: " << e.what() << " (last residual " << e.last_residual() << ")\n";
    return 1;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
