#ifndef SWEOCP_CONFIG_HPP
#define SWEOCP_CONFIG_HPP

/**
 * @file
 * @brief Sectioned `key = value` configuration.
 *
 *   [mesh]     x_min x_max y_min y_max nx ny
 *   [time]     T nt
 *   [physics]  g alpha mu1_min mu1_max mu2_min mu2_max mu3_min mu3_max
 *              desired (fixed | per-parameter) reference_mu1 reference_mu2
 *   [pod]      N_max N seed cutoff N_v N_h N_u N_chi N_lambda
 *   [bench]    test_size test_seed N_list timing_repeats
 *   [solver]   tol_abs tol_rel max_iterations step_tol_abs step_tol_rel
 *              step_max_iterations max_halvings
 *   [paths]    workdir
 *
 * `#` starts a comment. Unknown sections and keys are rejected.
 */

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sweocp/error.hpp"
#include "sweocp/geometry.hpp"
#include "sweocp/spacetime.hpp"

namespace sweocp {

enum class DesiredMode { Fixed, PerParameter };

struct Config
{
  MeshConfig mesh;
  double T = 0.8;
  int nt   = 8;

  double gravity = 9.81;
  double alpha   = 0.1;
  ParameterBox box;
  DesiredMode desired  = DesiredMode::Fixed;
  double reference_mu1 = 0.1;
  double reference_mu2 = 0.5;

  int N_max            = 100;
  int N                = 30;
  std::uint64_t seed   = 1;
  double cutoff        = 1e-12;
  std::array<int, 5> N_var{0, 0, 0, 0, 0};  // 0: use N

  int test_size           = 20;
  std::uint64_t test_seed = 2;
  std::vector<int> N_list{1, 2, 5, 10, 15, 20, 25, 30};
  int timing_repeats = 3;

  NewtonSettings newton;
  std::filesystem::path workdir = "sweocp_work";
  bool workdir_set              = false;  // given in the file

  int modes(Var v) const
  {
    const int n = N_var[static_cast<int>(v)];
    return n > 0 ? n : N;
  }

  Parameters parameters(const std::array<double, 3> & mu) const
  {
    Parameters p;
    p.mu1   = mu[0];
    p.mu2   = mu[1];
    p.mu3   = mu[2];
    p.alpha = alpha;
    p.T     = T;
    p.nt    = nt;
    return p;
  }

  Parameters reference_parameters() const { return parameters({reference_mu1, reference_mu2, 1.0}); }

  void validate() const
  {
    mesh.validate();
    if (!(T > 0.0)) throw ConfigError("T must be positive");
    if (nt < 1) throw ConfigError("nt must be >= 1");
    if (!(gravity > 0.0)) throw ConfigError("g must be positive");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
    box.validate();
    if (box.lo[0] < 0.0 || box.lo[1] < 0.0) throw ConfigError("mu1_min and mu2_min must be nonnegative");
    if (reference_mu1 < 0.0 || reference_mu2 < 0.0) throw ConfigError("reference_mu1 and reference_mu2 must be nonnegative");
    if (N_max < 1) throw ConfigError("N_max must be >= 1");
    if (N < 1) throw ConfigError("N must be >= 1");
    if (N > N_max) throw ConfigError("N must not exceed N_max");
    for (int n : N_var)
      if (n < 0 || n > N_max) throw ConfigError("per-variable N must lie in [0, N_max]");
    if (!(cutoff >= 0.0 && cutoff < 1.0)) throw ConfigError("cutoff must lie in [0, 1)");
    if (test_size < 1) throw ConfigError("test_size must be >= 1");
    if (N_list.empty()) throw ConfigError("N_list must not be empty");
    for (int n : N_list)
      if (n < 1) throw ConfigError("N_list entries must be >= 1");
    if (timing_repeats < 1) throw ConfigError("timing_repeats must be >= 1");
    if (!(newton.tol_abs >= 0.0) || !(newton.tol_rel >= 0.0)) throw ConfigError("tol_abs and tol_rel must be nonnegative");
    if (newton.max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    if (newton.step_max_iterations < 1) throw ConfigError("step_max_iterations must be >= 1");
    if (newton.max_halvings < 0) throw ConfigError("max_halvings must be >= 0");
  }
};

namespace detail {

inline std::string trim(const std::string & s)
{
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template<typename T>
T parse_value(const std::string & key, const std::string & text, int line)
{
  std::istringstream is(text);
  T v{};
  is >> v;
  if (!is || !(is >> std::ws).eof())
    throw ConfigError("line " + std::to_string(line) + ": invalid value '" + text + "' for key '" + key + "'");
  return v;
}

}  // namespace detail

inline Config parse_config_stream(std::istream & in)
{
  Config c;
  using Setter = std::function<void(const std::string &, const std::string &, int)>;
  auto num = [](auto & field) -> Setter {
    return [&field](const std::string & k, const std::string & v, int line) {
      field = detail::parse_value<std::remove_reference_t<decltype(field)>>(k, v, line);
    };
  };
  std::map<std::string, std::map<std::string, Setter>> table;
  table["mesh"] = {{"x_min", num(c.mesh.x_min)}, {"x_max", num(c.mesh.x_max)}, {"y_min", num(c.mesh.y_min)},
                   {"y_max", num(c.mesh.y_max)}, {"nx", num(c.mesh.nx)},       {"ny", num(c.mesh.ny)}};
  table["time"] = {{"T", num(c.T)}, {"nt", num(c.nt)}};
  table["physics"] = {
      {"g", num(c.gravity)},          {"alpha", num(c.alpha)},       {"mu1_min", num(c.box.lo[0])},
      {"mu1_max", num(c.box.hi[0])},  {"mu2_min", num(c.box.lo[1])}, {"mu2_max", num(c.box.hi[1])},
      {"mu3_min", num(c.box.lo[2])},  {"mu3_max", num(c.box.hi[2])}, {"reference_mu1", num(c.reference_mu1)},
      {"reference_mu2", num(c.reference_mu2)},
      {"desired", [&c](const std::string &, const std::string & v, int line) {
         if (v == "fixed") c.desired = DesiredMode::Fixed;
         else if (v == "per-parameter") c.desired = DesiredMode::PerParameter;
         else
           throw ConfigError("line " + std::to_string(line) + ": desired must be 'fixed' or 'per-parameter'");
       }}};
  table["pod"] = {{"N_max", num(c.N_max)},      {"N", num(c.N)},         {"seed", num(c.seed)},
                  {"cutoff", num(c.cutoff)},    {"N_v", num(c.N_var[0])}, {"N_h", num(c.N_var[1])},
                  {"N_u", num(c.N_var[2])},     {"N_chi", num(c.N_var[3])}, {"N_lambda", num(c.N_var[4])}};
  table["bench"] = {{"test_size", num(c.test_size)},
                    {"test_seed", num(c.test_seed)},
                    {"timing_repeats", num(c.timing_repeats)},
                    {"N_list", [&c](const std::string & k, const std::string & v, int line) {
                       c.N_list.clear();
                       std::stringstream ss(v);
                       std::string item;
                       while (std::getline(ss, item, ','))
                         c.N_list.push_back(detail::parse_value<int>(k, detail::trim(item), line));
                     }}};
  table["solver"] = {{"tol_abs", num(c.newton.tol_abs)},
                     {"tol_rel", num(c.newton.tol_rel)},
                     {"max_iterations", num(c.newton.max_iterations)},
                     {"step_tol_abs", num(c.newton.step_tol_abs)},
                     {"step_tol_rel", num(c.newton.step_tol_rel)},
                     {"step_max_iterations", num(c.newton.step_max_iterations)},
                     {"max_halvings", num(c.newton.max_halvings)}};
  table["paths"] = {{"workdir", [&c](const std::string &, const std::string & v, int) {
                      c.workdir     = v;
                      c.workdir_set = true;
                    }}};

  std::string raw, section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = detail::trim(raw.substr(0, raw.find('#')));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError("line " + std::to_string(line) + ": malformed section header");
      section = detail::trim(s.substr(1, s.size() - 2));
      if (!table.count(section)) throw ConfigError("line " + std::to_string(line) + ": unknown section '" + section + "'");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line) + ": expected 'key = value'");
    if (section.empty()) throw ConfigError("line " + std::to_string(line) + ": key outside of a section");
    const std::string key = detail::trim(s.substr(0, eq)), value = detail::trim(s.substr(eq + 1));
    const auto it = table[section].find(key);
    if (it == table[section].end())
      throw ConfigError("line " + std::to_string(line) + ": unknown key '" + key + "' in section [" + section + "]");
    if (value.empty()) throw ConfigError("line " + std::to_string(line) + ": empty value for key '" + key + "'");
    it->second(key, value, line);
  }
  c.validate();
  return c;
}

inline void apply_workdir_fallback(Config & c)
{
  if (c.workdir_set) return;
  if (const char * env = std::getenv("SWE_OCP_WORKDIR"); env && *env) c.workdir = env;
}

inline Config parse_config_string(const std::string & text)
{
  std::istringstream is(text);
  return parse_config_stream(is);
}

/// Reads a config file; without a [paths] workdir entry, SWE_OCP_WORKDIR (when set) replaces the default.
inline Config parse_config(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Config c = parse_config_stream(in);
  apply_workdir_fallback(c);
  return c;
}

/// Canonical text form, used for the provenance hash.
inline std::string canonical_text(const Config & c)
{
  std::ostringstream os;
  os.precision(17);
  os << "[mesh]\nx_min = " << c.mesh.x_min << "\nx_max = " << c.mesh.x_max << "\ny_min = " << c.mesh.y_min
     << "\ny_max = " << c.mesh.y_max << "\nnx = " << c.mesh.nx << "\nny = " << c.mesh.ny << "\n[time]\nT = " << c.T
     << "\nnt = " << c.nt << "\n[physics]\ng = " << c.gravity << "\nalpha = " << c.alpha;
  const char * names[3] = {"mu1", "mu2", "mu3"};
  for (int i = 0; i < 3; ++i) os << '\n' << names[i] << "_min = " << c.box.lo[i] << '\n' << names[i] << "_max = " << c.box.hi[i];
  os << "\ndesired = " << (c.desired == DesiredMode::Fixed ? "fixed" : "per-parameter")
     << "\nreference_mu1 = " << c.reference_mu1 << "\nreference_mu2 = " << c.reference_mu2 << "\n[pod]\nN_max = " << c.N_max
     << "\nN = " << c.N << "\nseed = " << c.seed << "\ncutoff = " << c.cutoff;
  const char * vn[5] = {"N_v", "N_h", "N_u", "N_chi", "N_lambda"};
  for (int i = 0; i < 5; ++i) os << '\n' << vn[i] << " = " << c.N_var[i];
  os << "\n[solver]\ntol_abs = " << c.newton.tol_abs << "\ntol_rel = " << c.newton.tol_rel
     << "\nmax_iterations = " << c.newton.max_iterations << "\nstep_tol_abs = " << c.newton.step_tol_abs
     << "\nstep_tol_rel = " << c.newton.step_tol_rel << "\nstep_max_iterations = " << c.newton.step_max_iterations
     << "\nmax_halvings = " << c.newton.max_halvings << '\n';
  return os.str();
}

/// 64-bit FNV-1a of the canonical offline-relevant settings, as 16 hex digits.
inline std::string config_hash(const Config & c)
{
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : canonical_text(c)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace sweocp

#endif  // SWEOCP_CONFIG_HPP
