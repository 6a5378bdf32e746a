#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pme/boundary_data.hpp"
#include "pme/errors.hpp"
#include "pme/exact.hpp"
#include "pme/geometry.hpp"
#include "pme/perron.hpp"
#include "pme/solver.hpp"
#include "pme/verify.hpp"
#include "pme/weak_form.hpp"

namespace pme {

namespace fs = std::filesystem;

/// Exit codes of the experiment runner.
enum ExitCode : int { exit_ok = 0, exit_check_failed = 1, exit_config_error = 2, exit_solver_failure = 3 };

/// A library error tagged with the module and operation that raised it.
class StageFailure : public Error {
 public:
  StageFailure(const std::string& module, const std::string& operation, const std::string& what)
      : Error("StageFailure", module + "::" + operation + ": " + what), module_(module), operation_(operation) {}
  const std::string& module() const noexcept { return module_; }
  const std::string& operation() const noexcept { return operation_; }

 private:
  std::string module_;
  std::string operation_;
};

/// Runs `fn`, rewrapping library errors with the stage they came from.
template <class F>
auto guarded(const char* module, const char* operation, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageFailure&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw StageFailure(module, operation, e.what());
  }
}

// Grid section of a config. Refinement level l multiplies the extents and nt
// by 2^l and divides h by 2^l.
struct GridSpec {
  std::string shape = "interval";  // interval | box | l_shape | file
  std::vector<int> extents{64};
  double h = 1.0 / 64;
  Point lower{};
  double T = 1.0;
  int nt = 32;
  std::string path;  // mask file for shape == "file"

  int dim() const {
    if (shape == "interval") return 1;
    if (shape == "file") return 0;  // known only after loading
    return 2;
  }

  GridPtr build(int level = 0) const {
    const int f = 1 << level;
    const double hl = h / f;
    if (shape == "interval") return make_grid(DomainMask::box(extents[0] * f, 0, hl, lower), T, nt * f);
    if (shape == "box") return make_grid(DomainMask::box(extents[0] * f, extents[1] * f, hl, lower), T, nt * f);
    if (shape == "l_shape") return make_grid(DomainMask::l_shape(extents[0] * f, hl, lower), T, nt * f);
    if (level != 0) throw ConfigError("mask files cannot be refined; use level 0 only");
    return make_grid(load_mask(path, lower), T, nt);
  }
};

// Boundary datum section: a named builtin and its parameters.
struct DatumSpec {
  std::string type = "constant";
  json params = json::object();

  BoundaryData build(int dim, double m, double T) const {
    auto num = [&](const char* key, double fallback) {
      return params.contains(key) ? params.at(key).get<double>() : fallback;
    };
    auto point = [&](const char* key) {
      if (!params.contains(key)) return Point{};
      const auto v = params.at(key).get<std::vector<double>>();
      return Point{v.empty() ? 0.0 : v[0], v.size() > 1 ? v[1] : 0.0};
    };
    if (type == "constant") return builtin::constant(num("value", 1.0), m);
    if (type == "linear-in-t") return builtin::linear_in_t(num("a", 0.1), num("b", 0.1), T, m);
    if (type == "bump") {
      return builtin::bump(num("amplitude", 0.5), point("center"), num("sigma", 0.2), num("base", 0.0), dim, m);
    }
    if (type == "barenblatt-trace") {
      const double t0 = num("t0", 0.1);
      const bool normalized = params.value("normalized", !params.contains("C"));
      const auto p = normalized ? BarenblattParams::normalized(dim, m, t0) : BarenblattParams{dim, m, num("C", 1.0), t0};
      return builtin::barenblatt_trace(p);
    }
    if (type == "L-corner-ramp") return builtin::l_corner_ramp(point("corner"), num("scale", 0.5), dim, m);
    throw ConfigError("unknown boundary datum '" + type + "'");
  }

  BarenblattParams barenblatt(int dim, double m) const {
    const double t0 = params.value("t0", 0.1);
    const bool normalized = params.value("normalized", !params.contains("C"));
    return normalized ? BarenblattParams::normalized(dim, m, t0) : BarenblattParams{dim, m, params.value("C", 1.0), t0};
  }
};

struct SweepSpec {
  std::vector<double> eps{0.2, 0.1, 0.05};
  std::vector<double> delta{1e-2};
  std::vector<int> jmax{6};
  std::vector<int> levels{0};
  std::vector<int> jsmooth;  // per level; empty means 2^(level + 1)
};

struct BarenblattSpec {
  std::vector<double> times{0.5, 1.0, 2.0};  // shifted times t + t0
  int quadrature_nodes = 64;
  double mass_tol = 1e-6;
};

struct ExperimentConfig {
  std::string command;
  GridSpec grid;
  double m = 2.0;
  DatumSpec datum;
  SolverConfig solver;
  ExhaustionSchedule schedule;
  SweepSpec sweep;
  BarenblattSpec barenblatt;
  std::vector<std::string> checks;  // verify-suite selection; empty means all
  std::string output_dir;
  int workers = 0;          // 0 means hardware concurrency
  bool dump_fields = true;  // write CSV and binary field dumps

  static const std::set<std::string>& commands() {
    static const std::set<std::string> c{"solve", "barenblatt", "perron", "resolutivity", "verify-suite"};
    return c;
  }

  static const std::set<std::string>& check_names() {
    static const std::set<std::string> c{"comparison",  "oleinik",        "caccioppoli",
                                         "time_energy", "poisson_energy", "initial_attainment"};
    return c;
  }

  bool wants(const std::string& check) const {
    return checks.empty() || std::find(checks.begin(), checks.end(), check) != checks.end();
  }

  static ExperimentConfig from_json(const json& doc);
  json to_json() const;
  void validate() const;
};

namespace detail {

inline void allow_keys(const json& obj, const std::set<std::string>& keys, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : obj.items()) {
    if (!keys.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read_opt(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

inline Point read_point(const json& v) {
  const auto a = v.get<std::vector<double>>();
  if (a.empty() || a.size() > 2) throw ConfigError("points are [x] or [x, y]");
  return Point{a[0], a.size() > 1 ? a[1] : 0.0};
}

inline json point_json(const Point& p) { return json::array({p.x, p.y}); }

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  ExperimentConfig c;
  try {
    detail::allow_keys(doc,
                       {"command", "grid", "m", "datum", "solver", "schedule", "sweep", "barenblatt", "checks",
                        "output_dir", "workers", "dump_fields"},
                       "config");
    if (!doc.contains("command")) throw ConfigError("config needs a 'command'");
    c.command = doc.at("command").get<std::string>();
    detail::read_opt(doc, "m", c.m);
    detail::read_opt(doc, "output_dir", c.output_dir);
    detail::read_opt(doc, "workers", c.workers);
    detail::read_opt(doc, "dump_fields", c.dump_fields);
    detail::read_opt(doc, "checks", c.checks);
    if (doc.contains("grid")) {
      const auto& g = doc.at("grid");
      detail::allow_keys(g, {"shape", "extents", "h", "lower", "T", "nt", "path"}, "grid");
      detail::read_opt(g, "shape", c.grid.shape);
      detail::read_opt(g, "extents", c.grid.extents);
      detail::read_opt(g, "h", c.grid.h);
      if (g.contains("lower")) c.grid.lower = detail::read_point(g.at("lower"));
      detail::read_opt(g, "T", c.grid.T);
      detail::read_opt(g, "nt", c.grid.nt);
      detail::read_opt(g, "path", c.grid.path);
    }
    if (doc.contains("datum")) {
      const auto& d = doc.at("datum");
      if (!d.is_object() || !d.contains("type")) throw ConfigError("datum needs a 'type'");
      c.datum.type = d.at("type").get<std::string>();
      c.datum.params = d;
      c.datum.params.erase("type");
      static const std::map<std::string, std::set<std::string>> allowed{
          {"constant", {"value"}},
          {"linear-in-t", {"a", "b"}},
          {"bump", {"amplitude", "center", "sigma", "base"}},
          {"barenblatt-trace", {"t0", "C", "normalized"}},
          {"L-corner-ramp", {"corner", "scale"}}};
      const auto it = allowed.find(c.datum.type);
      if (it == allowed.end()) throw ConfigError("unknown boundary datum '" + c.datum.type + "'");
      detail::allow_keys(c.datum.params, it->second, "datum '" + c.datum.type + "'");
      for (const char* key : {"center", "corner"}) {
        if (c.datum.params.contains(key)) (void)detail::read_point(c.datum.params.at(key));
      }
    }
    if (doc.contains("solver")) {
      const auto& s = doc.at("solver");
      detail::allow_keys(s, {"newton_tol", "newton_max_iter", "reg_eps", "linear_tol", "periodic"}, "solver");
      detail::read_opt(s, "newton_tol", c.solver.newton_tol);
      detail::read_opt(s, "newton_max_iter", c.solver.newton_max_iter);
      detail::read_opt(s, "reg_eps", c.solver.reg_eps);
      detail::read_opt(s, "linear_tol", c.solver.linear_tol);
      detail::read_opt(s, "periodic", c.solver.periodic);
    }
    if (doc.contains("schedule")) {
      const auto& s = doc.at("schedule");
      detail::allow_keys(s, {"max_erosion", "time_rule"}, "schedule");
      detail::read_opt(s, "max_erosion", c.schedule.max_erosion);
      if (s.contains("time_rule")) {
        const auto rule = s.at("time_rule").get<std::string>();
        if (rule == "geometric") {
          c.schedule.time_rule = ExhaustionSchedule::TimeRule::geometric;
        } else if (rule == "harmonic") {
          c.schedule.time_rule = ExhaustionSchedule::TimeRule::harmonic;
        } else {
          throw ConfigError("time_rule must be 'geometric' or 'harmonic'");
        }
      }
    }
    if (doc.contains("sweep")) {
      const auto& s = doc.at("sweep");
      detail::allow_keys(s, {"eps", "delta", "jmax", "levels", "jsmooth"}, "sweep");
      detail::read_opt(s, "eps", c.sweep.eps);
      detail::read_opt(s, "delta", c.sweep.delta);
      detail::read_opt(s, "jmax", c.sweep.jmax);
      detail::read_opt(s, "levels", c.sweep.levels);
      detail::read_opt(s, "jsmooth", c.sweep.jsmooth);
    }
    if (doc.contains("barenblatt")) {
      const auto& b = doc.at("barenblatt");
      detail::allow_keys(b, {"times", "quadrature_nodes", "mass_tol"}, "barenblatt");
      detail::read_opt(b, "times", c.barenblatt.times);
      detail::read_opt(b, "quadrature_nodes", c.barenblatt.quadrature_nodes);
      detail::read_opt(b, "mass_tol", c.barenblatt.mass_tol);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.solver.m = c.m;
  c.validate();
  return c;
}

inline void ExperimentConfig::validate() const {
  if (!commands().count(command)) throw ConfigError("unknown command '" + command + "'");
  if (!(m > 1.0)) throw ConfigError("m must exceed 1");
  const auto& g = grid;
  if (g.shape == "interval" || g.shape == "l_shape") {
    if (g.extents.size() != 1) throw ConfigError(g.shape + " grids take one extent");
  } else if (g.shape == "box") {
    if (g.extents.size() != 2) throw ConfigError("box grids take two extents");
  } else if (g.shape == "file") {
    if (g.path.empty()) throw ConfigError("file grids need a 'path'");
  } else {
    throw ConfigError("unknown grid shape '" + g.shape + "'");
  }
  for (int e : g.extents) {
    if (e < 1) throw ConfigError("grid extents must be positive");
  }
  if (g.shape == "l_shape" && g.extents[0] % 2 != 0) throw ConfigError("L-shape extent must be even");
  if (!(g.h > 0.0) || !(g.T > 0.0) || g.nt < 1) throw ConfigError("grid needs h > 0, T > 0 and nt >= 1");
  if (sweep.eps.empty() || sweep.delta.empty() || sweep.jmax.empty() || sweep.levels.empty()) {
    throw ConfigError("sweep lists must be nonempty");
  }
  for (double e : sweep.eps) {
    if (!(e > 0.0 && e <= 1.0)) throw ConfigError("eps values must lie in (0, 1]");
  }
  for (double d : sweep.delta) {
    if (!(d > 0.0)) throw ConfigError("delta values must be positive");
  }
  for (int j : sweep.jmax) {
    if (j < 1) throw ConfigError("jmax values must be >= 1");
  }
  for (int l : sweep.levels) {
    if (l < 0 || l > 8) throw ConfigError("refinement levels must lie in [0, 8]");
  }
  if (!sweep.jsmooth.empty() && sweep.jsmooth.size() != sweep.levels.size()) {
    throw ConfigError("jsmooth must list one value per refinement level");
  }
  for (int j : sweep.jsmooth) {
    if (j < 1) throw ConfigError("jsmooth values must be >= 1");
  }
  for (const auto& ch : checks) {
    if (!check_names().count(ch)) throw ConfigError("unknown check '" + ch + "'");
  }
  if (barenblatt.times.empty()) throw ConfigError("barenblatt times must be nonempty");
  for (double t : barenblatt.times) {
    if (!(t > 0.0)) throw ConfigError("barenblatt times must be positive");
  }
  if (barenblatt.quadrature_nodes < 2) throw ConfigError("barenblatt quadrature needs >= 2 nodes");
  if (schedule.max_erosion < 1) throw ConfigError("max_erosion must be >= 1");
  if (workers < 0) throw ConfigError("workers must be >= 0");
  if ((command == "barenblatt") && datum.type != "barenblatt-trace") {
    throw ConfigError("the barenblatt command needs a barenblatt-trace datum");
  }
  try {
    solver.validate();
    const int dim = grid.dim() == 0 ? 2 : grid.dim();
    (void)datum.build(dim, m, grid.T);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed datum: ") + e.what());
  }
}

/// Canonical form with every default filled in; feeding it back reproduces the run.
inline json ExperimentConfig::to_json() const {
  json d = datum.params;
  d["type"] = datum.type;
  json g{{"shape", grid.shape}, {"extents", grid.extents}, {"h", grid.h}, {"lower", detail::point_json(grid.lower)},
         {"T", grid.T},         {"nt", grid.nt}};
  if (!grid.path.empty()) g["path"] = grid.path;
  return json{{"command", command},
              {"grid", g},
              {"m", m},
              {"datum", d},
              {"solver",
               {{"newton_tol", solver.newton_tol},
                {"newton_max_iter", solver.newton_max_iter},
                {"reg_eps", solver.reg_eps},
                {"linear_tol", solver.linear_tol},
                {"periodic", solver.periodic}}},
              {"schedule",
               {{"max_erosion", schedule.max_erosion},
                {"time_rule", schedule.time_rule == ExhaustionSchedule::TimeRule::geometric ? "geometric" : "harmonic"}}},
              {"sweep",
               {{"eps", sweep.eps},
                {"delta", sweep.delta},
                {"jmax", sweep.jmax},
                {"levels", sweep.levels},
                {"jsmooth", sweep.jsmooth}}},
              {"barenblatt",
               {{"times", barenblatt.times},
                {"quadrature_nodes", barenblatt.quadrature_nodes},
                {"mass_tol", barenblatt.mass_tol}}},
              {"checks", checks},
              {"workers", workers},
              {"dump_fields", dump_fields}};
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return ExperimentConfig::from_json(doc);
}

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
inline void write_atomic(const fs::path& path, const std::function<void(std::ostream&)>& body,
                         bool binary = false) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IOError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
    if (!out) throw IOError("cannot open " + tmp.string() + " for writing");
    body(out);
    out.flush();
    if (!out) throw IOError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IOError("cannot move " + tmp.string() + " into place: " + ec.message());
}

/// Runs fn(0..n-1) on at most `workers` threads. The first exception is
/// rethrown after every worker has stopped.
inline void for_each_bounded(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t pool =
      std::min<std::size_t>(n, static_cast<std::size_t>(workers > 0 ? workers : std::max(1u, std::thread::hardware_concurrency())));
  if (pool <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < pool; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first) std::rethrow_exception(first);
}

/// Inputs for the plot files.
struct PlotData {
  std::vector<std::pair<std::string, ScalarField>> fields;
  std::vector<EstimateReport> reports;  // rows of lhs_rhs_vs_refinement.csv; "level" read from context
  struct StageRow {
    double delta = 0.0;
    int jmax = 0;
    StageRecord stage;
  };
  std::vector<StageRow> stages;
};

namespace detail {

// Row of cells used for centerline profiles: the only row in 1D, otherwise
// the row nearest the middle of the inside cells' vertical extent.
inline int centerline_row(const DomainMask& mask) {
  if (mask.dim() == 1) return 0;
  int lo = mask.ny();
  int hi = -1;
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (!mask.inside(c)) continue;
    lo = std::min(lo, mask.iy(c));
    hi = std::max(hi, mask.iy(c));
  }
  return (lo + hi) / 2;
}

inline std::string file_safe(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' ? ch : '_';
  return out;
}

}  // namespace detail

/// Writes gnuplot-friendly CSV files into `dir`:
///   profile_<name>.csv          slice,t,x,value along the centerline row
///   gap_vs_j.csv                delta,jmax,j,gap,upper_max,lower_max,t_start,erosion,cells
///   lhs_rhs_vs_refinement.csv   level,name,lhs,rhs,margin,satisfied
/// The last two always get their header, even when there are no rows.
inline std::vector<std::string> emit_plotdata(const PlotData& data, const fs::path& dir) {
  std::vector<std::string> written;
  for (const auto& [name, f] : data.fields) {
    const std::string file = "profile_" + detail::file_safe(name) + ".csv";
    write_atomic(dir / file, [&](std::ostream& out) {
      const auto& mask = f.mask();
      const int row = detail::centerline_row(mask);
      out << "slice,t,x,value\n";
      out.precision(17);
      for (int k = 0; k < f.grid().slices(); ++k) {
        for (int i = 0; i < mask.nx(); ++i) {
          if (!mask.inside(i, row)) continue;
          const std::size_t c = mask.index(i, row);
          out << k << ',' << f.grid().time(k) << ',' << mask.center(c).x << ',' << f(c, k) << '\n';
        }
      }
    });
    written.push_back(file);
  }
  write_atomic(dir / "gap_vs_j.csv", [&](std::ostream& out) {
    out << "delta,jmax,j,gap,upper_max,lower_max,t_start,erosion,cells\n";
    out.precision(17);
    for (const auto& r : data.stages) {
      const auto& s = r.stage;
      out << r.delta << ',' << r.jmax << ',' << s.j << ',' << s.gap << ',' << s.upper_max << ',' << s.lower_max << ','
          << s.t_start << ',' << s.erosion << ',' << s.cells << '\n';
    }
  });
  written.push_back("gap_vs_j.csv");
  write_atomic(dir / "lhs_rhs_vs_refinement.csv", [&](std::ostream& out) {
    out << "level,name,lhs,rhs,margin,satisfied\n";
    out.precision(17);
    for (const auto& r : data.reports) {
      const int level = r.context.contains("level") ? r.context.at("level").get<int>() : 0;
      out << level << ',' << r.name << ',' << r.lhs << ',' << r.rhs << ',' << r.margin() << ','
          << (r.satisfied ? 1 : 0) << '\n';
    }
  });
  written.push_back("lhs_rhs_vs_refinement.csv");
  return written;
}

struct RunResult {
  int exit_code = exit_ok;
  std::vector<EstimateReport> reports;
  std::vector<std::string> artifacts;  // paths relative to the output directory
  std::string error;
};

namespace detail {

class RunContext {
 public:
  RunContext(const ExperimentConfig& cfg, fs::path out) : cfg_(cfg), out_(std::move(out)) {}

  const ExperimentConfig& cfg() const { return cfg_; }
  const fs::path& out() const { return out_; }

  void add_artifact(const std::string& rel) {
    std::lock_guard<std::mutex> lock(mu_);
    artifacts_.push_back(rel);
  }

  void dump_field(const std::string& rel_stem, const ScalarField& f) {
    if (!cfg_.dump_fields) return;
    write_atomic(out_ / (rel_stem + ".csv"), [&](std::ostream& o) { write_csv(f, o); });
    write_atomic(out_ / (rel_stem + ".bin"), [&](std::ostream& o) { write_binary(f, cfg_.m, o); }, true);
    add_artifact(rel_stem + ".csv");
    add_artifact(rel_stem + ".bin");
  }

  void dump_json(const std::string& rel, const json& j) {
    write_atomic(out_ / rel, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
    add_artifact(rel);
  }

  std::vector<std::string> artifacts() const {
    std::vector<std::string> a = artifacts_;
    std::sort(a.begin(), a.end());
    return a;
  }

  GridPtr grid(int level) const {
    return guarded("geometry", "build_grid", [&] { return cfg_.grid.build(level); });
  }

  BoundaryData datum(const GridPtr& grid) const {
    return guarded("boundary_data", "build_datum",
                   [&] { return cfg_.datum.build(grid->mask().dim(), cfg_.m, grid->T()); });
  }

  int jsmooth(std::size_t level_index) const {
    if (!cfg_.sweep.jsmooth.empty()) return cfg_.sweep.jsmooth[level_index];
    return 1 << (cfg_.sweep.levels[level_index] + 1);
  }

 private:
  const ExperimentConfig& cfg_;
  fs::path out_;
  std::mutex mu_;
  std::vector<std::string> artifacts_;
};

inline std::string level_dir(const char* prefix, int level) { return std::string(prefix) + "_L" + std::to_string(level); }

inline void tag(EstimateReport& r, int level, const std::string& suffix = {}) {
  r.context["level"] = level;
  if (!suffix.empty()) r.name += suffix;
}

inline std::vector<EstimateReport> run_solve(RunContext& ctx, PlotData& plot) {
  const auto& cfg = ctx.cfg();
  std::vector<std::pair<int, double>> errors(cfg.sweep.levels.size(), {0, std::numeric_limits<double>::quiet_NaN()});
  std::vector<std::optional<ScalarField>> fields(cfg.sweep.levels.size());
  for_each_bounded(cfg.sweep.levels.size(), cfg.workers, [&](std::size_t i) {
    const int level = cfg.sweep.levels[i];
    const GridPtr grid = ctx.grid(level);
    const BoundaryData g = ctx.datum(grid);
    auto [u, rep] = guarded("pme_core", "solve_ibvp", [&] { return solve_ibvp(Cylinder::full(grid), g, nullptr, cfg.solver); });
    const std::string dir = level_dir("solve", level);
    ctx.dump_field(dir + "/u", u);
    ctx.dump_json(dir + "/solve_report.json", to_json(rep));
    if (cfg.datum.type == "barenblatt-trace") {
      const auto p = cfg.datum.barenblatt(grid->mask().dim(), cfg.m);
      errors[i] = {level, max_abs_diff(u, sample_barenblatt(grid, p))};
    }
    fields[i] = std::move(u);
  });
  for (std::size_t i = 0; i < fields.size(); ++i) {
    plot.fields.emplace_back("u_L" + std::to_string(cfg.sweep.levels[i]), std::move(*fields[i]));
  }
  if (cfg.datum.type == "barenblatt-trace") {
    write_atomic(ctx.out() / "convergence.csv", [&](std::ostream& out) {
      out << "level,max_error\n";
      out.precision(17);
      for (const auto& [level, err] : errors) out << level << ',' << err << '\n';
    });
    ctx.add_artifact("convergence.csv");
  }
  return {};
}

inline std::vector<EstimateReport> run_barenblatt(RunContext& ctx, PlotData& plot) {
  const auto& cfg = ctx.cfg();
  std::vector<EstimateReport> reports;
  const GridPtr grid = ctx.grid(cfg.sweep.levels.front());
  const int n = grid->mask().dim();
  const auto p = cfg.datum.barenblatt(n, cfg.m);
  const bool normalized = cfg.datum.params.value("normalized", !cfg.datum.params.contains("C"));

  const double ref = normalized ? 1.0
                                : guarded("exact", "barenblatt_mass", [&] {
                                    return barenblatt_mass(p, cfg.barenblatt.times.front() - p.t0,
                                                           cfg.barenblatt.quadrature_nodes);
                                  });
  double worst = 0.0;
  std::ostringstream table;
  table << "n,m,C,t_shifted,mass,deviation\n";
  table.precision(17);
  for (double ts : cfg.barenblatt.times) {
    const double mass = guarded("exact", "barenblatt_mass", [&] {
      return barenblatt_mass(p, ts - p.t0, cfg.barenblatt.quadrature_nodes);
    });
    worst = std::max(worst, std::abs(mass - ref));
    table << n << ',' << p.m << ',' << p.C << ',' << ts << ',' << mass << ',' << mass - ref << '\n';
  }
  write_atomic(ctx.out() / "mass_table.csv", [&](std::ostream& out) { out << table.str(); });
  ctx.add_artifact("mass_table.csv");
  EstimateReport mass;
  mass.name = normalized ? "barenblatt_mass_is_one" : "barenblatt_mass_is_conserved";
  mass.lhs = worst;
  mass.rhs = cfg.barenblatt.mass_tol;
  mass.context = {{"C", p.C}, {"t0", p.t0}, {"n", n}, {"m", p.m}};
  mass.decide();
  reports.push_back(mass);

  // sampled profile and the free boundary seen on the grid
  ScalarField B = sample_barenblatt(grid, p);
  ctx.dump_field("barenblatt", B);
  const auto& mask = grid->mask();
  const int row = centerline_row(mask);
  double worst_offset = 0.0;
  for (int k = 0; k < grid->slices(); ++k) {
    const double r = support_radius(p, grid->time(k));
    double left = std::numeric_limits<double>::infinity();
    double right = -std::numeric_limits<double>::infinity();
    double xmin = left;
    double xmax = right;
    for (int i = 0; i < mask.nx(); ++i) {
      if (!mask.inside(i, row)) continue;
      const std::size_t c = mask.index(i, row);
      const double x = mask.center(c).x;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      if (B(c, k) > 0.0) {
        left = std::min(left, x);
        right = std::max(right, x);
      }
    }
    if (!(left < right)) continue;
    // an endpoint at the domain edge only shows the support leaving the grid
    if (left > xmin) worst_offset = std::max(worst_offset, std::abs(left + r));
    if (right < xmax) worst_offset = std::max(worst_offset, std::abs(right - r));
  }
  EstimateReport support;
  support.name = "profile_support_matches_radius";
  support.lhs = worst_offset;
  support.rhs = mask.h();
  support.context = {{"row", row}};
  support.decide();
  reports.push_back(support);
  plot.fields.emplace_back("barenblatt", std::move(B));
  return reports;
}

inline std::vector<EstimateReport> ordering_reports(const PerronResult& r, double tol, const std::string& suffix) {
  const ProbeSet probes = probe_set(r.upper.grid());
  std::vector<EstimateReport> out;
  auto add = [&](const std::string& name, double lhs) {
    EstimateReport e;
    e.name = name + suffix;
    e.lhs = lhs;
    e.rhs = tol;
    e.decide();
    out.push_back(std::move(e));
  };
  add("lower_member<=lower", probe_max_diff(r.lower_member, r.lower, probes));
  add("lower<=upper", probe_max_diff(r.lower, r.upper, probes));
  add("upper<=upper_member", probe_max_diff(r.upper, r.upper_member, probes));
  double stage = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < r.per_stage.size(); ++i) {
    stage = std::max(stage, r.per_stage[i].gap - r.per_stage[i - 1].gap);
  }
  add("gap_nonincreasing_in_j", r.per_stage.size() > 1 ? stage : 0.0);
  return out;
}

inline std::vector<EstimateReport> run_perron(RunContext& ctx, PlotData& plot) {
  const auto& cfg = ctx.cfg();
  struct SweepPoint {
    int level;
    double delta;
    int jmax;
  };
  std::vector<SweepPoint> points;
  for (int level : cfg.sweep.levels) {
    for (double d : cfg.sweep.delta) {
      for (int j : cfg.sweep.jmax) points.push_back({level, d, j});
    }
  }
  std::vector<std::vector<EstimateReport>> per_point(points.size());
  std::vector<std::vector<StageRecord>> stages(points.size());
  std::vector<std::optional<ScalarField>> uppers(points.size());
  for_each_bounded(points.size(), cfg.workers, [&](std::size_t i) {
    const auto& pt = points[i];
    const GridPtr grid = ctx.grid(pt.level);
    const BoundaryData g = ctx.datum(grid);
    EnvelopeOptions opt;
    opt.schedule = cfg.schedule;
    const PerronResult r =
        guarded("perron", "envelope", [&] { return envelope(grid, g, pt.jmax, pt.delta, cfg.solver, opt); });
    std::ostringstream name;
    name << "perron_L" << pt.level << "_d" << i << "_j" << pt.jmax;
    ctx.dump_field(name.str() + "/upper", r.upper);
    ctx.dump_field(name.str() + "/lower", r.lower);
    json summary{{"delta", pt.delta}, {"jmax", pt.jmax}, {"level", pt.level}, {"gap", json_number(r.gap)},
                 {"schedule", r.schedule}, {"probes", r.probes}, {"upper_report", to_json(r.upper_report)},
                 {"lower_report", to_json(r.lower_report)}};
    ctx.dump_json(name.str() + "/envelope.json", summary);
    std::ostringstream suffix;
    suffix << " [level " << pt.level << ", delta " << pt.delta << ", jmax " << pt.jmax << "]";
    per_point[i] = ordering_reports(r, 10.0 * cfg.solver.newton_tol, suffix.str());
    for (auto& e : per_point[i]) tag(e, pt.level);
    stages[i] = r.per_stage;
    uppers[i] = r.upper;
  });
  std::vector<EstimateReport> reports;
  for (std::size_t i = 0; i < points.size(); ++i) {
    reports.insert(reports.end(), per_point[i].begin(), per_point[i].end());
    for (const auto& s : stages[i]) plot.stages.push_back({points[i].delta, points[i].jmax, s});
  }
  plot.fields.emplace_back("upper_first_point", std::move(*uppers.front()));
  return reports;
}

inline std::vector<EstimateReport> run_resolutivity(RunContext& ctx, PlotData& plot) {
  const auto& cfg = ctx.cfg();
  const std::size_t L = cfg.sweep.levels.size();
  std::vector<std::optional<ResolutivityResult>> slots(L);
  std::vector<GridPtr> grids(L);
  for_each_bounded(L, cfg.workers, [&](std::size_t i) {
    const int level = cfg.sweep.levels[i];
    grids[i] = ctx.grid(level);
    const BoundaryData g = ctx.datum(grids[i]);
    EnvelopeOptions opt;
    opt.schedule = cfg.schedule;
    slots[i] = guarded("perron", "resolutivity_gap", [&] {
      return resolutivity_gap(grids[i], g, cfg.sweep.jmax.front(), ctx.jsmooth(i), cfg.sweep.delta.front(), cfg.solver,
                              opt);
    });
    const std::string dir = level_dir("resolutivity", level);
    ctx.dump_field(dir + "/upper_shifted", slots[i]->upper);
    ctx.dump_field(dir + "/lower", slots[i]->lower);
  });
  std::vector<ResolutivityResult> results;
  for (auto& r : slots) results.push_back(std::move(*r));
  write_atomic(ctx.out() / "resolutivity.csv", [&](std::ostream& out) {
    out << "level,cells,h,nt,jsmooth,eps,gap,rho,error_bound\n";
    out.precision(17);
    for (std::size_t i = 0; i < L; ++i) {
      const auto& r = results[i];
      out << cfg.sweep.levels[i] << ',' << grids[i]->mask().count() << ',' << grids[i]->mask().h() << ','
          << grids[i]->nt() << ',' << r.jsmooth << ',' << r.eps << ',' << r.gap << ',' << r.rho << ','
          << r.error_bound << '\n';
    }
  });
  ctx.add_artifact("resolutivity.csv");

  std::vector<EstimateReport> reports;
  EstimateReport trend;
  trend.name = "resolutivity_gap_strictly_decreasing";
  double worst = -std::numeric_limits<double>::infinity();
  json gaps = json::array();
  for (std::size_t i = 0; i < L; ++i) {
    gaps.push_back(json_number(results[i].gap));
    if (i > 0) worst = std::max(worst, results[i].gap - results[i - 1].gap);
  }
  trend.lhs = L > 1 ? worst : -1.0;
  trend.rhs = 0.0;
  trend.context = {{"gaps", gaps}, {"level", cfg.sweep.levels.back()}};
  trend.decide();
  trend.satisfied = trend.lhs < 0.0;
  reports.push_back(trend);
  // plot rows only: the gap against the sandwich width eps + error bound
  for (std::size_t i = 0; i < L; ++i) {
    EstimateReport e;
    e.name = "resolutivity_gap_vs_eps";
    e.lhs = results[i].gap;
    e.rhs = results[i].eps + results[i].error_bound;
    e.context = {{"jsmooth", results[i].jsmooth}};
    tag(e, cfg.sweep.levels[i]);
    e.decide();
    plot.reports.push_back(e);
  }
  plot.fields.emplace_back("resolutivity_upper_finest", results.back().upper);
  return reports;
}

// Report with the smallest margin relative to its rhs.
inline EstimateReport tightest(std::vector<EstimateReport> rs) {
  return *std::max_element(rs.begin(), rs.end(), [](const EstimateReport& a, const EstimateReport& b) {
    if (a.satisfied != b.satisfied) return a.satisfied;  // failing reports win
    return a.ratio() < b.ratio();
  });
}

inline std::vector<EstimateReport> run_verify_suite(RunContext& ctx, PlotData& plot) {
  const auto& cfg = ctx.cfg();
  const std::size_t L = cfg.sweep.levels.size();
  std::vector<std::vector<EstimateReport>> per_level(L);
  std::vector<std::optional<EstimateReport>> time_energy(L);
  std::vector<std::optional<EstimateReport>> poisson(L);
  std::vector<std::optional<ScalarField>> solutions(L);
  for_each_bounded(L, cfg.workers, [&](std::size_t i) {
    const int level = cfg.sweep.levels[i];
    const GridPtr grid = ctx.grid(level);
    const BoundaryData g = ctx.datum(grid);
    const double delta = cfg.sweep.delta.front();
    const auto sfx = " [level " + std::to_string(level) + "]";
    auto& out = per_level[i];
    auto push = [&](EstimateReport r) {
      tag(r, level, sfx);
      out.push_back(std::move(r));
    };
    const ScalarField u = guarded("pme_core", "solve_ibvp", [&] {
      return solve_ibvp(Cylinder::full(grid), g, nullptr, cfg.solver).first;
    });
    ctx.dump_field(level_dir("verify", level) + "/u", u);
    std::optional<ScalarField> up;
    auto upper = [&]() -> const ScalarField& {
      if (!up) up = guarded("perron", "upper_member", [&] { return upper_member(grid, g, delta, cfg.solver); });
      return *up;
    };
    if (cfg.wants("comparison")) {
      const ScalarField lo = guarded("perron", "lower_member", [&] { return lower_member(grid, g, delta, cfg.solver); });
      auto a = guarded("verify", "comparison_check", [&] { return comparison_check(lo, u, cfg.solver.newton_tol); });
      a.name = "comparison lower_member<=u";
      push(std::move(a));
      auto b = guarded("verify", "comparison_check", [&] { return comparison_check(u, upper(), cfg.solver.newton_tol); });
      b.name = "comparison u<=upper_member";
      push(std::move(b));
    }
    if (cfg.wants("oleinik")) {
      for (double eps : cfg.sweep.eps) {
        const ScalarField ue = guarded("pme_core", "solve_ibvp", [&] {
          return solve_ibvp(Cylinder::full(grid), shift_boundary(g, eps), nullptr, cfg.solver).first;
        });
        auto r = guarded("verify", "oleinik_gap", [&] { return oleinik_gap(u, ue, eps, g.M, cfg.m); });
        std::ostringstream label;
        label << "oleinik_gap eps=" << eps;
        r.name = label.str();
        push(std::move(r));
      }
    }
    if (cfg.wants("caccioppoli")) {
      const auto bumps = interior_bumps(grid->mask());
      if (!bumps.empty()) {
        const ScalarField& v = upper();
        const double M = std::max(g.M, v.max_inside());
        std::vector<EstimateReport> rs;
        for (const auto& eta : bumps) {
          rs.push_back(guarded("verify", "caccioppoli_check", [&] { return caccioppoli_check(v, eta, M, cfg.m); }));
        }
        auto r = tightest(std::move(rs));
        r.context["test_functions"] = bumps.size();
        r.name = "caccioppoli_check upper_member";
        push(std::move(r));
      }
    }
    if (cfg.wants("time_energy") && g.smooth && g.power_second_time_derivative) {
      auto r = guarded("verify", "time_energy_check",
                       [&] { return time_energy_check(u, g, nullptr, 0.5 * (cfg.m + 1.0)); });
      tag(r, level);
      time_energy[i] = r;
      push(std::move(r));
    }
    if (cfg.wants("poisson_energy") && g.smooth) {
      const Cylinder c = guarded("verify", "central_cylinder", [&] { return central_cylinder(grid); });
      const ScalarField& v = upper();
      const ScalarField w = guarded("perron", "poisson_modify", [&] { return poisson_modify(v, c, cfg.solver); });
      auto r = guarded("verify", "poisson_energy_check", [&] { return poisson_energy_check(w, v, c, cfg.m); });
      tag(r, level);
      poisson[i] = r;
      push(std::move(r));
    }
    if (cfg.wants("initial_attainment")) {
      const auto bumps = interior_bumps(grid->mask());
      if (!bumps.empty()) {
        push(guarded("verify", "initial_attainment_check", [&] { return initial_attainment_check(u, g, bumps); }));
      }
    }
    solutions[i] = u;
  });
  std::vector<EstimateReport> reports;
  for (auto& v : per_level) reports.insert(reports.end(), v.begin(), v.end());
  auto trend = [&](const char* name, const std::vector<std::optional<EstimateReport>>& ladder) {
    std::vector<EstimateReport> xs;
    for (const auto& r : ladder) {
      if (r) xs.push_back(*r);
    }
    if (xs.size() > 1) {
      auto t = ratio_trend(name, xs);
      t.context["level"] = cfg.sweep.levels.back();
      reports.push_back(std::move(t));
    }
  };
  trend("time_energy_ratio_nonincreasing", time_energy);
  trend("poisson_energy_ratio_nonincreasing", poisson);
  plot.fields.emplace_back("u_finest", std::move(*solutions.back()));
  return reports;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace detail

/// Executes the configured experiment into `out_dir` and returns the exit
/// code with the reports. Errors are reported in the result, never thrown;
/// the manifest is written last, also on failure when possible.
inline RunResult run(const ExperimentConfig& cfg, const fs::path& out_dir) {
  RunResult res;
  detail::RunContext ctx(cfg, out_dir);
  PlotData plot;
  const json canonical = cfg.to_json();
  try {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IOError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    ctx.dump_json("config.json", canonical);
    if (cfg.command == "solve") {
      res.reports = detail::run_solve(ctx, plot);
    } else if (cfg.command == "barenblatt") {
      res.reports = detail::run_barenblatt(ctx, plot);
    } else if (cfg.command == "perron") {
      res.reports = detail::run_perron(ctx, plot);
    } else if (cfg.command == "resolutivity") {
      res.reports = detail::run_resolutivity(ctx, plot);
    } else {
      res.reports = detail::run_verify_suite(ctx, plot);
    }
    plot.reports.insert(plot.reports.begin(), res.reports.begin(), res.reports.end());
    for (const auto& f : emit_plotdata(plot, out_dir)) ctx.add_artifact(f);
    ctx.dump_json("verdict.json", verdict_json(res.reports));
    write_atomic(out_dir / "reports.csv", [&](std::ostream& o) { write_reports_csv(res.reports, o); });
    ctx.add_artifact("reports.csv");
    bool all = true;
    for (const auto& r : res.reports) all = all && r.satisfied;
    res.exit_code = all ? exit_ok : exit_check_failed;
  } catch (const ConfigError& e) {
    res.exit_code = exit_config_error;
    res.error = e.what();
  } catch (const std::exception& e) {
    res.exit_code = exit_solver_failure;
    res.error = e.what();
  }
  res.artifacts = ctx.artifacts();
  json manifest{{"command", cfg.command},
                {"config", canonical},
                {"config_hash", fnv1a_hex(canonical.dump())},
                {"exit_code", res.exit_code},
                {"error", res.error},
                {"grid", {{"shape", cfg.grid.shape}, {"extents", cfg.grid.extents}, {"h", cfg.grid.h},
                          {"T", cfg.grid.T}, {"nt", cfg.grid.nt}, {"levels", cfg.sweep.levels}}},
                {"tolerances",
                 {{"newton_tol", cfg.solver.newton_tol},
                  {"linear_tol", cfg.solver.linear_tol},
                  {"reg_eps", cfg.solver.reg_eps},
                  {"newton_max_iter", cfg.solver.newton_max_iter},
                  {"comparison_tol", 10.0 * cfg.solver.newton_tol},
                  {"mass_tol", cfg.barenblatt.mass_tol}}},
                {"schedule", cfg.schedule.describe()},
                {"artifacts", res.artifacts},
                {"created_at", detail::utc_timestamp()}};
  try {
    write_atomic(out_dir / "manifest.json", [&](std::ostream& o) { o << manifest.dump(2) << '\n'; });
  } catch (const std::exception& e) {
    if (res.exit_code == exit_ok || res.exit_code == exit_check_failed) {
      res.exit_code = exit_solver_failure;
      res.error = e.what();
    }
  }
  return res;
}

}  // namespace pme
