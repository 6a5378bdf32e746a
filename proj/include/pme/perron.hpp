#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pme/boundary_data.hpp"
#include "pme/solver.hpp"
#include "pme/weak_form.hpp"

namespace pme {

/// Interior nodes where envelopes are compared: cells that survive two
/// layers of erosion, at slices with t >= 0.1 T. Boundary nodes are left out
/// on purpose; Perron solutions may miss the datum there.
struct ProbeSet {
  std::vector<std::pair<std::size_t, int>> nodes;
  std::string description;
};

inline ProbeSet probe_set(const SpaceTimeGrid& grid, int erosion = 2, double time_fraction = 0.1) {
  ProbeSet p;
  const DomainMask core = erode(grid.mask(), erosion);
  const int k0 = static_cast<int>(std::ceil(time_fraction * grid.nt() - 1e-9));
  for (int k = std::max(0, k0); k <= grid.nt(); ++k) {
    for (std::size_t c = 0; c < core.size(); ++c) {
      if (core.inside(c)) p.nodes.emplace_back(c, k);
    }
  }
  p.description = "cells of erode(mask," + std::to_string(erosion) + ") at slices k >= " + std::to_string(k0) +
                  " (t >= " + std::to_string(time_fraction) + " T)";
  return p;
}

/// max over the probes of (a - b); -inf when the probe set is empty.
inline double probe_max_diff(const ScalarField& a, const ScalarField& b, const ProbeSet& p) {
  require_same_grid(a, b, "probe_max_diff");
  double d = -std::numeric_limits<double>::infinity();
  for (const auto& [c, k] : p.nodes) d = std::max(d, a(c, k) - b(c, k));
  return d;
}

inline double probe_max_abs_diff(const ScalarField& a, const ScalarField& b, const ProbeSet& p) {
  require_same_grid(a, b, "probe_max_abs_diff");
  double d = 0.0;
  for (const auto& [c, k] : p.nodes) d = std::max(d, std::abs(a(c, k) - b(c, k)));
  return d;
}

/// Poisson modification: u outside `c`, and inside `c` the discrete solution
/// whose parabolic boundary values are taken from u.
inline ScalarField poisson_modify(const ScalarField& u, const Cylinder& c, const SolverConfig& cfg,
                                  SolveReport* report = nullptr) {
  if (!c.regular) throw NotRegular("Poisson modification needs a regular cylinder");
  if (!(u.grid() == *c.grid)) throw MismatchedGrids("field and cylinder live on different grids");
  ScalarField w = u;
  detail::check_nonnegative_data(w, c);
  SolveReport rep = solve_in_place(w, c, nullptr, cfg);
  if (report) *report = std::move(rep);
  return w;
}

/// Member of the upper class: the upper penalized solution on the full cylinder.
inline ScalarField upper_member(const GridPtr& grid, const BoundaryData& g, double delta, const SolverConfig& cfg,
                                SolveReport* report = nullptr, PsiMode mode = PsiMode::discrete) {
  auto [u, rep] = solve_penalized(Cylinder::full(grid), g, PenaltyParams{delta, PenaltyParams::Side::upper}, cfg, mode);
  if (report) *report = std::move(rep);
  return std::move(u);
}

/// Member of the lower class: the mirrored penalized solution. Nodes held at
/// zero are counted in the report's clamp fraction.
inline ScalarField lower_member(const GridPtr& grid, const BoundaryData& g, double delta, const SolverConfig& cfg,
                                SolveReport* report = nullptr, PsiMode mode = PsiMode::discrete) {
  auto [u, rep] = solve_penalized(Cylinder::full(grid), g, PenaltyParams{delta, PenaltyParams::Side::lower}, cfg, mode);
  if (report) *report = std::move(rep);
  return std::move(u);
}

struct StageRecord {
  int j = 0;
  double delta = 0.0;
  double gap = 0.0;  // probe gap after stage j (NaN when only one chain ran)
  double upper_max = std::numeric_limits<double>::quiet_NaN();
  double lower_max = std::numeric_limits<double>::quiet_NaN();
  int t_start = 0;
  int erosion = 0;
  std::size_t cells = 0;
};

struct EnvelopeOptions {
  ExhaustionSchedule schedule{};
  bool upper = true;
  bool lower = true;
  bool parallel = true;  // run the two chains concurrently
  PsiMode psi = PsiMode::discrete;
};

struct PerronResult {
  ScalarField upper;
  ScalarField lower;
  ScalarField upper_member;
  ScalarField lower_member;
  double gap = std::numeric_limits<double>::quiet_NaN();
  std::vector<StageRecord> per_stage;
  std::string schedule;
  std::string probes;
  SolveReport upper_report;
  SolveReport lower_report;
};

namespace detail {

struct Chain {
  ScalarField member;
  ScalarField result;
  std::vector<std::vector<double>> probe_values;
  std::vector<double> max_norm;
  SolveReport report;
};

inline Chain run_chain(const GridPtr& grid, const BoundaryData& g, int jmax, double delta, const SolverConfig& cfg,
                       const EnvelopeOptions& opt, const ProbeSet& probes, bool upper) {
  SolveReport member_rep;
  ScalarField v = upper ? upper_member(grid, g, delta, cfg, &member_rep, opt.psi)
                        : lower_member(grid, g, delta, cfg, &member_rep, opt.psi);
  Chain ch{v, v, {}, {}, member_rep};
  for (int j = 1; j <= jmax; ++j) {
    const Cylinder q = exhaustion(grid, j, opt.schedule);
    SolveReport rep;
    ch.result = poisson_modify(ch.result, q, cfg, &rep);
    ch.report.append(rep);
    std::vector<double> vals;
    vals.reserve(probes.nodes.size());
    for (const auto& [c, k] : probes.nodes) vals.push_back(ch.result(c, k));
    ch.probe_values.push_back(std::move(vals));
    ch.max_norm.push_back(ch.result.max_inside());
  }
  ch.report.max_field = ch.result.max_inside();
  return ch;
}

}  // namespace detail

/// Discrete Perron envelopes for a smooth datum: starting from the penalized
/// class members, apply Poisson modifications on the exhaustion Q_1, ...,
/// Q_jmax, each stage modifying the previous stage's field. The upper chain
/// decreases and the lower chain increases.
inline PerronResult envelope(const GridPtr& grid, const BoundaryData& g, int jmax, double delta,
                             const SolverConfig& cfg, const EnvelopeOptions& opt = {}) {
  if (jmax < 1) throw InvalidArgument("envelope needs jmax >= 1");
  if (!opt.upper && !opt.lower) throw InvalidArgument("envelope needs at least one chain");
  g.require_smooth("envelope");
  // fail early if the grid cannot hold stage 1
  (void)exhaustion(grid, 1, opt.schedule);
  const ProbeSet probes = probe_set(*grid);

  std::optional<detail::Chain> up;
  std::optional<detail::Chain> lo;
  auto run = [&](bool upper) { return detail::run_chain(grid, g, jmax, delta, cfg, opt, probes, upper); };
  if (opt.upper && opt.lower && opt.parallel) {
    auto fut = std::async(std::launch::async, run, false);
    up.emplace(run(true));
    lo.emplace(fut.get());
  } else {
    if (opt.upper) up.emplace(run(true));
    if (opt.lower) lo.emplace(run(false));
  }

  PerronResult r{up ? up->result : lo->result,
                 lo ? lo->result : up->result,
                 up ? up->member : lo->member,
                 lo ? lo->member : up->member,
                 std::numeric_limits<double>::quiet_NaN(),
                 {},
                 opt.schedule.describe(),
                 probes.description,
                 up ? up->report : SolveReport{},
                 lo ? lo->report : SolveReport{}};
  for (int j = 1; j <= jmax; ++j) {
    const Cylinder q = exhaustion(grid, j, opt.schedule);
    StageRecord s;
    s.j = j;
    s.delta = delta;
    s.t_start = q.t1;
    s.erosion = opt.schedule.erosion(j);
    s.cells = q.submask.count();
    if (up) s.upper_max = up->max_norm[j - 1];
    if (lo) s.lower_max = lo->max_norm[j - 1];
    if (up && lo) {
      double gap = -std::numeric_limits<double>::infinity();
      const auto& a = up->probe_values[j - 1];
      const auto& b = lo->probe_values[j - 1];
      for (std::size_t i = 0; i < a.size(); ++i) gap = std::max(gap, a[i] - b[i]);
      s.gap = gap;
    } else {
      s.gap = std::numeric_limits<double>::quiet_NaN();
    }
    r.per_stage.push_back(s);
  }
  if (up && lo) r.gap = r.per_stage.back().gap;
  return r;
}

struct ResolutivityResult {
  double gap = 0.0;
  int jsmooth = 0;
  double eps = 0.0;
  double rho = 0.0;
  double error_bound = 0.0;
  ScalarField lower;  // lower envelope for phi_j
  ScalarField upper;  // upper envelope for the shifted phi_j
};

/// Gap between the upper envelope of the shifted smooth approximation and the
/// lower envelope of the smooth approximation of a continuous datum. Both
/// bracket the Perron solutions of g, so a small gap shows g is resolutive.
inline ResolutivityResult resolutivity_gap(const GridPtr& grid, const BoundaryData& g, int jmax, int jsmooth,
                                           double delta, const SolverConfig& cfg, const EnvelopeOptions& opt = {}) {
  g.validate();
  const PowerApproximation approx = smooth_power_approx(g, jsmooth, grid);
  const double eps = 1.0 / jsmooth;
  EnvelopeOptions lower_opt = opt;
  lower_opt.upper = false;
  lower_opt.lower = true;
  EnvelopeOptions upper_opt = opt;
  upper_opt.upper = true;
  upper_opt.lower = false;
  const BoundaryData shifted = shift_boundary(approx.datum, eps);
  auto fut = std::async(opt.parallel ? std::launch::async : std::launch::deferred,
                        [&] { return envelope(grid, approx.datum, jmax, delta, cfg, lower_opt); });
  PerronResult high = envelope(grid, shifted, jmax, delta, cfg, upper_opt);
  PerronResult low = fut.get();
  const ProbeSet probes = probe_set(*grid);
  return ResolutivityResult{probe_max_diff(high.upper, low.lower, probes), jsmooth, eps, approx.rho,
                            approx.error_bound, std::move(low.lower), std::move(high.upper)};
}

struct ClassFilterResult {
  std::vector<std::size_t> kept;  // indices into the candidate list
  std::vector<double> defects;    // supersolution defect per candidate
  std::vector<double> boundary_shortfall;  // max (g - candidate) on the parabolic boundary
  std::optional<ScalarField> minimum;
};

/// Keeps the candidates that pass the discrete supersolution test and lie
/// above g (up to `tol`) on the parabolic boundary, and returns their
/// pointwise minimum.
inline ClassFilterResult upper_class_filter(const std::vector<ScalarField>& candidates, const BoundaryData& g,
                                            double tol = 1e-6) {
  g.validate();
  if (candidates.empty()) throw EmptyClass("no candidates supplied");
  ClassFilterResult r;
  const GridPtr& grid = candidates.front().grid_ptr();
  const Cylinder full = Cylinder::full(grid);
  const auto bank = make_test_bank(full);
  const auto pb = parabolic_boundary(full);
  const ScalarField G = sample(grid, g.eval);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& u = candidates[i];
    require_same_grid(u, candidates.front(), "upper_class_filter");
    double shortfall = -std::numeric_limits<double>::infinity();
    for (std::size_t c : pb.initial_cells) shortfall = std::max(shortfall, G(c, 0) - u(c, 0));
    for (const auto& [c, k] : pb.lateral_cells) shortfall = std::max(shortfall, G(c, k) - u(c, k));
    const double defect = supersolution_defect(u, g.m, nullptr, bank);
    r.defects.push_back(defect);
    r.boundary_shortfall.push_back(shortfall);
    if (defect >= -tol && shortfall <= tol) {
      r.kept.push_back(i);
      r.minimum = r.minimum ? pointwise_min(*r.minimum, u) : u;
    }
  }
  if (r.kept.empty()) throw EmptyClass("no candidate is an admissible supersolution for '" + g.name + "'");
  return r;
}

}  // namespace pme
