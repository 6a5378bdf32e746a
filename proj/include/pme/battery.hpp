#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "pme/exact.hpp"
#include "pme/perron.hpp"
#include "pme/solver.hpp"

namespace pme {

/// One ordered pair for the comparison battery: `sub` and `super` on the
/// same grid with sub <= super on the parabolic boundary. `super` is a
/// discrete solution, a penalized upper member or a truncated Barenblatt
/// profile, so it doubles as a supersolution for the Caccioppoli check with
/// bound `M`.
struct BatteryCase {
  std::string name;
  ScalarField sub;
  ScalarField super;
  double M = 0.0;
  double m = 2.0;
};

namespace detail {

inline GridPtr battery_grid_1d(int n = 64, int nt = 32) {
  return make_grid(DomainMask::box(n, 0, 6.0 / n, Point{-3.0, 0.0}), 1.0, nt);
}

inline GridPtr battery_grid_2d(int n = 20, int nt = 20) {
  return make_grid(DomainMask::box(n, n, 3.0 / n, Point{-1.5, -1.5}), 1.0, nt);
}

inline ScalarField solved(const GridPtr& grid, const BoundaryData& g, const SolverConfig& cfg) {
  return solve_ibvp(Cylinder::full(grid), g, nullptr, cfg).first;
}

}  // namespace detail

/// Twenty ordered pairs built from constants, Gaussian bumps, linear-in-t
/// data, Barenblatt traces and Barenblatt truncations, on 1D and 2D grids
/// and for m in {1.5, 2, 3}.
inline std::vector<BatteryCase> comparison_battery(double newton_tol = 1e-10) {
  std::vector<BatteryCase> out;
  const auto g1 = detail::battery_grid_1d();
  const auto g2 = detail::battery_grid_2d();
  auto cfg_for = [newton_tol](double m) {
    SolverConfig c;
    c.m = m;
    c.newton_tol = newton_tol;
    return c;
  };
  auto pair_of_solutions = [&](const std::string& name, const GridPtr& grid, const BoundaryData& lo,
                               const BoundaryData& hi) {
    const auto cfg = cfg_for(lo.m);
    ScalarField super = detail::solved(grid, hi, cfg);
    const double M = std::max(hi.M, super.max_inside());
    out.push_back({name, detail::solved(grid, lo, cfg), std::move(super), M, lo.m});
  };
  auto truncation_pair = [&](const std::string& name, const GridPtr& grid, const BoundaryData& lo,
                             const BarenblattParams& p, double k) {
    const auto cfg = cfg_for(lo.m);
    out.push_back({name, detail::solved(grid, lo, cfg), truncate(sample_barenblatt(grid, p), k), k, lo.m});
  };
  const Point o{};

  pair_of_solutions("const 0.2 <= const 0.5", g1, builtin::constant(0.2, 2.0), builtin::constant(0.5, 2.0));
  pair_of_solutions("const 0 <= const 1 (2D)", g2, builtin::constant(0.0, 2.0), builtin::constant(1.0, 2.0));
  pair_of_solutions("const 0.3 <= const 0.3", g1, builtin::constant(0.3, 3.0), builtin::constant(0.3, 3.0));
  pair_of_solutions("bump <= const", g1, builtin::bump(0.4, o, 0.5, 0.1, 1, 2.0), builtin::constant(0.5, 2.0));
  pair_of_solutions("const <= bump", g1, builtin::constant(0.05, 2.0), builtin::bump(0.4, o, 0.5, 0.1, 1, 2.0));
  pair_of_solutions("bump <= taller bump", g1, builtin::bump(0.3, o, 0.5, 0.05, 1, 2.0),
                    builtin::bump(0.6, o, 0.5, 0.05, 1, 2.0));
  pair_of_solutions("bump <= shifted bump", g1, builtin::bump(0.3, o, 0.4, 0.0, 1, 3.0),
                    shift_boundary(builtin::bump(0.3, o, 0.4, 0.0, 1, 3.0), 0.1));
  pair_of_solutions("bump <= const (2D)", g2, builtin::bump(0.5, o, 0.4, 0.0, 2, 2.0), builtin::constant(0.7, 2.0));
  pair_of_solutions("bump <= wider bump (2D)", g2, builtin::bump(0.5, o, 0.3, 0.0, 2, 2.0),
                    builtin::bump(0.5, o, 0.5, 0.0, 2, 2.0));
  pair_of_solutions("linear <= linear", g1, builtin::linear_in_t(0.1, 0.2, 1.0, 2.0),
                    builtin::linear_in_t(0.2, 0.2, 1.0, 2.0));
  pair_of_solutions("linear <= const (2D)", g2, builtin::linear_in_t(0.1, 0.3, 1.0, 1.5),
                    builtin::constant(0.45, 1.5));
  pair_of_solutions("bump <= const (2D, m=1.5)", g2, builtin::bump(0.6, Point{0.3, -0.2}, 0.35, 0.0, 2, 1.5),
                    builtin::constant(0.6, 1.5));

  const auto b1 = BarenblattParams{1, 2.0, 0.2, 0.1};
  const auto b1_big = BarenblattParams{1, 2.0, 0.5, 0.1};
  pair_of_solutions("Barenblatt <= larger Barenblatt", g1, builtin::barenblatt_trace(b1),
                    builtin::barenblatt_trace(b1_big));
  truncation_pair("Barenblatt <= truncated larger Barenblatt", g1, builtin::barenblatt_trace(b1), b1_big,
                  1.05 * builtin::barenblatt_trace(b1).M);
  const auto b3 = BarenblattParams{1, 3.0, 0.1, 0.1};
  const auto b3_big = BarenblattParams{1, 3.0, 0.3, 0.1};
  truncation_pair("Barenblatt <= truncated larger Barenblatt (m=3)", g1, builtin::barenblatt_trace(b3), b3_big,
                  1.05 * builtin::barenblatt_trace(b3).M);
  const auto b2 = BarenblattParams{2, 2.0, 0.1, 0.1};
  const auto b2_big = BarenblattParams{2, 2.0, 0.3, 0.1};
  truncation_pair("Barenblatt <= truncated larger Barenblatt (2D)", g2, builtin::barenblatt_trace(b2), b2_big,
                  1.05 * builtin::barenblatt_trace(b2).M);
  truncation_pair("zero <= truncated Barenblatt (2D)", g2, builtin::constant(0.0, 2.0), b2, 0.5);
  const auto b15 = BarenblattParams{2, 1.5, 0.2, 0.1};
  const auto b15_big = BarenblattParams{2, 1.5, 0.5, 0.1};
  pair_of_solutions("Barenblatt <= larger Barenblatt (2D, m=1.5)", g2, builtin::barenblatt_trace(b15),
                    builtin::barenblatt_trace(b15_big));
  {
    const BoundaryData lo = truncate_datum(builtin::barenblatt_trace(b1), 0.5 * builtin::barenblatt_trace(b1).M);
    truncation_pair("truncated Barenblatt <= truncated larger Barenblatt", g1, lo, b1_big,
                    0.75 * builtin::barenblatt_trace(b1_big).M);
  }
  {
    const auto g = builtin::bump(0.5, Point{0.2, 0.0}, 0.6, 0.1, 1, 2.0);
    const auto cfg = cfg_for(2.0);
    ScalarField super = upper_member(g1, g, 1e-2, cfg);
    const double M = std::max(g.M, super.max_inside());
    out.push_back({"lower member <= upper member", lower_member(g1, g, 1e-2, cfg), std::move(super), M, 2.0});
  }
  return out;
}

}  // namespace pme
