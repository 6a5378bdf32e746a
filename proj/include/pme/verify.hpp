#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "pme/boundary_data.hpp"
#include "pme/field.hpp"
#include "pme/geometry.hpp"
#include "pme/solver.hpp"
#include "pme/weak_form.hpp"

namespace pme {

using json = nlohmann::json;

/// Outcome of one quantitative check: lhs <= rhs + tolerance.
struct EstimateReport {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double tolerance = 0.0;
  bool satisfied = false;
  bool applicable = true;  // false when the hypothesis of the estimate was not met
  json context = json::object();

  double margin() const { return rhs - lhs; }
  double ratio() const { return rhs != 0.0 ? lhs / rhs : (lhs == 0.0 ? 0.0 : std::numeric_limits<double>::infinity()); }

  void decide() { satisfied = applicable && lhs <= rhs + tolerance; }
};

/// JSON has no inf or NaN; such values are written as strings.
inline json json_number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline json to_json(const EstimateReport& r) {
  return json{{"name", r.name},
              {"lhs", json_number(r.lhs)},
              {"rhs", json_number(r.rhs)},
              {"tolerance", json_number(r.tolerance)},
              {"margin", json_number(r.margin())},
              {"satisfied", r.satisfied},
              {"applicable", r.applicable},
              {"context", r.context}};
}

inline json to_json(const SolveReport& r) {
  int iters = 0;
  int worst = 0;
  for (int i : r.newton_iters_per_step) {
    iters += i;
    worst = std::max(worst, i);
  }
  double res = 0.0;
  for (double x : r.residual_per_step) res = std::max(res, x);
  json steps = json::array();
  for (std::size_t i = 0; i < r.residual_per_step.size(); ++i) {
    steps.push_back({{"residual", json_number(r.residual_per_step[i])},
                     {"newton_iters", i < r.newton_iters_per_step.size() ? r.newton_iters_per_step[i] : 0}});
  }
  return json{{"steps", r.residual_per_step.size()},
              {"newton_iters_total", iters},
              {"newton_iters_max", worst},
              {"residual_max", json_number(res)},
              {"max_field", json_number(r.max_field)},
              {"weak_form_residual", json_number(r.weak_form_residual)},
              {"penalty_violation", json_number(r.penalty_violation)},
              {"clamp_fraction", json_number(r.clamp_fraction)},
              {"schedule", r.schedule},
              {"per_step", std::move(steps)}};
}

/// Single verdict document for a list of reports.
inline json verdict_json(const std::vector<EstimateReport>& reports) {
  json list = json::array();
  bool all = true;
  for (const auto& r : reports) {
    list.push_back(to_json(r));
    all = all && r.satisfied;
  }
  return json{{"all_satisfied", all}, {"count", reports.size()}, {"reports", std::move(list)}};
}

inline void write_reports_csv(const std::vector<EstimateReport>& reports, std::ostream& out) {
  out << "name,lhs,rhs,margin,satisfied\n";
  out.precision(17);
  for (const auto& r : reports) {
    out << r.name << ',' << r.lhs << ',' << r.rhs << ',' << r.margin() << ',' << (r.satisfied ? 1 : 0) << '\n';
  }
}

namespace detail {

// Gradient energy of one slice over faces between inside cells of `mask`,
// each face weighted by w (averaged over its two cells) when w is given.
inline double weighted_grad_sq(const DomainMask& mask, std::span<const double> a, const std::vector<double>* w) {
  const double inv_h2 = 1.0 / (mask.h() * mask.h());
  double s = 0.0;
  auto face = [&](std::size_t c, std::size_t n) {
    const double d = a[n] - a[c];
    const double wt = w ? 0.5 * ((*w)[c] + (*w)[n]) : 1.0;
    s += wt * d * d * inv_h2;
  };
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (!mask.inside(c)) continue;
    const int i = mask.ix(c);
    const int j = mask.iy(c);
    if (mask.inside(i + 1, j)) face(c, mask.index(i + 1, j));
    if (mask.dim() == 2 && mask.inside(i, j + 1)) face(c, mask.index(i, j + 1));
  }
  return s * mask.cell_volume();
}

inline std::vector<double> power_slice(const ScalarField& u, int k, double p) {
  const auto& mask = u.mask();
  std::vector<double> v(mask.size(), 0.0);
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (mask.inside(c)) v[c] = std::pow(std::max(0.0, u(c, k)), p);
  }
  return v;
}

inline json grid_context(const SpaceTimeGrid& g) {
  return json{{"nx", g.mask().nx()}, {"ny", g.mask().ny()}, {"h", g.mask().h()}, {"T", g.T()}, {"nt", g.nt()},
              {"cells", g.mask().count()}};
}

}  // namespace detail

/// Oleinik-type bound for the boundary shift g -> (g^m + eps^m)^(1/m):
///   lhs = integral over Omega_T of (u_eps - u)(u_eps^m - u^m),
///   rhs = eps^m |Omega_T| (M + 1) + eps |Omega_T| (M + 1)^m.
/// The integral uses right-endpoint slices, matching implicit Euler; the
/// distance to the left-endpoint sum is the discretization allowance.
inline EstimateReport oleinik_gap(const ScalarField& u, const ScalarField& u_eps, double eps, double M, double m) {
  require_same_grid(u, u_eps, "oleinik_gap");
  if (eps < 0.0 || eps > 1.0) throw InvalidArgument("oleinik_gap needs eps in [0, 1]");
  if (!(m > 1.0)) throw InvalidArgument("oleinik_gap needs m > 1");
  const auto& grid = u.grid();
  const auto& mask = grid.mask();
  std::vector<double> slice_int(static_cast<std::size_t>(grid.slices()), 0.0);
  for (int k = 0; k < grid.slices(); ++k) {
    double s = 0.0;
    for (std::size_t c = 0; c < mask.size(); ++c) {
      if (!mask.inside(c)) continue;
      const double a = std::max(0.0, u_eps(c, k));
      const double b = std::max(0.0, u(c, k));
      s += (a - b) * (std::pow(a, m) - std::pow(b, m));
    }
    slice_int[static_cast<std::size_t>(k)] = s * mask.cell_volume();
  }
  double right = 0.0;
  double left = 0.0;
  for (int k = 1; k < grid.slices(); ++k) right += slice_int[static_cast<std::size_t>(k)] * grid.dt();
  for (int k = 0; k < grid.nt(); ++k) left += slice_int[static_cast<std::size_t>(k)] * grid.dt();
  const double vol = grid.measure();
  EstimateReport r;
  r.name = "oleinik_gap";
  r.lhs = right;
  r.rhs = std::pow(eps, m) * vol * (M + 1.0) + eps * vol * std::pow(M + 1.0, m);
  const double disc = std::abs(right - left);
  r.tolerance = 0.05 * r.rhs + disc;
  r.context = {{"eps", eps}, {"M", M}, {"m", m}, {"measure", vol}, {"discretization_error", disc},
               {"grid", detail::grid_context(grid)}};
  r.decide();
  return r;
}

/// Discrete comparison: if sub <= super + tol on the parabolic boundary of
/// Omega_T, then sub <= super + tol in the interior. lhs is the largest
/// interior excess of sub over super and rhs = 10 tol.
///
/// When the boundary ordering fails the hypothesis is not met: with
/// `strict` the call throws BoundaryOrderingViolated, otherwise the report
/// comes back marked inapplicable.
inline EstimateReport comparison_check(const ScalarField& sub, const ScalarField& super, double newton_tol,
                                       bool strict = false) {
  require_same_grid(sub, super, "comparison_check");
  const auto& grid = sub.grid();
  const Cylinder full = Cylinder::full(sub.grid_ptr());
  const auto pb = parabolic_boundary(full);
  const double tol = 10.0 * newton_tol;
  double boundary = -std::numeric_limits<double>::infinity();
  for (std::size_t c : pb.initial_cells) boundary = std::max(boundary, sub(c, 0) - super(c, 0));
  for (const auto& [c, k] : pb.lateral_cells) boundary = std::max(boundary, sub(c, k) - super(c, k));

  const auto layer = boundary_layer(grid.mask());
  double interior = -std::numeric_limits<double>::infinity();
  std::size_t crossings = 0;
  for (int k = 1; k < grid.slices(); ++k) {
    for (std::size_t c = 0; c < grid.mask().size(); ++c) {
      if (!grid.mask().inside(c) || layer[c]) continue;
      const double d = sub(c, k) - super(c, k);
      interior = std::max(interior, d);
      if (d > tol) ++crossings;
    }
  }
  EstimateReport r;
  r.name = "comparison_check";
  r.lhs = interior;
  r.rhs = tol;
  r.context = {{"boundary_excess", json_number(boundary)}, {"interior_crossings", crossings},
               {"grid", detail::grid_context(grid)}};
  if (boundary > tol) {
    if (strict) {
      throw BoundaryOrderingViolated("sub exceeds super by " + std::to_string(boundary) +
                                     " on the parabolic boundary");
    }
    r.applicable = false;
  }
  r.decide();
  return r;
}

/// Caccioppoli estimate for a supersolution 0 <= u <= M and a nonnegative
/// eta vanishing near the lateral boundary:
///   sum_k dt int eta^2 |grad_h u^m|^2
///     <= 16 M^(2m) T int |grad_h eta|^2 + 6 M^(m+1) int eta^2,
/// with the constants taken at face value.
inline EstimateReport caccioppoli_check(const ScalarField& u, const SpatialFn& eta, double M, double m) {
  const auto& grid = u.grid();
  const auto& mask = grid.mask();
  if (eta.size() != mask.size()) throw InvalidArgument("test function does not match the grid");
  std::vector<double> eta2(mask.size());
  double eta_l2 = 0.0;
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (eta[c] < 0.0) throw InvalidArgument("caccioppoli_check needs eta >= 0");
    eta2[c] = eta[c] * eta[c];
    if (mask.inside(c)) eta_l2 += eta2[c];
  }
  eta_l2 *= mask.cell_volume();
  double lhs = 0.0;
  for (int k = 1; k < grid.slices(); ++k) {
    const auto v = detail::power_slice(u, k, m);
    lhs += detail::weighted_grad_sq(mask, v, &eta2) * grid.dt();
  }
  const double grad_eta = detail::weighted_grad_sq(mask, eta, nullptr);
  EstimateReport r;
  r.name = "caccioppoli_check";
  r.lhs = lhs;
  r.rhs = 16.0 * std::pow(M, 2.0 * m) * grid.T() * grad_eta + 6.0 * std::pow(M, m + 1.0) * eta_l2;
  r.context = {{"M", M}, {"m", m}, {"u_max", u.max_inside()}, {"grad_eta_sq", grad_eta}, {"eta_sq", eta_l2},
               {"compact_support", compactly_supported(mask, eta)}, {"grid", detail::grid_context(grid)}};
  r.decide();
  return r;
}

/// Calibration constants for the two estimates whose constant is only known
/// to exist. Both were fitted once on the reference run (Barenblatt trace,
/// n = 1, m = 1.5, t0 = 0.1, 128 cells on [-3, 3], 64 steps to T = 1) as the
/// measured ratio rounded up to two digits, and are kept fixed. The Poisson
/// reference modifies the upper member on |x| < 1.5, t > T / 4.
inline constexpr double kTimeEnergyConstant = 0.011;
inline constexpr double kPoissonEnergyConstant = 0.52;

/// Time-derivative energy:
///   lhs = sum_k dt int |(u^q(t_{k+1}) - u^q(t_k)) / dt|^2,
///   rhs = c* [ int |(g^m)_t(T) u(T) - (g^m)_t(0) g(0)|
///            + iint (u^2 + u^(m-1) (f^2 + |Lap g^m|^2))
///            + iint ((g^m)_t^2 + |Lap g^m|^2 + (g^m)_tt^2 + f^2) ].
/// The bracket is recorded so a refinement ladder can track lhs / bracket.
inline EstimateReport time_energy_check(const ScalarField& u, const BoundaryData& g, const SpaceTimeFn& f, double q,
                                        double c_star = kTimeEnergyConstant) {
  g.validate();
  g.require_smooth("time_energy_check");
  if (!g.power_second_time_derivative) {
    throw MissingSmoothness("time_energy_check needs the second time derivative of g^m for '" + g.name + "'");
  }
  const double m = g.m;
  if (q < 0.5 * (m + 1.0) - 1e-14) throw InvalidArgument("time_energy_check needs q >= (m + 1) / 2");
  const auto& grid = u.grid();
  const auto& mask = grid.mask();
  const double vol = mask.cell_volume();
  const double dt = grid.dt();

  double lhs = 0.0;
  for (int k = 0; k < grid.nt(); ++k) {
    for (std::size_t c = 0; c < mask.size(); ++c) {
      if (!mask.inside(c)) continue;
      const double d = (std::pow(std::max(0.0, u(c, k + 1)), q) - std::pow(std::max(0.0, u(c, k)), q)) / dt;
      lhs += d * d * vol * dt;
    }
  }

  auto gm_t = [&](const Point& x, double t) {
    const double gv = std::max(0.0, g(x, t));
    return m * std::pow(gv, m - 1.0) * g.time_derivative(x, t);
  };
  double trace = 0.0;
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (!mask.inside(c)) continue;
    const Point x = mask.center(c);
    trace += std::abs(gm_t(x, grid.T()) * u(c, grid.nt()) - gm_t(x, 0.0) * g(x, 0.0)) * vol;
  }
  double solution_terms = 0.0;
  double datum_terms = 0.0;
  for (int k = 1; k < grid.slices(); ++k) {
    const double t = grid.time(k);
    for (std::size_t c = 0; c < mask.size(); ++c) {
      if (!mask.inside(c)) continue;
      const Point x = mask.center(c);
      const double uv = std::max(0.0, u(c, k));
      const double fv = f ? f(x, t) : 0.0;
      const double lap = g.laplacian_of_power(x, t);
      const double gt = gm_t(x, t);
      const double gtt = g.power_second_time_derivative(x, t);
      solution_terms += (uv * uv + std::pow(uv, m - 1.0) * (fv * fv + lap * lap)) * vol * dt;
      datum_terms += (gt * gt + lap * lap + gtt * gtt + fv * fv) * vol * dt;
    }
  }
  const double bracket = trace + solution_terms + datum_terms;
  EstimateReport r;
  r.name = "time_energy_check";
  r.lhs = lhs;
  r.rhs = c_star * bracket;
  r.context = {{"q", q},
               {"m", m},
               {"c_star", c_star},
               {"bracket", bracket},
               {"ratio", json_number(bracket > 0.0 ? lhs / bracket : (lhs == 0.0 ? 0.0 : std::numeric_limits<double>::infinity()))},
               {"trace_term", trace},
               {"solution_terms", solution_terms},
               {"datum_terms", datum_terms},
               {"datum", g.name},
               {"grid", detail::grid_context(grid)}};
  r.decide();
  return r;
}

/// Cylinder over the middle half of the domain's bounding box in each axis,
/// intersected with the once-eroded base, for t >= T / 4. This is where the
/// Poisson-energy reference run was measured.
inline Cylinder central_cylinder(const GridPtr& grid) {
  const DomainMask& mask = grid->mask();
  double lo[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  double hi[2] = {-lo[0], -lo[1]};
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (!mask.inside(c)) continue;
    const Point x = mask.center(c);
    lo[0] = std::min(lo[0], x.x);
    hi[0] = std::max(hi[0], x.x);
    lo[1] = std::min(lo[1], x.y);
    hi[1] = std::max(hi[1], x.y);
  }
  const DomainMask core = erode(mask, 1);
  std::vector<std::uint8_t> flags(mask.size(), 0);
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (!core.inside(c)) continue;
    const Point x = mask.center(c);
    const bool in_x = std::abs(x.x - 0.5 * (lo[0] + hi[0])) <= 0.25 * (hi[0] - lo[0]) + 1e-12;
    const bool in_y = mask.dim() == 1 || std::abs(x.y - 0.5 * (lo[1] + hi[1])) <= 0.25 * (hi[1] - lo[1]) + 1e-12;
    flags[c] = in_x && in_y ? 1 : 0;
  }
  return Cylinder(grid, mask.with_flags(std::move(flags)), grid->nt() / 4, grid->nt(), true);
}

/// Energy of a Poisson modification u = P(v, c) against the data it was built from:
///   lhs = iint_c |grad_h u^m|^2 + sup_t int_D u^(m+1),
///   rhs = c* [ iint_c (|grad_h v^m|^2 + v^2 + |(v^m)_t|^2) + sup_t int_D v^(m+1) ].
inline EstimateReport poisson_energy_check(const ScalarField& u, const ScalarField& v, const Cylinder& c, double m,
                                           double c_star = kPoissonEnergyConstant) {
  require_same_grid(u, v, "poisson_energy_check");
  if (!(u.grid() == *c.grid)) throw MismatchedGrids("cylinder and fields live on different grids");
  const auto& grid = u.grid();
  const auto& D = c.submask;
  const double vol = D.cell_volume();
  const double dt = grid.dt();
  auto restricted = [&](const ScalarField& w, int k, double p) {
    std::vector<double> out(D.size(), 0.0);
    for (std::size_t cell = 0; cell < D.size(); ++cell) {
      if (D.inside(cell)) out[cell] = std::pow(std::max(0.0, w(cell, k)), p);
    }
    return out;
  };
  auto sup_power = [&](const ScalarField& w) {
    double best = 0.0;
    for (int k = c.t1; k <= c.t2; ++k) {
      double s = 0.0;
      for (std::size_t cell = 0; cell < D.size(); ++cell) {
        if (D.inside(cell)) s += std::pow(std::max(0.0, w(cell, k)), m + 1.0);
      }
      best = std::max(best, s * vol);
    }
    return best;
  };
  double grad_u = 0.0;
  double grad_v = 0.0;
  double v_sq = 0.0;
  double vt_sq = 0.0;
  for (int k = c.t1 + 1; k <= c.t2; ++k) {
    grad_u += detail::weighted_grad_sq(D, restricted(u, k, m), nullptr) * dt;
    grad_v += detail::weighted_grad_sq(D, restricted(v, k, m), nullptr) * dt;
    for (std::size_t cell = 0; cell < D.size(); ++cell) {
      if (!D.inside(cell)) continue;
      const double a = std::max(0.0, v(cell, k));
      const double d = (std::pow(a, m) - std::pow(std::max(0.0, v(cell, k - 1)), m)) / dt;
      v_sq += a * a * vol * dt;
      vt_sq += d * d * vol * dt;
    }
  }
  const double sup_u = sup_power(u);
  const double sup_v = sup_power(v);
  const double bracket = grad_v + v_sq + vt_sq + sup_v;
  EstimateReport r;
  r.name = "poisson_energy_check";
  r.lhs = grad_u + sup_u;
  r.rhs = c_star * bracket;
  r.context = {{"m", m},
               {"c_star", c_star},
               {"bracket", bracket},
               {"ratio", json_number(bracket > 0.0 ? r.lhs / bracket : (r.lhs == 0.0 ? 0.0 : std::numeric_limits<double>::infinity()))},
               {"grad_u", grad_u},
               {"sup_u", sup_u},
               {"grad_v", grad_v},
               {"v_sq", v_sq},
               {"vt_sq", vt_sq},
               {"sup_v", sup_v},
               {"t1", c.t1},
               {"t2", c.t2},
               {"cells", D.count()},
               {"grid", detail::grid_context(grid)}};
  r.decide();
  return r;
}

/// lhs / bracket of a time or Poisson energy report.
inline double energy_ratio(const EstimateReport& r) {
  const double b = r.context.at("bracket").get<double>();
  return b > 0.0 ? r.lhs / b : (r.lhs == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
}

/// Trend verdict over a refinement ladder (coarse to fine): satisfied when
/// every report holds and the ratio never grows by more than `rel_tol`.
inline EstimateReport ratio_trend(const std::string& name, const std::vector<EstimateReport>& ladder,
                                  double rel_tol = 0.0) {
  if (ladder.empty()) throw InvalidArgument("ratio_trend needs at least one report");
  EstimateReport r;
  r.name = name;
  json ratios = json::array();
  double worst_growth = -std::numeric_limits<double>::infinity();
  bool each = true;
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (const auto& e : ladder) {
    const double q = energy_ratio(e);
    ratios.push_back(json_number(q));
    each = each && e.satisfied;
    if (!std::isnan(prev) && prev > 0.0) worst_growth = std::max(worst_growth, q / prev - 1.0);
    prev = q;
  }
  r.lhs = ladder.size() > 1 ? worst_growth : 0.0;
  r.rhs = rel_tol;
  r.context = {{"ratios", ratios}, {"each_satisfied", each}};
  r.decide();
  r.satisfied = r.satisfied && each;
  return r;
}

/// Discrete max |grad_h eta| over faces between inside cells.
inline double max_gradient(const DomainMask& mask, const SpatialFn& eta) {
  double g = 0.0;
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (!mask.inside(c)) continue;
    const int i = mask.ix(c);
    const int j = mask.iy(c);
    if (mask.inside(i + 1, j)) g = std::max(g, std::abs(eta[mask.index(i + 1, j)] - eta[c]));
    if (mask.dim() == 2 && mask.inside(i, j + 1)) g = std::max(g, std::abs(eta[mask.index(i, j + 1)] - eta[c]));
  }
  return g / mask.h();
}

/// Linear-in-time attainment of the initial values,
///   |int (u(x, t) - g(x, 0)) eta dx| <= c t ||grad eta||_inf,
/// with one constant c for the whole bank. For each eta the normalized gap
/// over the first quarter of the slices is fitted by slope * t through the
/// origin; c is the largest fitted slope. The check holds when every
/// normalized gap stays below 1.25 c t. lhs is the worst gap / (c t), which
/// is infinite when the initial slice itself is off.
inline EstimateReport initial_attainment_check(const ScalarField& u, const BoundaryData& g,
                                               const std::vector<SpatialFn>& eta_bank) {
  g.validate();
  if (eta_bank.empty()) throw InvalidArgument("initial_attainment_check needs at least one test function");
  const auto& grid = u.grid();
  const auto& mask = grid.mask();
  const int K = std::max(2, grid.nt() / 4);
  const double floor = 1e-13 * std::max(1.0, g.M) * mask.measure();
  std::vector<std::vector<double>> gaps;
  json slopes = json::array();
  double c = 0.0;
  for (const auto& eta : eta_bank) {
    if (!compactly_supported(mask, eta)) {
      throw InvalidArgument("initial_attainment_check needs compactly supported test functions");
    }
    const double grad = max_gradient(mask, eta);
    if (!(grad > 0.0)) throw InvalidArgument("initial_attainment_check needs nonconstant test functions");
    auto gap = initial_value_gap(u, g, eta);
    for (double& x : gap) x /= grad;
    double num = 0.0;
    double den = 0.0;
    for (int k = 1; k <= K; ++k) {
      num += grid.time(k) * gap[static_cast<std::size_t>(k)];
      den += grid.time(k) * grid.time(k);
    }
    slopes.push_back(num / den);
    c = std::max(c, num / den);
    gaps.push_back(std::move(gap));
  }
  double worst = 0.0;
  for (const auto& gap : gaps) {
    if (gap[0] > floor) worst = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= K; ++k) {
      const double gk = gap[static_cast<std::size_t>(k)];
      if (gk <= floor) continue;
      const double bound = c * grid.time(k);
      worst = std::max(worst, bound > 0.0 ? gk / bound : std::numeric_limits<double>::infinity());
    }
  }
  EstimateReport r;
  r.name = "initial_attainment_check";
  r.lhs = worst;
  r.rhs = 1.25;
  r.context = {{"slices_fitted", K}, {"test_functions", eta_bank.size()}, {"fitted_constant", c},
               {"slopes", slopes}, {"floor", floor}, {"grid", detail::grid_context(grid)}};
  r.decide();
  return r;
}

}  // namespace pme
