#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pme/exact.hpp"
#include "pme/field.hpp"

namespace pme {

/// Boundary and initial datum g on the closure of Omega_T.
///
/// `M` bounds g from above. When `smooth` is set the three derivative
/// callbacks are present; they refer to the exponent `m` the datum was built
/// for and feed Psi = g_t - Laplacian(g^m) and the time-energy estimate.
struct BoundaryData {
  std::string name;
  SpaceTimeFn eval;
  double M = 0.0;
  double m = 2.0;
  bool smooth = false;
  SpaceTimeFn time_derivative;           // dg/dt
  SpaceTimeFn laplacian_of_power;        // Laplacian of g^m
  SpaceTimeFn power_second_time_derivative;  // d^2(g^m)/dt^2

  double operator()(const Point& x, double t) const { return eval(x, t); }

  void validate() const {
    if (!eval) throw InvalidArgument("boundary datum '" + name + "' has no evaluator");
    if (!(M >= 0.0)) throw InvalidArgument("boundary datum bound M must be nonnegative");
    if (!(m > 1.0)) throw InvalidArgument("boundary datum exponent must exceed 1");
    if (smooth && (!time_derivative || !laplacian_of_power)) {
      throw InvalidArgument("smooth boundary datum '" + name + "' lacks derivative callbacks");
    }
  }

  void require_smooth(const char* where) const {
    if (!smooth || !time_derivative || !laplacian_of_power) {
      throw MissingSmoothness(std::string(where) + " needs a smooth datum; '" + name + "' is not");
    }
  }
};

namespace builtin {

inline BoundaryData constant(double c, double m) {
  if (c < 0.0) throw NegativeBoundary("constant datum must be nonnegative");
  BoundaryData g;
  g.name = "constant";
  g.eval = [c](const Point&, double) { return c; };
  g.M = c;
  g.m = m;
  g.smooth = true;
  g.time_derivative = [](const Point&, double) { return 0.0; };
  g.laplacian_of_power = [](const Point&, double) { return 0.0; };
  g.power_second_time_derivative = [](const Point&, double) { return 0.0; };
  return g;
}

/// g = a + b t on [0, T]; must stay nonnegative there.
inline BoundaryData linear_in_t(double a, double b, double T, double m) {
  if (a < 0.0 || a + b * T < 0.0) throw NegativeBoundary("linear-in-t datum goes negative on [0, T]");
  BoundaryData g;
  g.name = "linear-in-t";
  g.eval = [a, b](const Point&, double t) { return a + b * t; };
  g.M = std::max(a, a + b * T);
  g.m = m;
  g.smooth = true;
  g.time_derivative = [b](const Point&, double) { return b; };
  g.laplacian_of_power = [](const Point&, double) { return 0.0; };
  g.power_second_time_derivative = [a, b, m](const Point&, double t) {
    const double u = a + b * t;
    return m * (m - 1.0) * std::pow(u, m - 2.0) * b * b;
  };
  return g;
}

/// Gaussian bump, constant in time: base + amplitude * exp(-|x-c|^2 / (2 sigma^2)).
inline BoundaryData bump(double amplitude, Point center, double sigma, double base, int dim, double m) {
  if (amplitude < 0.0 || base < 0.0) throw NegativeBoundary("bump amplitude and base must be nonnegative");
  if (!(sigma > 0.0)) throw InvalidArgument("bump width must be positive");
  BoundaryData g;
  g.name = "bump";
  auto value = [=](const Point& x) {
    const Point d{x.x - center.x, dim == 1 ? 0.0 : x.y - center.y};
    return base + amplitude * std::exp(-norm_sq(d) / (2.0 * sigma * sigma));
  };
  g.eval = [value](const Point& x, double) { return value(x); };
  g.M = base + amplitude;
  g.m = m;
  g.smooth = true;
  g.time_derivative = [](const Point&, double) { return 0.0; };
  g.laplacian_of_power = [=](const Point& x, double) {
    const Point d{x.x - center.x, dim == 1 ? 0.0 : x.y - center.y};
    const double r2 = norm_sq(d);
    const double e = amplitude * std::exp(-r2 / (2.0 * sigma * sigma));
    const double u = base + e;
    const double grad_sq = e * e * r2 / (sigma * sigma * sigma * sigma);
    const double lap = e * (r2 / (sigma * sigma * sigma * sigma) - dim / (sigma * sigma));
    return m * std::pow(u, m - 1.0) * lap + m * (m - 1.0) * std::pow(u, m - 2.0) * grad_sq;
  };
  g.power_second_time_derivative = [](const Point&, double) { return 0.0; };
  return g;
}

/// Trace of the Barenblatt solution; sup is attained at x = 0, t = 0.
inline BoundaryData barenblatt_trace(const BarenblattParams& p) {
  if (!(p.t0 > 0.0)) throw InvalidArgument("Barenblatt boundary datum needs a positive time shift");
  BoundaryData g;
  g.name = "barenblatt-trace";
  g.eval = [p](const Point& x, double t) { return barenblatt(x, t, p); };
  g.M = barenblatt(Point{}, 0.0, p);
  g.m = p.m;
  g.smooth = true;
  g.time_derivative = [p](const Point& x, double t) { return barenblatt_jet(x, t, p).dt; };
  g.laplacian_of_power = [p](const Point& x, double t) { return barenblatt_jet(x, t, p).laplacian_power; };
  g.power_second_time_derivative = [p](const Point& x, double t) { return barenblatt_jet(x, t, p).power_dtt; };
  return g;
}

/// max(0, 1 - |x - corner| / scale): Lipschitz, not smooth.
inline BoundaryData l_corner_ramp(Point corner, double scale, int dim, double m) {
  if (!(scale > 0.0)) throw InvalidArgument("ramp scale must be positive");
  BoundaryData g;
  g.name = "L-corner-ramp";
  g.eval = [=](const Point& x, double) {
    const Point d{x.x - corner.x, dim == 1 ? 0.0 : x.y - corner.y};
    return std::max(0.0, 1.0 - std::sqrt(norm_sq(d)) / scale);
  };
  g.M = 1.0;
  g.m = m;
  g.smooth = false;
  return g;
}

}  // namespace builtin

/// g_eps = (g^m + eps^m)^(1/m), so that g <= g_eps <= g + eps.
inline BoundaryData shift_boundary(const BoundaryData& g, double eps) {
  if (eps < 0.0 || eps > 1.0) throw InvalidArgument("shift must lie in [0, 1]");
  if (eps == 0.0) return g;
  const double m = g.m;
  const double em = std::pow(eps, m);
  BoundaryData s = g;
  s.name = g.name + "+shift";
  auto base = g.eval;
  s.eval = [base, m, em](const Point& x, double t) { return std::pow(std::pow(std::max(0.0, base(x, t)), m) + em, 1.0 / m); };
  s.M = g.M + 1.0;
  if (g.time_derivative) {
    auto gt = g.time_derivative;
    s.time_derivative = [base, gt, m, em](const Point& x, double t) {
      const double u = std::max(0.0, base(x, t));
      const double ue = std::pow(std::pow(u, m) + em, 1.0 / m);
      return std::pow(u / ue, m - 1.0) * gt(x, t);
    };
  }
  // g_eps^m = g^m + eps^m: spatial and temporal derivatives of the power are unchanged.
  return s;
}

/// min(g, k); continuous but no longer smooth.
inline BoundaryData truncate_datum(const BoundaryData& g, double k) {
  if (k < 0.0) throw InvalidArgument("truncation level must be nonnegative");
  BoundaryData t;
  t.name = g.name + "^" + std::to_string(k);
  t.eval = [base = g.eval, k](const Point& x, double s) { return std::min(base(x, s), k); };
  t.M = std::min(g.M, k);
  t.m = g.m;
  return t;
}

/// Result of approximating a continuous datum by a smooth one.
struct PowerApproximation {
  BoundaryData datum;
  double alpha = 1.0;
  double rho = 0.0;          // mollification scale
  double error_bound = 0.0;  // shift applied to the mollified power
  double eps = 0.0;          // sandwich width parameter 1/j
  int halvings = 0;
};

namespace detail {

// Product kernel (35/32)(1 - s^2)^3 on [-1, 1] and its first two derivatives.
inline double kern(double s) { return std::abs(s) >= 1.0 ? 0.0 : 35.0 / 32.0 * std::pow(1.0 - s * s, 3); }
inline double kern_d1(double s) { return std::abs(s) >= 1.0 ? 0.0 : -35.0 / 32.0 * 6.0 * s * std::pow(1.0 - s * s, 2); }
inline double kern_d2(double s) {
  return std::abs(s) >= 1.0 ? 0.0 : 35.0 / 32.0 * (-6.0 * std::pow(1.0 - s * s, 2) + 24.0 * s * s * (1.0 - s * s));
}

struct MollifiedJet {
  double value = 0.0;
  double dt = 0.0;
  double dtt = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double lap = 0.0;
};

// Space-time mollification of psi at scale rho, differentiated through the kernel.
class Mollifier {
 public:
  Mollifier(SpaceTimeFn psi, int dim, double rho, int nodes)
      : psi_(std::move(psi)), dim_(dim), rho_(rho), rule_(gauss_legendre(nodes)) {}

  MollifiedJet jet(const Point& x, double t, bool derivatives) const {
    MollifiedJet j;
    const auto& nd = rule_.nodes;
    const auto& w = rule_.weights;
    const std::size_t q = nd.size();
    const std::size_t qy = dim_ == 2 ? q : 1;
    for (std::size_t a = 0; a < q; ++a) {  // time
      const double st = nd[a];
      const double kt = kern(st);
      for (std::size_t b = 0; b < q; ++b) {  // x
        const double sx = nd[b];
        const double kx = kern(sx);
        for (std::size_t c = 0; c < qy; ++c) {  // y
          const double sy = dim_ == 2 ? nd[c] : 0.0;
          const double ky = dim_ == 2 ? kern(sy) : 1.0;
          const double weight = w[a] * w[b] * (dim_ == 2 ? w[c] : 1.0);
          const double f =
              weight * psi_(Point{x.x - rho_ * sx, dim_ == 2 ? x.y - rho_ * sy : 0.0}, t - rho_ * st);
          j.value += f * kt * kx * ky;
          if (!derivatives) continue;
          j.dt += f * kern_d1(st) * kx * ky / rho_;
          j.dtt += f * kern_d2(st) * kx * ky / (rho_ * rho_);
          j.dx += f * kt * kern_d1(sx) * ky / rho_;
          j.lap += f * kt * kern_d2(sx) * ky / (rho_ * rho_);
          if (dim_ == 2) {
            j.dy += f * kt * kx * kern_d1(sy) / rho_;
            j.lap += f * kt * kx * kern_d2(sy) / (rho_ * rho_);
          }
        }
      }
    }
    return j;
  }

 private:
  SpaceTimeFn psi_;
  int dim_;
  double rho_;
  GaussRule rule_;
};

}  // namespace detail

/// Smooth approximation phi_j of a continuous datum with the sandwich
///   phi_j^m <= g^m <= phi_j^m + (1/j)^m
/// on every node of the discrete parabolic boundary of `grid`.
///
/// psi = g^alpha with alpha = min(1, m/2) is mollified in space-time at scale
/// rho and lifted by the one-sided error bound e so that psi_rho + e >= psi on
/// the boundary nodes. Then theta = (psi_rho + e)^(m/alpha) >= g^m there and
/// phi_j^m = (theta - (1/j)^m)_+. The scale rho starts at a few cells and is
/// halved until theta <= g^m + (1/j)^m holds on the boundary nodes.
///
/// Values on the grid nodes are tabulated once; other points are evaluated
/// through the mollifier directly.
inline PowerApproximation smooth_power_approx(const BoundaryData& g, int j, const GridPtr& grid,
                                              int quadrature_nodes = 6, int max_halvings = 40) {
  g.validate();
  if (j < 1) throw InvalidArgument("smoothing index j must be >= 1");
  const double m = g.m;
  const double alpha = std::min(1.0, m / 2.0);
  const double p = m / alpha;
  const double eps = 1.0 / j;
  const double em = std::pow(eps, m);
  const auto& mask = grid->mask();
  const int dim = mask.dim();

  auto geval = g.eval;
  SpaceTimeFn psi = [geval, alpha](const Point& x, double t) { return std::pow(std::max(0.0, geval(x, t)), alpha); };

  // Parabolic boundary nodes of the full cylinder.
  std::vector<std::pair<std::size_t, int>> nodes;
  {
    const auto pb = parabolic_boundary(Cylinder::full(grid));
    for (std::size_t c : pb.initial_cells) nodes.emplace_back(c, 0);
    for (const auto& n : pb.lateral_cells) {
      if (n.second > 0) nodes.push_back(n);
    }
  }
  std::vector<double> psi_b(nodes.size());
  std::vector<double> gm_b(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Point x = mask.center(nodes[i].first);
    const double t = grid->time(nodes[i].second);
    psi_b[i] = psi(x, t);
    gm_b[i] = std::pow(std::max(0.0, geval(x, t)), m);
  }

  double rho = 4.0 * std::max(mask.h(), grid->dt());
  for (int halving = 0; halving <= max_halvings; ++halving, rho *= 0.5) {
    detail::Mollifier moll(psi, dim, rho, quadrature_nodes);
    std::vector<double> smooth_b(nodes.size());
    double e = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      smooth_b[i] = moll.jet(mask.center(nodes[i].first), grid->time(nodes[i].second), false).value;
      e = std::max(e, psi_b[i] - smooth_b[i]);
    }
    bool ok = true;
    for (std::size_t i = 0; i < nodes.size() && ok; ++i) {
      const double theta = std::pow(std::max(0.0, smooth_b[i] + e), p);
      if (theta > gm_b[i] + em * (1.0 - 1e-12)) ok = false;
    }
    if (!ok) continue;

    struct State {
      detail::Mollifier moll;
      double e, m, p, em;
      GridPtr grid;
      std::vector<detail::MollifiedJet> table;
    };
    auto state = std::make_shared<State>(State{moll, e, m, p, em, grid, {}});
    state->table.resize(mask.size() * static_cast<std::size_t>(grid->slices()));
    for (int k = 0; k < grid->slices(); ++k) {
      for (std::size_t c = 0; c < mask.size(); ++c) {
        state->table[static_cast<std::size_t>(k) * mask.size() + c] = moll.jet(mask.center(c), grid->time(k), true);
      }
    }
    auto lookup = [state](const Point& x, double t) -> detail::MollifiedJet {
      const auto& mk = state->grid->mask();
      const double fi = (x.x - mk.origin().x) / mk.h() - 0.5;
      const double fj = mk.dim() == 2 ? (x.y - mk.origin().y) / mk.h() - 0.5 : 0.0;
      const double fk = t / state->grid->dt();
      const long i = std::lround(fi);
      const long jj = std::lround(fj);
      const long k = std::lround(fk);
      if (std::abs(fi - i) < 1e-9 && std::abs(fj - jj) < 1e-9 && std::abs(fk - k) < 1e-9 && i >= 0 && jj >= 0 &&
          k >= 0 && i < mk.nx() && jj < mk.ny() && k < state->grid->slices()) {
        return state->table[static_cast<std::size_t>(k) * mk.size() + mk.index(static_cast<int>(i), static_cast<int>(jj))];
      }
      return state->moll.jet(x, t, true);
    };
    // phi^m = (theta - em)_+ with theta = s^p, s = psi_rho + e.
    auto power_of = [state](const detail::MollifiedJet& jt) {
      const double s = std::max(0.0, jt.value + state->e);
      return std::pow(s, state->p);
    };

    BoundaryData out;
    out.name = g.name + "~smooth(j=" + std::to_string(j) + ")";
    out.m = m;
    out.M = g.M;
    out.smooth = true;
    out.eval = [lookup, power_of, state](const Point& x, double t) {
      const double theta = power_of(lookup(x, t));
      return std::pow(std::max(0.0, theta - state->em), 1.0 / state->m);
    };
    out.time_derivative = [lookup, power_of, state](const Point& x, double t) {
      const auto jt = lookup(x, t);
      const double theta = power_of(jt);
      if (theta <= state->em) return 0.0;
      const double s = jt.value + state->e;
      const double theta_t = state->p * std::pow(s, state->p - 1.0) * jt.dt;
      const double phi = std::pow(theta - state->em, 1.0 / state->m);
      return theta_t / (state->m * std::pow(phi, state->m - 1.0));
    };
    out.laplacian_of_power = [lookup, power_of, state](const Point& x, double t) {
      const auto jt = lookup(x, t);
      if (power_of(jt) <= state->em) return 0.0;
      const double s = jt.value + state->e;
      const double pp = state->p;
      return pp * std::pow(s, pp - 1.0) * jt.lap + pp * (pp - 1.0) * std::pow(s, pp - 2.0) * (jt.dx * jt.dx + jt.dy * jt.dy);
    };
    out.power_second_time_derivative = [lookup, power_of, state](const Point& x, double t) {
      const auto jt = lookup(x, t);
      if (power_of(jt) <= state->em) return 0.0;
      const double s = jt.value + state->e;
      const double pp = state->p;
      return pp * (pp - 1.0) * std::pow(s, pp - 2.0) * jt.dt * jt.dt + pp * std::pow(s, pp - 1.0) * jt.dtt;
    };
    return PowerApproximation{std::move(out), alpha, rho, e, eps, halving};
  }
  throw SandwichFailure("could not reach the sandwich width (1/" + std::to_string(j) + ")^m after " +
                        std::to_string(max_halvings) + " halvings of the mollification scale");
}

}  // namespace pme
