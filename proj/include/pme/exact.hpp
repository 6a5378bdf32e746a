#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pme/field.hpp"
#include "pme/quadrature.hpp"

namespace pme {

/// Source-type (Barenblatt) solution parameters. The profile lives in
/// dimension `n` and is evaluated at shifted time t + t0.
struct BarenblattParams {
  int n = 1;
  double m = 2.0;
  double C = 1.0;
  double t0 = 0.0;

  double lambda() const { return n / (n * (m - 1.0) + 2.0); }
  /// Coefficient of |x|^2 / t^(2 lambda / n) inside the bracket.
  double kappa() const { return lambda() * (m - 1.0) / (2.0 * m * n); }

  static BarenblattParams normalized(int n, double m, double t0 = 0.0);
};

inline double barenblatt_lambda(int n, double m) { return n / (n * (m - 1.0) + 2.0); }

/// B(x, t) = s^-lambda (C - kappa |x|^2 / s^(2 lambda / n))_+^(1/(m-1)),
/// s = t + t0, and zero for s <= 0.
inline double barenblatt(const Point& x, double t, const BarenblattParams& p) {
  const double s = t + p.t0;
  if (s <= 0.0) return 0.0;
  const double lam = p.lambda();
  const double bracket = p.C - p.kappa() * norm_sq(x) / std::pow(s, 2.0 * lam / p.n);
  if (bracket <= 0.0) return 0.0;
  return std::pow(s, -lam) * std::pow(bracket, 1.0 / (p.m - 1.0));
}

/// Radius of the support at time t: the zero of the bracket.
inline double support_radius(const BarenblattParams& p, double t) {
  const double s = t + p.t0;
  if (s <= 0.0) throw InvalidArgument("support radius needs t + t0 > 0");
  const double lam = p.lambda();
  return std::pow(s, lam / p.n) * std::sqrt(2.0 * p.m * p.n * p.C / (lam * (p.m - 1.0)));
}

/// Total mass over R^n at time t. The radial integral is taken in the
/// variable r = R sin(theta), which turns the free-boundary endpoint
/// singularity into a smooth integrand.
inline double barenblatt_mass(const BarenblattParams& p, double t, int quadrature_nodes = 64) {
  const double s = t + p.t0;
  if (s <= 0.0) return 0.0;
  if (p.n != 1 && p.n != 2) throw InvalidArgument("barenblatt_mass supports n = 1 and n = 2");
  const double R = support_radius(p, t);
  const double sphere = p.n == 1 ? 2.0 : 2.0 * std::numbers::pi;
  const auto rule = gauss_legendre(quadrature_nodes);
  auto integrand = [&](double theta) {
    const double r = R * std::sin(theta);
    const double u = barenblatt(Point{r, 0.0}, t, p);
    return sphere * u * std::pow(r, p.n - 1) * R * std::cos(theta);
  };
  return integrate(integrand, 0.0, std::numbers::pi / 2.0, rule);
}

inline BarenblattParams BarenblattParams::normalized(int n, double m, double t0) {
  BarenblattParams p{n, m, 1.0, 0.0};
  // mass ~ C^(1/(m-1) + n/2) is increasing in C
  double lo = 1e-12;
  double hi = 1.0;
  while (barenblatt_mass(BarenblattParams{n, m, hi, 0.0}, 1.0) < 1.0) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-16 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (barenblatt_mass(BarenblattParams{n, m, mid, 0.0}, 1.0) < 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  p.C = 0.5 * (lo + hi);
  p.t0 = t0;
  return p;
}

/// Value and the derivatives needed for boundary-data terms:
/// dB/dt, Laplacian of B^m, and d^2(B^m)/dt^2. All vanish outside the support.
struct BarenblattJet {
  double value = 0.0;
  double dt = 0.0;
  double laplacian_power = 0.0;
  double power_dtt = 0.0;
};

inline BarenblattJet barenblatt_jet(const Point& x, double t, const BarenblattParams& p) {
  BarenblattJet jet;
  const double s = t + p.t0;
  if (s <= 0.0) return jet;
  const double lam = p.lambda();
  const double beta = 2.0 * lam / p.n;
  const double kap = p.kappa();
  const double r2 = norm_sq(x);
  const double F = p.C - kap * r2 * std::pow(s, -beta);
  if (F <= 0.0) return jet;
  const double e = 1.0 / (p.m - 1.0);      // B = s^-lam F^e
  const double q = p.m / (p.m - 1.0);      // B^m = s^(-lam m) F^q
  const double Ft = kap * beta * r2 * std::pow(s, -beta - 1.0);
  const double Ftt = -kap * beta * (beta + 1.0) * r2 * std::pow(s, -beta - 2.0);
  const double grad_F_sq = 4.0 * kap * kap * r2 * std::pow(s, -2.0 * beta);
  const double lap_F = -2.0 * kap * p.n * std::pow(s, -beta);

  jet.value = std::pow(s, -lam) * std::pow(F, e);
  jet.dt = -lam * std::pow(s, -lam - 1.0) * std::pow(F, e) + std::pow(s, -lam) * e * std::pow(F, e - 1.0) * Ft;

  const double G = std::pow(s, -lam * p.m);
  const double Gt = -lam * p.m * std::pow(s, -lam * p.m - 1.0);
  const double Gtt = lam * p.m * (lam * p.m + 1.0) * std::pow(s, -lam * p.m - 2.0);
  const double Fq = std::pow(F, q);
  const double Fq_t = q * std::pow(F, q - 1.0) * Ft;
  const double Fq_tt = q * (q - 1.0) * std::pow(F, q - 2.0) * Ft * Ft + q * std::pow(F, q - 1.0) * Ftt;
  jet.laplacian_power = G * (q * (q - 1.0) * std::pow(F, q - 2.0) * grad_F_sq + q * std::pow(F, q - 1.0) * lap_F);
  jet.power_dtt = Gtt * Fq + 2.0 * Gt * Fq_t + G * Fq_tt;
  return jet;
}

/// Pointwise min(u, k).
inline ScalarField truncate(const ScalarField& u, double k) {
  if (k < 0.0) throw InvalidArgument("truncation level must be nonnegative");
  ScalarField r = u;
  for (double& v : r.data()) v = std::min(v, k);
  return r;
}

inline SpaceTimeFn truncate(SpaceTimeFn u, double k) {
  if (k < 0.0) throw InvalidArgument("truncation level must be nonnegative");
  return [u = std::move(u), k](const Point& x, double t) { return std::min(u(x, t), k); };
}

inline ScalarField sample_barenblatt(const GridPtr& grid, const BarenblattParams& p) {
  return sample(grid, [p](const Point& x, double t) { return barenblatt(x, t, p); });
}

}  // namespace pme
