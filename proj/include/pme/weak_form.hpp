#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "pme/boundary_data.hpp"
#include "pme/field.hpp"
#include "pme/geometry.hpp"

namespace pme {

/// Spatial function sampled on the cells of a mask.
using SpatialFn = std::vector<double>;

inline double bump_profile(double s) { return std::abs(s) >= 1.0 ? 0.0 : (1.0 - s * s) * (1.0 - s * s); }

/// Tensor bump centred at `center` with half-width `radius` per axis.
inline SpatialFn spatial_bump(const DomainMask& mask, Point center, double radius) {
  SpatialFn eta(mask.size(), 0.0);
  for (std::size_t c = 0; c < mask.size(); ++c) {
    const Point x = mask.center(c);
    double v = bump_profile((x.x - center.x) / radius);
    if (mask.dim() == 2) v *= bump_profile((x.y - center.y) / radius);
    eta[c] = v;
  }
  return eta;
}

/// True when eta vanishes on every cell that is not an interior cell of `base`
/// (outside cells and the boundary layer).
inline bool compactly_supported(const DomainMask& base, const SpatialFn& eta) {
  const auto layer = boundary_layer(base);
  for (std::size_t c = 0; c < base.size(); ++c) {
    if (eta[c] != 0.0 && (!base.inside(c) || layer[c])) return false;
  }
  return true;
}

/// Lattice of tensor bumps at half-widths 1/2 and 1/4 of the base's
/// half-extent, kept when they vanish on the boundary layer.
inline std::vector<SpatialFn> interior_bumps(const DomainMask& mask) {
  std::vector<SpatialFn> out;
  const auto layer = boundary_layer(mask);
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (!mask.inside(c) || layer[c]) continue;
    const Point p = mask.center(c);
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  if (!(xmax >= xmin)) return out;
  const double h = mask.h();
  const double half = 0.5 * std::max(xmax - xmin, mask.dim() == 2 ? ymax - ymin : 0.0) + h;
  for (double frac : {0.5, 0.25}) {
    const double r = frac * half;
    if (r < 1.5 * h) continue;
    for (double cy = mask.dim() == 2 ? ymin : 0.0; cy <= (mask.dim() == 2 ? ymax : 0.0) + 1e-12; cy += r) {
      for (double cx = xmin; cx <= xmax + 1e-12; cx += r) {
        SpatialFn eta = spatial_bump(mask, Point{cx, cy}, r);
        double mass = 0.0;
        for (std::size_t c = 0; c < mask.size(); ++c) {
          if (!mask.inside(c)) eta[c] = 0.0;
          mass += eta[c];
        }
        if (mass > 0.0 && compactly_supported(mask, eta)) out.push_back(std::move(eta));
      }
    }
  }
  return out;
}

/// Bank of nonnegative space-time test functions eta(x) * chi(t): each
/// interior bump of the base times one of three time windows, vanishing on
/// the parabolic boundary and on the top slice of `c`.
inline std::vector<ScalarField> make_test_bank(const Cylinder& c) {
  std::vector<ScalarField> bank;
  const auto& grid = *c.grid;
  const auto& sub = c.submask;
  const double t_lo = grid.time(c.t1);
  const double t_hi = grid.time(c.t2);
  struct Window {
    double centre, radius;
  };
  const std::vector<Window> windows = {{0.5 * (t_lo + t_hi), 0.5 * (t_hi - t_lo)},
                                       {t_lo + 0.25 * (t_hi - t_lo), 0.25 * (t_hi - t_lo)},
                                       {t_lo + 0.75 * (t_hi - t_lo), 0.25 * (t_hi - t_lo)}};
  for (const SpatialFn& eta : interior_bumps(sub)) {
    for (const auto& w : windows) {
      ScalarField phi(c.grid);
      bool any = false;
      for (int k = c.t1 + 1; k < c.t2; ++k) {
        const double chi = bump_profile((grid.time(k) - w.centre) / w.radius);
        if (chi == 0.0) continue;
        any = true;
        for (std::size_t cell = 0; cell < sub.size(); ++cell) phi(cell, k) = eta[cell] * chi;
      }
      if (any) bank.push_back(std::move(phi));
    }
  }
  return bank;
}

namespace detail {

// Sum over grid faces with both cells inside of grad_h a . grad_h b * cell volume.
inline double face_dot(const DomainMask& mask, std::span<const double> a, std::span<const double> b) {
  const double inv_h2 = 1.0 / (mask.h() * mask.h());
  double s = 0.0;
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (!mask.inside(c)) continue;
    const int i = mask.ix(c);
    const int j = mask.iy(c);
    if (mask.inside(i + 1, j)) {
      const std::size_t n = mask.index(i + 1, j);
      s += (a[n] - a[c]) * (b[n] - b[c]) * inv_h2;
    }
    if (mask.dim() == 2 && mask.inside(i, j + 1)) {
      const std::size_t n = mask.index(i, j + 1);
      s += (a[n] - a[c]) * (b[n] - b[c]) * inv_h2;
    }
  }
  return s * mask.cell_volume();
}

}  // namespace detail

/// Signed discrete weak form
///   sum_k dt [ -<u^k, (phi^{k+1} - phi^k)/dt> + <grad u^m, grad phi>^{k+1} - <f, phi>^{k+1} ]
/// which vanishes for an exact implicit-Euler solution and is >= 0 for a
/// discrete supersolution when phi >= 0. `f` may be null.
inline double weak_form_functional(const ScalarField& u, double m, const ScalarField* f, const ScalarField& phi) {
  require_same_grid(u, phi, "weak_form_functional");
  if (f) require_same_grid(u, *f, "weak_form_functional");
  const auto& grid = u.grid();
  const auto& mask = grid.mask();
  const double vol = mask.cell_volume();
  const double dt = grid.dt();
  std::vector<double> v(mask.size());
  double total = 0.0;
  for (int k = 0; k < grid.nt(); ++k) {
    const auto pk = phi.slice(k);
    const auto pk1 = phi.slice(k + 1);
    double time_part = 0.0;
    double src = 0.0;
    bool active = false;
    for (std::size_t c = 0; c < mask.size(); ++c) {
      if (!mask.inside(c)) continue;
      if (pk[c] != 0.0 || pk1[c] != 0.0) active = true;
      time_part -= u(c, k) * (pk1[c] - pk[c]);
      if (f) src += (*f)(c, k + 1) * pk1[c];
    }
    if (!active) continue;
    for (std::size_t c = 0; c < mask.size(); ++c) v[c] = mask.inside(c) ? std::pow(std::max(0.0, u(c, k + 1)), m) : 0.0;
    total += time_part * vol + dt * detail::face_dot(mask, v, pk1) - dt * src * vol;
  }
  return total;
}

inline double test_norm(const ScalarField& phi) {
  const auto& grid = phi.grid();
  double s = 0.0;
  for (double p : phi.data()) s += std::abs(p);
  return s * grid.mask().cell_volume() * grid.dt();
}

/// max over the bank of |weak form| / ||phi||_L1.
inline double weak_form_residual(const ScalarField& u, double m, const ScalarField* f,
                                 const std::vector<ScalarField>& bank) {
  double worst = 0.0;
  for (const auto& phi : bank) {
    const double n = test_norm(phi);
    if (n > 0.0) worst = std::max(worst, std::abs(weak_form_functional(u, m, f, phi)) / n);
  }
  return worst;
}

/// min over the (nonnegative) bank of weak form / ||phi||_L1; a discrete
/// supersolution has this >= -tolerance.
inline double supersolution_defect(const ScalarField& u, double m, const ScalarField* f,
                                   const std::vector<ScalarField>& bank) {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& phi : bank) {
    const double n = test_norm(phi);
    if (n > 0.0) worst = std::min(worst, weak_form_functional(u, m, f, phi) / n);
  }
  return worst;
}

/// |integral of (u(x, t_k) - g(x, 0)) eta(x) dx| for every slice k.
inline std::vector<double> initial_value_gap(const ScalarField& u, const BoundaryData& g, const SpatialFn& eta) {
  const auto& grid = u.grid();
  const auto& mask = grid.mask();
  if (eta.size() != mask.size()) throw InvalidArgument("test function does not match the grid");
  double ref = 0.0;
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (mask.inside(c)) ref += g(mask.center(c), 0.0) * eta[c];
  }
  std::vector<double> gap(static_cast<std::size_t>(grid.slices()));
  for (int k = 0; k < grid.slices(); ++k) {
    double s = 0.0;
    for (std::size_t c = 0; c < mask.size(); ++c) {
      if (mask.inside(c)) s += u(c, k) * eta[c];
    }
    gap[static_cast<std::size_t>(k)] = std::abs(s - ref) * mask.cell_volume();
  }
  return gap;
}

}  // namespace pme
