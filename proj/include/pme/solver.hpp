#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pme/boundary_data.hpp"
#include "pme/field.hpp"
#include "pme/geometry.hpp"

namespace pme {

struct SolverConfig {
  double m = 2.0;
  double newton_tol = 1e-10;  // max-norm of dt * residual, u units
  int newton_max_iter = 100;
  double reg_eps = 1e-12;     // floor for v in du/dv
  double linear_tol = 1e-12;  // relative residual of the linear solve before a refinement pass
  bool periodic = false;      // wrap the stencil around a box base; no lateral boundary

  void validate() const {
    if (!(m > 1.0)) throw InvalidArgument("slow diffusion requires m > 1");
    if (!(newton_tol > 0.0)) throw InvalidArgument("newton_tol must be positive");
    if (newton_max_iter < 1) throw InvalidArgument("newton_max_iter must be >= 1");
    if (!(reg_eps >= 0.0)) throw InvalidArgument("reg_eps must be nonnegative");
  }
};

struct SolveReport {
  std::vector<double> residual_per_step;
  std::vector<int> newton_iters_per_step;
  double max_field = 0.0;
  double weak_form_residual = std::numeric_limits<double>::quiet_NaN();
  double penalty_violation = 0.0;  // max (g - u)_+ (upper) or (u - g)_+ (lower)
  double clamp_fraction = 0.0;     // share of solved nodes held at v = 0
  std::string schedule;

  void append(const SolveReport& o) {
    residual_per_step.insert(residual_per_step.end(), o.residual_per_step.begin(), o.residual_per_step.end());
    newton_iters_per_step.insert(newton_iters_per_step.end(), o.newton_iters_per_step.begin(),
                                 o.newton_iters_per_step.end());
  }
};

/// Penalization switch zeta_delta(s) = min(1, max(0, 1 + s / delta)).
inline double zeta(double s, double delta) { return std::clamp(1.0 + s / delta, 0.0, 1.0); }
inline double zeta_slope(double s, double delta) { return (s > -delta && s < 0.0) ? 1.0 / delta : 0.0; }

struct PenaltyParams {
  enum class Side { upper, lower };
  double delta = 1e-2;
  Side side = Side::upper;

  void validate() const {
    if (!(delta > 0.0)) throw InvalidArgument("penalty delta must be positive");
  }
};

/// How Psi = g_t - Laplacian(g^m) is evaluated for the penalized source.
/// `discrete` applies the solver's own difference operators to the sampled
/// datum; `analytic` uses the datum's derivative callbacks.
enum class PsiMode { discrete, analytic };

/// Source term f(cell, slice, v) and its derivative with respect to v = u^m.
using SourceFn = std::function<std::pair<double, double>(std::size_t cell, int slice, double v)>;

namespace detail {

class CylinderSolver {
 public:
  CylinderSolver(const Cylinder& cyl, const SolverConfig& cfg) : cyl_(cyl), cfg_(cfg) {
    const auto& sub = cyl.submask;
    const double h = sub.h();
    inv_h2_ = 1.0 / (h * h);
    const auto layer = boundary_layer(sub);
    unknown_of_.assign(sub.size(), -1);
    if (cfg.periodic) setup_periodic();
    for (std::size_t c = 0; c < sub.size(); ++c) {
      if (sub.inside(c) && (cfg.periodic || !layer[c])) {
        unknown_of_[c] = static_cast<int>(cells_.size());
        cells_.push_back(c);
      }
    }
    const int n = static_cast<int>(cells_.size());
    neighbours_.resize(cells_.size());
    std::vector<Eigen::Triplet<double>> trip;
    for (int r = 0; r < n; ++r) {
      const std::size_t c = cells_[r];
      trip.emplace_back(r, r, 0.0);
      for_each_stencil_neighbor(c, [&](std::size_t nb) {
        neighbours_[r].push_back(nb);
        const int col = unknown_of_[nb];
        if (col >= 0 && col != r) trip.emplace_back(r, col, -inv_h2_);
      });
    }
    A_.resize(n, n);
    A_.setFromTriplets(trip.begin(), trip.end());
    A_.makeCompressed();
    diag_pos_.resize(n);
    for (int col = 0; col < n; ++col) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(A_, col); it; ++it) {
        if (it.row() == col) diag_pos_[col] = &it.valueRef() - A_.valuePtr();
      }
    }
    J_ = A_;
    if (n > 0) ldlt_.analyzePattern(J_);
  }

  std::size_t unknowns() const { return cells_.size(); }

  /// Advances u from slice t1 to t2 over the unknown cells; all other cells
  /// of the cylinder are boundary values and are read from u.
  void run(ScalarField& u, const SourceFn& source, SolveReport& rep) {
    const double m = cfg_.m;
    const double dt = cyl_.grid->dt();
    const int n = static_cast<int>(cells_.size());
    if (n == 0) return;
    Eigen::VectorXd v(n), uprev(n), rhs(n), F(n), delta(n), trial(n), Ftrial(n), slope(n), ucur(n);
    std::size_t clamped = 0;
    std::size_t solved = 0;
    for (int k = cyl_.t1; k < cyl_.t2; ++k) {
      for (int r = 0; r < n; ++r) {
        uprev[r] = u(cells_[r], k);
        v[r] = std::pow(std::max(0.0, uprev[r]), m);
        double b = 0.0;
        for (std::size_t nb : neighbours_[r]) {
          if (unknown_of_[nb] < 0) b += std::pow(std::max(0.0, u(nb, k + 1)), m);
        }
        rhs[r] = b * inv_h2_;
      }
      auto residual = [&](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
        double worst = 0.0;
        for (int r = 0; r < n; ++r) {
          double lap = static_cast<double>(neighbours_[r].size()) * x[r];
          for (std::size_t nb : neighbours_[r]) {
            const int col = unknown_of_[nb];
            if (col >= 0) lap -= x[col];
          }
          const auto [s, ds] = source ? source(cells_[r], k + 1, x[r]) : std::pair<double, double>{0.0, 0.0};
          (void)ds;
          const double ur = std::pow(std::max(0.0, x[r]), 1.0 / m);
          out[r] = (ur - uprev[r]) / dt + lap * inv_h2_ - rhs[r] - s;
          const bool held = x[r] <= 0.0 && out[r] > 0.0;
          if (!held) worst = std::max(worst, std::abs(dt * out[r]));
        }
        return worst;
      };

      double norm = residual(v, F);
      int it = 0;
      for (; norm > cfg_.newton_tol; ++it) {
        if (it >= cfg_.newton_max_iter) {
          throw NewtonDivergence("no convergence in " + std::to_string(cfg_.newton_max_iter) +
                                 " iterations at slice " + std::to_string(k + 1) + " (residual " +
                                 std::to_string(norm) + "); reduce dt or raise reg_eps");
        }
        std::copy(A_.valuePtr(), A_.valuePtr() + A_.nonZeros(), J_.valuePtr());
        for (int r = 0; r < n; ++r) {
          const double vr = std::max(v[r], cfg_.reg_eps);
          const double du = vr > 0.0 ? std::pow(vr, 1.0 / m - 1.0) / m : 1e150;
          const auto [s, ds] = source ? source(cells_[r], k + 1, v[r]) : std::pair<double, double>{0.0, 0.0};
          (void)s;
          double d = du / dt + static_cast<double>(neighbours_[r].size()) * inv_h2_ - ds;
          slope[r] = du;
          if (v[r] <= 0.0 && F[r] > 0.0) {
            d = 1e150;  // held at the zero obstacle
            F[r] = 0.0;
            slope[r] = 0.0;
          }
          J_.valuePtr()[diag_pos_[r]] = d;
        }
        ldlt_.factorize(J_);
        if (ldlt_.info() != Eigen::Success) throw NewtonDivergence("Jacobian factorization failed");
        delta = ldlt_.solve(-F);
        const Eigen::VectorXd lin_res = J_ * delta + F;
        if (lin_res.lpNorm<Eigen::Infinity>() > cfg_.linear_tol * std::max(1.0, F.lpNorm<Eigen::Infinity>())) {
          delta -= ldlt_.solve(lin_res);
        }
        // The correction is applied to u = v^(1/m) through the same slope du/dv.
        // Near v = 0 this stays accurate where a step in v would overshoot the
        // square-root-like branch and oscillate.
        for (int r = 0; r < n; ++r) ucur[r] = std::pow(v[r], 1.0 / m);
        double best = std::numeric_limits<double>::infinity();
        Eigen::VectorXd best_v = v;
        double step = 1.0;
        for (int ls = 0; ls < 8; ++ls, step *= 0.5) {
          for (int r = 0; r < n; ++r) trial[r] = std::pow(std::max(0.0, ucur[r] + step * slope[r] * delta[r]), m);
          const double tn = residual(trial, Ftrial);
          if (tn < best) {
            best = tn;
            best_v = trial;
          }
          if (tn < norm) break;
        }
        v = best_v;
        norm = residual(v, F);
      }
      rep.residual_per_step.push_back(norm);
      rep.newton_iters_per_step.push_back(it);
      for (int r = 0; r < n; ++r) {
        u(cells_[r], k + 1) = std::pow(std::max(0.0, v[r]), 1.0 / m);
        if (v[r] <= 0.0 && F[r] > 0.0) ++clamped;
        ++solved;
      }
    }
    rep.clamp_fraction = solved ? static_cast<double>(clamped) / static_cast<double>(solved) : 0.0;
  }

 private:
  void setup_periodic() {
    const auto& sub = cyl_.submask;
    int i0 = sub.nx(), i1 = -1, j0 = sub.ny(), j1 = -1;
    for (std::size_t c = 0; c < sub.size(); ++c) {
      if (!sub.inside(c)) continue;
      i0 = std::min(i0, sub.ix(c));
      i1 = std::max(i1, sub.ix(c));
      j0 = std::min(j0, sub.iy(c));
      j1 = std::max(j1, sub.iy(c));
    }
    if (static_cast<std::size_t>(i1 - i0 + 1) * static_cast<std::size_t>(j1 - j0 + 1) != sub.count()) {
      throw InvalidArgument("periodic mode requires a box-shaped base");
    }
    box_ = {i0, i1, j0, j1};
  }

  template <class F>
  void for_each_stencil_neighbor(std::size_t c, F&& f) const {
    const auto& sub = cyl_.submask;
    if (!cfg_.periodic) {
      sub.for_each_neighbor(c, f);
      return;
    }
    const int i = sub.ix(c);
    const int j = sub.iy(c);
    const int wx = box_[1] - box_[0] + 1;
    const int wy = box_[3] - box_[2] + 1;
    auto wrap = [](int a, int lo, int w) { return lo + ((a - lo) % w + w) % w; };
    f(sub.index(wrap(i - 1, box_[0], wx), j));
    f(sub.index(wrap(i + 1, box_[0], wx), j));
    if (sub.dim() == 2) {
      f(sub.index(i, wrap(j - 1, box_[2], wy)));
      f(sub.index(i, wrap(j + 1, box_[2], wy)));
    }
  }

  const Cylinder& cyl_;
  SolverConfig cfg_;
  double inv_h2_ = 1.0;
  std::vector<int> unknown_of_;
  std::vector<std::size_t> cells_;
  std::vector<std::vector<std::size_t>> neighbours_;
  Eigen::SparseMatrix<double> A_;
  Eigen::SparseMatrix<double> J_;
  std::vector<std::ptrdiff_t> diag_pos_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  std::array<int, 4> box_{};
};

}  // namespace detail

/// Solves the implicit-Euler scheme on the cylinder in place. Values of `u`
/// on the parabolic boundary of `c` are the data; interior cells at slices
/// t1+1..t2 are overwritten. Everything outside the cylinder is untouched.
inline SolveReport solve_in_place(ScalarField& u, const Cylinder& c, const SourceFn& source, const SolverConfig& cfg) {
  cfg.validate();
  if (!(u.grid() == *c.grid)) throw MismatchedGrids("field and cylinder live on different grids");
  SolveReport rep;
  detail::CylinderSolver solver(c, cfg);
  solver.run(u, source, rep);
  rep.max_field = u.max_inside();
  return rep;
}

namespace detail {

inline void check_exponent(const BoundaryData& g, const SolverConfig& cfg) {
  if (g.m != cfg.m) {
    throw InvalidArgument("datum '" + g.name + "' was built for m=" + std::to_string(g.m) + " but the solver uses m=" +
                          std::to_string(cfg.m));
  }
}

inline void check_nonnegative_data(const ScalarField& g, const Cylinder& c) {
  const auto pb = parabolic_boundary(c);
  for (std::size_t cell : pb.initial_cells) {
    if (g(cell, c.t1) < 0.0) throw NegativeBoundary("initial datum is negative");
  }
  for (const auto& [cell, k] : pb.lateral_cells) {
    if (g(cell, k) < 0.0) throw NegativeBoundary("lateral datum is negative");
  }
}

}  // namespace detail

/// Weak solution of u_t - Laplacian(u^m) = f on `c` with u = g on the
/// parabolic boundary (imposed through v = u^m). Nodes outside the cylinder
/// carry g.
inline std::pair<ScalarField, SolveReport> solve_ibvp(const Cylinder& c, const BoundaryData& g, const SpaceTimeFn& f,
                                                      const SolverConfig& cfg) {
  g.validate();
  detail::check_exponent(g, cfg);
  ScalarField u = sample(c.grid, g.eval);
  detail::check_nonnegative_data(u, c);
  SourceFn src;
  if (f) {
    const auto& mask = c.grid->mask();
    const GridPtr grid = c.grid;
    src = [f, &mask, grid](std::size_t cell, int k, double) {
      return std::pair<double, double>{f(mask.center(cell), grid->time(k)), 0.0};
    };
  }
  SolveReport rep = solve_in_place(u, c, src, cfg);
  return {std::move(u), std::move(rep)};
}

/// Psi at every (cell, slice >= 1) of the grid for a smooth datum.
inline ScalarField psi_field(const GridPtr& grid, const BoundaryData& g, PsiMode mode) {
  ScalarField psi(grid);
  const auto& mask = grid->mask();
  if (mode == PsiMode::analytic) {
    for (int k = 1; k < grid->slices(); ++k) {
      const double t = grid->time(k);
      for (std::size_t c = 0; c < mask.size(); ++c) {
        const Point x = mask.center(c);
        psi(c, k) = g.time_derivative(x, t) - g.laplacian_of_power(x, t);
      }
    }
    return psi;
  }
  const ScalarField G = sample(grid, g.eval);
  const double m = g.m;
  const double inv_h2 = 1.0 / (mask.h() * mask.h());
  const double dt = grid->dt();
  for (int k = 1; k < grid->slices(); ++k) {
    for (std::size_t c = 0; c < mask.size(); ++c) {
      const double gm = std::pow(G(c, k), m);
      double lap = 0.0;
      int arms = 0;
      mask.for_each_neighbor(c, [&](std::size_t nb) {
        lap += std::pow(G(nb, k), m);
        ++arms;
      });
      lap = (lap - arms * gm) * inv_h2;
      psi(c, k) = (G(c, k) - G(c, k - 1)) / dt - lap;
    }
  }
  return psi;
}

/// Penalized problem
///   upper: u_t - Laplacian(u^m) =  zeta_delta(g^m - u^m) Psi_+
///   lower: u_t - Laplacian(u^m) = -zeta_delta(u^m - g^m) Psi_-
/// with u^m - g^m vanishing on the lateral boundary and u = g initially.
/// The upper solution stays above g, the lower one below g.
inline std::pair<ScalarField, SolveReport> solve_penalized(const Cylinder& c, const BoundaryData& g,
                                                           const PenaltyParams& p, const SolverConfig& cfg,
                                                           PsiMode mode = PsiMode::discrete) {
  g.validate();
  g.require_smooth("solve_penalized");
  p.validate();
  detail::check_exponent(g, cfg);
  ScalarField u = sample(c.grid, g.eval);
  detail::check_nonnegative_data(u, c);
  const ScalarField G = u;
  const ScalarField psi = psi_field(c.grid, g, mode);
  const double m = cfg.m;
  const double delta = p.delta;
  SourceFn src;
  if (p.side == PenaltyParams::Side::upper) {
    src = [&](std::size_t cell, int k, double v) {
      const double pos = std::max(0.0, psi(cell, k));
      const double s = std::pow(G(cell, k), m) - v;
      return std::pair<double, double>{zeta(s, delta) * pos, -zeta_slope(s, delta) * pos};
    };
  } else {
    src = [&](std::size_t cell, int k, double v) {
      const double neg = std::max(0.0, -psi(cell, k));
      const double s = v - std::pow(G(cell, k), m);
      return std::pair<double, double>{-zeta(s, delta) * neg, -zeta_slope(s, delta) * neg};
    };
  }
  SolveReport rep = solve_in_place(u, c, src, cfg);
  const auto& mask = c.grid->mask();
  double viol = 0.0;
  for (int k = c.t1; k <= c.t2; ++k) {
    for (std::size_t cell = 0; cell < mask.size(); ++cell) {
      if (!c.submask.inside(cell)) continue;
      const double d = p.side == PenaltyParams::Side::upper ? G(cell, k) - u(cell, k) : u(cell, k) - G(cell, k);
      viol = std::max(viol, d);
    }
  }
  rep.penalty_violation = viol;
  return {std::move(u), std::move(rep)};
}

}  // namespace pme
