#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "pme/solver.hpp"
#include "pme/weak_form.hpp"

using namespace pme;

namespace {

GridPtr interval(int n, double T, int nt, double lo = 0.0, double len = 1.0) {
  return make_grid(DomainMask::box(n, 0, len / n, Point{lo, 0.0}), T, nt);
}

GridPtr square(int n, double T, int nt, double lo = 0.0, double len = 1.0) {
  return make_grid(DomainMask::box(n, n, len / n, Point{lo, lo}), T, nt);
}

// Residual of the implicit balance at every interior node, scaled by dt.
double balance_defect(const ScalarField& u, const Cylinder& c, double m) {
  const auto& mask = c.submask;
  const auto layer = boundary_layer(mask);
  const double dt = c.grid->dt();
  const double h2 = mask.h() * mask.h();
  double worst = 0.0;
  for (int k = c.t1; k < c.t2; ++k) {
    for (std::size_t cell = 0; cell < mask.size(); ++cell) {
      if (!mask.inside(cell) || layer[cell]) continue;
      const double v = std::pow(u(cell, k + 1), m);
      double lap = 0.0;
      mask.for_each_neighbor(cell, [&](std::size_t nb) { lap += std::pow(u(nb, k + 1), m) - v; });
      const double r = (u(cell, k + 1) - u(cell, k)) / dt - lap / h2;
      if (v > 0.0 || r < 0.0) worst = std::max(worst, std::abs(dt * r));
    }
  }
  return worst;
}

}  // namespace

TEST(SolverConfig, Validation) {
  SolverConfig cfg;
  cfg.m = 1.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg.m = 2.0;
  cfg.newton_tol = 0.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(Zeta, Properties) {
  const double d = 0.1;
  EXPECT_EQ(zeta(0.0, d), 1.0);
  EXPECT_EQ(zeta(5.0, d), 1.0);
  EXPECT_EQ(zeta(-d, d), 0.0);
  EXPECT_EQ(zeta(-1.0, d), 0.0);
  EXPECT_NEAR(zeta(-0.05, d), 0.5, 1e-15);
  for (double s = -0.2; s < 0.2; s += 0.013) EXPECT_LE(zeta_slope(s, d), 2.0 / d);
}

TEST(SolveIbvp, ConstantDatumIsExact) {
  SolverConfig cfg;
  for (double m : {1.5, 2.0, 3.0}) {
    cfg.m = m;
    auto grid = square(10, 0.5, 5);
    const auto [u, rep] = solve_ibvp(Cylinder::full(grid), builtin::constant(0.7, m), nullptr, cfg);
    EXPECT_LE(std::abs(u.max_inside() - 0.7), 1e-10);
    EXPECT_LE(std::abs(u.min_inside() - 0.7), 1e-10);
    EXPECT_EQ(rep.residual_per_step.size(), 5u);
  }
}

TEST(SolveIbvp, ZeroDatumStaysZero) {
  auto grid = interval(20, 1.0, 10);
  const auto [u, rep] = solve_ibvp(Cylinder::full(grid), builtin::constant(0.0, 2.0), nullptr, SolverConfig{});
  EXPECT_EQ(u.max_inside(), 0.0);
  EXPECT_EQ(u.min_inside(), 0.0);
}

TEST(SolveIbvp, SatisfiesImplicitBalance) {
  SolverConfig cfg;
  const auto p = BarenblattParams::normalized(1, 2.0, 0.1);
  auto grid = interval(64, 1.0, 16, -3.0, 6.0);
  const auto c = Cylinder::full(grid);
  const auto [u, rep] = solve_ibvp(c, builtin::barenblatt_trace(p), nullptr, cfg);
  EXPECT_LE(balance_defect(u, c, 2.0), 1e-9);
  EXPECT_GE(u.min_inside(), 0.0);
  for (double r : rep.residual_per_step) EXPECT_LE(r, cfg.newton_tol);
}

TEST(SolveIbvp, ConvergesToBarenblatt) {
  SolverConfig cfg;
  const auto p = BarenblattParams::normalized(1, 2.0, 0.1);
  const auto g = builtin::barenblatt_trace(p);
  std::vector<double> err;
  for (int n : {64, 128, 256}) {
    auto grid = interval(n, 1.0, n / 4, -3.0, 6.0);
    const auto [u, rep] = solve_ibvp(Cylinder::full(grid), g, nullptr, cfg);
    err.push_back(max_abs_diff(u, sample_barenblatt(grid, p)));
  }
  EXPECT_LT(err[1], err[0]);
  EXPECT_LT(err[2], err[1]);
}

TEST(SolveIbvp, MaximumPrinciple) {
  auto grid = square(16, 0.5, 10);
  const auto g = builtin::bump(0.9, Point{0.3, 0.6}, 0.15, 0.05, 2, 2.0);
  const auto [u, rep] = solve_ibvp(Cylinder::full(grid), g, nullptr, SolverConfig{});
  EXPECT_LE(u.max_inside(), g.M + 1e-9);
  EXPECT_GE(u.min_inside(), 0.0);
}

TEST(SolveIbvp, DiscreteComparison) {
  auto grid = square(12, 0.5, 8);
  const auto c = Cylinder::full(grid);
  const auto g1 = builtin::bump(0.5, Point{0.4, 0.4}, 0.2, 0.0, 2, 2.0);
  const auto g2 = builtin::bump(0.6, Point{0.4, 0.4}, 0.25, 0.05, 2, 2.0);
  const auto [u1, r1] = solve_ibvp(c, g1, nullptr, SolverConfig{});
  const auto [u2, r2] = solve_ibvp(c, g2, nullptr, SolverConfig{});
  double worst = -1.0;
  for (std::size_t i = 0; i < u1.data().size(); ++i) worst = std::max(worst, u1.data()[i] - u2.data()[i]);
  EXPECT_LE(worst, 1e-9);
}

TEST(SolveIbvp, SourceTerm) {
  // u = a + b t solves u_t - Laplacian(u^m) = b.
  const double a = 0.4;
  const double b = 0.6;
  auto grid = square(8, 1.0, 8);
  const auto g = builtin::linear_in_t(a, b, 1.0, 2.0);
  const auto [u, rep] = solve_ibvp(Cylinder::full(grid), g, [b](const Point&, double) { return b; }, SolverConfig{});
  EXPECT_LE(max_abs_diff(u, sample(grid, g.eval)), 1e-9);
}

TEST(SolveIbvp, RejectsNegativeData) {
  BoundaryData g;
  g.name = "negative";
  g.eval = [](const Point& x, double) { return x.x - 0.5; };
  g.M = 1.0;
  auto grid = interval(10, 1.0, 4);
  EXPECT_THROW(solve_ibvp(Cylinder::full(grid), g, nullptr, SolverConfig{}), NegativeBoundary);
}

TEST(SolveIbvp, NewtonDivergenceIsReported) {
  SolverConfig cfg;
  cfg.newton_max_iter = 1;
  cfg.newton_tol = 1e-15;
  auto grid = interval(32, 1.0, 2, -3.0, 6.0);
  const auto g = builtin::barenblatt_trace(BarenblattParams::normalized(1, 2.0, 0.1));
  EXPECT_THROW(solve_ibvp(Cylinder::full(grid), g, nullptr, cfg), NewtonDivergence);
}

TEST(SolveIbvp, SubcylinderLeavesOutsideUntouched) {
  auto grid = interval(24, 1.0, 8);
  const auto g = builtin::bump(0.5, Point{0.5, 0.0}, 0.2, 0.1, 1, 2.0);
  const Cylinder c(grid, erode(grid->mask(), 3), 2, 6);
  const auto [u, rep] = solve_ibvp(c, g, nullptr, SolverConfig{});
  const auto G = sample(grid, g.eval);
  const auto layer = boundary_layer(c.submask);
  for (int k = 0; k <= grid->nt(); ++k) {
    for (std::size_t cell = 0; cell < grid->mask().size(); ++cell) {
      const bool solved = c.submask.inside(cell) && !layer[cell] && k > c.t1 && k <= c.t2;
      if (!solved) {
        EXPECT_EQ(u(cell, k), G(cell, k));
      }
    }
  }
}

TEST(SolveIbvp, PeriodicModeConservesMass) {
  SolverConfig cfg;
  cfg.periodic = true;
  auto grid = square(16, 0.2, 10);
  const auto g = builtin::bump(1.0, Point{0.3, 0.5}, 0.1, 0.0, 2, 2.0);
  const auto [u, rep] = solve_ibvp(Cylinder::full(grid), g, nullptr, cfg);
  const auto& mask = grid->mask();
  auto mass = [&](int k) {
    double s = 0.0;
    for (std::size_t c = 0; c < mask.size(); ++c) {
      if (mask.inside(c)) s += u(c, k);
    }
    return s * mask.cell_volume();
  };
  const double m0 = mass(0);
  for (int k = 1; k <= grid->nt(); ++k) EXPECT_NEAR(mass(k), m0, 1e-9);
  EXPECT_GT(std::abs(u(mask.index(5, 8), grid->nt()) - u(mask.index(5, 8), 0)), 1e-3);

  auto lshape = make_grid(DomainMask::l_shape(8, 0.125), 0.2, 4);
  EXPECT_THROW(solve_ibvp(Cylinder::full(lshape), g, nullptr, cfg), InvalidArgument);
}

TEST(SolvePenalized, RequiresSmoothDatum) {
  auto grid = square(8, 0.5, 4);
  const auto g = builtin::l_corner_ramp(Point{0.5, 0.5}, 0.5, 2, 2.0);
  EXPECT_THROW(solve_penalized(Cylinder::full(grid), g, PenaltyParams{}, SolverConfig{}), MissingSmoothness);
  EXPECT_THROW(solve_penalized(Cylinder::full(grid), builtin::constant(1.0, 2.0), PenaltyParams{0.0}, SolverConfig{}),
               InvalidArgument);
}

TEST(SolvePenalized, ConstantDatum) {
  auto grid = square(8, 0.5, 4);
  for (auto side : {PenaltyParams::Side::upper, PenaltyParams::Side::lower}) {
    const auto [u, rep] =
        solve_penalized(Cylinder::full(grid), builtin::constant(0.3, 2.0), PenaltyParams{1e-2, side}, SolverConfig{});
    EXPECT_LE(std::abs(u.max_inside() - 0.3), 1e-10);
    EXPECT_LE(std::abs(u.min_inside() - 0.3), 1e-10);
  }
}

TEST(SolvePenalized, IncreasingLinearDatumIsExact) {
  auto grid = square(10, 1.0, 10);
  const auto g = builtin::linear_in_t(0.3, 0.5, 1.0, 2.0);
  for (auto mode : {PsiMode::discrete, PsiMode::analytic}) {
    const auto [u, rep] = solve_penalized(Cylinder::full(grid), g, PenaltyParams{1e-2}, SolverConfig{}, mode);
    EXPECT_LE(max_abs_diff(u, sample(grid, g.eval)), 1e-9);
  }
}

TEST(SolvePenalized, DecreasingDatumReducesToIbvp) {
  auto grid = square(10, 1.0, 10);
  const auto g = builtin::linear_in_t(0.9, -0.5, 1.0, 2.0);
  const auto c = Cylinder::full(grid);
  const auto [u, rep] = solve_penalized(c, g, PenaltyParams{1e-2}, SolverConfig{});
  const auto [w, wrep] = solve_ibvp(c, g, nullptr, SolverConfig{});
  EXPECT_LE(max_abs_diff(u, w), 1e-9);
}

TEST(SolvePenalized, LowerSideMirrorsUpper) {
  auto grid = square(10, 1.0, 10);
  const auto g = builtin::linear_in_t(0.9, -0.5, 1.0, 2.0);
  const auto [u, rep] = solve_penalized(Cylinder::full(grid), g, PenaltyParams{1e-2, PenaltyParams::Side::lower},
                                        SolverConfig{});
  EXPECT_LE(max_abs_diff(u, sample(grid, g.eval)), 1e-9);
}

TEST(SolvePenalized, UpperStaysAboveBump) {
  auto grid = square(16, 0.5, 10);
  const auto g = builtin::bump(0.6, Point{0.5, 0.5}, 0.15, 0.1, 2, 2.0);
  const auto G = sample(grid, g.eval);
  for (double delta : {1e-1, 1e-2, 1e-3}) {
    const auto [u, rep] = solve_penalized(Cylinder::full(grid), g, PenaltyParams{delta}, SolverConfig{});
    EXPECT_LE(rep.penalty_violation, 1e-9) << "delta " << delta;
    double worst = 0.0;
    for (std::size_t i = 0; i < u.data().size(); ++i) worst = std::max(worst, G.data()[i] - u.data()[i]);
    EXPECT_LE(worst, 1e-9);
  }
}

TEST(FieldIO, CsvAndBinaryRoundTrip) {
  auto grid = square(4, 1.0, 2);
  const auto u = sample(grid, [](const Point& x, double t) { return x.x + 2 * x.y + t; });
  std::stringstream csv;
  write_csv(u, csv);
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "slice,i,j,value");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, 16 * 3);

  std::stringstream bin;
  write_binary(u, 2.0, bin);
  const auto d = read_binary(bin);
  EXPECT_EQ(d.nx, 6);
  EXPECT_EQ(d.ny, 6);
  EXPECT_EQ(d.slices, 3);
  EXPECT_DOUBLE_EQ(d.dt, 0.5);
  EXPECT_DOUBLE_EQ(d.m, 2.0);
  EXPECT_EQ(d.values, u.data());
  std::stringstream truncated(bin.str().substr(0, 20));
  EXPECT_THROW(read_binary(truncated), IOError);
}
