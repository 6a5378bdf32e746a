#include <gtest/gtest.h>

#include <cmath>

#include "pme/exact.hpp"
#include "pme/perron.hpp"

using namespace pme;

namespace {

GridPtr interval(int n, double T, int nt, double lo = 0.0, double len = 1.0) {
  return make_grid(DomainMask::box(n, 0, len / n, Point{lo, 0.0}), T, nt);
}

SolverConfig config(double m) {
  SolverConfig cfg;
  cfg.m = m;
  return cfg;
}

}  // namespace

TEST(ProbeSet, InteriorCellsAfterTenPercentOfT) {
  auto grid = interval(20, 1.0, 20);
  const auto p = probe_set(*grid);
  const auto core = erode(grid->mask(), 2);
  EXPECT_EQ(p.nodes.size(), core.count() * 19u);  // slices 2..20
  for (const auto& [c, k] : p.nodes) {
    EXPECT_TRUE(core.inside(c));
    EXPECT_GE(grid->time(k), 0.1 * grid->T() - 1e-12);
  }
  EXPECT_FALSE(p.description.empty());
}

TEST(PoissonModify, RejectsIrregularCylinder) {
  auto grid = interval(16, 1.0, 8);
  const ScalarField u(grid, 0.5);
  Cylinder c(grid, erode(grid->mask(), 2), 2, 8, false);
  EXPECT_THROW(poisson_modify(u, c, config(2.0)), NotRegular);
}

TEST(PoissonModify, ConstantIsFixed) {
  auto grid = make_grid(DomainMask::box(12, 12, 1.0 / 12), 1.0, 8);
  const ScalarField u(grid, 0.35);
  const auto w = poisson_modify(u, exhaustion(grid, 1), config(2.0));
  EXPECT_LT(max_abs_diff(w, u), 1e-10);
}

TEST(PoissonModify, SolutionIsFixed) {
  const auto cfg = config(2.0);
  auto grid = interval(40, 0.5, 20);
  const auto g = builtin::bump(0.5, Point{0.5, 0.0}, 0.15, 0.05, 1, 2.0);
  const auto u = solve_ibvp(Cylinder::full(grid), g, nullptr, cfg).first;
  const auto w = poisson_modify(u, exhaustion(grid, 2), cfg);
  EXPECT_LT(max_abs_diff(w, u), 1e-9);
}

TEST(PoissonModify, LowersTruncatedBarenblatt) {
  const auto cfg = config(2.0);
  const BarenblattParams p{1, 2.0, 1.0, 0.2};
  auto grid = interval(48, 1.0, 24, -1.0, 2.0);
  // min of two discrete solutions is a discrete supersolution
  const auto b = solve_ibvp(Cylinder::full(grid), builtin::barenblatt_trace(p), nullptr, cfg).first;
  const auto u = truncate(b, 1.2);
  const Cylinder c = exhaustion(grid, 2);
  const auto w = poisson_modify(u, c, cfg);
  double biggest_drop = 0.0;
  for (int k = 0; k < grid->slices(); ++k) {
    for (std::size_t cell = 0; cell < grid->mask().size(); ++cell) {
      if (!grid->mask().inside(cell)) continue;
      EXPECT_LE(w(cell, k), u(cell, k) + 1e-9);
      const bool in_c = c.submask.inside(cell) && k >= c.t1;
      if (!in_c) {
        EXPECT_EQ(w(cell, k), u(cell, k));
      }
      biggest_drop = std::max(biggest_drop, u(cell, k) - w(cell, k));
    }
  }
  EXPECT_GT(biggest_drop, 1e-3);
}

TEST(Members, ConstantDatum) {
  const auto cfg = config(2.0);
  auto grid = interval(16, 1.0, 8);
  const auto g = builtin::constant(0.6, 2.0);
  EXPECT_LT(max_abs_diff(upper_member(grid, g, 1e-2, cfg), ScalarField(grid, 0.6)), 1e-10);
  EXPECT_LT(max_abs_diff(lower_member(grid, g, 1e-2, cfg), ScalarField(grid, 0.6)), 1e-10);
}

TEST(Members, MonotoneLinearData) {
  const auto cfg = config(2.0);
  auto grid = interval(16, 1.0, 8);
  const auto up = builtin::linear_in_t(0.2, 0.3, 1.0, 2.0);
  EXPECT_LT(max_abs_diff(upper_member(grid, up, 1e-2, cfg), sample(grid, up.eval)), 1e-9);
  const auto down = builtin::linear_in_t(0.8, -0.3, 1.0, 2.0);
  EXPECT_LT(max_abs_diff(lower_member(grid, down, 1e-2, cfg), sample(grid, down.eval)), 1e-9);
}

TEST(Members, LowerBelowUpper) {
  const auto cfg = config(2.0);
  auto grid = interval(40, 0.5, 20);
  const auto g = builtin::bump(0.5, Point{0.4, 0.0}, 0.15, 0.1, 1, 2.0);
  SolveReport lrep;
  const auto lo = lower_member(grid, g, 1e-2, cfg, &lrep);
  const auto up = upper_member(grid, g, 1e-2, cfg);
  for (std::size_t i = 0; i < lo.data().size(); ++i) EXPECT_LE(lo.data()[i], up.data()[i] + 1e-9);
  EXPECT_GE(lrep.clamp_fraction, 0.0);
  EXPECT_LE(lrep.clamp_fraction, 1.0);
}

TEST(Envelope, ConstantDatumHasNoGap) {
  const auto cfg = config(2.0);
  auto grid = interval(32, 1.0, 16);
  const auto r = envelope(grid, builtin::constant(0.4, 2.0), 5, 1e-2, cfg);
  ASSERT_EQ(r.per_stage.size(), 5u);
  for (const auto& s : r.per_stage) EXPECT_LE(std::abs(s.gap), 10 * cfg.newton_tol);
}

TEST(Envelope, OrderingChainAndStageMonotonicity) {
  const auto cfg = config(2.0);
  auto grid = interval(64, 0.5, 32);
  const auto g = builtin::bump(0.4, Point{0.5, 0.0}, 0.15, 0.2, 1, 2.0);
  const auto r = envelope(grid, g, 6, 1e-2, cfg);
  const auto probes = probe_set(*grid);
  const double tol = 10 * cfg.newton_tol;
  EXPECT_LE(probe_max_diff(r.lower_member, r.lower, probes), tol);
  EXPECT_LE(probe_max_diff(r.lower, r.upper, probes), tol);
  EXPECT_LE(probe_max_diff(r.upper, r.upper_member, probes), tol);
  EXPECT_GE(r.gap, -tol);
  for (std::size_t i = 1; i < r.per_stage.size(); ++i) {
    EXPECT_LE(r.per_stage[i].upper_max, r.per_stage[i - 1].upper_max + tol);
    EXPECT_GE(r.per_stage[i].lower_max, r.per_stage[i - 1].lower_max - tol);
    EXPECT_LE(r.per_stage[i].gap, r.per_stage[i - 1].gap + tol);
  }
  EXPECT_FALSE(r.schedule.empty());
  EXPECT_FALSE(r.probes.empty());
}

TEST(Envelope, CloseToIbvpForSmoothData) {
  const auto cfg = config(1.5);
  auto grid = interval(128, 1.0, 64, -3.0, 6.0);
  const auto g = builtin::barenblatt_trace(BarenblattParams::normalized(1, 1.5, 0.1));
  const auto u = solve_ibvp(Cylinder::full(grid), g, nullptr, cfg).first;
  const auto r = envelope(grid, g, 10, 1e-2, cfg);
  const double err = max_abs_diff(u, sample_barenblatt(grid, BarenblattParams::normalized(1, 1.5, 0.1)));
  EXPECT_LE(probe_max_abs_diff(r.upper, u, probe_set(*grid)), err);
}

TEST(Envelope, SequentialAndParallelAgree) {
  const auto cfg = config(2.0);
  auto grid = interval(32, 0.5, 16);
  const auto g = builtin::bump(0.4, Point{0.5, 0.0}, 0.2, 0.1, 1, 2.0);
  EnvelopeOptions seq;
  seq.parallel = false;
  const auto a = envelope(grid, g, 4, 1e-2, cfg);
  const auto b = envelope(grid, g, 4, 1e-2, cfg, seq);
  EXPECT_EQ(a.upper.data(), b.upper.data());
  EXPECT_EQ(a.lower.data(), b.lower.data());
}

TEST(Envelope, Errors) {
  const auto cfg = config(2.0);
  auto grid = interval(32, 0.5, 16);
  const auto g = builtin::constant(0.3, 2.0);
  EXPECT_THROW(envelope(grid, g, 0, 1e-2, cfg), InvalidArgument);
  EXPECT_THROW(envelope(interval(6, 0.5, 8), g, 2, 1e-2, cfg), EmptyCylinder);
  EXPECT_THROW(envelope(grid, builtin::l_corner_ramp(Point{}, 1.0, 1, 2.0), 2, 1e-2, cfg), MissingSmoothness);
}

TEST(Resolutivity, ZeroDatum) {
  const auto cfg = config(2.0);
  auto grid = make_grid(DomainMask::l_shape(16, 1.0 / 16), 0.5, 16);
  EnvelopeOptions opt;
  opt.schedule.max_erosion = 2;
  const auto r = resolutivity_gap(grid, builtin::constant(0.0, 2.0), 4, 4, 1e-2, cfg, opt);
  // the shifted datum is the constant 1/4 and the lower envelope vanishes
  EXPECT_NEAR(r.gap, 0.25, 10 * cfg.newton_tol);
  const auto r0 = envelope(grid, builtin::constant(0.0, 2.0), 4, 1e-2, cfg, opt);
  EXPECT_LE(std::abs(r0.gap), 10 * cfg.newton_tol);
}

TEST(Resolutivity, SmoothDatumMatchesEnvelopeGap) {
  const auto cfg = config(2.0);
  auto grid = interval(64, 0.5, 32);
  const auto g = builtin::bump(0.4, Point{0.5, 0.0}, 0.2, 0.3, 1, 2.0);
  const auto env = envelope(grid, g, 6, 1e-2, cfg);
  const auto r = resolutivity_gap(grid, g, 6, 64, 1e-2, cfg);
  EXPECT_GE(r.gap, env.gap - 1e-6);
  EXPECT_LE(r.gap, 2.0 * env.gap);
}

TEST(Resolutivity, GapShrinksWithSmoothingIndex) {
  const auto cfg = config(1.5);
  auto grid = make_grid(DomainMask::l_shape(16, 1.0 / 16), 0.5, 16);
  EnvelopeOptions opt;
  opt.schedule.max_erosion = 2;
  const auto g = builtin::l_corner_ramp(Point{0.5, 0.5}, 0.5, 2, 1.5);
  const double a = resolutivity_gap(grid, g, 4, 2, 1e-2, cfg, opt).gap;
  const double b = resolutivity_gap(grid, g, 4, 8, 1e-2, cfg, opt).gap;
  EXPECT_LT(b, a);
  EXPECT_GT(b, 0.0);
}

TEST(UpperClassFilter, Constants) {
  auto grid = interval(16, 1.0, 8);
  const auto g = builtin::bump(0.3, Point{0.5, 0.0}, 0.2, 0.1, 1, 2.0);
  const auto r = upper_class_filter({ScalarField(grid, 0.5), ScalarField(grid, 0.45)}, g);
  EXPECT_EQ(r.kept.size(), 2u);
  ASSERT_TRUE(r.minimum.has_value());
  EXPECT_EQ(r.minimum->max_inside(), 0.45);
  EXPECT_EQ(r.minimum->min_inside(), 0.45);
}

TEST(UpperClassFilter, KeepsUpperMemberRejectsZero) {
  const auto cfg = config(2.0);
  auto grid = interval(32, 0.5, 16);
  const auto g = builtin::bump(0.3, Point{0.5, 0.0}, 0.15, 0.1, 1, 2.0);
  const auto member = upper_member(grid, g, 1e-2, cfg);
  const auto r = upper_class_filter({ScalarField(grid, 0.0), member}, g);
  ASSERT_EQ(r.kept.size(), 1u);
  EXPECT_EQ(r.kept[0], 1u);
  EXPECT_GT(r.boundary_shortfall[0], 0.0);
  EXPECT_THROW(upper_class_filter({ScalarField(grid, 0.0)}, g), EmptyClass);
  EXPECT_THROW(upper_class_filter({}, g), EmptyClass);
}
