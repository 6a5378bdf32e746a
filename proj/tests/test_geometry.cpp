#include <gtest/gtest.h>

#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "pme/geometry.hpp"

using namespace pme;

namespace {

DomainMask random_mask(std::mt19937& rng, int nx, int ny, double fill) {
  std::bernoulli_distribution coin(fill);
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(nx) * ny, 0);
  for (int j = 1; j + 1 < ny; ++j) {
    for (int i = 1; i + 1 < nx; ++i) flags[static_cast<std::size_t>(j) * nx + i] = coin(rng) ? 1 : 0;
  }
  flags[static_cast<std::size_t>(ny / 2) * nx + nx / 2] = 1;
  return DomainMask(nx, ny, 0.1, std::move(flags));
}

}  // namespace

TEST(DomainMask, RejectsInsideCellsOnFrame) {
  std::vector<std::uint8_t> flags(5, 0);
  flags[0] = 1;
  EXPECT_THROW(DomainMask(5, 1, 0.1, flags), InvalidArgument);
  flags[0] = 0;
  EXPECT_THROW(DomainMask(5, 1, 0.0, flags), InvalidArgument);
  EXPECT_THROW(DomainMask(4, 1, 0.1, flags), InvalidArgument);
}

TEST(DomainMask, BoxGeometry) {
  const auto m1 = DomainMask::box(8, 0, 0.25, Point{-1.0, 0.0});
  EXPECT_EQ(m1.dim(), 1);
  EXPECT_EQ(m1.count(), 8u);
  EXPECT_DOUBLE_EQ(m1.measure(), 2.0);
  EXPECT_DOUBLE_EQ(m1.center(m1.index(1, 0)).x, -0.875);
  EXPECT_DOUBLE_EQ(m1.center(m1.index(1, 0)).y, 0.0);

  const auto m2 = DomainMask::box(4, 6, 0.5);
  EXPECT_EQ(m2.dim(), 2);
  EXPECT_EQ(m2.count(), 24u);
  EXPECT_DOUBLE_EQ(m2.measure(), 6.0);
  EXPECT_DOUBLE_EQ(m2.center(m2.index(1, 1)).y, 0.25);
}

TEST(DomainMask, LShapeRemovesQuadrant) {
  const auto m = DomainMask::l_shape(8, 0.125);
  EXPECT_EQ(m.count(), 48u);
  EXPECT_TRUE(m.inside(4, 4));
  EXPECT_FALSE(m.inside(5, 5));
  EXPECT_FALSE(m.inside(8, 8));
  EXPECT_TRUE(m.inside(8, 4));
  EXPECT_THROW(DomainMask::l_shape(7, 0.1), InvalidArgument);
}

TEST(Erode, ZeroLayersIsIdentity) {
  std::mt19937 rng(3);
  const auto m = random_mask(rng, 12, 10, 0.7);
  EXPECT_EQ(erode(m, 0), m);
  EXPECT_THROW(erode(m, -1), InvalidArgument);
}

TEST(Erode, RunOfSevenLosesTwoEachSide) {
  const auto m = DomainMask::box(7, 0, 1.0);
  const auto e = erode(m, 2);
  EXPECT_EQ(e.count(), 3u);
  for (int i = 3; i <= 5; ++i) EXPECT_TRUE(e.inside(i, 0));
  EXPECT_TRUE(erode(m, 4).empty());
}

TEST(Erode, CompositionOnRandomMasks) {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> side(3, 16);
  std::uniform_int_distribution<int> depth(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_mask(rng, side(rng), side(rng), 0.8);
    const int a = depth(rng);
    const int b = depth(rng);
    EXPECT_EQ(erode(erode(m, a), b), erode(m, a + b)) << "trial " << trial;
    EXPECT_TRUE(erode(m, a + 1).subset_of(erode(m, a)));
  }
}

TEST(Erode, ChebyshevRemovesDiagonalNeighbours) {
  // A cell whose only outside neighbour is diagonal must go.
  auto m = DomainMask::box(5, 5, 1.0);
  auto flags = m.flags();
  flags[m.index(2, 2)] = 0;
  const auto holed = m.with_flags(flags);
  const auto e = erode(holed, 1);
  EXPECT_FALSE(e.inside(3, 3));
  EXPECT_TRUE(DomainMask::box(5, 5, 1.0).subset_of(m));
}

TEST(ParabolicBoundary, FiveCellInterval) {
  auto grid = make_grid(DomainMask::box(5, 0, 0.2), 1.0, 4);
  const auto pb = parabolic_boundary(Cylinder::full(grid));
  EXPECT_EQ(pb.initial_cells.size(), 5u);
  EXPECT_EQ(pb.lateral_cells.size(), 2u * 5u);
  std::set<int> slices;
  for (const auto& [cell, k] : pb.lateral_cells) {
    slices.insert(k);
    EXPECT_TRUE(grid->mask().ix(cell) == 1 || grid->mask().ix(cell) == 5);
  }
  EXPECT_EQ(slices, (std::set<int>{0, 1, 2, 3, 4}));
}

TEST(ParabolicBoundary, ExcludesTopSliceInterior) {
  auto grid = make_grid(DomainMask::box(6, 6, 0.1), 1.0, 3);
  const auto c = Cylinder::full(grid);
  const auto pb = parabolic_boundary(c);
  const auto layer = boundary_layer(c.submask);
  for (const auto& [cell, k] : pb.lateral_cells) {
    if (k == c.t2) {
      EXPECT_TRUE(layer[cell]);
    }
  }
  // interior-above-t1 and parabolic boundary partition the cylinder nodes
  std::set<std::pair<std::size_t, int>> boundary(pb.lateral_cells.begin(), pb.lateral_cells.end());
  for (std::size_t cell : pb.initial_cells) boundary.emplace(cell, c.t1);
  std::size_t interior = 0;
  for (int k = c.t1 + 1; k <= c.t2; ++k) {
    for (std::size_t cell = 0; cell < c.submask.size(); ++cell) {
      if (c.submask.inside(cell) && !layer[cell]) {
        ++interior;
        EXPECT_EQ(boundary.count({cell, k}), 0u);
      }
    }
  }
  EXPECT_EQ(interior + boundary.size(), c.submask.count() * static_cast<std::size_t>(c.t2 - c.t1 + 1));
}

TEST(ParabolicBoundary, SingleCellBase) {
  auto grid = make_grid(DomainMask::box(1, 0, 1.0), 1.0, 2);
  const auto pb = parabolic_boundary(Cylinder::full(grid));
  EXPECT_EQ(pb.initial_cells.size(), 1u);
  EXPECT_EQ(pb.lateral_cells.size(), 3u);
}

TEST(Exhaustion, FirstStageOnThirtyTwoCells) {
  auto grid = make_grid(DomainMask::box(32, 0, 1.0 / 32), 1.0, 40);
  const auto q1 = exhaustion(grid, 1);
  EXPECT_EQ(q1.submask.count(), 24u);
  EXPECT_EQ(q1.t1, 20);
  EXPECT_EQ(q1.t2, 40);
  EXPECT_TRUE(q1.regular);
}

TEST(Exhaustion, LargeIndexClamps) {
  auto grid = make_grid(DomainMask::box(32, 0, 1.0 / 32), 1.0, 40);
  const auto q = exhaustion(grid, 1000);
  EXPECT_EQ(q.submask, erode(grid->mask(), 1));
  EXPECT_EQ(q.t1, 1);
  ExhaustionSchedule geo{4, ExhaustionSchedule::TimeRule::geometric};
  EXPECT_EQ(exhaustion(grid, 3, geo).t1, 5);
  EXPECT_EQ(exhaustion(grid, 200, geo).t1, 1);
}

TEST(Exhaustion, MonotoneOnRandomMasks) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_mask(rng, 14, 14, 0.95);
    auto grid = make_grid(m, 1.0, 16);
    for (auto rule : {ExhaustionSchedule::TimeRule::harmonic, ExhaustionSchedule::TimeRule::geometric}) {
      ExhaustionSchedule s{4, rule};
      std::optional<Cylinder> prev;
      for (int j = 1; j <= 10; ++j) {
        std::optional<Cylinder> cur;
        try {
          cur.emplace(exhaustion(grid, j, s));
        } catch (const EmptyCylinder&) {
          EXPECT_FALSE(prev.has_value()) << "an emptied stage followed a nonempty one";
          continue;
        }
        if (prev) {
          EXPECT_TRUE(prev->submask.subset_of(cur->submask));
          EXPECT_LE(cur->t1, prev->t1);
        }
        prev = cur;
      }
    }
  }
}

TEST(Exhaustion, ErosionEmptiesCoarseGrid) {
  auto grid = make_grid(DomainMask::box(5, 0, 0.2), 1.0, 8);
  EXPECT_THROW(exhaustion(grid, 1), EmptyCylinder);
  EXPECT_NO_THROW(exhaustion(grid, 4));
  EXPECT_THROW(exhaustion(grid, 0), InvalidArgument);
}

TEST(Cylinder, Validation) {
  auto grid = make_grid(DomainMask::box(6, 0, 0.1), 1.0, 4);
  EXPECT_THROW(Cylinder(grid, grid->mask(), 2, 2), InvalidArgument);
  EXPECT_THROW(Cylinder(grid, grid->mask(), 0, 5), InvalidArgument);
  EXPECT_THROW(Cylinder(grid, DomainMask::box(7, 0, 0.1), 0, 4), InvalidArgument);
  EXPECT_THROW(make_grid(DomainMask::box(6, 0, 0.1), 0.0, 4), InvalidArgument);
  EXPECT_THROW(make_grid(DomainMask::box(6, 0, 0.1), 1.0, 0), InvalidArgument);
}

TEST(MaskIO, RoundTrip) {
  const auto m = DomainMask::l_shape(6, 0.5);
  std::stringstream ss;
  write_mask(m, ss);
  const auto back = parse_mask(ss, m.origin());
  EXPECT_EQ(back, m);
}

TEST(MaskIO, RejectsMalformedInput) {
  std::stringstream bad_row("5 1 0.1\n0110\n");
  EXPECT_THROW(parse_mask(bad_row), IOError);
  std::stringstream bad_char("3 1 0.1\n0x0\n");
  EXPECT_THROW(parse_mask(bad_char), IOError);
  std::stringstream frame("3 1 0.1\n110\n");
  EXPECT_THROW(parse_mask(frame), IOError);
  std::stringstream one_d("5 1 0.1\n01110\n");
  EXPECT_EQ(parse_mask(one_d).count(), 3u);
}
