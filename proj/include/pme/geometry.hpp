#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pme/errors.hpp"

namespace pme {

/// Spatial point. One-dimensional grids leave `y` at zero.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double norm_sq(const Point& p) { return p.x * p.x + p.y * p.y; }

/// Indicator of the base set on a uniform cell-centred grid.
///
/// The grid has `nx * ny` cells of width `h`; `ny == 1` means a 1D domain.
/// Cell (i, j) has centre `origin + ((i + 1/2) h, (j + 1/2) h)`. The outermost
/// frame of the bounding box must be outside, so every inside cell has all of
/// its face neighbours inside the bounding box. Connectivity is not required.
class DomainMask {
 public:
  DomainMask() = default;

  DomainMask(int nx, int ny, double h, std::vector<std::uint8_t> inside, Point origin = {})
      : nx_(nx), ny_(ny), h_(h), origin_(origin), inside_(std::move(inside)) {
    if (nx_ < 1 || ny_ < 1) throw InvalidArgument("mask extents must be positive");
    if (!(h_ > 0.0)) throw InvalidArgument("mask cell width must be positive");
    if (inside_.size() != size()) throw InvalidArgument("mask data size does not match extents");
    for (std::size_t c = 0; c < size(); ++c) {
      if (inside_[c] && on_frame(c)) {
        throw InvalidArgument("mask cells on the bounding-box frame must be outside");
      }
    }
  }

  /// Axis-aligned box of `nx_in * ny_in` inside cells whose lower corner sits
  /// at `lower`, surrounded by a one-cell outside frame. Pass `ny_in == 0`
  /// for a 1D interval.
  static DomainMask box(int nx_in, int ny_in, double h, Point lower = {}) {
    const bool one_d = ny_in == 0;
    const int nx = nx_in + 2;
    const int ny = one_d ? 1 : ny_in + 2;
    std::vector<std::uint8_t> in(static_cast<std::size_t>(nx) * ny, 0);
    for (int j = 0; j < ny; ++j) {
      for (int i = 1; i <= nx_in; ++i) {
        if (!one_d && (j == 0 || j == ny - 1)) continue;
        in[static_cast<std::size_t>(j) * nx + i] = 1;
      }
    }
    Point origin{lower.x - h, one_d ? -0.5 * h : lower.y - h};
    return DomainMask(nx, ny, h, std::move(in), origin);
  }

  /// L-shaped base: an `n_in * n_in` square with its upper-right quadrant
  /// (cells with i, j >= n_in / 2) removed. The re-entrant corner is at
  /// `lower + (n_in / 2) * h` in both coordinates.
  static DomainMask l_shape(int n_in, double h, Point lower = {}) {
    if (n_in < 2 || n_in % 2 != 0) throw InvalidArgument("L-shape needs an even side length >= 2");
    DomainMask m = box(n_in, n_in, h, lower);
    const int half = n_in / 2;
    for (int j = half; j < n_in; ++j) {
      for (int i = half; i < n_in; ++i) m.inside_[m.index(i + 1, j + 1)] = 0;
    }
    return m;
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double h() const { return h_; }
  Point origin() const { return origin_; }
  int dim() const { return ny_ == 1 ? 1 : 2; }
  std::size_t size() const { return static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_); }
  double cell_volume() const { return dim() == 1 ? h_ : h_ * h_; }

  std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx_ + i; }
  int ix(std::size_t c) const { return static_cast<int>(c % static_cast<std::size_t>(nx_)); }
  int iy(std::size_t c) const { return static_cast<int>(c / static_cast<std::size_t>(nx_)); }

  bool inside(std::size_t c) const { return inside_[c] != 0; }
  bool inside(int i, int j) const {
    if (i < 0 || j < 0 || i >= nx_ || j >= ny_) return false;
    return inside_[index(i, j)] != 0;
  }
  const std::vector<std::uint8_t>& flags() const { return inside_; }

  Point center(std::size_t c) const {
    return {origin_.x + (ix(c) + 0.5) * h_, dim() == 1 ? 0.0 : origin_.y + (iy(c) + 0.5) * h_};
  }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(inside_.begin(), inside_.end(), std::uint8_t{1}));
  }
  bool empty() const { return count() == 0; }
  double measure() const { return static_cast<double>(count()) * cell_volume(); }

  /// Calls `f(neighbour_index)` for each face neighbour inside the bounding box.
  template <class F>
  void for_each_neighbor(std::size_t c, F&& f) const {
    const int i = ix(c);
    const int j = iy(c);
    if (i > 0) f(c - 1);
    if (i + 1 < nx_) f(c + 1);
    if (dim() == 2) {
      if (j > 0) f(c - static_cast<std::size_t>(nx_));
      if (j + 1 < ny_) f(c + static_cast<std::size_t>(nx_));
    }
  }

  /// Number of face neighbours a cell has in the stencil (2 in 1D, 4 in 2D).
  int stencil_arms() const { return 2 * dim(); }

  bool same_shape(const DomainMask& o) const {
    return nx_ == o.nx_ && ny_ == o.ny_ && h_ == o.h_ && origin_.x == o.origin_.x &&
           origin_.y == o.origin_.y;
  }

  bool subset_of(const DomainMask& o) const {
    if (!same_shape(o)) return false;
    for (std::size_t c = 0; c < size(); ++c) {
      if (inside_[c] && !o.inside_[c]) return false;
    }
    return true;
  }

  bool operator==(const DomainMask& o) const { return same_shape(o) && inside_ == o.inside_; }

  DomainMask with_flags(std::vector<std::uint8_t> flags) const {
    return DomainMask(nx_, ny_, h_, std::move(flags), origin_);
  }

 private:
  bool on_frame(std::size_t c) const {
    const int i = ix(c);
    const int j = iy(c);
    if (i == 0 || i == nx_ - 1) return true;
    return dim() == 2 && (j == 0 || j == ny_ - 1);
  }

  int nx_ = 0;
  int ny_ = 0;
  double h_ = 1.0;
  Point origin_{};
  std::vector<std::uint8_t> inside_;
};

/// Inside cells with at least one face neighbour outside: the discrete
/// lateral boundary of the base set.
inline std::vector<std::uint8_t> boundary_layer(const DomainMask& mask) {
  std::vector<std::uint8_t> layer(mask.size(), 0);
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (!mask.inside(c)) continue;
    mask.for_each_neighbor(c, [&](std::size_t n) {
      if (!mask.inside(n)) layer[c] = 1;
    });
  }
  return layer;
}

/// Removes every cell within `layers` cells (Chebyshev distance) of an
/// outside cell.
inline DomainMask erode(const DomainMask& mask, int layers) {
  if (layers < 0) throw InvalidArgument("erosion depth must be nonnegative");
  std::vector<std::uint8_t> cur = mask.flags();
  const int nx = mask.nx();
  const int ny = mask.ny();
  const int dj = mask.dim() == 2 ? 1 : 0;
  for (int step = 0; step < layers; ++step) {
    std::vector<std::uint8_t> next(cur.size(), 0);
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const std::size_t c = mask.index(i, j);
        if (!cur[c]) continue;
        bool keep = true;
        for (int b = -dj; b <= dj && keep; ++b) {
          for (int a = -1; a <= 1 && keep; ++a) {
            const int ii = i + a;
            const int jj = j + b;
            if (ii < 0 || jj < 0 || ii >= nx || jj >= ny || !cur[mask.index(ii, jj)]) keep = false;
          }
        }
        next[c] = keep ? 1 : 0;
      }
    }
    cur = std::move(next);
  }
  return mask.with_flags(std::move(cur));
}

/// Uniform cell grid crossed with `nt` implicit time steps on (0, T).
/// Slices are indexed 0..nt with slice 0 at t = 0.
class SpaceTimeGrid {
 public:
  SpaceTimeGrid(DomainMask mask, double T, int nt) : mask_(std::move(mask)), T_(T), nt_(nt) {
    if (!(T_ > 0.0)) throw InvalidArgument("final time T must be positive");
    if (nt_ < 1) throw InvalidArgument("at least one time step is required");
    if (mask_.empty()) throw InvalidArgument("base domain is empty");
  }

  const DomainMask& mask() const { return mask_; }
  double T() const { return T_; }
  int nt() const { return nt_; }
  int slices() const { return nt_ + 1; }
  double dt() const { return T_ / nt_; }
  double time(int k) const { return T_ * static_cast<double>(k) / nt_; }
  /// |Omega_T| as seen by the cell quadrature.
  double measure() const { return mask_.measure() * T_; }

  bool operator==(const SpaceTimeGrid& o) const {
    return mask_ == o.mask_ && T_ == o.T_ && nt_ == o.nt_;
  }

 private:
  DomainMask mask_;
  double T_;
  int nt_;
};

using GridPtr = std::shared_ptr<const SpaceTimeGrid>;

inline GridPtr make_grid(DomainMask mask, double T, int nt) {
  return std::make_shared<const SpaceTimeGrid>(std::move(mask), T, nt);
}

/// Space-time subcylinder U x (t1, t2) of a grid, in slice indices.
struct Cylinder {
  GridPtr grid;
  DomainMask submask;
  int t1 = 0;
  int t2 = 0;
  bool regular = true;

  Cylinder(GridPtr g, DomainMask sub, int first, int last, bool is_regular = true)
      : grid(std::move(g)), submask(std::move(sub)), t1(first), t2(last), regular(is_regular) {
    if (!grid) throw InvalidArgument("cylinder needs a grid");
    if (!submask.subset_of(grid->mask())) throw InvalidArgument("cylinder base is not a subset of the domain");
    if (submask.empty()) throw EmptyCylinder("cylinder base is empty");
    if (t1 < 0 || t2 > grid->nt() || t1 >= t2) throw InvalidArgument("cylinder needs 0 <= t1 < t2 <= nt");
  }

  /// Cylinder covering the whole of Omega_T.
  static Cylinder full(const GridPtr& g) { return Cylinder(g, g->mask(), 0, g->nt(), true); }
};

struct ParabolicBoundary {
  std::vector<std::size_t> initial_cells;                 // slice t1
  std::vector<std::pair<std::size_t, int>> lateral_cells;  // (cell, slice), slices t1..t2
};

/// Initial slice of the base plus the lateral boundary layer at every slice
/// in [t1, t2]. Interior cells of the top slice are never included.
inline ParabolicBoundary parabolic_boundary(const Cylinder& c) {
  ParabolicBoundary pb;
  const auto layer = boundary_layer(c.submask);
  for (std::size_t cell = 0; cell < c.submask.size(); ++cell) {
    if (c.submask.inside(cell)) pb.initial_cells.push_back(cell);
  }
  for (int k = c.t1; k <= c.t2; ++k) {
    for (std::size_t cell = 0; cell < c.submask.size(); ++cell) {
      if (layer[cell]) pb.lateral_cells.emplace_back(cell, k);
    }
  }
  return pb;
}

/// Exhaustion schedule for Q_j = U_j x (t_j, T).
///
/// U_j is the base eroded by max(1, ceil(max_erosion / j)) layers. With the
/// harmonic time rule t_j = ceil(nt / (j + 1)); the geometric rule uses
/// ceil(nt / 2^j) and is the default. Both are clamped to >= 1 and
/// nonincreasing in j.
struct ExhaustionSchedule {
  enum class TimeRule { harmonic, geometric };
  int max_erosion = 4;
  TimeRule time_rule = TimeRule::geometric;

  int erosion(int j) const { return std::max(1, (max_erosion + j - 1) / j); }

  int start_slice(int nt, int j) const {
    long long t = 0;
    if (time_rule == TimeRule::harmonic) {
      t = (static_cast<long long>(nt) + j) / (j + 1);
    } else {
      const long long denom = j >= 62 ? (1LL << 62) : (1LL << j);
      t = (static_cast<long long>(nt) + denom - 1) / denom;
    }
    return static_cast<int>(std::max<long long>(1, std::min<long long>(t, nt - 1)));
  }

  std::string describe() const {
    std::ostringstream os;
    os << "erosion=max(1,ceil(" << max_erosion << "/j)); t_j="
       << (time_rule == TimeRule::harmonic ? "ceil(nt/(j+1))" : "ceil(nt/2^j)") << " clamped to [1,nt-1]";
    return os.str();
  }
};

inline Cylinder exhaustion(const GridPtr& grid, int j, const ExhaustionSchedule& schedule = {}) {
  if (j < 1) throw InvalidArgument("exhaustion index must be >= 1");
  if (grid->nt() < 2) throw EmptyCylinder("exhaustion needs at least two time steps");
  DomainMask base = erode(grid->mask(), schedule.erosion(j));
  if (base.empty()) {
    throw EmptyCylinder("eroding " + std::to_string(schedule.erosion(j)) +
                        " layers empties the base; grid too coarse for j=" + std::to_string(j));
  }
  return Cylinder(grid, std::move(base), schedule.start_slice(grid->nt(), j), grid->nt(), true);
}

// Plain-text masks: "nx ny h" on the first line, then ny rows of nx '0'/'1'
// characters, row r holding cells with j = r.

inline DomainMask parse_mask(std::istream& in, Point origin = {}) {
  int nx = 0;
  int ny = 0;
  double h = 0.0;
  if (!(in >> nx >> ny >> h)) throw IOError("mask header must be 'nx ny h'");
  if (nx < 1 || ny < 1) throw IOError("mask extents must be positive");
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(nx) * ny, 0);
  for (int j = 0; j < ny; ++j) {
    std::string row;
    if (!(in >> row) || static_cast<int>(row.size()) != nx) {
      throw IOError("mask row " + std::to_string(j) + " must have " + std::to_string(nx) + " characters");
    }
    for (int i = 0; i < nx; ++i) {
      if (row[i] != '0' && row[i] != '1') throw IOError("mask rows may only contain '0' and '1'");
      flags[static_cast<std::size_t>(j) * nx + i] = row[i] == '1' ? 1 : 0;
    }
  }
  try {
    return DomainMask(nx, ny, h, std::move(flags), origin);
  } catch (const InvalidArgument& e) {
    throw IOError(e.what());
  }
}

inline DomainMask load_mask(const std::string& path, Point origin = {}) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open mask file " + path);
  return parse_mask(in, origin);
}

inline void write_mask(const DomainMask& mask, std::ostream& out) {
  out << mask.nx() << ' ' << mask.ny() << ' ' << mask.h() << '\n';
  for (int j = 0; j < mask.ny(); ++j) {
    for (int i = 0; i < mask.nx(); ++i) out << (mask.inside(i, j) ? '1' : '0');
    out << '\n';
  }
}

}  // namespace pme
