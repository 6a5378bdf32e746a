#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "pme/geometry.hpp"

namespace pme {

using SpaceTimeFn = std::function<double(const Point&, double)>;

/// Sampled function u(cell, slice) on every cell of the bounding box and
/// every time slice. Only inside cells carry meaning; solvers keep them
/// nonnegative.
class ScalarField {
 public:
  explicit ScalarField(GridPtr grid, double fill = 0.0)
      : grid_(std::move(grid)), values_(grid_->mask().size() * static_cast<std::size_t>(grid_->slices()), fill) {}

  const SpaceTimeGrid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  const DomainMask& mask() const { return grid_->mask(); }
  std::size_t cells() const { return grid_->mask().size(); }

  double& operator()(std::size_t cell, int slice) { return values_[offset(cell, slice)]; }
  double operator()(std::size_t cell, int slice) const { return values_[offset(cell, slice)]; }

  std::span<double> slice(int k) { return {values_.data() + offset(0, k), cells()}; }
  std::span<const double> slice(int k) const { return {values_.data() + offset(0, k), cells()}; }

  std::vector<double>& data() { return values_; }
  const std::vector<double>& data() const { return values_; }

  /// Max over inside cells and all slices.
  double max_inside() const { return reduce_inside(-std::numeric_limits<double>::infinity(), [](double a, double b) { return std::max(a, b); }); }
  double min_inside() const { return reduce_inside(std::numeric_limits<double>::infinity(), [](double a, double b) { return std::min(a, b); }); }

  bool same_grid(const ScalarField& o) const { return grid_ == o.grid_ || *grid_ == *o.grid_; }

 private:
  std::size_t offset(std::size_t cell, int slice) const {
    return static_cast<std::size_t>(slice) * cells() + cell;
  }

  template <class Op>
  double reduce_inside(double init, Op op) const {
    const auto& m = grid_->mask();
    double acc = init;
    for (int k = 0; k < grid_->slices(); ++k) {
      for (std::size_t c = 0; c < m.size(); ++c) {
        if (m.inside(c)) acc = op(acc, (*this)(c, k));
      }
    }
    return acc;
  }

  GridPtr grid_;
  std::vector<double> values_;
};

/// Evaluates `fn` at every cell centre (inside or not) and every slice.
inline ScalarField sample(const GridPtr& grid, const SpaceTimeFn& fn) {
  ScalarField f(grid);
  const auto& m = grid->mask();
  for (int k = 0; k < grid->slices(); ++k) {
    const double t = grid->time(k);
    for (std::size_t c = 0; c < m.size(); ++c) f(c, k) = fn(m.center(c), t);
  }
  return f;
}

inline void require_same_grid(const ScalarField& a, const ScalarField& b, const char* where) {
  if (!a.same_grid(b)) throw MismatchedGrids(std::string(where) + ": fields live on different grids");
}

/// Pointwise min / max over two fields on the same grid.
inline ScalarField pointwise_min(const ScalarField& a, const ScalarField& b) {
  require_same_grid(a, b, "pointwise_min");
  ScalarField r = a;
  for (std::size_t i = 0; i < r.data().size(); ++i) r.data()[i] = std::min(a.data()[i], b.data()[i]);
  return r;
}

/// Max over inside cells and all slices of |a - b|.
inline double max_abs_diff(const ScalarField& a, const ScalarField& b) {
  require_same_grid(a, b, "max_abs_diff");
  const auto& m = a.mask();
  double d = 0.0;
  for (int k = 0; k < a.grid().slices(); ++k) {
    for (std::size_t c = 0; c < m.size(); ++c) {
      if (m.inside(c)) d = std::max(d, std::abs(a(c, k) - b(c, k)));
    }
  }
  return d;
}

// CSV: one row per inside cell and slice, "slice,i,j,value".
inline void write_csv(const ScalarField& f, std::ostream& out) {
  const auto& m = f.mask();
  out << "slice,i,j,value\n";
  out.precision(17);
  for (int k = 0; k < f.grid().slices(); ++k) {
    for (std::size_t c = 0; c < m.size(); ++c) {
      if (!m.inside(c)) continue;
      out << k << ',' << m.ix(c) << ',' << m.iy(c) << ',' << f(c, k) << '\n';
    }
  }
}

// Binary dump: int32 nx, ny, slices; float64 h, dt, m; then nx*ny*slices
// float64 values, slice-major then row-major (j outer, i inner). Host byte
// order.
inline void write_binary(const ScalarField& f, double m_exponent, std::ostream& out) {
  const auto& mask = f.mask();
  const std::int32_t ext[3] = {mask.nx(), mask.ny(), f.grid().slices()};
  const double hdr[3] = {mask.h(), f.grid().dt(), m_exponent};
  out.write(reinterpret_cast<const char*>(ext), sizeof(ext));
  out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  out.write(reinterpret_cast<const char*>(f.data().data()),
            static_cast<std::streamsize>(f.data().size() * sizeof(double)));
  if (!out) throw IOError("failed writing binary field dump");
}

struct BinaryDump {
  int nx = 0;
  int ny = 0;
  int slices = 0;
  double h = 0.0;
  double dt = 0.0;
  double m = 0.0;
  std::vector<double> values;
};

inline BinaryDump read_binary(std::istream& in) {
  BinaryDump d;
  std::int32_t ext[3] = {};
  double hdr[3] = {};
  in.read(reinterpret_cast<char*>(ext), sizeof(ext));
  in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  if (!in || ext[0] < 1 || ext[1] < 1 || ext[2] < 1) throw IOError("corrupt binary field header");
  d.nx = ext[0];
  d.ny = ext[1];
  d.slices = ext[2];
  d.h = hdr[0];
  d.dt = hdr[1];
  d.m = hdr[2];
  d.values.resize(static_cast<std::size_t>(d.nx) * d.ny * d.slices);
  in.read(reinterpret_cast<char*>(d.values.data()), static_cast<std::streamsize>(d.values.size() * sizeof(double)));
  if (!in) throw IOError("truncated binary field dump");
  return d;
}

}  // namespace pme
