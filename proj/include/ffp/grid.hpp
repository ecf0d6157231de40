#pragma once

// Tensor grids in one or two dimensions, finite-difference operators with a linear-extrapolation
// boundary closure, fourth-order stencils for residual checks, and multilinear interpolation.

#include "ffp/core.hpp"
#include "ffp/market_model.hpp"

#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace ffp {

using SpMat = Eigen::SparseMatrix<double>;

struct Grid {
  int dim = 1;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<int> nodes;

  static Grid uniform_1d(double lo, double hi, int n) { return Grid{1, {lo}, {hi}, {n}}; }
  static Grid uniform_2d(double lo0, double hi0, int n0, double lo1, double hi1, int n1) {
    return Grid{2, {lo0, lo1}, {hi0, hi1}, {n0, n1}};
  }

  void validate() const {
    if (dim != 1 && dim != 2) throw ValidationError("grid: only dimensions 1 and 2 are supported");
    if (static_cast<int>(lower.size()) != dim || static_cast<int>(upper.size()) != dim ||
        static_cast<int>(nodes.size()) != dim) {
      throw ValidationError("grid: bounds/nodes do not match dimension");
    }
    for (int a = 0; a < dim; ++a) {
      if (nodes[a] < 16) throw ValidationError("grid: need at least 16 nodes per axis");
      if (!(upper[a] > lower[a])) throw ValidationError("grid: upper bound must exceed lower bound");
    }
  }

  double h(int axis) const { return (upper[axis] - lower[axis]) / (nodes[axis] - 1); }
  double min_h() const {
    double m = h(0);
    for (int a = 1; a < dim; ++a) m = std::min(m, h(a));
    return m;
  }

  std::size_t size() const {
    std::size_t s = 1;
    for (int n : nodes) s *= static_cast<std::size_t>(n);
    return s;
  }

  std::array<int, 2> multi_index(std::size_t idx) const {
    if (dim == 1) return {static_cast<int>(idx), 0};
    return {static_cast<int>(idx % nodes[0]), static_cast<int>(idx / nodes[0])};
  }

  std::size_t flat(int i0, int i1 = 0) const {
    return static_cast<std::size_t>(i0) + static_cast<std::size_t>(nodes[0]) * static_cast<std::size_t>(i1);
  }

  double coord(int axis, int i) const { return lower[axis] + h(axis) * i; }

  Vec point(std::size_t idx) const {
    const auto mi = multi_index(idx);
    Vec p(dim);
    for (int a = 0; a < dim; ++a) p[a] = coord(a, mi[a]);
    return p;
  }

  std::vector<Vec> points() const {
    std::vector<Vec> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(point(i));
    return out;
  }

  /// Distance of node idx (in index units) from the nearest boundary.
  int boundary_distance(std::size_t idx) const {
    const auto mi = multi_index(idx);
    int d = std::min(mi[0], nodes[0] - 1 - mi[0]);
    if (dim == 2) d = std::min(d, std::min(mi[1], nodes[1] - 1 - mi[1]));
    return d;
  }

  bool contains(const Vec& v, double tol = 1e-12) const {
    for (int a = 0; a < dim; ++a) {
      const double slack = tol * (upper[a] - lower[a]);
      if (v[a] < lower[a] - slack || v[a] > upper[a] + slack) return false;
    }
    return true;
  }
};

/// Each point must sit at least three invariant-law standard deviations inside the grid. The
/// standard deviation is bounded by sqrt(tr(kappa kappa^T) / (2 C_eta)).
inline void check_grid_margin(const Grid& grid, const FactorModel& model, const std::vector<Vec>& points) {
  const double sd = std::sqrt(model.diffusion().trace() / (2.0 * model.dissipativity));
  for (const auto& p : points) {
    for (int a = 0; a < grid.dim; ++a) {
      if (p[a] - grid.lower[a] < 3.0 * sd || grid.upper[a] - p[a] < 3.0 * sd) {
        throw ValidationError("grid: point " + detail::format_vec(p) +
                              " is closer than 3 invariant standard deviations to the boundary");
      }
    }
  }
}

namespace detail {

struct AxisTap {
  int index;
  double weight;
};

// Ghost nodes are linear extrapolations: y_{-1} = 2 y_0 - y_1 and y_n = 2 y_{n-1} - y_{n-2}.
inline int expand_axis(int i, int n, std::array<AxisTap, 2>& out) {
  if (i < 0) {
    out[0] = {0, 2.0};
    out[1] = {1, -1.0};
    return 2;
  }
  if (i >= n) {
    out[0] = {n - 1, 2.0};
    out[1] = {n - 2, -1.0};
    return 2;
  }
  out[0] = {i, 1.0};
  return 1;
}

inline void add_tap(const Grid& g, std::vector<Eigen::Triplet<double>>& trip, std::size_t row, int i0, int i1,
                    double coeff) {
  std::array<AxisTap, 2> t0{}, t1{};
  const int n0 = expand_axis(i0, g.nodes[0], t0);
  if (g.dim == 1) {
    for (int a = 0; a < n0; ++a) {
      trip.emplace_back(static_cast<int>(row), static_cast<int>(g.flat(t0[a].index)), coeff * t0[a].weight);
    }
    return;
  }
  const int n1 = expand_axis(i1, g.nodes[1], t1);
  for (int a = 0; a < n0; ++a) {
    for (int b = 0; b < n1; ++b) {
      trip.emplace_back(static_cast<int>(row), static_cast<int>(g.flat(t0[a].index, t1[b].index)),
                        coeff * t0[a].weight * t1[b].weight);
    }
  }
}

}  // namespace detail

/// Second-order finite-difference operators on a grid.
class GridOperators {
 public:
  explicit GridOperators(Grid grid) : grid_(std::move(grid)) {
    grid_.validate();
    const auto n = static_cast<int>(grid_.size());
    for (int a = 0; a < grid_.dim; ++a) {
      std::vector<Eigen::Triplet<double>> d1, d2;
      const double h = grid_.h(a);
      for (std::size_t p = 0; p < grid_.size(); ++p) {
        const auto mi = grid_.multi_index(p);
        std::array<int, 2> plus = mi, minus = mi;
        plus[a] += 1;
        minus[a] -= 1;
        detail::add_tap(grid_, d1, p, plus[0], plus[1], 0.5 / h);
        detail::add_tap(grid_, d1, p, minus[0], minus[1], -0.5 / h);
        detail::add_tap(grid_, d2, p, plus[0], plus[1], 1.0 / (h * h));
        detail::add_tap(grid_, d2, p, mi[0], mi[1], -2.0 / (h * h));
        detail::add_tap(grid_, d2, p, minus[0], minus[1], 1.0 / (h * h));
      }
      SpMat m1(n, n), m2(n, n);
      m1.setFromTriplets(d1.begin(), d1.end());
      m2.setFromTriplets(d2.begin(), d2.end());
      m2.prune(1e-300, 0);
      first_.push_back(std::move(m1));
      second_.push_back(std::move(m2));
    }
  }

  const Grid& grid() const { return grid_; }
  const SpMat& first(int axis) const { return first_[static_cast<std::size_t>(axis)]; }
  const SpMat& second(int axis) const { return second_[static_cast<std::size_t>(axis)]; }

  /// Discrete generator L = 1/2 tr(a D^2) + eta . D with a = kappa kappa^T.
  SpMat generator(const FactorModel& model) const {
    if (model.dim != grid_.dim) throw DimensionError("generator: model and grid dimensions differ");
    const Mat a = model.diffusion();
    const auto n = static_cast<int>(grid_.size());
    SpMat L(n, n);
    for (int i = 0; i < grid_.dim; ++i) {
      L += 0.5 * a(i, i) * second(i);
      for (int j = i + 1; j < grid_.dim; ++j) {
        if (a(i, j) != 0.0) L += a(i, j) * SpMat(first(i) * first(j));
      }
    }
    for (int i = 0; i < grid_.dim; ++i) {
      Vec eta_i(n);
      for (std::size_t p = 0; p < grid_.size(); ++p) eta_i[static_cast<Eigen::Index>(p)] = model.drift(grid_.point(p))[i];
      L += SpMat(eta_i.asDiagonal() * first(i));
    }
    L.makeCompressed();
    return L;
  }

  /// Gradient at every node: N x dim.
  Mat gradient(const Vec& y) const {
    Mat g(static_cast<Eigen::Index>(grid_.size()), grid_.dim);
    for (int a = 0; a < grid_.dim; ++a) g.col(a) = first(a) * y;
    return g;
  }

 private:
  Grid grid_;
  std::vector<SpMat> first_;
  std::vector<SpMat> second_;
};

/// Fourth-order gradient and Hessian at a node at least two cells away from every boundary.
struct LocalDerivatives {
  Vec gradient;
  Mat hessian;
};

inline LocalDerivatives fourth_order_derivatives(const Grid& g, const Vec& y, std::size_t p) {
  const auto mi = g.multi_index(p);
  auto at = [&](int a, int b) { return y[static_cast<Eigen::Index>(g.flat(a, b))]; };
  constexpr std::array<double, 5> c1{1.0 / 12, -8.0 / 12, 0.0, 8.0 / 12, -1.0 / 12};
  constexpr std::array<double, 5> c2{-1.0 / 12, 16.0 / 12, -30.0 / 12, 16.0 / 12, -1.0 / 12};
  LocalDerivatives out{Vec::Zero(g.dim), Mat::Zero(g.dim, g.dim)};
  for (int a = 0; a < g.dim; ++a) {
    const double h = g.h(a);
    for (int k = -2; k <= 2; ++k) {
      std::array<int, 2> q = mi;
      q[a] += k;
      const double val = at(q[0], q[1]);
      out.gradient[a] += c1[static_cast<std::size_t>(k + 2)] * val / h;
      out.hessian(a, a) += c2[static_cast<std::size_t>(k + 2)] * val / (h * h);
    }
  }
  if (g.dim == 2) {
    double cross = 0.0;
    for (int k = -2; k <= 2; ++k) {
      for (int l = -2; l <= 2; ++l) {
        const double w = c1[static_cast<std::size_t>(k + 2)] * c1[static_cast<std::size_t>(l + 2)];
        if (w != 0.0) cross += w * at(mi[0] + k, mi[1] + l);
      }
    }
    cross /= g.h(0) * g.h(1);
    out.hessian(0, 1) = out.hessian(1, 0) = cross;
  }
  return out;
}

/// Multilinear interpolation weights for a point inside the grid hull.
struct InterpStencil {
  std::array<std::size_t, 4> index{};
  std::array<double, 4> weight{};
  int count = 0;
};

inline InterpStencil locate(const Grid& g, const Vec& v) {
  if (v.size() != g.dim) throw DimensionError("interpolation: point dimension does not match grid");
  if (!g.contains(v)) {
    throw ExtrapolationError("point " + detail::format_vec(v) + " lies outside the grid hull");
  }
  std::array<int, 2> cell{0, 0};
  std::array<double, 2> frac{0.0, 0.0};
  for (int a = 0; a < g.dim; ++a) {
    const double s = (v[a] - g.lower[a]) / g.h(a);
    int i = static_cast<int>(std::floor(s));
    i = std::clamp(i, 0, g.nodes[a] - 2);
    cell[static_cast<std::size_t>(a)] = i;
    frac[static_cast<std::size_t>(a)] = std::clamp(s - i, 0.0, 1.0);
  }
  InterpStencil st;
  if (g.dim == 1) {
    st.index = {g.flat(cell[0]), g.flat(cell[0] + 1), 0, 0};
    st.weight = {1.0 - frac[0], frac[0], 0.0, 0.0};
    st.count = 2;
  } else {
    const double fx = frac[0], fy = frac[1];
    st.index = {g.flat(cell[0], cell[1]), g.flat(cell[0] + 1, cell[1]), g.flat(cell[0], cell[1] + 1),
                g.flat(cell[0] + 1, cell[1] + 1)};
    st.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    st.count = 4;
  }
  return st;
}

inline double interpolate(const InterpStencil& st, const Vec& values) {
  double s = 0.0;
  for (int k = 0; k < st.count; ++k) s += st.weight[k] * values[static_cast<Eigen::Index>(st.index[k])];
  return s;
}

/// Interpolates each column of an N x m nodal matrix.
inline Vec interpolate_rows(const InterpStencil& st, const Mat& values) {
  Vec out = Vec::Zero(values.cols());
  for (int k = 0; k < st.count; ++k) out += st.weight[k] * values.row(static_cast<Eigen::Index>(st.index[k])).transpose();
  return out;
}

inline double interpolate(const Grid& g, const Vec& values, const Vec& v) { return interpolate(locate(g, v), values); }

}  // namespace ffp
