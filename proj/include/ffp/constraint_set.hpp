#pragma once

// Closed convex portfolio constraint sets with closed-form Euclidean projections.

#include "ffp/core.hpp"

#include <algorithm>
#include <limits>
#include <string>
#include <variant>
#include <vector>

namespace ffp {

struct FullSpace {};

/// Coordinate box; infinite bounds are allowed.
struct Box {
  Vec lower;
  Vec upper;
};

struct Ball {
  Vec center;
  double radius = 1.0;
};

/// Coordinates with free[i] == false are pinned to zero.
struct CoordinateSubspace {
  std::vector<bool> free;
};

class ConvexSet {
 public:
  using Kind = std::variant<FullSpace, Box, Ball, CoordinateSubspace>;

  static ConvexSet full_space(int dim) { return ConvexSet(dim, FullSpace{}); }

  static ConvexSet box(Vec lower, Vec upper) {
    if (lower.size() != upper.size()) throw DimensionError("box: bound sizes differ");
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
      if (!(lower[i] <= upper[i])) throw ValidationError("box: lower bound exceeds upper bound");
    }
    const int dim = static_cast<int>(lower.size());
    return ConvexSet(dim, Box{std::move(lower), std::move(upper)});
  }

  static ConvexSet ball(Vec center, double radius) {
    if (!(radius >= 0.0)) throw ValidationError("ball: radius must be nonnegative");
    const int dim = static_cast<int>(center.size());
    return ConvexSet(dim, Ball{std::move(center), radius});
  }

  static ConvexSet subspace(std::vector<bool> free) {
    const int dim = static_cast<int>(free.size());
    return ConvexSet(dim, CoordinateSubspace{std::move(free)});
  }

  int dim() const { return dim_; }
  const Kind& kind() const { return kind_; }
  bool is_full_space() const { return std::holds_alternative<FullSpace>(kind_); }

  std::string kind_name() const {
    return std::visit(
        [](const auto& k) -> std::string {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, FullSpace>) return "full";
          else if constexpr (std::is_same_v<K, Box>) return "box";
          else if constexpr (std::is_same_v<K, Ball>) return "ball";
          else return "subspace";
        },
        kind_);
  }

  Vec project(const Vec& x) const {
    detail::require_dim(x, dim_, "project");
    return std::visit(
        [&](const auto& k) -> Vec {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, FullSpace>) {
            return x;
          } else if constexpr (std::is_same_v<K, Box>) {
            return x.cwiseMax(k.lower).cwiseMin(k.upper);
          } else if constexpr (std::is_same_v<K, Ball>) {
            const Vec d = x - k.center;
            const double r = d.norm();
            if (r <= k.radius) return x;
            return k.center + d * (k.radius / r);
          } else {
            Vec p = x;
            for (int i = 0; i < dim_; ++i) {
              if (!k.free[static_cast<std::size_t>(i)]) p[i] = 0.0;
            }
            return p;
          }
        },
        kind_);
  }

  double dist_sq(const Vec& x) const { return (x - project(x)).squaredNorm(); }

  bool contains(const Vec& x, double tol = 1e-12) const { return dist_sq(x) <= tol * tol; }

 private:
  ConvexSet(int dim, Kind kind) : dim_(dim), kind_(std::move(kind)) {}

  int dim_;
  Kind kind_;
};

inline Vec project(const ConvexSet& set, const Vec& x) { return set.project(x); }
inline double dist_sq(const ConvexSet& set, const Vec& x) { return set.dist_sq(x); }

}  // namespace ffp
