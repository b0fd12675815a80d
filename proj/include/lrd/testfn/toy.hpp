#pragma once

// Two-dimensional nonconvex objective used to visualize optimizer paths:
//
//   f(x, y) = (1.5 - x^2 + x y)^2 + (2.25 - x^2 + x y^2)^2 + (2.625 - x^2 + x y^3)^2
//
// Note the x^2 terms: this is not the classical Beale function. On the box
// [-4, 0] x [-2, 3] its minimizer sits near (-0.749, 1.416); a second basin
// near (-1.50, -0.33) traps plain gradient methods started in the lower half.

#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lrd/core/error.hpp"
#include "lrd/core/io.hpp"

namespace lrd::testfn {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Gradient {
  double dx = 0.0;
  double dy = 0.0;
};

struct Domain {
  double x_min = -4.0;
  double x_max = 0.0;
  double y_min = -2.0;
  double y_max = 3.0;

  bool contains(Point p) const { return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max; }
};

/// Box, reference optimum and success radius of the toy problem. The optimum
/// is stored to the two decimals it is usually quoted with.
struct ToyProblem {
  static constexpr Domain domain{};
  static constexpr Point reference_optimum{-0.74, 1.40};
  static constexpr double success_radius = 0.05;

  static bool reached(Point p, double radius = success_radius) {
    return distance(p, reference_optimum) <= radius;
  }
};

inline double toy_value(Point p) {
  const double x = p.x, y = p.y;
  const double r1 = 1.5 - x * x + x * y;
  const double r2 = 2.25 - x * x + x * y * y;
  const double r3 = 2.625 - x * x + x * y * y * y;
  return r1 * r1 + r2 * r2 + r3 * r3;
}

inline Gradient toy_gradient(Point p) {
  const double x = p.x, y = p.y;
  const double y2 = y * y, y3 = y2 * y;
  const double r1 = 1.5 - x * x + x * y;
  const double r2 = 2.25 - x * x + x * y2;
  const double r3 = 2.625 - x * x + x * y3;
  Gradient g;
  g.dx = 2.0 * r1 * (y - 2.0 * x) + 2.0 * r2 * (y2 - 2.0 * x) + 2.0 * r3 * (y3 - 2.0 * x);
  g.dy = 2.0 * r1 * x + 2.0 * r2 * (2.0 * x * y) + 2.0 * r3 * (3.0 * x * y2);
  return g;
}

struct GridReport {
  Domain domain;
  std::size_t nx = 0;
  std::size_t ny = 0;
  double spacing_x = 0.0;
  double spacing_y = 0.0;
  std::size_t index_x = 0;
  std::size_t index_y = 0;
  Point argmin;
  double value = 0.0;
  double distance_to_reference = 0.0;

  bool on_boundary() const {
    return index_x == 0 || index_y == 0 || index_x + 1 == nx || index_y + 1 == ny;
  }
};

/// Exhaustive scan of an nx-by-ny lattice including the box edges. Ties keep
/// the lowest (x index, then y index).
inline GridReport scan_grid(const Domain& domain, std::size_t nx, std::size_t ny) {
  if (nx < 2 || ny < 2) throw DomainError("scan_grid: need at least 2 points per axis");
  if (!(domain.x_max > domain.x_min) || !(domain.y_max > domain.y_min))
    throw DomainError("scan_grid: empty domain");
  GridReport r;
  r.domain = domain;
  r.nx = nx;
  r.ny = ny;
  r.spacing_x = (domain.x_max - domain.x_min) / static_cast<double>(nx - 1);
  r.spacing_y = (domain.y_max - domain.y_min) / static_cast<double>(ny - 1);
  r.value = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < nx; ++i) {
    const double x = domain.x_min + static_cast<double>(i) * r.spacing_x;
    for (std::size_t j = 0; j < ny; ++j) {
      const double y = domain.y_min + static_cast<double>(j) * r.spacing_y;
      const double f = toy_value({x, y});
      if (f < r.value) {
        r.value = f;
        r.index_x = i;
        r.index_y = j;
        r.argmin = {x, y};
      }
    }
  }
  r.distance_to_reference = distance(r.argmin, ToyProblem::reference_optimum);
  return r;
}

/// 2000 x 2000 scan of the standard box.
inline GridReport verify_reference_optimum(std::size_t n = 2000) {
  return scan_grid(ToyProblem::domain, n, n);
}

class Trajectory {
 public:
  struct Row {
    std::size_t step = 0;
    Point point;
    double value = 0.0;
  };

  /// Steps must arrive in strictly increasing order starting at 0.
  void record(std::size_t step, Point p) {
    if (rows_.empty() ? step != 0 : step <= rows_.back().step)
      throw DomainError("trajectory steps must increase strictly from 0");
    rows_.push_back({step, p, toy_value(p)});
  }

  const std::vector<Row>& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }
  const Row& back() const { return rows_.back(); }

  void write_csv(std::ostream& out) const {
    out << "step,x,y,f\n";
    for (const auto& r : rows_) {
      out << r.step << ',' << format_number(r.point.x) << ',' << format_number(r.point.y) << ','
          << format_number(r.value) << '\n';
    }
  }

  std::string to_csv() const {
    std::ostringstream ss;
    write_csv(ss);
    return ss.str();
  }

 private:
  std::vector<Row> rows_;
};

}  // namespace lrd::testfn
