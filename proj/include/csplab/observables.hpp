#pragma once

// Observables recorded along a run: epsilon-support radius, annulus
// approximations of sphere integrals, weighted sup norms and a sampled
// space-time Hoelder seminorm.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "csplab/errors.hpp"
#include "csplab/noise.hpp"

namespace csplab {

/// Largest |x| over cells with u(x) > eps; nullopt when u <= eps everywhere.
inline std::optional<double> support_radius(const Field& field, double eps) {
  if (!(eps > 0.0)) throw ValidationError("support_radius: eps must be positive");
  std::optional<double> r;
  for (std::size_t k = 0; k < field.values.size(); ++k) {
    if (field.values[k] > eps) {
      const double rk = field.grid.radius(k);
      if (!r || rk > *r) r = rk;
    }
  }
  return r;
}

inline double default_shell_width(const Grid& grid, double R) {
  return std::max(3.0 * grid.dx, R / 50.0);
}

/// Cells whose centre lies in R - w/2 <= |x| < R + w/2, each weighted by
/// dx^d / w so that the weighted sum approximates the integral over the
/// sphere of radius R.
struct ShellGeometry {
  double R = 0.0;
  double width = 0.0;
  std::vector<std::size_t> cells;
  std::vector<double> weights;

  static ShellGeometry make(const Grid& grid, double R, double width = 0.0) {
    if (!(R > 0.0)) throw GeometryError("shell: radius must be positive");
    ShellGeometry s;
    s.R = R;
    s.width = width > 0.0 ? width : default_shell_width(grid, R);
    const double lo = R - s.width / 2.0, hi = R + s.width / 2.0;
    const double w = grid.cell_volume() / s.width;
    for (std::size_t k = 0; k < grid.cells(); ++k) {
      const double r = grid.radius(k);
      if (r >= lo && r < hi) {
        s.cells.push_back(k);
        s.weights.push_back(w);
      }
    }
    return s;
  }
};

inline double shell_integral(const Field& field, const ShellGeometry& shell) {
  if (shell.cells.empty()) {
    throw GeometryError("shell_integral: no grid cell lies in the annulus at R = " +
                        std::to_string(shell.R));
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < shell.cells.size(); ++j) {
    acc += field.values[shell.cells[j]] * shell.weights[j];
  }
  return acc;
}

/// Psi_a(x) = 1 / cosh(a |x|).
inline double psi_weight(double a, double r) { return 1.0 / std::cosh(a * r); }

inline double weighted_sup(const Field& field, double a) {
  if (!(a > 0.0)) throw ValidationError("weighted_sup: a must be positive");
  double m = 0.0;
  for (std::size_t k = 0; k < field.values.size(); ++k) {
    m = std::max(m, field.values[k] * psi_weight(a, field.grid.radius(k)));
  }
  return m;
}

inline double total_mass(const Field& field) {
  double acc = 0.0;
  for (double v : field.values) acc += v;
  return acc * field.grid.cell_volume();
}

struct Snapshot {
  double time = 0.0;
  std::uint64_t step = 0;
  Field field;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<std::uint64_t> steps;
  /// Absolute thresholds and, per threshold, the support radius per record.
  std::vector<double> eps;
  std::vector<std::vector<std::optional<double>>> support_radius;
  std::vector<double> shell_radii;
  std::vector<std::vector<double>> shell_integrals;
  std::vector<double> weighted_a;
  std::vector<std::vector<double>> weighted_sup;
  std::vector<double> mass;
  std::vector<double> max_value;
  std::vector<Snapshot> snapshots;
  double clipped_mass = 0.0;
  double dt = 0.0;

  std::string config_hash;
  std::uint64_t replica = 0;
  std::uint64_t seed = 0;

  std::size_t eps_index(double e) const {
    for (std::size_t i = 0; i < eps.size(); ++i) {
      if (std::abs(eps[i] - e) <= 1e-12 * std::max(std::abs(e), std::abs(eps[i]))) return i;
    }
    throw ValidationError("trajectory: support radius not recorded at eps = " +
                          std::to_string(e));
  }
};

/// True iff the eps-support stayed within R_max at every recorded time.
inline bool csp_indicator(const Trajectory& traj, double eps, double R_max) {
  const auto& radii = traj.support_radius.at(traj.eps_index(eps));
  if (radii.size() != traj.times.size()) {
    throw UnusableTrajectoryError("csp_indicator: support radius missing at some times");
  }
  for (const auto& r : radii) {
    if (r && *r > R_max) return false;
  }
  return true;
}

struct HolderEstimate {
  double seminorm = 0.0;
  double sup = 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
};

/// Sampled estimate of the C^gamma norm of Psi_a u over the stored
/// snapshots: every nearest-neighbour pair in time and in each space
/// direction, plus `budget` uniformly drawn pairs.
inline HolderEstimate holder_seminorm(const Trajectory& traj, double gamma, double a,
                                      std::size_t budget = 100000,
                                      std::uint64_t seed = 0) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw ValidationError("holder_seminorm: gamma must lie in (0, 1)");
  }
  const auto& snaps = traj.snapshots;
  if (snaps.size() < 2) {
    throw UnusableTrajectoryError("holder_seminorm: need at least two snapshots");
  }
  const Grid& g = snaps.front().field.grid;
  const std::size_t ncell = g.cells();
  std::vector<double> psi(ncell);
  for (std::size_t k = 0; k < ncell; ++k) psi[k] = psi_weight(a, g.radius(k));
  auto val = [&](std::size_t s, std::size_t k) { return psi[k] * snaps[s].field.values[k]; };
  auto dist = [&](std::size_t s1, std::size_t k1, std::size_t s2, std::size_t k2) {
    const auto p = g.multi_index(k1), q = g.multi_index(k2);
    double dx2 = 0.0;
    for (int ax = 0; ax < g.dim; ++ax) {
      const double d = (p[ax] - q[ax]) * g.dx;
      dx2 += d * d;
    }
    return std::abs(snaps[s1].time - snaps[s2].time) + std::sqrt(dx2);
  };

  HolderEstimate est;
  auto consider = [&](std::size_t s1, std::size_t k1, std::size_t s2, std::size_t k2) {
    const double d = dist(s1, k1, s2, k2);
    if (d <= 0.0) return;
    est.seminorm = std::max(est.seminorm, std::abs(val(s1, k1) - val(s2, k2)) / std::pow(d, gamma));
    ++est.pairs;
  };
  for (std::size_t s = 0; s < snaps.size(); ++s) {
    for (std::size_t k = 0; k < ncell; ++k) {
      est.sup = std::max(est.sup, std::abs(val(s, k)));
      if (s + 1 < snaps.size()) consider(s, k, s + 1, k);
      const auto [i0, i1] = g.multi_index(k);
      if (i0 + 1 < g.n) consider(s, k, s, g.index(i0 + 1, i1));
      if (g.dim == 2 && i1 + 1 < g.n) consider(s, k, s, g.index(i0, i1 + 1));
    }
  }
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<std::size_t> pick_s(0, snaps.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_k(0, ncell - 1);
  for (std::size_t j = 0; j < budget; ++j) {
    const auto s1 = pick_s(gen), k1 = pick_k(gen), s2 = pick_s(gen), k2 = pick_k(gen);
    consider(s1, k1, s2, k2);
  }
  est.total = est.seminorm + est.sup;
  return est;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// CSV with columns time, support_radius (first threshold), one
/// support_radius_eps<e> column per further threshold, shell_R<R>,
/// weighted_sup_a<a>, mass, max. Empty support is written as "none".
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  using detail::fmt_double;
  os << "time,support_radius";
  for (std::size_t i = 1; i < traj.eps.size(); ++i) {
    os << ",support_radius_eps" << fmt_double(traj.eps[i]);
  }
  for (double R : traj.shell_radii) os << ",shell_R" << fmt_double(R);
  for (double a : traj.weighted_a) os << ",weighted_sup_a" << fmt_double(a);
  os << ",mass,max\n";
  auto radius = [](const std::optional<double>& r) {
    return r ? fmt_double(*r) : std::string("none");
  };
  for (std::size_t t = 0; t < traj.times.size(); ++t) {
    os << fmt_double(traj.times[t]);
    for (std::size_t i = 0; i < traj.eps.size(); ++i) {
      os << ',' << radius(traj.support_radius[i][t]);
    }
    if (traj.eps.empty()) os << ",none";
    for (const auto& s : traj.shell_integrals) os << ',' << fmt_double(s[t]);
    for (const auto& w : traj.weighted_sup) os << ',' << fmt_double(w[t]);
    os << ',' << fmt_double(traj.mass[t]) << ',' << fmt_double(traj.max_value[t]) << '\n';
  }
}

}  // namespace csplab
