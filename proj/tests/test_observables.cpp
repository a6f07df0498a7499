#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "csplab/observables.hpp"

using namespace csplab;

namespace {

constexpr double kPi = std::numbers::pi;

Field from(const Grid& g, auto&& fn) {
  Field f(g);
  for (std::size_t k = 0; k < g.cells(); ++k) {
    const auto [i0, i1] = g.multi_index(k);
    f.values[k] = fn(g.coord(i0), g.dim == 2 ? g.coord(i1) : 0.0);
  }
  return f;
}

Trajectory with_snapshots(const Grid& g, const std::vector<double>& times, auto&& fn) {
  Trajectory t;
  for (std::size_t s = 0; s < times.size(); ++s) {
    t.times.push_back(times[s]);
    t.snapshots.push_back(
        {times[s], s, from(g, [&](double x, double y) { return fn(times[s], x, y); })});
  }
  return t;
}

}  // namespace

TEST(SupportRadius, Examples) {
  const auto g = Grid::make(1, 64, 8.0);  // dx = 0.25
  EXPECT_FALSE(support_radius(Field(g), 1e-8).has_value());
  const auto ind = from(g, [](double x, double) { return std::abs(x) <= 3.0 ? 1.0 : 0.0; });
  EXPECT_DOUBLE_EQ(*support_radius(ind, 0.5), 3.0);
  const auto gauss = from(g, [](double x, double) { return std::exp(-x * x / 2.0); });
  EXPECT_NEAR(*support_radius(gauss, std::exp(-8.0) * (1 - 1e-12)), 4.0, g.dx);
  EXPECT_THROW(support_radius(gauss, 0.0), ValidationError);
}

TEST(SupportRadius, MonotoneInThreshold) {
  const auto g = Grid::make(2, 32, 4.0);
  const auto u = from(g, [](double x, double y) { return std::exp(-(x * x + y * y)); });
  std::optional<double> prev = support_radius(u, 1e-12);
  for (double e : {1e-8, 1e-4, 1e-2, 0.5, 2.0}) {
    const auto r = support_radius(u, e);
    if (r) {
      ASSERT_TRUE(prev.has_value());
      EXPECT_GE(*prev, *r);
    }
    prev = r;
  }
}

TEST(Shell, ConstantFieldTwoDim) {
  const auto g = Grid::make(2, 256, 8.0);
  for (double R : {2.0, 4.0, 6.0}) {
    const auto s = ShellGeometry::make(g, R);
    ASSERT_FALSE(s.cells.empty());
    const double got = shell_integral(Field(g, 3.0), s);
    const double tol = (s.width / R) * (s.width / R) + g.dx / R;
    EXPECT_NEAR(got / (3.0 * 2.0 * kPi * R), 1.0, tol) << R;
    EXPECT_EQ(shell_integral(Field(g), s), 0.0);
  }
}

TEST(Shell, ConstantFieldOneDim) {
  const auto g = Grid::make(1, 256, 8.0);
  for (double R : {1.0, 3.3, 5.0}) {
    const auto s = ShellGeometry::make(g, R, 4.0 * g.dx);
    EXPECT_NEAR(shell_integral(Field(g, 1.5), s), 2.0 * 1.5, 2.0 * 1.5 * g.dx / s.width);
  }
}

TEST(Shell, EmptyShellIsGeometryError) {
  const auto g = Grid::make(1, 16, 1.0);
  const auto s = ShellGeometry::make(g, 5.0, 0.01);
  EXPECT_TRUE(s.cells.empty());
  EXPECT_THROW(shell_integral(Field(g), s), GeometryError);
}

TEST(Shell, PartitionRecoversAnnulusMass) {
  const auto g = Grid::make(2, 128, 4.0);
  const auto u = from(g, [](double x, double y) { return 1.0 + std::sin(x) * std::cos(2 * y); });
  // Dyadic widths keep the shell edges exact.
  const double w = 0.25;
  double sum = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double R = 1.0 + w / 2 + i * w;
    sum += shell_integral(u, ShellGeometry::make(g, R, w)) * w;
  }
  double mass = 0.0;
  for (std::size_t k = 0; k < g.cells(); ++k) {
    const double r = g.radius(k);
    if (r >= 1.0 && r < 3.0) mass += u.values[k] * g.cell_volume();
  }
  EXPECT_NEAR(sum, mass, 1e-10 * mass);
}

TEST(WeightedSup, Examples) {
  const auto g = Grid::make(1, 64, 8.0);
  EXPECT_DOUBLE_EQ(weighted_sup(Field(g, 1.0), 0.7), 1.0);
  const auto ch = from(g, [](double x, double) { return std::cosh(0.5 * std::abs(x)); });
  EXPECT_NEAR(weighted_sup(ch, 0.5), 1.0, 1e-14);
  // Single occupied cell at |x0| = 5.
  Field one(g);
  one.values[g.index(g.n / 2 + 20)] = 1.0;
  EXPECT_NEAR(weighted_sup(one, 1.0), 0.0134752, 1e-7);
  // Weight bound transfer.
  const auto bump = from(g, [](double x, double) { return std::exp(-(x - 1) * (x - 1)); });
  EXPECT_LE(weighted_sup(bump, 0.3), 1.0);
}

TEST(WeightedSup, PsiDerivativeBound) {
  for (double a : {0.1, 1.0, 3.0}) {
    const auto g = Grid::make(1, 512, 8.0);
    for (int i = 1; i + 1 < g.n; ++i) {
      const double x = g.coord(i);
      const double d = (psi_weight(a, std::abs(x + g.dx)) - psi_weight(a, std::abs(x - g.dx))) /
                       (2.0 * g.dx);
      EXPECT_LE(std::abs(d), a * psi_weight(a, std::abs(x)) + 10.0 * a * g.dx * g.dx) << x;
    }
  }
}

TEST(Holder, Examples) {
  const auto g = Grid::make(1, 32, 2.0);
  auto flat = with_snapshots(g, {0.0, 0.5, 1.0}, [](double, double, double) { return 2.0; });
  // a tiny a makes Psi_a ~ 1 over the box
  const auto h = holder_seminorm(flat, 0.5, 1e-9, 1000);
  EXPECT_LT(h.seminorm, 1e-12);
  EXPECT_NEAR(h.total, 2.0, 1e-12);

  auto lin = with_snapshots(g, {0.0, 1.0}, [](double t, double, double) { return t; });
  EXPECT_GE(holder_seminorm(lin, 0.5, 1e-9, 1000).seminorm, 1.0 - 1e-12);

  Trajectory one = with_snapshots(g, {0.0}, [](double, double, double) { return 1.0; });
  EXPECT_THROW(holder_seminorm(one, 0.5, 1.0), UnusableTrajectoryError);
  EXPECT_THROW(holder_seminorm(lin, 1.5, 1.0), ValidationError);
}

TEST(Csp, Indicator) {
  Trajectory t;
  t.times = {0.0, 0.1, 0.2};
  t.eps = {1e-8};
  t.support_radius = {{1.0, 1.5, 2.2}};
  EXPECT_FALSE(csp_indicator(t, 1e-8, 2.0));
  EXPECT_TRUE(csp_indicator(t, 1e-8, 2.5));
  t.support_radius = {{std::nullopt, std::nullopt, std::nullopt}};
  EXPECT_TRUE(csp_indicator(t, 1e-8, 0.1));
  EXPECT_THROW(csp_indicator(t, 1e-6, 1.0), ValidationError);
}

TEST(Csv, Columns) {
  Trajectory t;
  t.times = {0.0, 0.5};
  t.eps = {1e-8, 1e-6};
  t.support_radius = {{1.0, std::nullopt}, {0.5, std::nullopt}};
  t.shell_radii = {2.0};
  t.shell_integrals = {{0.25, 0.0}};
  t.weighted_a = {1.0};
  t.weighted_sup = {{1.0, 0.0}};
  t.mass = {1.0, 0.0};
  t.max_value = {1.0, 0.0};
  std::ostringstream os;
  write_trajectory_csv(os, t);
  EXPECT_EQ(os.str(),
            "time,support_radius,support_radius_eps1e-06,shell_R2,weighted_sup_a1,mass,max\n"
            "0,1,0.5,0.25,1,1,1\n"
            "0.5,none,none,0,0,0,0\n");
}
