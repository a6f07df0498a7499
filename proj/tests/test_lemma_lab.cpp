#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>
#include <random>

#include "csplab/lemma_lab.hpp"

using namespace csplab;
using namespace csplab::lemma;

namespace {

constexpr double kPi = std::numbers::pi;

HolderSample constant_sample(const SampleNodes& nodes, double v) {
  HolderSample s;
  s.values.assign(nodes.size(), v);
  s.sup = v;
  return s;
}

double gk(auto&& f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 12, 1e-12);
}

}  // namespace

TEST(Exponents, Examples) {
  const auto e = exponents(0.2, 0.5, 1);
  EXPECT_NEAR(e.l, 1.1 / 1.2, 1e-15);
  EXPECT_NEAR(e.L, 1.2 / (0.2 * (1.1 / 1.2) + 1.0), 1e-15);
  EXPECT_NEAR(e.L, 1.01408, 1e-5);
  EXPECT_NEAR(e.L * (0.2 * e.l + 1.0), 1.2, 1e-15);

  const auto lim = exponents(0.3, 1.0 - 1e-9, 2);
  EXPECT_NEAR(lim.l, 1.0, 1e-9);
  EXPECT_NEAR(lim.L, 1.0, 1e-9);
  EXPECT_LT(lim.l, 1.0);
  EXPECT_GT(lim.L, 1.0);

  EXPECT_DOUBLE_EQ(exponents(0.5, 0.5, 2).l, 0.9);

  EXPECT_THROW(exponents(0.0, 0.5, 1), ValidationError);
  EXPECT_THROW(exponents(0.5, 1.0, 1), ValidationError);
  EXPECT_THROW(exponents(0.5, 0.5, 0), ValidationError);
}

TEST(Exponents, IdentityOnLattice) {
  for (int i = 1; i < 10; ++i) {
    for (int j = 1; j < 10; ++j) {
      for (int d = 1; d <= 10; ++d) {
        const auto e = exponents(i / 10.0, j / 10.0, d);
        EXPECT_LE(std::abs(e.identity_defect()), 1e-14);
      }
    }
  }
}

TEST(HolderSample, Invariants) {
  const AnnulusProblem p{};
  const auto nodes = p.nodes(64);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto series = FourierSeries::draw(1, 0.02, 16, p.gamma, seed);
    const auto g = make_holder_sample(nodes, series, p.H, Anchor::Offset);
    for (double v : g.values) EXPECT_GE(v, 0.0);
    EXPECT_LE(g.H_measured, 1.05 * p.H);
    EXPECT_LE(g.sup, p.H * (1 + 1e-12));
  }
  const auto tn = interval_nodes(1.0, 128, 0.5);
  const auto g = make_holder_sample(tn, FourierSeries::draw(1, 2.0, 16, 0.5, 3), 2.0, Anchor::Origin);
  EXPECT_EQ(g.values.front(), 0.0);
  EXPECT_NEAR(g.H_measured, 2.0, 1e-12);
}

TEST(ReverseJensenX, ZeroAndConstant) {
  AnnulusProblem p;
  p.d = 1;
  p.R = 2.0;
  p.a = 0.0;
  p.b = 1.0;
  p.gamma = 0.5;
  p.lambda = 0.5;
  p.r = 0.5 * p.r_bound();
  const auto nodes = p.nodes(32);
  EXPECT_EQ(reverse_jensen_x(p, nodes, constant_sample(nodes, 0.0)).ratio, 0.0);

  // g = 1 on both components: |annulus| = 2 r (b - a).
  const double area = 2.0 * p.r;
  const auto rep = reverse_jensen_x(p, nodes, constant_sample(nodes, 1.0));
  const double l = (0.5 * 0.5 + 1.0) / 1.5;
  EXPECT_NEAR(rep.lhs, std::pow(area, l), 1e-12);
  const double rhs = std::pow(p.r, -0.5 / 1.5) * area;
  EXPECT_NEAR(rep.rhs, rhs, 1e-12 * rhs);
  EXPECT_NEAR(rep.ratio, std::pow(area, l) / rhs, 1e-12);
}

TEST(ReverseJensenX, AdmissibleRadius) {
  AnnulusProblem p;
  p.d = 2;
  const double expect =
      std::min(p.R / p.b, std::pow(std::pow(2.0, -3.0) * std::pow(p.H, -4.0) * p.R * 2.0 * kPi,
                                   1.0 / 1.5));
  EXPECT_NEAR(p.r_bound(), expect, 1e-14);
  p.r = 1.01 * expect;
  try {
    p.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("admissible"), std::string::npos);
  }
}

TEST(ReverseJensenX, EnsembleStableOneDim) {
  AnnulusProblem p;
  p.r = 0.8 * p.r_bound();
  const auto st = reverse_jensen_x_ensemble(p, 50, 32, 11);
  EXPECT_TRUE(st.holds);
  EXPECT_LT(st.stability, 2.0);
}

TEST(ReverseJensenT, ZeroExtremalAndPrecondition) {
  TimeProblem p;
  const auto nodes = p.nodes(64);
  EXPECT_EQ(reverse_jensen_t(p, nodes, constant_sample(nodes, 0.0)).ratio, 0.0);
  EXPECT_THROW(reverse_jensen_t(p, nodes, constant_sample(nodes, 0.3)), ValidationError);

  // Closed form for g = H t^gamma, written out independently.
  const double g = 0.4, lam = 0.7, H = 3.0;
  for (double T : {0.25, 1.0, 9.0}) {
    const TimeProblem q{T, g, lam, H};
    const double I1 = H * std::pow(T, g + 1) / (g + 1);
    const double Il = std::pow(H, lam) * std::pow(T, g * lam + 1) / (g * lam + 1);
    const double expect = std::pow(I1, (g * lam + 1) / (g + 1)) / (std::pow(H, 1 / g) * Il);
    EXPECT_NEAR(extremal_time_ratio(q), expect, 1e-13 * expect);
  }
  const auto rep = extremal_time_check({1.0, g, lam, H}, {0.25, 1.0, 9.0});
  EXPECT_TRUE(rep.holds) << rep.to_json().dump();
  EXPECT_EQ(rep.extra["exponent_mismatch"].get<double>(), 0.0);
}

TEST(ReverseJensenT, EnsembleStable) {
  const auto st = reverse_jensen_t_ensemble(TimeProblem{}, 50, 64, 5);
  EXPECT_TRUE(st.holds);
  EXPECT_EQ(st.resolutions, (std::vector<int>{64, 256}));
}

TEST(BuildPhi, ConstantKernel) {
  const auto grid = Grid::make(1, 128, 4.0);
  for (double v : mollified_kernel(CorrelationKernel::constant(1), 0.2, grid)) {
    EXPECT_NEAR(v, 1.0, 1e-12);
  }
  const auto phi = build_phi(CorrelationKernel::constant(1), 0.2, grid);
  EXPECT_NEAR(phi.c, 1.0, 1e-12);
  double n2 = 0.0;
  for (double v : phi.phi.values) {
    EXPECT_GE(v, 0.0);
    n2 += v * v * grid.dx;
  }
  EXPECT_NEAR(n2, 0.5, 1e-12);
  for (std::size_t k = 0; k < grid.cells(); ++k) {
    if (grid.radius(k) >= phi.r / 2.0) {
      EXPECT_EQ(phi.phi.values[k], 0.0);
    }
  }
}

TEST(BuildPhi, BumpTripleConvolutionOracle) {
  const auto grid = Grid::make(1, 32, 2.0);
  const auto k = CorrelationKernel::bump(0.5, 1.0, 1);
  const double eps = 0.15;
  const auto psi = mollifier(eps, grid);
  const auto f = kernel_on_grid(k, grid);
  // f_eps(0) = sum_{y,z} psi(y) psi(z - y) f(-z) dx^2, every index mod n.
  const int n = grid.n;
  double direct = 0.0;
  for (int y = 0; y < n; ++y) {
    for (int z = 0; z < n; ++z) {
      direct += psi[y] * psi[((z - y) % n + n) % n] * f[((-z) % n + n) % n];
    }
  }
  direct *= grid.dx * grid.dx;
  EXPECT_NEAR(mollified_kernel(k, eps, grid)[0], direct, 1e-13);
  EXPECT_NEAR(build_phi(k, eps, grid).f_eps0, direct, 1e-13);
  EXPECT_GT(direct, 0.0);
}

TEST(BuildPhi, RieszTwoDimFiniteAtOrigin) {
  // Continuum f_eps(0) = int (psi_eps * psi_eps)(y) |y|^-1 dy in polar form.
  const double eps = 0.1;
  // psi = (1/4) 1_[-1,1] * 1_[-1,1], so psi * psi is half the Irwin-Hall
  // density of order 4 at (y + 4) / 2.
  auto p1 = [](double y) {
    const double s = (y + 4.0) / 2.0;
    const double binom[5] = {1, 4, 6, 4, 1};
    double acc = 0.0;
    for (int k = 0; k <= 4; ++k) {
      const double t = std::max(0.0, s - k);
      acc += (k % 2 ? -1.0 : 1.0) * binom[k] * t * t * t;
    }
    return s <= 0.0 || s >= 4.0 ? 0.0 : acc / 12.0;
  };
  auto F = [&](double a, double b) { return p1(a / eps) * p1(b / eps) / (eps * eps); };
  const double oracle = 4.0 * gk(
      [&](double th) {
        return gk([&](double rho) { return F(rho * std::cos(th), rho * std::sin(th)); }, 0.0,
                  4.0 * std::sqrt(2.0) * eps);
      },
      0.0, kPi / 2.0);
  const auto grid = Grid::make(2, 256, 2.0);
  const double got = mollified_kernel(CorrelationKernel::riesz(1.0, 2), eps, grid)[0];
  EXPECT_TRUE(std::isfinite(got));
  EXPECT_GT(got, 0.0);
  EXPECT_NEAR(got / oracle, 1.0, 0.02) << got << " vs " << oracle;
}

TEST(BuildPhi, Validation) {
  const auto grid = Grid::make(1, 64, 2.0);
  EXPECT_THROW(build_phi(CorrelationKernel::white(1), 0.0, grid), ValidationError);
  EXPECT_THROW(build_phi(CorrelationKernel::white(1), 1.0, grid), ValidationError);
  EXPECT_THROW(build_phi(CorrelationKernel::white(2), 0.1, grid), ValidationError);
}

TEST(CovarianceBound, Examples) {
  const auto grid = Grid::make(1, 128, 4.0);
  const auto k = CorrelationKernel::constant(1);
  const auto phi = build_phi(k, 0.2, grid);
  const auto zero = covariance_lower_bound_check(Field(grid), phi.phi, k);
  EXPECT_EQ(zero.lhs, 0.0);
  EXPECT_EQ(zero.rhs, 0.0);
  EXPECT_TRUE(zero.holds);

  Field g(grid);
  g.values[grid.index(70)] = 3.0;
  const double mass = 3.0 * grid.dx;
  const auto one = covariance_lower_bound_check(g, phi.phi, k);
  EXPECT_NEAR(one.lhs, mass * mass, 1e-13);
  EXPECT_NEAR(one.rhs, mass * mass * phi.norm2, 1e-13);
  EXPECT_LE(one.rhs, one.lhs / 2.0 + 1e-13);
  EXPECT_TRUE(one.holds);

  // The white pairing is ||g||_2^2.
  const auto w = CorrelationKernel::white(1);
  const auto wphi = build_phi(w, 0.2, grid);
  EXPECT_NEAR(covariance_lower_bound_check(g, wphi.phi, w).lhs, 9.0 * grid.dx, 1e-12);
}

TEST(CovarianceBound, WrapDetected) {
  const auto grid = Grid::make(1, 64, 4.0);
  const auto k = CorrelationKernel::ou(1.0, 1);
  const auto phi = build_phi(k, 0.25, grid);
  Field wide(grid, 1.0);
  EXPECT_THROW(covariance_lower_bound_check(wide, phi.phi, k), GeometryError);
}

TEST(CovarianceBound, EnsembleHoldsAndControlFails) {
  for (int d : {1, 2}) {
    const auto grid = d == 1 ? Grid::make(1, 256, 8.0) : Grid::make(2, 64, 4.0);
    const std::vector<CorrelationKernel> kernels{
        CorrelationKernel::white(d), CorrelationKernel::riesz(d == 1 ? 0.5 : 1.0, d),
        CorrelationKernel::ou(1.0, d), CorrelationKernel::constant(d),
        CorrelationKernel::bump(0.5, 1.0, d)};
    int control_failures = 0;
    for (const auto& k : kernels) {
      EXPECT_EQ(covariance_ensemble(k, grid, 4 * grid.dx, 100, 3).violations, 0) << k.spec();
      control_failures += covariance_ensemble(k, grid, 4 * grid.dx, 100, 3, 4.0).violations;
    }
    EXPECT_GT(control_failures, 0);
  }
}

TEST(Cutoff, PropertiesCheck) {
  const auto rep = cutoff_properties_check(0.5, 1.0, {10, 100, 1000});
  EXPECT_TRUE(rep.holds) << rep.to_json().dump();
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_GT(rep.rows[0].sup_deviation, rep.rows[1].sup_deviation);
  EXPECT_GT(rep.rows[1].sup_deviation, rep.rows[2].sup_deviation);
  EXPECT_GE(rep.rows[0].lipschitz, 0.5 * std::pow(10.0, 0.5));
  for (const auto& r : rep.rows) {
    EXPECT_TRUE(r.zero_at_origin);
    EXPECT_LE(r.linear_constant, 1.0);
  }
  EXPECT_THROW(cutoff_properties_check(1.2, 1.0, {10}), ValidationError);
}
