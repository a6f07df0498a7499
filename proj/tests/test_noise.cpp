#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "csplab/noise.hpp"

using namespace csplab;

namespace {

constexpr double kPi = std::numbers::pi;

struct Moments {
  double mean = 0, var = 0, skew = 0, kurt = 0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  const double n = double(v.size());
  for (double x : v) m.mean += x;
  m.mean /= n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double x : v) {
    const double d = x - m.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  m.var = m2;
  m.skew = m3 / std::pow(m2, 1.5);
  m.kurt = m4 / (m2 * m2) - 3.0;
  return m;
}

std::vector<double> cell_series(const NoiseSampler& s, double dt, int count,
                                std::size_t cell) {
  std::vector<double> out;
  for (int k = 0; k < count; ++k) out.push_back(sample_increment(s, dt, k, 3).values[cell]);
  return out;
}

}  // namespace

TEST(Grid, Validation) {
  EXPECT_THROW(Grid::make(3, 16, 1.0), ValidationError);
  EXPECT_THROW(Grid::make(1, 12, 1.0), ValidationError);
  EXPECT_THROW(Grid::make(1, 4, 1.0), ValidationError);
  EXPECT_THROW(Grid::make(1, 16, 0.0), ValidationError);
  const auto g = Grid::make(2, 16, 2.0);
  EXPECT_DOUBLE_EQ(g.dx, 0.25);
  EXPECT_EQ(g.cells(), 256u);
  EXPECT_DOUBLE_EQ(g.radius(g.origin()), 0.0);
  EXPECT_EQ(g.index(-1, 16), g.index(15, 0));
}

TEST(Sampler, WhiteAmplitudesAndCellVariance) {
  const auto g = Grid::make(1, 64, 4.0);
  const auto s = build_sampler(CorrelationKernel::white(1), g, 11);
  for (double a : s.amplitudes()) EXPECT_NEAR(a, s.amplitudes()[0], 1e-12 * s.amplitudes()[0]);
  const double dt = 0.01;
  const auto xs = cell_series(s, dt, 10000, 5);
  const auto m = moments(xs);
  const double target = dt / g.dx;
  // Var of the sample variance is 2 sigma^4 / n for Gaussians.
  EXPECT_NEAR(m.var, target, 3.0 * target * std::sqrt(2.0 / xs.size()));
}

TEST(Sampler, WhiteTwoDimCellVariance) {
  const auto g = Grid::make(2, 16, 2.0);
  const auto s = build_sampler(CorrelationKernel::white(2), g, 5);
  const auto xs = cell_series(s, 1.0, 10000, g.index(3, 9));
  const double target = 1.0 / (g.dx * g.dx);
  EXPECT_NEAR(moments(xs).var, target, 3.0 * target * std::sqrt(2.0 / xs.size()));
}

TEST(Sampler, ConstantKernelIsSpatiallyConstant) {
  const auto g = Grid::make(1, 32, 4.0);
  const auto s = build_sampler(CorrelationKernel::constant(1), g, 2);
  int nonzero = 0;
  for (double a : s.amplitudes()) nonzero += a != 0.0;
  EXPECT_EQ(nonzero, 1);
  EXPECT_GT(s.amplitudes()[0], 0.0);
  const auto f = sample_increment(s, 0.25, 7, 0);
  for (double v : f.values) EXPECT_NEAR(v, f.values[0], 1e-14);
  const auto xs = cell_series(s, 0.25, 10000, 0);
  EXPECT_NEAR(moments(xs).var, 0.25, 3.0 * 0.25 * std::sqrt(2.0 / xs.size()));
}

TEST(Sampler, BumpEmbeddingHasNoDefect) {
  const auto s = build_sampler(CorrelationKernel::bump(0.5, 1.0, 1), Grid::make(1, 64, 4.0), 0);
  EXPECT_EQ(s.defect(), 0.0);
}

TEST(Sampler, DefectGate) {
  // A Gaussian kernel wider than the box: the truncated wrap is indefinite.
  try {
    build_sampler(CorrelationKernel::ou(2.0, 1), Grid::make(1, 16, 1.0), 0);
    FAIL() << "expected an embedding defect";
  } catch (const EmbeddingDefectError& e) {
    EXPECT_GE(e.defect(), 0.01);
  }
  const auto ok = build_sampler(CorrelationKernel::ou(1.0, 1), Grid::make(1, 16, 1.0), 0);
  EXPECT_LT(ok.defect(), 0.01);
}

TEST(Sampler, EigenvaluesMatchAnalyticSpectrum) {
  // Oracle: lambda_k ~ (2 pi)^{d/2} mu(xi_k) / dx^d for a kernel that is
  // negligible at the box edge (Riemann sum of the Fourier integral).
  const auto g = Grid::make(1, 256, 16.0);
  const auto k = CorrelationKernel::ou(2.0, 1);
  const auto s = build_sampler(k, g, 0);
  for (int m : {0, 1, 5, 20}) {
    const double xi = 2.0 * kPi * m / (2.0 * g.half_extent);
    const double mu = std::pow(2.0, -0.5) * std::exp(-xi * xi / 4.0);
    const double expect = std::sqrt(2.0 * kPi) * mu / g.dx;
    EXPECT_NEAR(s.eigenvalues()[m] / expect, 1.0, 1e-10) << m;
  }
}

TEST(Sampler, Determinism) {
  const auto g = Grid::make(2, 16, 2.0);
  const auto s = build_sampler(CorrelationKernel::ou(1.0, 2), g, 99);
  const auto a = sample_increment(s, 0.1, 4, 2);
  const auto b = sample_increment(s, 0.1, 4, 2);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, sample_increment(s, 0.1, 4, 3).values);
  EXPECT_NE(a.values, sample_increment(s, 0.1, 5, 2).values);
  const auto s2 = build_sampler(CorrelationKernel::ou(1.0, 2), g, 100);
  EXPECT_NE(a.values, sample_increment(s2, 0.1, 4, 2).values);
}

TEST(EmpiricalCovariance, RieszWhiteConstant) {
  {
    const auto g = Grid::make(1, 128, 8.0);
    const auto s = build_sampler(CorrelationKernel::riesz(0.5, 1), g, 1);
    const auto rows = empirical_covariance(s, 10000, {{8, 0}});
    EXPECT_DOUBLE_EQ(rows[0].target, std::pow(8 * g.dx, -0.5));
    EXPECT_LT(std::abs(rows[0].estimate - rows[0].target), 3.0 * rows[0].std_error);
  }
  {
    const auto s = build_sampler(CorrelationKernel::white(1), Grid::make(1, 64, 4.0), 1);
    for (const auto& r : empirical_covariance(s, 10000, {{1, 0}, {5, 0}})) {
      EXPECT_EQ(r.target, 0.0);
      EXPECT_LT(std::abs(r.estimate), 3.0 * r.std_error);
    }
  }
  {
    const auto s = build_sampler(CorrelationKernel::constant(1), Grid::make(1, 64, 4.0), 1);
    for (const auto& r : empirical_covariance(s, 10000, {{0, 0}, {17, 0}})) {
      EXPECT_EQ(r.target, 1.0);
      EXPECT_LT(std::abs(r.estimate - 1.0), 3.0 * r.std_error + 1e-12);
    }
  }
}

TEST(EmpiricalCovariance, Stationarity) {
  const auto g = Grid::make(1, 128, 8.0);
  const auto s = build_sampler(CorrelationKernel::ou(1.0, 1), g, 4);
  for (Lag anchor : {Lag{0, 0}, Lag{64, 0}, Lag{101, 0}}) {
    const auto rows = empirical_covariance(s, 10000, {{3, 0}}, 0, anchor);
    EXPECT_LT(std::abs(rows[0].estimate - rows[0].target), 3.0 * rows[0].std_error)
        << anchor[0];
  }
}

TEST(Sampler, SecondMomentIdentity) {
  for (int d : {1, 2}) {
    const auto g = Grid::make(d, d == 1 ? 64 : 16, 2.0);
    for (const auto& k : {CorrelationKernel::riesz(0.5, d), CorrelationKernel::ou(2.0, d),
                          CorrelationKernel::bump(0.5, 1.0, d)}) {
      const auto s = build_sampler(k, g, 0);
      const auto clipped = clipped_covariance(s);
      const std::vector<Lag> lags{{0, 0}, {1, 0}, {3, 2}, {7, 5}};
      const auto implied = implied_covariance(s, lags);
      for (std::size_t j = 0; j < lags.size(); ++j) {
        const double ref = clipped[g.index(lags[j][0], lags[j][1])];
        EXPECT_NEAR(implied[j], ref, 1e-10 * clipped[0]) << k.spec();
      }
      // With no clipping the embedding reproduces the wrapped kernel.
      if (s.defect() == 0.0) {
        for (std::size_t c = 0; c < clipped.size(); ++c) {
          EXPECT_NEAR(clipped[c], s.covariance()[c], 1e-10 * s.covariance()[0]);
        }
      }
    }
  }
}

TEST(Sampler, Gaussianity) {
  const int n = 10000;
  const auto s = build_sampler(CorrelationKernel::ou(2.0, 1), Grid::make(1, 32, 4.0), 8);
  const auto m = moments(cell_series(s, 1.0, n, 9));
  EXPECT_LT(std::abs(m.skew), 4.0 / std::sqrt(n) * std::sqrt(6.0));
  EXPECT_LT(std::abs(m.kurt), 4.0 / std::sqrt(n) * std::sqrt(24.0));
}
