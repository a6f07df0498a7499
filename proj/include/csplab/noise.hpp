#pragma once

// Space-time noise on a periodic grid: white in time, stationary Gaussian in
// space with the covariance of a catalog kernel, synthesized by circulant
// embedding of the wrapped kernel.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "csplab/errors.hpp"
#include "csplab/fft.hpp"
#include "csplab/kernels.hpp"

namespace csplab {

/// Periodic box [-L, L)^d sampled at x_j = -L + j dx, dx = 2L/n. The origin
/// is the grid point j = n/2 along every axis. Cells are stored row-major
/// with the first axis slowest.
struct Grid {
  int dim = 1;
  int n = 0;
  double half_extent = 0.0;
  double dx = 0.0;

  static Grid make(int dim, int n, double half_extent) {
    if (dim != 1 && dim != 2) throw ValidationError("grid: dim must be 1 or 2");
    if (n < 8 || (n & (n - 1)) != 0) {
      throw ValidationError("grid: n must be a power of two >= 8");
    }
    if (!(half_extent > 0.0) || !std::isfinite(half_extent)) {
      throw ValidationError("grid: half extent must be positive");
    }
    return Grid{dim, n, half_extent, 2.0 * half_extent / n};
  }

  std::size_t cells() const {
    return dim == 1 ? std::size_t(n) : std::size_t(n) * std::size_t(n);
  }
  double coord(int j) const { return -half_extent + j * dx; }
  double cell_volume() const { return std::pow(dx, dim); }
  std::size_t origin() const { return index(n / 2, n / 2); }

  std::size_t index(int i0, int i1 = 0) const {
    const auto w = [this](int i) { return std::size_t(((i % n) + n) % n); };
    return dim == 1 ? w(i0) : w(i0) * std::size_t(n) + w(i1);
  }
  std::array<int, 2> multi_index(std::size_t k) const {
    if (dim == 1) return {int(k), 0};
    return {int(k / std::size_t(n)), int(k % std::size_t(n))};
  }
  /// Euclidean norm of the cell centre.
  double radius(std::size_t k) const {
    const auto [i0, i1] = multi_index(k);
    const double x = coord(i0);
    if (dim == 1) return std::abs(x);
    const double y = coord(i1);
    return std::sqrt(x * x + y * y);
  }

  bool operator==(const Grid&) const = default;
};

struct Field {
  Grid grid;
  std::vector<double> values;

  Field() = default;
  explicit Field(const Grid& g, double fill = 0.0) : grid(g), values(g.cells(), fill) {}

  bool finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

/// Grid offset along each axis (second entry ignored for d = 1).
using Lag = std::array<int, 2>;

/// Covariance of the periodized kernel at a grid lag, taking the
/// minimum-image displacement on each axis. The zero lag uses the cell value
/// that the discrete field actually carries: 1/dx^d for white noise, the
/// origin cell average for Riesz.
inline double wrapped_covariance(const CorrelationKernel& kernel, const Grid& grid,
                                 const Lag& lag) {
  std::array<double, 2> disp{0.0, 0.0};
  bool zero = true;
  for (int a = 0; a < grid.dim; ++a) {
    int m = ((lag[a] % grid.n) + grid.n) % grid.n;
    if (m > grid.n / 2) m -= grid.n;
    disp[a] = m * grid.dx;
    zero = zero && m == 0;
  }
  if (kernel.is_white()) return zero ? 1.0 / grid.cell_volume() : 0.0;
  if (zero && !kernel.bounded_at_origin()) return origin_cell_average(kernel, grid.dx / 2.0);
  return eval_kernel_at(kernel, std::span<const double>(disp.data(), grid.dim));
}

class NoiseSampler {
 public:
  NoiseSampler(CorrelationKernel kernel, Grid grid, std::uint64_t base_seed,
               std::vector<double> covariance, std::vector<double> eigenvalues,
               double defect)
      : kernel_(std::move(kernel)), grid_(grid), base_seed_(base_seed),
        covariance_(std::move(covariance)), eigenvalues_(std::move(eigenvalues)),
        defect_(defect) {
    const double inv_n = 1.0 / double(grid_.cells());
    amplitudes_.resize(eigenvalues_.size());
    for (std::size_t k = 0; k < eigenvalues_.size(); ++k) {
      amplitudes_[k] = std::sqrt(eigenvalues_[k] * inv_n);
    }
  }

  const Grid& grid() const { return grid_; }
  const CorrelationKernel& kernel() const { return kernel_; }
  std::uint64_t base_seed() const { return base_seed_; }
  double defect() const { return defect_; }
  /// Per-mode amplitudes sqrt(lambda_k / N) (FFT index order).
  const std::vector<double>& amplitudes() const { return amplitudes_; }
  /// Clipped circulant eigenvalues lambda_k.
  const std::vector<double>& eigenvalues() const { return eigenvalues_; }
  /// Wrapped kernel c_j on the grid (lag index order).
  const std::vector<double>& covariance() const { return covariance_; }

  /// A copy with all amplitudes zero (noise switched off).
  NoiseSampler silenced() const {
    NoiseSampler s = *this;
    std::fill(s.amplitudes_.begin(), s.amplitudes_.end(), 0.0);
    std::fill(s.eigenvalues_.begin(), s.eigenvalues_.end(), 0.0);
    return s;
  }

  bool silent() const {
    for (double a : amplitudes_) {
      if (a != 0.0) return false;
    }
    return true;
  }

 private:
  CorrelationKernel kernel_;
  Grid grid_;
  std::uint64_t base_seed_;
  std::vector<double> covariance_;
  std::vector<double> eigenvalues_;
  std::vector<double> amplitudes_;
  double defect_;
};

inline NoiseSampler build_sampler(const CorrelationKernel& kernel, const Grid& grid,
                                  std::uint64_t base_seed) {
  if (kernel.dim() != grid.dim) {
    throw ValidationError("noise: kernel dimension does not match the grid");
  }
  const std::size_t total = grid.cells();
  std::vector<double> cov(total);
  for (std::size_t k = 0; k < total; ++k) {
    const auto [i0, i1] = grid.multi_index(k);
    cov[k] = wrapped_covariance(kernel, grid, {i0, i1});
  }
  const auto spec = fft::forward_real(cov, grid.dim, grid.n);
  std::vector<double> lambda(total);
  double peak = 0.0;
  for (std::size_t k = 0; k < total; ++k) {
    lambda[k] = spec[k].real();
    peak = std::max(peak, std::abs(lambda[k]));
  }
  // Values at rounding level are zeroed silently; real negative eigenvalues
  // are clipped and counted.
  const double floor = 1e-12 * peak;
  double clipped = 0.0, mass = 0.0;
  for (double& l : lambda) {
    mass += std::abs(l);
    if (l < 0.0) {
      if (l < -floor) clipped += -l;
      l = 0.0;
    } else if (l < floor) {
      l = 0.0;
    }
  }
  const double defect = mass > 0.0 ? clipped / mass : 0.0;
  if (defect >= 0.01) {
    throw EmbeddingDefectError(defect, "noise: circulant embedding clipped " +
                                           std::to_string(100.0 * defect) +
                                           "% of the spectral mass");
  }
  return NoiseSampler(kernel, grid, base_seed, std::move(cov), std::move(lambda), defect);
}

namespace detail {

inline std::mt19937_64 noise_stream(std::uint64_t base_seed, std::uint64_t step,
                                    std::uint64_t replica) {
  std::seed_seq seq{std::uint32_t(base_seed), std::uint32_t(base_seed >> 32),
                    std::uint32_t(step),      std::uint32_t(step >> 32),
                    std::uint32_t(replica),   std::uint32_t(replica >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// Noise increment over one time step. The Gaussian stream depends only on
/// (base_seed, step_index, replica), so replicas and steps can be evaluated
/// in any order and on any thread.
inline void sample_increment_into(const NoiseSampler& sampler, double dt,
                                  std::uint64_t step_index, std::uint64_t replica,
                                  std::span<double> out,
                                  std::vector<fft::cplx>& work) {
  if (!(dt > 0.0)) throw ValidationError("noise: dt must be positive");
  const auto& amp = sampler.amplitudes();
  const std::size_t total = amp.size();
  work.resize(total);
  auto gen = detail::noise_stream(sampler.base_seed(), step_index, replica);
  std::normal_distribution<double> gauss;
  const double s = std::sqrt(dt);
  for (std::size_t k = 0; k < total; ++k) {
    const double re = gauss(gen);
    const double im = gauss(gen);
    work[k] = fft::cplx(s * amp[k] * re, s * amp[k] * im);
  }
  fft::forward(work, sampler.grid().dim, sampler.grid().n);
  for (std::size_t k = 0; k < total; ++k) out[k] = work[k].real();
}

inline Field sample_increment(const NoiseSampler& sampler, double dt,
                              std::uint64_t step_index, std::uint64_t replica) {
  Field f(sampler.grid());
  std::vector<fft::cplx> work;
  sample_increment_into(sampler, dt, step_index, replica, f.values, work);
  return f;
}

struct CovarianceRow {
  Lag lag{0, 0};
  double target = 0.0;
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo estimate of Cov(dF(anchor), dF(anchor + lag)) / dt over
/// nsamples increments (dt = 1, steps 0..nsamples-1 of the given replica).
inline std::vector<CovarianceRow> empirical_covariance(
    const NoiseSampler& sampler, int nsamples, const std::vector<Lag>& lags,
    std::uint64_t replica = 0, std::optional<Lag> anchor = std::nullopt) {
  if (nsamples < 100) throw ValidationError("noise: need at least 100 samples");
  const Grid& g = sampler.grid();
  const Lag a = anchor.value_or(Lag{g.n / 2, g.n / 2});
  const std::size_t ia = g.index(a[0], a[1]);
  std::vector<std::size_t> idx;
  for (const auto& l : lags) idx.push_back(g.index(a[0] + l[0], a[1] + l[1]));

  std::vector<double> sum(lags.size(), 0.0), sum2(lags.size(), 0.0);
  std::vector<double> field(g.cells());
  std::vector<fft::cplx> work;
  for (int s = 0; s < nsamples; ++s) {
    sample_increment_into(sampler, 1.0, std::uint64_t(s), replica, field, work);
    for (std::size_t j = 0; j < lags.size(); ++j) {
      const double p = field[ia] * field[idx[j]];
      sum[j] += p;
      sum2[j] += p * p;
    }
  }
  std::vector<CovarianceRow> rows;
  for (std::size_t j = 0; j < lags.size(); ++j) {
    CovarianceRow r;
    r.lag = lags[j];
    r.target = wrapped_covariance(sampler.kernel(), g, lags[j]);
    r.estimate = sum[j] / nsamples;
    const double var = std::max(0.0, sum2[j] / nsamples - r.estimate * r.estimate);
    r.std_error = std::sqrt(var / (nsamples - 1));
    rows.push_back(r);
  }
  return rows;
}

/// Population covariance of the synthesized field at the given lags, by
/// direct summation over modes of the amplitudes. Compared against the
/// inverse transform of the clipped spectrum this is an exact identity.
inline std::vector<double> implied_covariance(const NoiseSampler& sampler,
                                              const std::vector<Lag>& lags) {
  const Grid& g = sampler.grid();
  const auto& amp = sampler.amplitudes();
  const double w = 2.0 * detail::kPi / g.n;
  std::vector<double> out;
  for (const auto& l : lags) {
    double acc = 0.0;
    for (std::size_t k = 0; k < amp.size(); ++k) {
      const auto [k0, k1] = g.multi_index(k);
      const double phase = w * (double(k0) * l[0] + (g.dim == 2 ? double(k1) * l[1] : 0.0));
      acc += amp[k] * amp[k] * std::cos(phase);
    }
    out.push_back(acc);
  }
  return out;
}

/// Inverse transform of the clipped spectrum, (1/N) sum_k lambda_k e^{+i k.j}.
inline std::vector<double> clipped_covariance(const NoiseSampler& sampler) {
  const Grid& g = sampler.grid();
  std::vector<fft::cplx> w(sampler.eigenvalues().begin(), sampler.eigenvalues().end());
  fft::inverse(w, g.dim, g.n);
  std::vector<double> out(w.size());
  const double inv_n = 1.0 / double(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) out[k] = w[k].real() * inv_n;
  return out;
}

inline void write_covariance_csv(std::ostream& os, const std::vector<CovarianceRow>& rows,
                                 int dim) {
  os << (dim == 1 ? "lag" : "lag_x,lag_y") << ",target,estimate,stderr\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.lag[0];
    if (dim == 2) os << ',' << r.lag[1];
    os << ',' << r.target << ',' << r.estimate << ',' << r.std_error << '\n';
  }
}

}  // namespace csplab
