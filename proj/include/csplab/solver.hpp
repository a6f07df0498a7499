#pragma once

// Explicit Euler-Maruyama scheme for
//
//     du = [a^{ij} u_{ij} + b^i u_i + c u] dt + h(u) dF
//
// on the periodic grid, truncated at zero after every step.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "csplab/errors.hpp"
#include "csplab/kernels.hpp"
#include "csplab/noise.hpp"
#include "csplab/observables.hpp"

namespace csplab {

/// Symmetric 2x2 matrix stored as {a00, a01, a11}; for d = 1 only a00 is used.
using Mat2 = std::array<double, 3>;
using Vec2 = std::array<double, 2>;
using Point = std::span<const double>;

struct Coefficients {
  int dim = 1;
  std::function<Mat2(double, Point)> a;
  std::function<Vec2(double, Point)> b;
  std::function<double(double, Point)> c;
  double K = 1.0;
  /// No explicit time dependence: coefficient arrays are built once per run.
  bool autonomous = true;

  static Coefficients constant(int dim, Mat2 a, Vec2 b, double c, double K) {
    Coefficients co;
    co.dim = dim;
    co.a = [a](double, Point) { return a; };
    co.b = [b](double, Point) { return b; };
    co.c = [c](double, Point) { return c; };
    co.K = K;
    return co;
  }
  static Coefficients laplacian(int dim) {
    return constant(dim, {1.0, 0.0, 1.0}, {0.0, 0.0}, 0.0, 1.0);
  }
};

struct CoefficientReport {
  bool passed = true;
  double worst_low = std::numeric_limits<double>::infinity();
  double worst_high = 0.0;
  double worst_bound = 0.0;  // largest of |a|, |b|, |c| and derivatives of a
  std::string failure;
  double witness_t = 0.0;
  std::array<double, 2> witness_x{0.0, 0.0};
  std::array<double, 2> witness_xi{0.0, 0.0};
};

/// Checks K^{-1} |xi|^2 <= a xi.xi <= K |xi|^2 over grid points, the given
/// times and 8 directions (e_1 only in d = 1), and the bounds |a|, |b|, |c|,
/// |Da|, |D^2 a| <= K with derivatives by centred differences.
inline CoefficientReport validate_coefficients(const Coefficients& co, const Grid& grid,
                                               const std::vector<double>& times) {
  if (co.dim != grid.dim) throw ValidationError("coefficients: dimension mismatch");
  if (!(co.K >= 1.0)) throw ValidationError("coefficients: K must be >= 1");
  CoefficientReport rep;
  const double tol = 1e-12;
  std::vector<std::array<double, 2>> dirs;
  if (grid.dim == 1) {
    dirs.push_back({1.0, 0.0});
  } else {
    for (int k = 0; k < 8; ++k) {
      const double th = k * detail::kPi / 8.0;
      dirs.push_back({std::cos(th), std::sin(th)});
    }
  }
  auto fail = [&](const std::string& why, double t, std::array<double, 2> x,
                  std::array<double, 2> xi) {
    if (!rep.passed) return;
    rep.passed = false;
    rep.failure = why;
    rep.witness_t = t;
    rep.witness_x = x;
    rep.witness_xi = xi;
  };
  const double h = grid.dx;
  auto amax = [](const Mat2& m) {
    return std::max({std::abs(m[0]), std::abs(m[1]), std::abs(m[2])});
  };
  for (double t : times) {
    for (std::size_t k = 0; k < grid.cells(); ++k) {
      const auto [i0, i1] = grid.multi_index(k);
      std::array<double, 2> x{grid.coord(i0), grid.dim == 2 ? grid.coord(i1) : 0.0};
      const Point p(x.data(), grid.dim);
      const Mat2 a = co.a(t, p);
      for (const auto& xi : dirs) {
        const double q = grid.dim == 1
                             ? a[0]
                             : a[0] * xi[0] * xi[0] + 2.0 * a[1] * xi[0] * xi[1] +
                                   a[2] * xi[1] * xi[1];
        rep.worst_low = std::min(rep.worst_low, q);
        rep.worst_high = std::max(rep.worst_high, q);
        if (q > co.K * (1.0 + tol) || q < (1.0 - tol) / co.K) {
          fail("ellipticity bound violated", t, x, xi);
        }
      }
      const Vec2 b = co.b(t, p);
      double bound = std::max({amax(a), std::abs(b[0]), std::abs(b[1]), std::abs(co.c(t, p))});
      for (int ax = 0; ax < grid.dim; ++ax) {
        auto xp = x, xm = x;
        xp[ax] += h;
        xm[ax] -= h;
        const Mat2 ap = co.a(t, Point(xp.data(), grid.dim));
        const Mat2 am = co.a(t, Point(xm.data(), grid.dim));
        for (int e = 0; e < 3; ++e) {
          bound = std::max(bound, std::abs(ap[e] - am[e]) / (2.0 * h));
          bound = std::max(bound, std::abs(ap[e] - 2.0 * a[e] + am[e]) / (h * h));
        }
      }
      rep.worst_bound = std::max(rep.worst_bound, bound);
      if (bound > co.K * (1.0 + 1e-6)) fail("coefficient bound exceeds K", t, x, {0.0, 0.0});
    }
  }
  return rep;
}

inline void require_valid(const CoefficientReport& rep) {
  if (rep.passed) return;
  throw ValidationError("coefficients: " + rep.failure + " at t=" +
                        std::to_string(rep.witness_t) + ", x=(" +
                        std::to_string(rep.witness_x[0]) + "," +
                        std::to_string(rep.witness_x[1]) + "), xi=(" +
                        std::to_string(rep.witness_xi[0]) + "," +
                        std::to_string(rep.witness_xi[1]) + ")");
}

/// Explicit stability bound dx^2 / (2 d K + dx K d + dx^2 K).
inline double cfl_max_dt(const Coefficients& co, const Grid& grid) {
  const double d = grid.dim, K = co.K, dx = grid.dx;
  return dx * dx / (2.0 * d * K + dx * K * d + dx * dx * K);
}

namespace detail {

// Unit-mass smooth bump on (0, 1).
inline double zeta_raw(double z) {
  if (z <= 0.0 || z >= 1.0) return 0.0;
  return std::exp(-1.0 / (z * (1.0 - z)));
}

inline double zeta_norm() {
  static const double norm = [] {
    double e = 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(zeta_raw, 0.0, 1.0,
                                                                        15, 1e-15, &e);
  }();
  return norm;
}

inline double zeta(double z) { return zeta_raw(z) / zeta_norm(); }

// Smooth step: 0 for t <= 0, 1 for t >= 1.
inline double smooth_step(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double p = std::exp(-1.0 / t), q = std::exp(-1.0 / (1.0 - t));
  return p / (p + q);
}

}  // namespace detail

/// Plateau cutoff: 1 on |z| <= 1, 0 on |z| >= 2, smooth in between.
inline double plateau(double z) { return detail::smooth_step(2.0 - std::abs(z)); }

/// Diffusion coefficient h(u): 0 for u <= 0; min(u^lambda, K(1 + u)) for
/// lambda < 1 and u^lambda for lambda >= 1. With cutoff_n set this is the
/// mollified and truncated h_n instead.
struct DiffusionFn {
  double lambda = 0.5;
  double K = 1.0;
  std::optional<int> cutoff_n;

  double base(double u) const {
    if (!(u > 0.0)) return 0.0;
    const double p = std::pow(u, lambda);
    return lambda < 1.0 ? std::min(p, K * (1.0 + u)) : p;
  }

  /// h_n(u) = int_0^1 h(u - z/n) zeta(z) dz * psi(u/n).
  double cutoff(double u, int n) const {
    if (!(u > 0.0)) return 0.0;
    const double cut = plateau(u / n);
    if (cut == 0.0) return 0.0;
    // h(u - z/n) vanishes for z >= n u; the integrand has a |.|^lambda
    // endpoint there, which tanh-sinh handles.
    const double top = std::min(1.0, n * u);
    static thread_local boost::math::quadrature::tanh_sinh<double> ts(12);
    auto g = [&](double z) { return base(u - z / n) * detail::zeta(z); };
    const double v = ts.integrate(g, 0.0, top, 1e-13);
    return v * cut;
  }

  double operator()(double u) const { return cutoff_n ? cutoff(u, *cutoff_n) : base(u); }
};

inline DiffusionFn make_cutoff(const DiffusionFn& h, int n) {
  if (n < 1) throw ValidationError("make_cutoff: n must be >= 1");
  DiffusionFn out = h;
  out.cutoff_n = n;
  return out;
}

struct SolverState {
  Field field;
  double time = 0.0;
  std::uint64_t step_index = 0;
  double clipped_mass = 0.0;
};

struct InitialData {
  enum class Profile { Bump, Table };
  Profile profile = Profile::Bump;
  double R0 = 1.0;
  double height = 1.0;
  /// Radial table (radius, value) for Profile::Table; linear in between.
  std::vector<double> radii;
  std::vector<double> values;

  static InitialData bump(double R0, double height) {
    InitialData d;
    d.R0 = R0;
    d.height = height;
    return d;
  }

  double operator()(double r) const {
    if (r >= R0) return 0.0;
    if (profile == Profile::Bump) {
      const double c = std::cos(detail::kPi * r / (2.0 * R0));
      return height * c * c;
    }
    if (r <= radii.front()) return values.front();
    if (r >= radii.back()) return 0.0;
    const auto it = std::upper_bound(radii.begin(), radii.end(), r);
    const std::size_t j = std::size_t(it - radii.begin());
    const double w = (r - radii[j - 1]) / (radii[j] - radii[j - 1]);
    return (1.0 - w) * values[j - 1] + w * values[j];
  }

  void validate() const {
    if (!(R0 > 0.0)) throw ValidationError("initial: R0 must be positive");
    if (profile == Profile::Bump) {
      if (!(height >= 0.0)) throw ValidationError("initial: height must be >= 0");
      return;
    }
    if (radii.size() < 2 || radii.size() != values.size()) {
      throw ValidationError("initial: table needs >= 2 matching radius/value rows");
    }
    for (std::size_t i = 0; i < radii.size(); ++i) {
      if (values[i] < 0.0) throw ValidationError("initial: negative table value");
      if (i > 0 && !(radii[i] > radii[i - 1])) {
        throw ValidationError("initial: table radii must increase strictly");
      }
      if (radii[i] >= R0 && values[i] != 0.0) {
        throw ValidationError("initial: table support must lie inside |x| < R0");
      }
    }
  }

  Field sample(const Grid& grid) const {
    validate();
    Field f(grid);
    for (std::size_t k = 0; k < grid.cells(); ++k) f.values[k] = (*this)(grid.radius(k));
    return f;
  }
};

/// One replica's stepping machinery: coefficient arrays, the noise
/// workspace and the drift buffer.
class Stepper {
 public:
  static constexpr double kBlowUp = 1e12;

  Stepper(const Coefficients& co, const DiffusionFn& h, const NoiseSampler& sampler,
          double dt, std::uint64_t replica)
      : co_(co), h_(h), sampler_(sampler), grid_(sampler.grid()), dt_(dt),
        replica_(replica), noisy_(!sampler.silent()) {
    if (co.dim != grid_.dim) throw ValidationError("step: coefficient dimension mismatch");
    if (!(dt > 0.0)) throw ValidationError("step: dt must be positive");
    const std::size_t n = grid_.cells();
    a_.resize(n);
    b_.resize(n);
    c_.resize(n);
    next_.resize(n);
    noise_.assign(n, 0.0);
    coefficients_at(0.0);
  }

  double dt() const { return dt_; }
  const std::vector<double>& last_increment() const { return noise_; }

  void advance(SolverState& s) {
    if (!co_.autonomous) coefficients_at(s.time);
    const Grid& g = grid_;
    const std::size_t total = g.cells();
    const auto& u = s.field.values;
    const double inv_dx2 = 1.0 / (g.dx * g.dx);
    const double inv_2dx = 0.5 / g.dx;
    const double inv_4dx2 = 0.25 * inv_dx2;
    const int n = g.n;

    if (noisy_) {
      sample_increment_into(sampler_, dt_, s.step_index, replica_, noise_, work_);
    }
    for (std::size_t k = 0; k < total; ++k) {
      double lu;
      if (g.dim == 1) {
        const int i = int(k);
        const double up = u[i + 1 < n ? i + 1 : 0];
        const double um = u[i > 0 ? i - 1 : n - 1];
        lu = a_[k][0] * (up - 2.0 * u[k] + um) * inv_dx2 + b_[k][0] * (up - um) * inv_2dx +
             c_[k] * u[k];
      } else {
        const int i = int(k) / n, j = int(k) % n;
        const int ip = i + 1 < n ? i + 1 : 0, im = i > 0 ? i - 1 : n - 1;
        const int jp = j + 1 < n ? j + 1 : 0, jm = j > 0 ? j - 1 : n - 1;
        auto at = [&](int p, int q) { return u[std::size_t(p) * n + q]; };
        const double uxp = at(ip, j), uxm = at(im, j), uyp = at(i, jp), uym = at(i, jm);
        const double uxx = (uxp - 2.0 * u[k] + uxm) * inv_dx2;
        const double uyy = (uyp - 2.0 * u[k] + uym) * inv_dx2;
        const double uxy = (at(ip, jp) - at(ip, jm) - at(im, jp) + at(im, jm)) * inv_4dx2;
        lu = a_[k][0] * uxx + 2.0 * a_[k][1] * uxy + a_[k][2] * uyy +
             b_[k][0] * (uxp - uxm) * inv_2dx + b_[k][1] * (uyp - uym) * inv_2dx + c_[k] * u[k];
      }
      double v = u[k] + dt_ * lu;
      if (noisy_) v += h_(u[k]) * noise_[k];
      next_[k] = v;
    }
    double clipped = 0.0, peak = 0.0;
    bool finite = true;
    for (std::size_t k = 0; k < total; ++k) {
      const double v = next_[k];
      if (!std::isfinite(v)) {
        finite = false;
        break;
      }
      if (v < 0.0) {
        clipped -= v;
        next_[k] = 0.0;
      } else {
        peak = std::max(peak, v);
      }
    }
    if (!finite || peak > kBlowUp) {
      throw BlowUpError(s.step_index, finite ? peak : std::numeric_limits<double>::infinity(),
                        h_.lambda,
                        "solver: blow-up at step " + std::to_string(s.step_index) +
                            " (max " + std::to_string(peak) + ", lambda " +
                            std::to_string(h_.lambda) + ")");
    }
    s.field.values.swap(next_);
    s.clipped_mass += clipped * g.cell_volume();
    s.time += dt_;
    ++s.step_index;
  }

 private:
  void coefficients_at(double t) {
    const std::size_t n = grid_.cells();
    for (std::size_t k = 0; k < n; ++k) {
      const auto [i0, i1] = grid_.multi_index(k);
      std::array<double, 2> x{grid_.coord(i0), grid_.dim == 2 ? grid_.coord(i1) : 0.0};
      const Point p(x.data(), grid_.dim);
      a_[k] = co_.a(t, p);
      b_[k] = co_.b(t, p);
      c_[k] = co_.c(t, p);
    }
  }

  Coefficients co_;
  DiffusionFn h_;
  NoiseSampler sampler_;
  Grid grid_;
  double dt_;
  std::uint64_t replica_;
  bool noisy_;
  std::vector<Mat2> a_;
  std::vector<Vec2> b_;
  std::vector<double> c_;
  std::vector<double> next_;
  std::vector<double> noise_;
  std::vector<fft::cplx> work_;
};

/// Single step; convenience wrapper over Stepper for one-off use.
inline SolverState step(SolverState state, const Coefficients& co, const DiffusionFn& h,
                        const NoiseSampler& sampler, double dt, std::uint64_t replica = 0) {
  Stepper st(co, h, sampler, dt, replica);
  st.advance(state);
  return state;
}

struct RecordingConfig {
  std::size_t stride = 1;
  /// Support thresholds relative to max u0.
  std::vector<double> eps_relative{1e-8};
  std::vector<double> shell_radii;
  std::vector<double> weighted_a;
  bool snapshots = false;
};

struct RunConfig {
  Grid grid;
  CorrelationKernel kernel = CorrelationKernel::white(1);
  Coefficients coefficients;
  DiffusionFn diffusion;
  InitialData initial;
  double T = 0.25;
  std::optional<double> dt;
  double cfl_safety = 0.9;
  RecordingConfig recording;
  std::uint64_t seed = 0;
  bool noise = true;
  std::string config_hash;

  double time_step() const {
    const double limit = cfl_safety * cfl_max_dt(coefficients, grid);
    if (dt) {
      if (!(*dt > 0.0)) throw ValidationError("run: dt must be positive");
      if (*dt > limit * (1.0 + 1e-12)) {
        throw ValidationError("run: dt " + std::to_string(*dt) +
                              " exceeds the stability limit " + std::to_string(limit));
      }
      return *dt;
    }
    return limit;
  }

  std::uint64_t steps() const {
    return std::uint64_t(std::ceil(T / time_step() - 1e-9));
  }
};

namespace detail {

inline void record(Trajectory& traj, const SolverState& s, const RecordingConfig& rc,
                   const std::vector<ShellGeometry>& shells) {
  traj.times.push_back(s.time);
  traj.steps.push_back(s.step_index);
  for (std::size_t i = 0; i < traj.eps.size(); ++i) {
    traj.support_radius[i].push_back(support_radius(s.field, traj.eps[i]));
  }
  for (std::size_t i = 0; i < shells.size(); ++i) {
    traj.shell_integrals[i].push_back(shell_integral(s.field, shells[i]));
  }
  for (std::size_t i = 0; i < traj.weighted_a.size(); ++i) {
    traj.weighted_sup[i].push_back(weighted_sup(s.field, traj.weighted_a[i]));
  }
  traj.mass.push_back(total_mass(s.field));
  traj.max_value.push_back(*std::max_element(s.field.values.begin(), s.field.values.end()));
  if (rc.snapshots) traj.snapshots.push_back({s.time, s.step_index, s.field});
}

}  // namespace detail

/// Runs one replica from t = 0 to T (the last step is shortened to land on
/// T exactly) and records observables every `stride` steps and at T.
inline Trajectory simulate(const RunConfig& cfg, const NoiseSampler& sampler,
                           std::uint64_t replica) {
  if (!(cfg.T > 0.0)) throw ValidationError("run: T must be positive");
  if (cfg.recording.stride < 1) throw ValidationError("run: record stride must be >= 1");
  const double dt = cfg.time_step();
  std::optional<NoiseSampler> silent;
  if (!cfg.noise) silent = sampler.silenced();
  const NoiseSampler& noise = silent ? *silent : sampler;

  SolverState s;
  s.field = cfg.initial.sample(cfg.grid);
  const double u0max = *std::max_element(s.field.values.begin(), s.field.values.end());

  Trajectory traj;
  traj.dt = dt;
  traj.replica = replica;
  traj.seed = cfg.seed;
  traj.config_hash = cfg.config_hash;
  for (double e : cfg.recording.eps_relative) {
    traj.eps.push_back(e * (u0max > 0.0 ? u0max : 1.0));
  }
  traj.support_radius.resize(traj.eps.size());
  traj.shell_radii = cfg.recording.shell_radii;
  traj.shell_integrals.resize(traj.shell_radii.size());
  std::vector<ShellGeometry> shells;
  for (double R : traj.shell_radii) {
    shells.push_back(ShellGeometry::make(cfg.grid, R));
    if (shells.back().cells.empty()) {
      throw GeometryError("run: shell at R = " + std::to_string(R) + " contains no cells");
    }
  }
  traj.weighted_a = cfg.recording.weighted_a;
  traj.weighted_sup.resize(traj.weighted_a.size());

  detail::record(traj, s, cfg.recording, shells);
  const std::uint64_t nsteps = cfg.steps();
  Stepper full(cfg.coefficients, cfg.diffusion, noise, dt, replica);
  for (std::uint64_t k = 0; k < nsteps; ++k) {
    const double remaining = cfg.T - s.time;
    if (k + 1 == nsteps && remaining < dt * (1.0 - 1e-12)) {
      Stepper last(cfg.coefficients, cfg.diffusion, noise, remaining, replica);
      last.advance(s);
    } else {
      full.advance(s);
    }
    if ((k + 1) % cfg.recording.stride == 0 || k + 1 == nsteps) {
      detail::record(traj, s, cfg.recording, shells);
    }
  }
  traj.clipped_mass = s.clipped_mass;
  return traj;
}

inline Trajectory simulate(const RunConfig& cfg, std::uint64_t replica) {
  const auto sampler = build_sampler(cfg.kernel, cfg.grid, cfg.seed);
  return simulate(cfg, sampler, replica);
}

/// Gaussian test function exp(-|x - centre|^2 / (2 sigma^2)).
struct GaussianTest {
  std::array<double, 2> centre{0.0, 0.0};
  double sigma = 1.0;
};

/// Relative residual of the discrete weak form
///   (u(T),phi) - (u0,phi) - sum_k dt (u_k, L*phi) - sum_k (h(u_k) phi, dF_k)
/// divided by the largest of its terms. Needs a snapshot at every step;
/// the increments are regenerated from the sampler.
inline double weak_form_residual(const Trajectory& traj, const GaussianTest& phi,
                                 const Coefficients& co, const DiffusionFn& h,
                                 const NoiseSampler& sampler, bool noise = true) {
  const auto& snaps = traj.snapshots;
  if (snaps.size() < 2) throw UnusableTrajectoryError("weak form: no snapshots stored");
  for (std::size_t i = 0; i < snaps.size(); ++i) {
    if (snaps[i].step != snaps[0].step + i) {
      throw UnusableTrajectoryError("weak form: snapshots must be stored at every step");
    }
  }
  const Grid& g = snaps[0].field.grid;
  const std::size_t total = g.cells();
  const double vol = g.cell_volume();
  const double s2 = phi.sigma * phi.sigma;
  const double hd = 1e-4;

  std::vector<double> ph(total);
  std::vector<std::array<double, 2>> dph(total);
  std::vector<Mat2> d2ph(total);
  for (std::size_t k = 0; k < total; ++k) {
    const auto [i0, i1] = g.multi_index(k);
    const double y0 = g.coord(i0) - phi.centre[0];
    const double y1 = g.dim == 2 ? g.coord(i1) - phi.centre[1] : 0.0;
    const double p = std::exp(-(y0 * y0 + y1 * y1) / (2.0 * s2));
    ph[k] = p;
    dph[k] = {-y0 / s2 * p, -y1 / s2 * p};
    d2ph[k] = {(y0 * y0 / s2 - 1.0) / s2 * p, y0 * y1 / (s2 * s2) * p,
               (y1 * y1 / s2 - 1.0) / s2 * p};
  }
  // L*phi = (a^{ij} phi)_{ij} - (b^i phi)_i + c phi at time t.
  auto adjoint = [&](double t, std::vector<double>& out) {
    out.resize(total);
    for (std::size_t k = 0; k < total; ++k) {
      const auto [i0, i1] = g.multi_index(k);
      std::array<double, 2> x{g.coord(i0), g.dim == 2 ? g.coord(i1) : 0.0};
      auto A = [&](std::array<double, 2> y) { return co.a(t, Point(y.data(), g.dim)); };
      auto B = [&](std::array<double, 2> y) { return co.b(t, Point(y.data(), g.dim)); };
      const Mat2 a = A(x);
      const Vec2 b = B(x);
      const double c = co.c(t, Point(x.data(), g.dim));
      auto entry = [](const Mat2& m, int i, int j) { return i == j ? m[2 * i] : m[1]; };
      double v = c * ph[k];
      for (int i = 0; i < g.dim; ++i) {
        auto xp = x, xm = x;
        xp[i] += hd;
        xm[i] -= hd;
        const Mat2 ap = A(xp), am = A(xm);
        const Vec2 bp = B(xp), bm = B(xm);
        v -= (bp[i] - bm[i]) / (2.0 * hd) * ph[k] + b[i] * dph[k][i];
        for (int j = 0; j < g.dim; ++j) {
          // a^{ij}_{ij} phi + 2 a^{ij}_i phi_j + a^{ij} phi_{ij}
          double aij_ij;
          if (i == j) {
            aij_ij = (entry(ap, i, j) - 2.0 * entry(a, i, j) + entry(am, i, j)) / (hd * hd);
          } else {
            auto xpp = x, xpm = x, xmp = x, xmm = x;
            xpp[i] += hd; xpp[j] += hd;
            xpm[i] += hd; xpm[j] -= hd;
            xmp[i] -= hd; xmp[j] += hd;
            xmm[i] -= hd; xmm[j] -= hd;
            aij_ij = (entry(A(xpp), i, j) - entry(A(xpm), i, j) - entry(A(xmp), i, j) +
                      entry(A(xmm), i, j)) /
                     (4.0 * hd * hd);
          }
          const double aij_i = (entry(ap, i, j) - entry(am, i, j)) / (2.0 * hd);
          const double phij = dph[k][j];
          const double phiij = i == j ? d2ph[k][2 * i] : d2ph[k][1];
          v += aij_ij * ph[k] + 2.0 * aij_i * phij + entry(a, i, j) * phiij;
        }
      }
      out[k] = v;
    }
  };
  auto pair = [&](const std::vector<double>& u, const std::vector<double>& w) {
    double acc = 0.0;
    for (std::size_t k = 0; k < total; ++k) acc += u[k] * w[k];
    return acc * vol;
  };

  std::vector<double> lphi;
  adjoint(snaps[0].time, lphi);
  const double first = pair(snaps.front().field.values, ph);
  const double last = pair(snaps.back().field.values, ph);
  double drift = 0.0, mart = 0.0, drift_abs = 0.0, mart_abs = 0.0;
  std::vector<double> inc(total, 0.0);
  std::vector<fft::cplx> work;
  for (std::size_t i = 0; i + 1 < snaps.size(); ++i) {
    const double dt = snaps[i + 1].time - snaps[i].time;
    if (!co.autonomous) adjoint(snaps[i].time, lphi);
    const auto& u = snaps[i].field.values;
    const double d = dt * pair(u, lphi);
    drift += d;
    drift_abs += std::abs(d);
    if (noise) {
      sample_increment_into(sampler, dt, snaps[i].step, traj.replica, inc, work);
      double m = 0.0;
      for (std::size_t k = 0; k < total; ++k) m += h(u[k]) * ph[k] * inc[k];
      m *= vol;
      mart += m;
      mart_abs += std::abs(m);
    }
  }
  const double residual = last - first - drift - mart;
  const double scale = std::max({std::abs(last), std::abs(first), drift_abs, mart_abs});
  return scale > 0.0 ? std::abs(residual) / scale : 0.0;
}

// Binary field files: little-endian
//   char[4] "CSPF", uint32 version (1), uint32 dim, uint32 n,
//   float64 half_extent, float64 dx, float64 time, float64 values[n^dim].

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw ValidationError("field file: truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_field(const std::string& path, const Field& f, double time) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("field file: cannot open " + path);
  os.write("CSPF", 4);
  detail::put_le<std::uint32_t>(os, 1);
  detail::put_le<std::uint32_t>(os, std::uint32_t(f.grid.dim));
  detail::put_le<std::uint32_t>(os, std::uint32_t(f.grid.n));
  detail::put_le<double>(os, f.grid.half_extent);
  detail::put_le<double>(os, f.grid.dx);
  detail::put_le<double>(os, time);
  for (double v : f.values) detail::put_le<double>(os, v);
}

inline Snapshot read_field(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("field file: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CSPF", 4) != 0) {
    throw ValidationError("field file: bad magic in " + path);
  }
  if (detail::get_le<std::uint32_t>(is) != 1) throw ValidationError("field file: bad version");
  const int dim = int(detail::get_le<std::uint32_t>(is));
  const int n = int(detail::get_le<std::uint32_t>(is));
  const double L = detail::get_le<double>(is);
  detail::get_le<double>(is);  // dx, implied by n and L
  Snapshot s;
  s.time = detail::get_le<double>(is);
  s.field = Field(Grid::make(dim, n, L));
  for (double& v : s.field.values) v = detail::get_le<double>(is);
  return s;
}

}  // namespace csplab
