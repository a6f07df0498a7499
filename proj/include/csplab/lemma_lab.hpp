#pragma once

// Numerical checks of the auxiliary estimates behind compact support:
// exponent bookkeeping, reverse-Jensen integral inequalities in space and
// time, the covariance lower bound and the properties of the cutoff h_n.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csplab/errors.hpp"
#include "csplab/fft.hpp"
#include "csplab/kernels.hpp"
#include "csplab/noise.hpp"
#include "csplab/solver.hpp"

namespace csplab::lemma {

using json = nlohmann::json;

/// Uniform JSON record {lemma, params, lhs, rhs, ratio, holds, resolution}.
struct Report {
  std::string lemma;
  json params = json::object();
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
  bool holds = true;
  json resolution = json::object();
  json extra = json::object();

  json to_json() const {
    json j{{"lemma", lemma}, {"params", params},  {"lhs", lhs},
           {"rhs", rhs},     {"ratio", ratio},    {"holds", holds},
           {"resolution", resolution}};
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    return j;
  }
};

// ---------------------------------------------------------------- exponents

struct ExponentSet {
  double gamma = 0.0;
  double lambda = 0.0;
  int d = 1;
  double l = 0.0;
  double L = 0.0;

  /// L (gamma l + 1) - (gamma + 1).
  double identity_defect() const { return L * (gamma * l + 1.0) - (gamma + 1.0); }
};

inline ExponentSet exponents(double gamma, double lambda, int d) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("exponents: gamma must lie in (0, 1)");
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw ValidationError("exponents: lambda must lie in (0, 1)");
  }
  if (d < 1) throw ValidationError("exponents: d must be >= 1");
  ExponentSet e{gamma, lambda, d};
  e.l = (gamma * lambda + d) / (gamma + d);
  e.L = (gamma + 1.0) / (gamma * e.l + 1.0);
  if (!(e.l > 0.0 && e.l < 1.0) || !(e.L > 1.0)) {
    throw RuntimeFailure("exponents: l or L left its range");
  }
  return e;
}

// ------------------------------------------------------------ sample nodes

/// Quadrature nodes with weights, plus the point pairs on which Hoelder
/// quotients are measured (each with |x_i - x_j|^-gamma precomputed).
struct SampleNodes {
  int dim = 1;
  double gamma = 0.5;
  std::vector<std::array<double, 2>> x;
  std::vector<double> w;
  std::vector<std::uint32_t> pair_i, pair_j;
  std::vector<double> inv_dist;
  /// Linear resolution parameter the nodes were built with.
  int resolution = 0;

  std::size_t size() const { return x.size(); }

  void add_pair(std::size_t i, std::size_t j) {
    const double dx = x[i][0] - x[j][0], dy = x[i][1] - x[j][1];
    const double dist = std::sqrt(dx * dx + dy * dy);
    if (dist <= 0.0) return;
    pair_i.push_back(std::uint32_t(i));
    pair_j.push_back(std::uint32_t(j));
    inv_dist.push_back(std::pow(dist, -gamma));
  }

  void add_random_pairs(std::size_t count, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<std::size_t> pick(0, size() - 1);
    for (std::size_t k = 0; k < count; ++k) add_pair(pick(gen), pick(gen));
  }

  double quotient(const std::vector<double>& v) const {
    double q = 0.0;
    for (std::size_t p = 0; p < pair_i.size(); ++p) {
      q = std::max(q, std::abs(v[pair_i[p]] - v[pair_j[p]]) * inv_dist[p]);
    }
    return q;
  }

  double integral(const std::vector<double>& v) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) acc += w[k] * v[k];
    return acc;
  }

  double integral_pow(const std::vector<double>& v, double p) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (v[k] > 0.0) acc += w[k] * std::pow(v[k], p);
    }
    return acc;
  }
};

/// Trapezoid nodes t_j = j T / m on [0, T]; every pair enters the quotient.
inline SampleNodes interval_nodes(double T, int m, double gamma) {
  if (!(T > 0.0) || m < 2) throw ValidationError("interval_nodes: need T > 0 and m >= 2");
  SampleNodes s;
  s.dim = 1;
  s.gamma = gamma;
  s.resolution = m;
  const double h = T / m;
  for (int j = 0; j <= m; ++j) {
    s.x.push_back({j * h, 0.0});
    s.w.push_back(j == 0 || j == m ? h / 2.0 : h);
  }
  for (int i = 0; i <= m; ++i) {
    for (int j = i + 1; j <= m; ++j) s.add_pair(std::size_t(i), std::size_t(j));
  }
  return s;
}

// ----------------------------------------------------------- Hoelder samples

/// g on a node set, realised from a truncated random Fourier series and
/// rescaled so that its measured Hoelder quotient hits H.
struct HolderSample {
  std::vector<double> values;
  double gamma = 0.5;
  double H_target = 1.0;
  double H_measured = 0.0;
  double sup = 0.0;
};

enum class Anchor {
  Offset,  ///< g = s (S - min S) + offset, with sup g <= H
  Origin   ///< g = s |S - S(0)|, so g(0) = 0 at the first node
};

/// Series S(x) = sum_k c_k cos(2 pi k <theta_k, x> / period + phi_k) with
/// c_k ~ N(0, k^-(2 gamma + 1)). The draw depends only on the seed, so
/// refining the nodes samples the same function.
struct FourierSeries {
  int dim = 1;
  double period = 1.0;
  std::vector<double> c, phase;
  std::vector<std::array<double, 2>> dir;
  double offset_fraction = 0.0;

  static FourierSeries draw(int dim, double period, int modes, double gamma, std::uint64_t seed) {
    FourierSeries f;
    f.dim = dim;
    f.period = period;
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit;
    for (int k = 1; k <= modes; ++k) {
      f.c.push_back(normal(gen) * std::pow(double(k), -(gamma + 0.5)));
      f.phase.push_back(2.0 * std::numbers::pi * unit(gen));
      const double th = 2.0 * std::numbers::pi * unit(gen);
      f.dir.push_back(dim == 1 ? std::array<double, 2>{1.0, 0.0}
                               : std::array<double, 2>{std::cos(th), std::sin(th)});
    }
    f.offset_fraction = unit(gen);
    return f;
  }

  double operator()(const std::array<double, 2>& x) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      const double proj = dir[k][0] * x[0] + dir[k][1] * x[1];
      acc += c[k] * std::cos(2.0 * std::numbers::pi * double(k + 1) * proj / period + phase[k]);
    }
    return acc;
  }
};

inline HolderSample make_holder_sample(const SampleNodes& nodes, const FourierSeries& series,
                                       double H, Anchor anchor) {
  HolderSample s;
  s.gamma = nodes.gamma;
  s.H_target = H;
  const std::size_t n = nodes.size();
  std::vector<double> raw(n);
  for (std::size_t k = 0; k < n; ++k) raw[k] = series(nodes.x[k]);
  s.values.resize(n);
  if (anchor == Anchor::Origin) {
    for (std::size_t k = 0; k < n; ++k) s.values[k] = std::abs(raw[k] - raw[0]);
  } else {
    const double lo = *std::min_element(raw.begin(), raw.end());
    for (std::size_t k = 0; k < n; ++k) s.values[k] = raw[k] - lo;
  }
  const double q = nodes.quotient(s.values);
  if (q > 0.0) {
    for (double& v : s.values) v *= H / q;
  }
  if (anchor == Anchor::Offset) {
    double top = *std::max_element(s.values.begin(), s.values.end());
    if (top > H) {
      for (double& v : s.values) v *= H / top;
      top = H;
    }
    const double shift = series.offset_fraction * (H - top);
    for (double& v : s.values) v += shift;
  }
  s.H_measured = nodes.quotient(s.values);
  s.sup = s.values.empty() ? 0.0 : *std::max_element(s.values.begin(), s.values.end());
  return s;
}

// ------------------------------------------------- reverse Jensen in space

/// Annulus {R + a r < |x| < R + b r} together with the exponents of the
/// space inequality.
struct AnnulusProblem {
  int d = 1;
  double R = 2.0;
  double r = 0.01;
  double a = 0.0;
  double b = 1.0;
  double gamma = 0.5;
  double lambda = 0.5;
  double H = 1.5;

  /// Unit-sphere surface d pi^{d/2} / Gamma(d/2 + 1).
  double sphere() const {
    return d * std::pow(std::numbers::pi, d / 2.0) / std::tgamma(d / 2.0 + 1.0);
  }

  /// Upper bound on admissible r.
  double r_bound() const {
    const double inner = std::pow(2.0, -(gamma + 1.0) / gamma) * std::pow(H, -d / gamma) *
                         std::pow(R, d - 1.0) * sphere();
    return std::min(R / b, std::pow(inner, 1.0 / (gamma + d - 1.0)) / (b - a));
  }

  void validate() const {
    if (d != 1 && d != 2) throw ValidationError("reverse_jensen_x: d must be 1 or 2");
    if (!(gamma > 0.0 && gamma < 1.0) || !(lambda > 0.0 && lambda < 1.0)) {
      throw ValidationError("reverse_jensen_x: gamma and lambda must lie in (0, 1)");
    }
    if (!(a >= 0.0 && b > a)) throw ValidationError("reverse_jensen_x: need 0 <= a < b");
    if (!(H > 1.0)) throw ValidationError("reverse_jensen_x: need H > 1");
    if (!(R > 1.0)) throw ValidationError("reverse_jensen_x: need R > 1");
    const double bound = r_bound();
    if (!(r > 0.0 && r < bound)) {
      throw ValidationError("reverse_jensen_x: r = " + std::to_string(r) +
                            " outside the admissible range (0, " + std::to_string(bound) + ")");
    }
  }

  double inner() const { return R + a * r; }
  double outer() const { return R + b * r; }

  json to_json() const {
    return {{"d", d},         {"R", R},           {"r", r}, {"a", a}, {"b", b},
            {"gamma", gamma}, {"lambda", lambda}, {"H", H}, {"r_bound", r_bound()}};
  }

  /// Midpoint nodes with m cells across the annulus width. In d = 1 both
  /// components of the annulus are included; in d = 2 the grid is polar
  /// with angular cells of about the radial spacing.
  SampleNodes nodes(int m) const {
    validate();
    if (m < 2) throw ValidationError("annulus nodes: m must be >= 2");
    SampleNodes s;
    s.dim = d;
    s.gamma = gamma;
    s.resolution = m;
    const double lo = inner(), hr = (outer() - inner()) / m;
    if (d == 1) {
      for (int side : {1, -1}) {
        for (int i = 0; i < m; ++i) {
          s.x.push_back({side * (lo + (i + 0.5) * hr), 0.0});
          s.w.push_back(hr);
        }
      }
      for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < m; ++i) {
          for (int j = i + 1; j < m; ++j) s.add_pair(std::size_t(c * m + i), std::size_t(c * m + j));
        }
      }
      for (int i = 0; i < m; ++i) s.add_pair(std::size_t(i), std::size_t(m + i));
      return s;
    }
    const double mid = 0.5 * (inner() + outer());
    const int M = std::max(8, int(std::ceil(2.0 * std::numbers::pi * mid / hr)));
    const double ht = 2.0 * std::numbers::pi / M;
    for (int i = 0; i < m; ++i) {
      const double rho = lo + (i + 0.5) * hr;
      for (int j = 0; j < M; ++j) {
        const double th = (j + 0.5) * ht;
        s.x.push_back({rho * std::cos(th), rho * std::sin(th)});
        s.w.push_back(rho * hr * ht);
      }
    }
    auto at = [&](int i, int j) { return std::size_t(i) * M + std::size_t(((j % M) + M) % M); };
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < M; ++j) {
        for (int step = 1; step < std::max(m, M); step *= 2) {
          if (step < M) s.add_pair(at(i, j), at(i, j + step));
          if (i + step < m) {
            s.add_pair(at(i, j), at(i + step, j));
            s.add_pair(at(i, j), at(i + step, j + step));
            s.add_pair(at(i, j), at(i + step, j - step));
          }
        }
      }
    }
    s.add_random_pairs(20000, 0x5eed);
    return s;
  }
};

inline Report reverse_jensen_x(const AnnulusProblem& p, const SampleNodes& nodes,
                               const HolderSample& g) {
  p.validate();
  if (g.values.size() != nodes.size()) {
    throw ValidationError("reverse_jensen_x: sample does not match the nodes");
  }
  for (double v : g.values) {
    if (v < 0.0) throw ValidationError("reverse_jensen_x: sample must be nonnegative");
  }
  if (g.sup > p.H * (1.0 + 1e-12) || g.H_measured > 1.05 * p.H) {
    throw ValidationError("reverse_jensen_x: sample exceeds the Hoelder bound H");
  }
  const double gd = p.gamma + p.d;
  Report rep;
  rep.lemma = "reverse_jensen_x";
  rep.params = p.to_json();
  rep.lhs = std::pow(nodes.integral(g.values), (p.gamma * p.lambda + p.d) / gd);
  rep.rhs = std::pow(p.R, p.d * (p.d - 1.0) / gd) *
            std::pow(p.r * (p.b - p.a), -p.d * (p.gamma + p.d - 1.0) / gd) *
            nodes.integral_pow(g.values, p.lambda);
  rep.ratio = rep.rhs > 0.0 ? rep.lhs / rep.rhs : 0.0;
  rep.holds = std::isfinite(rep.ratio);
  rep.resolution = {{"m", nodes.resolution}, {"nodes", nodes.size()}};
  rep.extra = {{"H_measured", g.H_measured}};
  return rep;
}

// -------------------------------------------------- reverse Jensen in time

struct TimeProblem {
  double T = 1.0;
  double gamma = 0.5;
  double lambda = 0.5;
  double H = 1.5;

  void validate() const {
    if (!(T > 0.0)) throw ValidationError("reverse_jensen_t: T must be positive");
    if (!(gamma > 0.0 && gamma < 1.0) || !(lambda > 0.0 && lambda < 1.0)) {
      throw ValidationError("reverse_jensen_t: gamma and lambda must lie in (0, 1)");
    }
    if (!(H > 0.0)) throw ValidationError("reverse_jensen_t: H must be positive");
  }

  json to_json() const { return {{"T", T}, {"gamma", gamma}, {"lambda", lambda}, {"H", H}}; }

  SampleNodes nodes(int m) const {
    validate();
    return interval_nodes(T, m, gamma);
  }
};

inline Report reverse_jensen_t(const TimeProblem& p, const SampleNodes& nodes,
                               const HolderSample& g) {
  p.validate();
  if (g.values.size() != nodes.size() || nodes.x.front()[0] != 0.0) {
    throw ValidationError("reverse_jensen_t: sample must live on nodes starting at t = 0");
  }
  if (std::abs(g.values.front()) > 1e-12 * std::max(1.0, p.H)) {
    throw ValidationError("reverse_jensen_t: g(0) must vanish");
  }
  for (double v : g.values) {
    if (v < 0.0) throw ValidationError("reverse_jensen_t: sample must be nonnegative");
  }
  if (g.H_measured > 1.05 * p.H) {
    throw ValidationError("reverse_jensen_t: measured Hoelder constant exceeds H");
  }
  Report rep;
  rep.lemma = "reverse_jensen_t";
  rep.params = p.to_json();
  rep.lhs = std::pow(nodes.integral(g.values), (p.gamma * p.lambda + 1.0) / (p.gamma + 1.0));
  rep.rhs = std::pow(p.H, 1.0 / p.gamma) * nodes.integral_pow(g.values, p.lambda);
  rep.ratio = rep.rhs > 0.0 ? rep.lhs / rep.rhs : 0.0;
  rep.holds = std::isfinite(rep.ratio);
  rep.resolution = {{"m", nodes.resolution}, {"nodes", nodes.size()}};
  rep.extra = {{"H_measured", g.H_measured}};
  return rep;
}

/// Closed-form ratio for the extremal profile g(t) = H t^gamma.
inline double extremal_time_ratio(const TimeProblem& p) {
  const double q = (p.gamma * p.lambda + 1.0) / (p.gamma + 1.0);
  const double lhs = std::pow(p.H * std::pow(p.T, p.gamma + 1.0) / (p.gamma + 1.0), q);
  const double rhs = std::pow(p.H, 1.0 / p.gamma) * std::pow(p.H, p.lambda) *
                     std::pow(p.T, p.gamma * p.lambda + 1.0) / (p.gamma * p.lambda + 1.0);
  return lhs / rhs;
}

/// The extremal profile on the given nodes, as a sample.
inline HolderSample extremal_time_sample(const TimeProblem& p, const SampleNodes& nodes) {
  HolderSample s;
  s.gamma = p.gamma;
  s.H_target = p.H;
  for (const auto& x : nodes.x) s.values.push_back(p.H * std::pow(x[0], p.gamma));
  s.H_measured = nodes.quotient(s.values);
  s.sup = s.values.back();
  return s;
}

/// T-power bookkeeping for g = H t^gamma: the exponent mismatch must vanish,
/// the closed-form ratio must not depend on T and the quadrature must agree
/// with it.
inline Report extremal_time_check(const TimeProblem& base, const std::vector<double>& T_list,
                                  int m = 4096, double rel_tol = 1e-3) {
  base.validate();
  Report rep;
  rep.lemma = "reverse_jensen_t_extremal";
  rep.params = base.to_json();
  rep.params["T_list"] = T_list;
  const double mismatch = (base.gamma + 1.0) * ((base.gamma * base.lambda + 1.0) /
                                                (base.gamma + 1.0)) -
                          (base.gamma * base.lambda + 1.0);
  json rows = json::array();
  double ref = 0.0, spread = 0.0, worst_quad = 0.0;
  for (std::size_t i = 0; i < T_list.size(); ++i) {
    TimeProblem p = base;
    p.T = T_list[i];
    const double closed = extremal_time_ratio(p);
    const auto nodes = interval_nodes(p.T, m, p.gamma);
    const auto num = reverse_jensen_t(p, nodes, extremal_time_sample(p, nodes));
    if (i == 0) ref = closed;
    spread = std::max(spread, std::abs(closed - ref) / ref);
    worst_quad = std::max(worst_quad, std::abs(num.ratio - closed) / closed);
    rows.push_back({{"T", p.T}, {"closed_form", closed}, {"quadrature", num.ratio}});
    if (i == 0) {
      rep.lhs = num.lhs;
      rep.rhs = num.rhs;
      rep.ratio = closed;
    }
  }
  rep.holds = std::abs(mismatch) <= 1e-14 && spread <= 1e-12 && worst_quad <= rel_tol;
  rep.resolution = {{"m", m}};
  rep.extra = {{"exponent_mismatch", mismatch},
               {"T_spread", spread},
               {"quadrature_error", worst_quad},
               {"rows", rows}};
  return rep;
}

// ------------------------------------------------------------- ensembles

/// Max ratio over a fixed ensemble at two resolutions (m and 4m).
struct EnsembleStudy {
  std::string lemma;
  json params;
  int members = 0;
  std::vector<int> resolutions;
  std::vector<double> max_ratio;
  double stability = 0.0;  ///< max/min of max_ratio over resolutions
  bool holds = false;

  json to_json() const {
    return {{"lemma", lemma},
            {"params", params},
            {"members", members},
            {"resolution", resolutions},
            {"max_ratio", max_ratio},
            {"stability", stability},
            {"lhs", nullptr},
            {"rhs", nullptr},
            {"ratio", max_ratio.empty() ? 0.0 : max_ratio.back()},
            {"holds", holds}};
  }
};

namespace detail {

inline void finish_study(EnsembleStudy& st) {
  const auto [lo, hi] = std::minmax_element(st.max_ratio.begin(), st.max_ratio.end());
  st.stability = *lo > 0.0 ? *hi / *lo : std::numeric_limits<double>::infinity();
  st.holds = std::all_of(st.max_ratio.begin(), st.max_ratio.end(),
                         [](double r) { return std::isfinite(r) && r > 0.0; }) &&
             st.stability < 2.0;
}

}  // namespace detail

inline EnsembleStudy reverse_jensen_x_ensemble(const AnnulusProblem& p, int members, int m,
                                               std::uint64_t seed, int modes = 0) {
  p.validate();
  if (modes <= 0) modes = p.d == 1 ? 16 : 6;
  EnsembleStudy st;
  st.lemma = "reverse_jensen_x";
  st.params = p.to_json();
  st.params["modes"] = modes;
  st.params["seed"] = seed;
  st.members = members;
  // The series period is twice the annulus width.
  const double period = 2.0 * (p.outer() - p.inner());
  for (int res : {m, 4 * m}) {
    const auto nodes = p.nodes(res);
    double top = 0.0;
    for (int k = 0; k < members; ++k) {
      const auto series = FourierSeries::draw(p.d, period, modes, p.gamma, seed + std::uint64_t(k));
      const auto g = make_holder_sample(nodes, series, p.H, Anchor::Offset);
      top = std::max(top, reverse_jensen_x(p, nodes, g).ratio);
    }
    st.resolutions.push_back(res);
    st.max_ratio.push_back(top);
  }
  detail::finish_study(st);
  return st;
}

inline EnsembleStudy reverse_jensen_t_ensemble(const TimeProblem& p, int members, int m,
                                               std::uint64_t seed, int modes = 16) {
  p.validate();
  EnsembleStudy st;
  st.lemma = "reverse_jensen_t";
  st.params = p.to_json();
  st.params["modes"] = modes;
  st.params["seed"] = seed;
  st.members = members;
  for (int res : {m, 4 * m}) {
    const auto nodes = p.nodes(res);
    double top = 0.0;
    for (int k = 0; k < members; ++k) {
      const auto series = FourierSeries::draw(1, 2.0 * p.T, modes, p.gamma, seed + std::uint64_t(k));
      const auto g = make_holder_sample(nodes, series, p.H, Anchor::Origin);
      top = std::max(top, reverse_jensen_t(p, nodes, g).ratio);
    }
    st.resolutions.push_back(res);
    st.max_ratio.push_back(top);
  }
  detail::finish_study(st);
  return st;
}

// --------------------------------------------------- covariance lower bound

namespace detail {

/// Centred field (origin at n/2) to lag order (origin at index 0).
inline std::vector<double> to_lag_order(const Field& f) {
  const Grid& g = f.grid;
  std::vector<double> out(g.cells());
  for (std::size_t k = 0; k < g.cells(); ++k) {
    const auto [i0, i1] = g.multi_index(k);
    const int h = g.n / 2;
    out[g.index(i0 - h, g.dim == 2 ? i1 - h : 0)] = f.values[k];
  }
  return out;
}

inline Field from_lag_order(const Grid& g, const std::vector<double>& lag) {
  Field f(g);
  const int h = g.n / 2;
  for (std::size_t k = 0; k < g.cells(); ++k) {
    const auto [i0, i1] = g.multi_index(k);
    f.values[g.index(i0 + h, g.dim == 2 ? i1 + h : 0)] = lag[k];
  }
  return f;
}

/// Circular convolution sum_y a(y) b(x - y) (no cell-volume factor).
inline std::vector<double> circular_convolve(const Grid& g, const std::vector<double>& a,
                                             const std::vector<double>& b) {
  auto A = fft::forward_real(a, g.dim, g.n);
  const auto B = fft::forward_real(b, g.dim, g.n);
  for (std::size_t k = 0; k < A.size(); ++k) A[k] *= B[k];
  fft::inverse(A, g.dim, g.n);
  std::vector<double> out(A.size());
  const double inv = 1.0 / double(A.size());
  for (std::size_t k = 0; k < A.size(); ++k) out[k] = A[k].real() * inv;
  return out;
}

/// Circular autocorrelation sum_y a(y) a(y - z).
inline std::vector<double> autocorrelation(const Grid& g, const std::vector<double>& a) {
  auto A = fft::forward_real(a, g.dim, g.n);
  for (auto& v : A) v = std::norm(v);
  fft::inverse(A, g.dim, g.n);
  std::vector<double> out(A.size());
  const double inv = 1.0 / double(A.size());
  for (std::size_t k = 0; k < A.size(); ++k) out[k] = A[k].real() * inv;
  return out;
}

/// Per-axis width (in cells) of the bounding box of {f != 0}; 0 if empty.
inline std::array<int, 2> support_width(const Field& f) {
  const Grid& g = f.grid;
  std::array<int, 2> lo{g.n, g.n}, hi{-1, -1};
  for (std::size_t k = 0; k < g.cells(); ++k) {
    if (f.values[k] == 0.0) continue;
    const auto m = g.multi_index(k);
    for (int a = 0; a < g.dim; ++a) {
      lo[a] = std::min(lo[a], m[a]);
      hi[a] = std::max(hi[a], m[a]);
    }
  }
  std::array<int, 2> w{0, 0};
  for (int a = 0; a < g.dim; ++a) w[a] = hi[a] >= lo[a] ? hi[a] - lo[a] + 1 : 0;
  return w;
}

}  // namespace detail

/// Wrapped kernel on the grid in lag order.
inline std::vector<double> kernel_on_grid(const CorrelationKernel& kernel, const Grid& grid) {
  if (kernel.dim() != grid.dim) throw ValidationError("kernel dimension does not match the grid");
  std::vector<double> f(grid.cells());
  for (std::size_t k = 0; k < grid.cells(); ++k) {
    const auto [i0, i1] = grid.multi_index(k);
    f[k] = wrapped_covariance(kernel, grid, {i0, i1});
  }
  return f;
}

/// psi_eps(x) = eps^-d psi(x / eps) with psi(x) = 4^-d prod (2 - |x_i|)_+,
/// sampled at the lag points and renormalised to unit discrete mass.
inline std::vector<double> mollifier(double eps, const Grid& grid) {
  if (!(eps > 0.0) || 2.0 * eps > grid.half_extent / 2.0) {
    throw ValidationError("mollifier: need 0 < 2 eps <= L/2");
  }
  std::vector<double> m(grid.cells());
  double mass = 0.0;
  for (std::size_t k = 0; k < grid.cells(); ++k) {
    const auto [i0, i1] = grid.multi_index(k);
    double v = 1.0;
    for (int a = 0; a < grid.dim; ++a) {
      int j = a == 0 ? i0 : i1;
      if (j > grid.n / 2) j -= grid.n;
      v *= std::max(0.0, 2.0 - std::abs(j * grid.dx) / eps) / 4.0;
    }
    m[k] = v;
    mass += v;
  }
  if (mass == 0.0) {
    m[0] = 1.0;
    mass = 1.0;
  }
  const double scale = 1.0 / (mass * grid.cell_volume());
  for (double& v : m) v *= scale;
  return m;
}

/// f_eps = psi_eps * psi_eps * f on the grid, in lag order.
inline std::vector<double> mollified_kernel(const CorrelationKernel& kernel, double eps,
                                            const Grid& grid) {
  const auto psi = mollifier(eps, grid);
  const double vol = grid.cell_volume();
  auto pp = detail::circular_convolve(grid, psi, psi);
  auto f = detail::circular_convolve(grid, pp, kernel_on_grid(kernel, grid));
  for (double& v : f) v *= vol * vol;
  return f;
}

struct PhiConstruction {
  Field phi;
  double epsilon = 0.0;
  double r = 0.0;
  double c = 0.0;
  double f_eps0 = 0.0;
  double norm2 = 0.0;  ///< sum phi^2 dx^d = sup of phi * phi~

  json to_json() const {
    return {{"epsilon", epsilon}, {"r", r}, {"c", c}, {"f_eps0", f_eps0}, {"norm2", norm2}};
  }
};

/// phi >= 0, smooth, supported in |x| < r/2 (so phi * phi~ lives in |x| < r),
/// scaled to ||phi||^2 = norm_fraction * c where c = min of f_eps over
/// |x| <= r. Without an explicit r, r is the largest radius on which
/// f_eps stays above f_eps(0)/2, capped at L/2.
inline PhiConstruction build_phi(const CorrelationKernel& kernel, double epsilon,
                                 const Grid& grid, std::optional<double> r = std::nullopt,
                                 double norm_fraction = 0.5) {
  const auto fe = mollified_kernel(kernel, epsilon, grid);
  PhiConstruction out;
  out.epsilon = epsilon;
  out.f_eps0 = fe[0];
  if (!(fe[0] > 1e-300)) {
    throw ConstructionError("build_phi: f_eps(0) is not positive at this resolution");
  }
  std::vector<std::size_t> order(grid.cells());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  auto lag_radius = [&](std::size_t k) {
    const auto [i0, i1] = grid.multi_index(k);
    double s = 0.0;
    for (int a = 0; a < grid.dim; ++a) {
      int j = a == 0 ? i0 : i1;
      if (j > grid.n / 2) j -= grid.n;
      s += double(j) * j;
    }
    return std::sqrt(s) * grid.dx;
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t p, std::size_t q) { return lag_radius(p) < lag_radius(q); });
  const double cap = grid.half_extent / 2.0;
  if (r) {
    if (!(*r >= 0.0 && *r <= cap)) throw ValidationError("build_phi: r must lie in [0, L/2]");
    out.r = *r;
  } else {
    out.r = 0.0;
    for (std::size_t k : order) {
      const double rk = lag_radius(k);
      if (rk > cap || fe[k] < fe[0] / 2.0) break;
      out.r = rk;
    }
  }
  out.c = fe[0];
  for (std::size_t k : order) {
    if (lag_radius(k) > out.r) break;
    out.c = std::min(out.c, fe[k]);
  }
  if (!(out.c > 0.0)) throw ConstructionError("build_phi: f_eps is not positive on |x| <= r");

  Field phi(grid);
  const double rho = out.r / 2.0;
  double sum2 = 0.0;
  for (std::size_t k = 0; k < grid.cells(); ++k) {
    const double x = grid.radius(k);
    double v = 0.0;
    if (x == 0.0) {
      v = 1.0;
    } else if (x < rho) {
      const double s = x / rho;
      v = std::exp(1.0 - 1.0 / (1.0 - s * s));
    }
    phi.values[k] = v;
    sum2 += v * v;
  }
  const double vol = grid.cell_volume();
  const double A = std::sqrt(norm_fraction * out.c / (sum2 * vol));
  for (double& v : phi.values) v *= A;
  out.norm2 = norm_fraction * out.c;
  out.phi = std::move(phi);
  return out;
}

/// lhs = sum_z (g * g~)(z) f(z) dx^d, rhs = sum_x |(g * phi)(x)|^2 dx^d.
inline Report covariance_lower_bound_check(const Field& g, const Field& phi,
                                           const CorrelationKernel& kernel) {
  const Grid& grid = g.grid;
  if (!(phi.grid == grid)) throw ValidationError("covariance check: g and phi grids differ");
  for (double v : g.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ValidationError("covariance check: g must be finite and nonnegative");
    }
  }
  const auto wg = detail::support_width(g), wp = detail::support_width(phi);
  for (int a = 0; a < grid.dim; ++a) {
    if (2 * wg[a] > grid.n || wg[a] + wp[a] - 1 > grid.n) {
      throw GeometryError("covariance check: support of g too wide, convolutions would wrap");
    }
  }
  const double vol = grid.cell_volume();
  const auto gl = detail::to_lag_order(g);
  const auto ac = detail::autocorrelation(grid, gl);
  const auto f = kernel_on_grid(kernel, grid);
  double lhs = 0.0;
  for (std::size_t k = 0; k < ac.size(); ++k) lhs += ac[k] * f[k];
  lhs *= vol * vol;
  const auto conv = detail::circular_convolve(grid, gl, detail::to_lag_order(phi));
  double rhs = 0.0;
  for (double v : conv) rhs += v * v;
  rhs *= vol * vol * vol;

  Report rep;
  rep.lemma = "covariance_lower_bound";
  rep.params = {{"kernel", kernel.spec()}, {"d", grid.dim}};
  rep.lhs = lhs;
  rep.rhs = rhs;
  rep.ratio = lhs > 0.0 ? rhs / lhs : 0.0;
  rep.holds = lhs >= rhs - 1e-10 * std::abs(lhs);
  rep.resolution = {{"n", grid.n}, {"L", grid.half_extent}};
  return rep;
}

/// Random nonnegative g with support at most n/4 cells wide per axis:
/// iid values on a box, single cells, constant boxes and smooth blobs.
inline Field random_test_function(const Grid& grid, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> kind(0, 3);
  std::uniform_int_distribution<int> width(1, std::max(1, grid.n / 4));
  std::uniform_int_distribution<int> shift(-grid.n / 8, grid.n / 8);
  std::uniform_real_distribution<double> unit;
  const int k = kind(gen);
  std::array<int, 2> w{1, 1}, c{grid.n / 2, grid.n / 2};
  for (int a = 0; a < grid.dim; ++a) {
    w[a] = k == 1 ? 1 : width(gen);
    c[a] += shift(gen);
  }
  const double amp = 0.1 + 10.0 * unit(gen);
  Field g(grid);
  for (int i0 = 0; i0 < w[0]; ++i0) {
    for (int i1 = 0; i1 < (grid.dim == 2 ? w[1] : 1); ++i1) {
      double v = amp;
      if (k == 0) v *= unit(gen);
      if (k == 3) {
        const double s0 = (i0 + 0.5) / w[0] - 0.5, s1 = grid.dim == 2 ? (i1 + 0.5) / w[1] - 0.5 : 0.0;
        v *= std::exp(-8.0 * (s0 * s0 + s1 * s1));
      }
      g.values[grid.index(c[0] - w[0] / 2 + i0, grid.dim == 2 ? c[1] - w[1] / 2 + i1 : 0)] = v;
    }
  }
  return g;
}

struct CovarianceEnsemble {
  std::string kernel;
  int d = 1;
  int count = 0;
  int violations = 0;
  double worst_ratio = 0.0;  ///< max rhs / lhs
  double norm_fraction = 0.5;
  PhiConstruction phi;

  json to_json() const {
    return {{"lemma", "covariance_lower_bound"},
            {"params", {{"kernel", kernel}, {"d", d}, {"norm_fraction", norm_fraction}}},
            {"phi", phi.to_json()},
            {"count", count},
            {"violations", violations},
            {"lhs", nullptr},
            {"rhs", nullptr},
            {"ratio", worst_ratio},
            {"holds", violations == 0},
            {"resolution", {{"n", phi.phi.grid.n}, {"L", phi.phi.grid.half_extent}}}};
  }
};

inline CovarianceEnsemble covariance_ensemble(const CorrelationKernel& kernel, const Grid& grid,
                                              double epsilon, int count, std::uint64_t seed,
                                              double norm_fraction = 0.5) {
  CovarianceEnsemble out;
  out.kernel = kernel.spec();
  out.d = grid.dim;
  out.count = count;
  out.norm_fraction = norm_fraction;
  out.phi = build_phi(kernel, epsilon, grid, std::nullopt, norm_fraction);
  std::mt19937_64 gen(seed);
  for (int i = 0; i < count; ++i) {
    const auto g = random_test_function(grid, gen);
    const auto rep = covariance_lower_bound_check(g, out.phi.phi, kernel);
    out.violations += !rep.holds;
    out.worst_ratio = std::max(out.worst_ratio, rep.ratio);
  }
  return out;
}

// ------------------------------------------------------------ cutoff h_n

struct CutoffRow {
  int n = 0;
  bool zero_at_origin = false;
  double lipschitz = 0.0;
  double sup_deviation = 0.0;
  double linear_constant = 0.0;
};

struct CutoffReport {
  double lambda = 0.5;
  double K = 1.0;
  double M = 10.0;
  std::vector<CutoffRow> rows;
  bool zero_ok = false;
  bool deviation_decreasing = false;
  bool lipschitz_growth_ok = false;
  bool linear_uniform = false;
  bool holds = false;

  json to_json() const {
    json r = json::array();
    for (const auto& row : rows) {
      r.push_back({{"n", row.n},
                   {"h_n(0)==0", row.zero_at_origin},
                   {"lipschitz", row.lipschitz},
                   {"sup_deviation", row.sup_deviation},
                   {"linear_constant", row.linear_constant}});
    }
    return {{"lemma", "cutoff"},
            {"params", {{"lambda", lambda}, {"K", K}, {"M", M}}},
            {"rows", r},
            {"zero_ok", zero_ok},
            {"deviation_decreasing", deviation_decreasing},
            {"lipschitz_growth_ok", lipschitz_growth_ok},
            {"linear_uniform", linear_uniform},
            {"lhs", nullptr},
            {"rhs", nullptr},
            {"ratio", nullptr},
            {"holds", holds},
            {"resolution", {{"points_per_n", 2801}}}};
  }
};

/// Scans h_n on [0, 2n]: 801 points on [0, 2/n] (where the slope peaks)
/// and 2000 log-spaced points up to 2n, plus 2000 uniform points on [0, M]
/// for the deviation.
inline CutoffReport cutoff_properties_check(double lambda, double K, const std::vector<int>& n_list,
                                            double M = 10.0) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw ValidationError("cutoff check: lambda in (0, 1)");
  if (n_list.empty()) throw ValidationError("cutoff check: empty n list");
  CutoffReport rep;
  rep.lambda = lambda;
  rep.K = K;
  rep.M = M;
  const DiffusionFn h{lambda, K, std::nullopt};
  for (int n : n_list) {
    const auto hn = make_cutoff(h, n);
    CutoffRow row;
    row.n = n;
    row.zero_at_origin = hn(0.0) == 0.0;
    std::vector<double> us;
    for (int j = 0; j <= 800; ++j) us.push_back(j * (2.0 / n) / 800.0);
    const double lo = 2.0 / n, hi = 2.0 * n;
    for (int j = 1; j <= 2000; ++j) us.push_back(lo * std::pow(hi / lo, j / 2000.0));
    double prev_u = 0.0, prev_v = 0.0;
    for (std::size_t i = 0; i < us.size(); ++i) {
      const double u = us[i], v = hn(u);
      if (i > 0 && u > prev_u) row.lipschitz = std::max(row.lipschitz, std::abs(v - prev_v) / (u - prev_u));
      row.linear_constant = std::max(row.linear_constant, std::abs(v) / (1.0 + u));
      if (u <= M) row.sup_deviation = std::max(row.sup_deviation, std::abs(v - h(u)));
      prev_u = u;
      prev_v = v;
    }
    for (int j = 0; j <= 2000; ++j) {
      const double u = M * j / 2000.0;
      row.sup_deviation = std::max(row.sup_deviation, std::abs(hn(u) - h(u)));
    }
    rep.rows.push_back(row);
  }
  rep.zero_ok = std::all_of(rep.rows.begin(), rep.rows.end(),
                            [](const CutoffRow& r) { return r.zero_at_origin; });
  rep.deviation_decreasing = true;
  rep.lipschitz_growth_ok = true;
  for (std::size_t i = 1; i < rep.rows.size(); ++i) {
    const auto &a = rep.rows[i - 1], &b = rep.rows[i];
    rep.deviation_decreasing = rep.deviation_decreasing && b.sup_deviation < a.sup_deviation;
    const double observed = b.lipschitz / a.lipschitz;
    const double expected = std::pow(double(b.n) / a.n, 1.0 - lambda);
    rep.lipschitz_growth_ok =
        rep.lipschitz_growth_ok && observed <= 4.0 * expected && observed >= expected / 4.0;
  }
  for (const auto& r : rep.rows) {
    rep.lipschitz_growth_ok =
        rep.lipschitz_growth_ok && r.lipschitz >= lambda * std::pow(double(r.n), 1.0 - lambda);
  }
  rep.linear_uniform = std::all_of(rep.rows.begin(), rep.rows.end(), [&](const CutoffRow& r) {
    return r.linear_constant <= K * (1.0 + 1e-12);
  });
  rep.holds = rep.zero_ok && rep.deviation_decreasing && rep.lipschitz_growth_ok &&
              rep.linear_uniform;
  return rep;
}

}  // namespace csplab::lemma
