#pragma once

// Run and sweep configuration (JSON), validation before any simulation,
// the replica worker pool, Wilson intervals and report files.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <exception>
#include <mutex>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "csplab/errors.hpp"
#include "csplab/kernels.hpp"
#include "csplab/lemma_lab.hpp"
#include "csplab/noise.hpp"
#include "csplab/observables.hpp"
#include "csplab/solver.hpp"

namespace csplab::harness {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config '" + path + "' does not parse: " + e.what());
  }
}

/// FNV-1a over the canonical dump; stable across platforms.
inline std::string config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string fmt(double v) { return csplab::detail::fmt_double(v); }

// ------------------------------------------------------------ run config

/// A parsed run plus the pieces validation needs.
struct RunSpec {
  RunConfig run;
  std::string kernel_spec = "white";
  double eta = 0.1;
  json source;
};

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

inline Coefficients parse_coefficients(const json& j, int dim) {
  const auto type = get_or<std::string>(j, "type", "laplacian");
  if (type == "laplacian") return Coefficients::laplacian(dim);
  if (type == "constant") {
    const auto a = get_or<std::vector<double>>(j, "a", {1.0, 0.0, 1.0});
    const auto b = get_or<std::vector<double>>(j, "b", {0.0, 0.0});
    if (a.size() != 3 || b.size() != 2) {
      throw ValidationError("coefficients: a needs [a00, a01, a11], b needs [b0, b1]");
    }
    return Coefficients::constant(dim, {a[0], a[1], a[2]}, {b[0], b[1]},
                                  get_or<double>(j, "c", 0.0), get_or<double>(j, "K", 1.0));
  }
  if (type == "modulated") {
    // a = (1 + amplitude cos(frequency x_1)) I, b = c = 0.
    const double amp = get_or<double>(j, "amplitude", 0.3);
    const double freq = get_or<double>(j, "frequency", 1.0);
    Coefficients co = Coefficients::laplacian(dim);
    co.a = [amp, freq](double, Point x) {
      const double s = 1.0 + amp * std::cos(freq * x[0]);
      return Mat2{s, 0.0, s};
    };
    co.K = get_or<double>(j, "K", 2.0);
    return co;
  }
  throw ValidationError("coefficients: unknown type '" + type + "'");
}

inline InitialData parse_initial(const json& j) {
  const auto profile = get_or<std::string>(j, "profile", "bump");
  if (profile == "bump") {
    return InitialData::bump(get_or<double>(j, "R0", 1.0), get_or<double>(j, "height", 1.0));
  }
  if (profile == "table") {
    InitialData d;
    d.profile = InitialData::Profile::Table;
    d.R0 = get_or<double>(j, "R0", 1.0);
    d.radii = get_or<std::vector<double>>(j, "radii", {});
    d.values = get_or<std::vector<double>>(j, "values", {});
    return d;
  }
  throw ValidationError("initial: unknown profile '" + profile + "'");
}

}  // namespace detail

/// Sections: grid, kernel, coefficients, diffusion, initial, time,
/// recording; top-level seed and noise.
inline RunSpec parse_run_config(const json& j) {
  using detail::get_or;
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  RunSpec s;
  s.source = j;
  const json grid = j.value("grid", json::object());
  const int dim = get_or<int>(grid, "dim", 1);
  s.run.grid = Grid::make(dim, get_or<int>(grid, "n", 256), get_or<double>(grid, "L", 8.0));

  const json& k = j.contains("kernel") ? j.at("kernel") : json("white");
  if (k.is_string()) {
    s.kernel_spec = k.get<std::string>();
  } else {
    s.kernel_spec = get_or<std::string>(k, "spec", "white");
    s.eta = get_or<double>(k, "eta", s.eta);
  }
  s.run.kernel = parse_kernel(s.kernel_spec, dim);

  s.run.coefficients = detail::parse_coefficients(j.value("coefficients", json::object()), dim);
  const json diff = j.value("diffusion", json::object());
  s.run.diffusion.lambda = get_or<double>(diff, "lambda", 0.5);
  s.run.diffusion.K = get_or<double>(diff, "K", 1.0);
  if (diff.contains("cutoff_n") && !diff.at("cutoff_n").is_null()) {
    s.run.diffusion = make_cutoff(s.run.diffusion, get_or<int>(diff, "cutoff_n", 1));
  }
  s.run.initial = detail::parse_initial(j.value("initial", json::object()));

  const json time = j.value("time", json::object());
  s.run.T = get_or<double>(time, "T", 0.25);
  if (time.contains("dt") && !time.at("dt").is_null()) s.run.dt = get_or<double>(time, "dt", 0.0);
  s.run.cfl_safety = get_or<double>(time, "cfl_safety", 0.9);

  const json rec = j.value("recording", json::object());
  s.run.recording.stride = get_or<std::size_t>(rec, "stride", 1);
  s.run.recording.eps_relative = get_or<std::vector<double>>(rec, "eps_relative", {1e-8});
  s.run.recording.shell_radii = get_or<std::vector<double>>(rec, "shell_radii", {});
  s.run.recording.weighted_a = get_or<std::vector<double>>(rec, "weighted_a", {});
  s.run.recording.snapshots = get_or<bool>(rec, "snapshots", false);

  s.run.seed = get_or<std::uint64_t>(j, "seed", 0);
  s.run.noise = get_or<bool>(j, "noise", true);
  s.run.config_hash = config_hash(j);
  return s;
}

struct ValidationSummary {
  lemma::json dalang;
  CoefficientReport coefficients;
  double dt = 0.0;
  double dt_max = 0.0;
};

/// Dalang, CFL and ellipticity checks; throws ValidationError naming the
/// failing check. Nothing is simulated here.
inline ValidationSummary validate_run(const RunSpec& s) {
  ValidationSummary v;
  const auto& r = s.run;
  if (!(r.T > 0.0)) throw ValidationError("time: T must be positive");
  if (!(r.cfl_safety > 0.0 && r.cfl_safety <= 0.9)) {
    throw ValidationError("time: cfl_safety must lie in (0, 0.9]");
  }
  if (r.recording.stride < 1) throw ValidationError("recording: stride must be >= 1");
  for (double e : r.recording.eps_relative) {
    if (!(e > 0.0)) throw ValidationError("recording: eps_relative must be positive");
  }
  if (!(r.diffusion.lambda > 0.0)) throw ValidationError("diffusion: lambda must be positive");
  if (!(r.diffusion.K >= 1.0)) throw ValidationError("diffusion: K must be >= 1");
  r.initial.validate();

  const auto dal = check_reinforced_dalang(r.kernel, s.eta);
  v.dalang = {{"kernel", s.kernel_spec},
              {"eta", s.eta},
              {"value", std::isfinite(dal.value) ? json(dal.value) : json("inf")},
              {"converged", dal.converged},
              {"tail_exponent", dal.tail_exponent}};
  if (!dal.converged || !std::isfinite(dal.value)) {
    throw ValidationError("dalang check failed: reinforced Dalang integral for '" +
                          s.kernel_spec + "' at eta=" + fmt(s.eta) + " is not finite");
  }
  v.coefficients = validate_coefficients(r.coefficients, r.grid, {0.0, r.T / 2.0, r.T});
  require_valid(v.coefficients);
  v.dt_max = cfl_max_dt(r.coefficients, r.grid);
  v.dt = r.time_step();
  return v;
}

// ----------------------------------------------------------------- sweep

struct SweepConfig {
  json base;
  std::vector<double> lambda_list;
  std::vector<std::string> kernel_list;
  int replicas = 1;
  std::vector<double> eps_list{1e-6, 1e-8, 1e-10};
  double R_max = 8.0;
  std::string output = "sweep_out";
  std::uint64_t seed = 0;
  int workers = 1;
  bool write_trajectories = true;
};

inline SweepConfig parse_sweep_config(const json& j) {
  using detail::get_or;
  if (!j.is_object() || !j.contains("base")) throw ValidationError("sweep: missing 'base' run");
  SweepConfig c;
  c.base = j.at("base");
  c.lambda_list = get_or<std::vector<double>>(j, "lambda_list", {});
  c.kernel_list = get_or<std::vector<std::string>>(j, "kernel_list", {});
  if (c.kernel_list.empty()) {
    const json& k = c.base.contains("kernel") ? c.base.at("kernel") : json("white");
    c.kernel_list.push_back(k.is_string() ? k.get<std::string>()
                                          : get_or<std::string>(k, "spec", "white"));
  }
  c.replicas = get_or<int>(j, "replicas", 1);
  c.eps_list = get_or<std::vector<double>>(j, "eps_list", c.eps_list);
  c.R_max = get_or<double>(j, "R_max", c.R_max);
  c.output = get_or<std::string>(j, "output", c.output);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.workers = get_or<int>(j, "workers", c.workers);
  c.write_trajectories = get_or<bool>(j, "write_trajectories", true);
  return c;
}

struct ReplicaRecord {
  double lambda = 0.0;
  std::string kernel;
  std::uint64_t replica = 0;
  std::vector<bool> bounded;  ///< per eps
  std::optional<double> final_support;
  double clipped_mass = 0.0;
  bool blow_up = false;
  std::string blow_up_detail;
};

struct CellEstimate {
  double lambda = 0.0;
  std::string kernel;
  double eps = 0.0;
  int bounded = 0;
  int total = 0;
  int blow_ups = 0;
  double fraction = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool reliable = false;
  bool failure_regime = false;
};

struct WilsonInterval {
  double low = 0.0, high = 1.0;
};

/// Wilson score interval at 95%.
inline WilsonInterval wilson(int k, int n) {
  if (n <= 0) return {0.0, 1.0};
  const double z = 1.959963984540054;
  const double p = double(k) / n, z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  // The bounds touch 0 and 1 exactly at k = 0 and k = n.
  return {k == 0 ? 0.0 : std::max(0.0, centre - half), k == n ? 1.0 : std::min(1.0, centre + half)};
}

/// Per (lambda, kernel, eps) bounded fraction with its Wilson interval;
/// cells under 30 replicas are marked unreliable. Blow-ups count as
/// unbounded.
inline std::vector<CellEstimate> estimate_csp_probability(const std::vector<ReplicaRecord>& recs,
                                                          const std::vector<double>& eps_list) {
  std::vector<CellEstimate> out;
  std::map<std::pair<double, std::string>, std::size_t> first;
  std::vector<std::pair<double, std::string>> order;
  for (const auto& r : recs) {
    auto key = std::make_pair(r.lambda, r.kernel);
    if (!first.count(key)) {
      first[key] = order.size();
      order.push_back(key);
    }
  }
  for (const auto& key : order) {
    for (std::size_t e = 0; e < eps_list.size(); ++e) {
      CellEstimate c;
      c.lambda = key.first;
      c.kernel = key.second;
      c.eps = eps_list[e];
      for (const auto& r : recs) {
        if (r.lambda != key.first || r.kernel != key.second) continue;
        ++c.total;
        c.blow_ups += r.blow_up;
        c.bounded += !r.blow_up && r.bounded.at(e);
      }
      c.fraction = c.total ? double(c.bounded) / c.total : 0.0;
      const auto ci = wilson(c.bounded, c.total);
      c.ci_low = std::min(ci.low, c.fraction);
      c.ci_high = std::max(ci.high, c.fraction);
      c.reliable = c.total >= 30;
      c.failure_regime = c.lambda >= 1.0;
      out.push_back(c);
    }
  }
  return out;
}

struct TrendVerdict {
  std::string kernel;
  double eps = 0.0;
  bool non_increasing = false;  ///< up to CI overlap
  bool separated = false;       ///< smallest lambda strictly above largest
};

inline std::vector<TrendVerdict> trend_checks(const std::vector<CellEstimate>& cells) {
  std::vector<TrendVerdict> out;
  std::vector<std::pair<std::string, double>> keys;
  for (const auto& c : cells) {
    auto key = std::make_pair(c.kernel, c.eps);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  for (const auto& [kernel, eps] : keys) {
    std::vector<CellEstimate> row;
    for (const auto& c : cells) {
      if (c.kernel == kernel && c.eps == eps) row.push_back(c);
    }
    std::sort(row.begin(), row.end(),
              [](const CellEstimate& a, const CellEstimate& b) { return a.lambda < b.lambda; });
    TrendVerdict v;
    v.kernel = kernel;
    v.eps = eps;
    v.non_increasing = true;
    for (std::size_t i = 0; i < row.size(); ++i) {
      for (std::size_t j = i + 1; j < row.size(); ++j) {
        const bool overlap = row[j].ci_low <= row[i].ci_high && row[i].ci_low <= row[j].ci_high;
        if (row[j].fraction > row[i].fraction && !overlap) v.non_increasing = false;
      }
    }
    if (row.size() >= 2) {
      const auto &lo = row.front(), &hi = row.back();
      v.separated = lo.fraction > hi.fraction && lo.ci_low > hi.ci_high;
    }
    out.push_back(v);
  }
  return out;
}

struct SweepResult {
  SweepConfig config;
  std::vector<ReplicaRecord> records;
  std::vector<CellEstimate> cells;
  std::vector<TrendVerdict> trends;
  std::string hash;
};

inline std::string cell_dir_name(double lambda, const std::string& kernel) {
  std::string k;
  for (char ch : kernel) k += std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' ? ch : '_';
  return "lambda_" + fmt(lambda) + "__" + k;
}

/// Checks every cell before any replica runs.
inline std::vector<RunSpec> prepare_sweep(const SweepConfig& c) {
  if (c.lambda_list.empty()) throw ValidationError("sweep: lambda_list is empty");
  if (c.replicas < 1) throw ValidationError("sweep: replicas must be >= 1");
  if (c.workers < 1) throw ValidationError("sweep: workers must be >= 1");
  if (c.eps_list.empty()) throw ValidationError("sweep: eps_list is empty");
  std::vector<RunSpec> specs;
  std::map<std::string, bool> checked;
  for (const auto& kernel : c.kernel_list) {
    for (double lambda : c.lambda_list) {
      json j = c.base;
      if (j.contains("kernel") && j.at("kernel").is_object()) {
        j["kernel"]["spec"] = kernel;
      } else {
        j["kernel"] = kernel;
      }
      j["diffusion"]["lambda"] = lambda;
      j["recording"]["eps_relative"] = c.eps_list;
      j["seed"] = c.seed;
      auto spec = parse_run_config(j);
      if (!(c.R_max > 0.0 && c.R_max < spec.run.grid.half_extent)) {
        throw ValidationError("sweep: R_max must lie in (0, L)");
      }
      if (!checked.count(kernel)) {
        validate_run(spec);
        checked[kernel] = true;
      } else {
        // Dalang depends on the kernel only; repeat the cheap checks.
        require_valid(validate_coefficients(spec.run.coefficients, spec.run.grid,
                                            {0.0, spec.run.T / 2.0, spec.run.T}));
        spec.run.time_step();
        if (!(spec.run.diffusion.lambda > 0.0)) {
          throw ValidationError("diffusion: lambda must be positive");
        }
      }
      specs.push_back(std::move(spec));
    }
  }
  return specs;
}

/// Runs every (kernel, lambda) cell times `replicas` on a bounded worker
/// pool. Results are stored by index, so the output does not depend on the
/// number of workers. Blow-ups are recorded, not fatal.
inline SweepResult run_sweep(const SweepConfig& c) {
  const auto specs = prepare_sweep(c);
  SweepResult res;
  res.config = c;
  res.hash = config_hash(json{{"base", c.base},
                              {"lambda_list", c.lambda_list},
                              {"kernel_list", c.kernel_list},
                              {"replicas", c.replicas},
                              {"eps_list", c.eps_list},
                              {"R_max", c.R_max},
                              {"seed", c.seed}});
  std::map<std::string, NoiseSampler> samplers;
  for (const auto& s : specs) {
    if (!samplers.count(s.kernel_spec)) {
      samplers.emplace(s.kernel_spec, build_sampler(s.run.kernel, s.run.grid, s.run.seed));
    }
  }
  const fs::path root(c.output);
  if (c.write_trajectories) {
    for (const auto& s : specs) {
      fs::create_directories(root / cell_dir_name(s.run.diffusion.lambda, s.kernel_spec));
    }
  }

  const std::size_t total = specs.size() * std::size_t(c.replicas);
  res.records.resize(total);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= total) return;
      const auto& spec = specs[job / std::size_t(c.replicas)];
      const std::uint64_t replica = job % std::size_t(c.replicas);
      ReplicaRecord rec;
      rec.lambda = spec.run.diffusion.lambda;
      rec.kernel = spec.kernel_spec;
      rec.replica = replica;
      try {
        const auto traj = simulate(spec.run, samplers.at(spec.kernel_spec), replica);
        for (double e : traj.eps) rec.bounded.push_back(csp_indicator(traj, e, c.R_max));
        rec.final_support = traj.support_radius.front().back();
        rec.clipped_mass = traj.clipped_mass;
        if (c.write_trajectories) {
          std::ofstream os(root / cell_dir_name(rec.lambda, rec.kernel) /
                           ("replica_" + std::to_string(replica) + ".csv"));
          write_trajectory_csv(os, traj);
        }
      } catch (const BlowUpError& e) {
        rec.blow_up = true;
        rec.blow_up_detail = e.what();
        rec.bounded.assign(c.eps_list.size(), false);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = total;
        return;
      }
      res.records[job] = std::move(rec);
    }
  };
  const int nw = std::max(1, std::min<int>(c.workers, int(total)));
  std::vector<std::thread> pool;
  for (int w = 1; w < nw; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  res.cells = estimate_csp_probability(res.records, c.eps_list);
  res.trends = trend_checks(res.cells);
  return res;
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  os << "lambda,kernel,replica,blow_up,clipped_mass,final_support";
  for (double e : r.config.eps_list) os << ",bounded_eps" << fmt(e);
  os << '\n';
  for (const auto& rec : r.records) {
    os << fmt(rec.lambda) << ',' << rec.kernel << ',' << rec.replica << ','
       << (rec.blow_up ? 1 : 0) << ',' << fmt(rec.clipped_mass) << ','
       << (rec.final_support ? fmt(*rec.final_support) : std::string("none"));
    for (bool b : rec.bounded) os << ',' << (b ? 1 : 0);
    os << '\n';
  }
}

inline void write_aggregate_csv(std::ostream& os, const SweepResult& r) {
  os << "lambda,kernel,eps,bounded,total,blow_ups,fraction,ci_low,ci_high,reliable,"
        "failure_regime\n";
  for (const auto& c : r.cells) {
    os << fmt(c.lambda) << ',' << c.kernel << ',' << fmt(c.eps) << ',' << c.bounded << ','
       << c.total << ',' << c.blow_ups << ',' << fmt(c.fraction) << ',' << fmt(c.ci_low) << ','
       << fmt(c.ci_high) << ',' << (c.reliable ? 1 : 0) << ',' << (c.failure_regime ? 1 : 0)
       << '\n';
  }
}

inline json summary_json(const SweepResult& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"lambda", c.lambda},
                     {"kernel", c.kernel},
                     {"eps", c.eps},
                     {"bounded", c.bounded},
                     {"total", c.total},
                     {"blow_ups", c.blow_ups},
                     {"fraction", c.fraction},
                     {"ci_low", c.ci_low},
                     {"ci_high", c.ci_high},
                     {"reliable", c.reliable},
                     {"regime", c.failure_regime ? "CSP-failure regime" : "sub-linear"}});
  }
  json trends = json::array();
  for (const auto& t : r.trends) {
    trends.push_back({{"kernel", t.kernel},
                      {"eps", t.eps},
                      {"non_increasing", t.non_increasing},
                      {"separated", t.separated}});
  }
  return {{"config_hash", r.hash},
          {"replicas", r.config.replicas},
          {"R_max", r.config.R_max},
          {"seed", r.config.seed},
          {"cells", cells},
          {"trends", trends}};
}

/// sweep.csv, aggregate.csv and summary.json under the output directory.
inline void write_sweep_outputs(const SweepResult& r) {
  const fs::path root(r.config.output);
  fs::create_directories(root);
  {
    std::ofstream os(root / "sweep.csv");
    write_sweep_csv(os, r);
  }
  {
    std::ofstream os(root / "aggregate.csv");
    write_aggregate_csv(os, r);
  }
  std::ofstream os(root / "summary.json");
  os << summary_json(r).dump(2) << '\n';
}

// ------------------------------------------------------------ lemma suite

struct LemmaSuiteResult {
  bool violation = false;
  std::vector<std::string> files;
  json summary;
};

namespace detail {

inline Grid grid_from(const json& j, int dim, int n, double L) {
  return Grid::make(dim, get_or<int>(j, "n", n), get_or<double>(j, "L", L));
}

inline void write_json(const fs::path& p, const json& j, LemmaSuiteResult& res) {
  std::ofstream os(p);
  os << j.dump(2) << '\n';
  res.files.push_back(p.filename().string());
}

}  // namespace detail

/// Full lemma battery; writes exponents.json, reverse_jensen_x.json,
/// reverse_jensen_t.json, covariance_bound.json and cutoff.json. `violation`
/// is set when the covariance bound fails for the regular phi (the
/// negative control is expected to fail and only reported).
inline LemmaSuiteResult run_lemma_suite(const json& params, const std::string& out_dir) {
  using detail::get_or;
  if (!params.is_object()) throw ValidationError("lemma params: expected a JSON object");
  const auto seed = get_or<std::uint64_t>(params, "seed", 1);
  const int members = get_or<int>(params, "members", 200);
  const double gamma = get_or<double>(params, "gamma", 0.5);
  const double lambda = get_or<double>(params, "lambda", 0.5);
  const double H = get_or<double>(params, "H", 1.5);
  const json cov = params.value("covariance", json::object());
  const json cut = params.value("cutoff", json::object());
  const json rj = params.value("reverse_jensen", json::object());

  // Parse and validate everything first.
  lemma::exponents(gamma, lambda, 1);
  std::vector<std::pair<int, std::vector<CorrelationKernel>>> kernels;
  for (int d : {1, 2}) {
    const char* key = d == 1 ? "kernels_1d" : "kernels_2d";
    const std::vector<std::string> fallback =
        d == 1 ? std::vector<std::string>{"white", "riesz:alpha=0.5", "ou:beta=1", "ou:beta=2",
                                          "constant", "bump:r=0.5,amp=1"}
               : std::vector<std::string>{"white", "riesz:alpha=1", "ou:beta=1", "ou:beta=2",
                                          "constant", "bump:r=0.5,amp=1"};
    std::vector<CorrelationKernel> ks;
    for (const auto& s : get_or<std::vector<std::string>>(cov, key, fallback)) {
      ks.push_back(parse_kernel(s, d));
    }
    kernels.emplace_back(d, std::move(ks));
  }
  const Grid g1 = detail::grid_from(cov.value("grid_1d", json::object()), 1, 256, 8.0);
  const Grid g2 = detail::grid_from(cov.value("grid_2d", json::object()), 2, 64, 4.0);
  const double eps_cells = get_or<double>(cov, "eps_cells", 4.0);
  const int count = get_or<int>(cov, "count", 100);
  const double phi_fraction = get_or<double>(cov, "phi_fraction", 0.5);
  const double control_fraction = get_or<double>(cov, "control_fraction", 4.0);
  if (!(phi_fraction > 0.0)) throw ValidationError("lemma params: phi_fraction must be positive");

  lemma::AnnulusProblem ap;
  ap.gamma = gamma;
  ap.lambda = lambda;
  ap.H = H;
  ap.R = get_or<double>(rj, "R", 2.0);
  ap.a = get_or<double>(rj, "a", 0.0);
  ap.b = get_or<double>(rj, "b", 1.0);
  const double r_fraction = get_or<double>(rj, "r_fraction", 0.8);
  lemma::TimeProblem tp{get_or<double>(rj, "T", 1.0), gamma, lambda, H};
  tp.validate();

  const fs::path root(out_dir);
  fs::create_directories(root);
  LemmaSuiteResult res;

  // Exponent identities on a (gamma, lambda, d) lattice.
  {
    const int m = get_or<int>(params, "exponent_lattice", 10);
    double worst = 0.0;
    bool ranges = true;
    for (int i = 1; i <= m; ++i) {
      for (int k = 1; k <= m; ++k) {
        for (int d = 1; d <= m; ++d) {
          const auto e = lemma::exponents(i / (m + 1.0), k / (m + 1.0), d);
          worst = std::max(worst, std::abs(e.identity_defect()));
          ranges = ranges && e.l > 0.0 && e.l < 1.0 && e.L > 1.0;
        }
      }
    }
    const auto e = lemma::exponents(gamma, lambda, 1);
    detail::write_json(root / "exponents.json",
                       {{"lemma", "exponents"},
                        {"params", {{"gamma", gamma}, {"lambda", lambda}, {"lattice", m}}},
                        {"l", e.l},
                        {"L", e.L},
                        {"points", m * m * m},
                        {"max_identity_defect", worst},
                        {"lhs", e.L * (gamma * e.l + 1.0)},
                        {"rhs", gamma + 1.0},
                        {"ratio", nullptr},
                        {"holds", worst <= 1e-14 && ranges},
                        {"resolution", nullptr}},
                       res);
    res.summary["exponents"] = worst <= 1e-14 && ranges;
  }

  // Reverse Jensen in space, d = 1 and 2.
  {
    json arr = json::array();
    bool ok = true;
    for (int d : {1, 2}) {
      auto p = ap;
      p.d = d;
      p.r = r_fraction * p.r_bound();
      const int m = get_or<int>(rj, d == 1 ? "m_1d" : "m_2d", d == 1 ? 64 : 16);
      const auto st = lemma::reverse_jensen_x_ensemble(p, members, m, seed);
      ok = ok && st.holds;
      arr.push_back(st.to_json());
    }
    detail::write_json(root / "reverse_jensen_x.json", arr, res);
    res.summary["reverse_jensen_x"] = ok;
  }

  // Reverse Jensen in time plus the extremal profile.
  {
    const auto st = lemma::reverse_jensen_t_ensemble(tp, members, get_or<int>(rj, "m_t", 128), seed);
    const auto ex = lemma::extremal_time_check(tp, {0.25, 1.0, 4.0});
    detail::write_json(root / "reverse_jensen_t.json",
                       {{"ensemble", st.to_json()}, {"extremal", ex.to_json()}}, res);
    res.summary["reverse_jensen_t"] = st.holds && ex.holds;
  }

  // Covariance lower bound with the regular phi and the negative control.
  {
    json arr = json::array();
    int violations = 0, control_failures = 0;
    for (const auto& [d, ks] : kernels) {
      const Grid& g = d == 1 ? g1 : g2;
      for (const auto& k : ks) {
        const auto reg = lemma::covariance_ensemble(k, g, eps_cells * g.dx, count, seed, phi_fraction);
        const auto ctl =
            lemma::covariance_ensemble(k, g, eps_cells * g.dx, count, seed, control_fraction);
        violations += reg.violations;
        control_failures += ctl.violations;
        auto j = reg.to_json();
        j["control"] = ctl.to_json();
        arr.push_back(j);
      }
    }
    detail::write_json(root / "covariance_bound.json",
                       {{"reports", arr},
                        {"violations", violations},
                        {"control_failures", control_failures},
                        {"control_has_power", control_failures > 0}},
                       res);
    res.summary["covariance_violations"] = violations;
    res.summary["control_failures"] = control_failures;
    res.violation = violations > 0;
  }

  // Cutoff h_n.
  {
    const auto rep = lemma::cutoff_properties_check(
        get_or<double>(cut, "lambda", lambda), get_or<double>(cut, "K", 1.0),
        get_or<std::vector<int>>(cut, "n_list", {10, 100, 1000}), get_or<double>(cut, "M", 10.0));
    detail::write_json(root / "cutoff.json", rep.to_json(), res);
    res.summary["cutoff"] = rep.holds;
  }
  res.summary["files"] = res.files;
  return res;
}

}  // namespace csplab::harness
