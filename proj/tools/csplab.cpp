// csplab command line: check-dalang, sample-noise, simulate, sweep,
// lemma-suite, report. Exit codes: 0 ok, 1 validation, 2 runtime failure,
// 3 lemma violation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "csplab/harness.hpp"

namespace fs = std::filesystem;
using csplab::harness::json;

namespace {

constexpr int kOk = 0, kValidation = 1, kRuntime = 2, kLemma = 3;

std::ostream& out_stream(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  file.open(path);
  if (!file) throw csplab::ValidationError("cannot write '" + path + "'");
  return file;
}

json integral_json(const csplab::IntegralReport& r) {
  return {{"value", std::isfinite(r.value) ? json(r.value) : json("inf")},
          {"finite", r.converged && std::isfinite(r.value)},
          {"tail_exponent", r.tail_exponent},
          {"quadrature_error", r.quadrature_error}};
}

struct Common {
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Base seed (overrides the config)");
  sub->add_option("--workers", c.workers, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--out", c.out, "Output path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"csplab: compact support experiments for the stochastic heat equation"};
  app.require_subcommand(1);

  // check-dalang
  Common dal_c;
  std::string dal_kernel = "white";
  int dal_dim = 1;
  double dal_eta = 0.1;
  auto* dal = app.add_subcommand("check-dalang", "Reinforced Dalang and x-space integrability");
  dal->add_option("--kernel", dal_kernel, "Kernel spec");
  dal->add_option("--dim", dal_dim)->check(CLI::Range(1, 3));
  dal->add_option("--eta", dal_eta);
  add_common(dal, dal_c);

  // sample-noise
  Common sn_c;
  std::string sn_kernel = "white";
  int sn_dim = 1, sn_n = 256, sn_samples = 10000;
  double sn_L = 8.0;
  std::vector<int> sn_lags{0, 1, 2, 4, 8};
  auto* sn = app.add_subcommand("sample-noise", "Empirical covariance of the noise increments");
  sn->add_option("--kernel", sn_kernel);
  sn->add_option("--dim", sn_dim)->check(CLI::Range(1, 2));
  sn->add_option("--n", sn_n);
  sn->add_option("--L", sn_L, "Half extent");
  sn->add_option("--samples", sn_samples);
  sn->add_option("--lags", sn_lags, "Lags along the first axis");
  add_common(sn, sn_c);

  // simulate
  Common sim_c;
  std::string sim_config;
  std::uint64_t sim_replica = 0;
  std::optional<double> sim_lambda, sim_T;
  std::optional<std::string> sim_kernel;
  auto* sim = app.add_subcommand("simulate", "Run one replica from a run config");
  sim->add_option("--config", sim_config)->required()->check(CLI::ExistingFile);
  sim->add_option("--replica", sim_replica);
  sim->add_option("--lambda", sim_lambda);
  sim->add_option("--kernel", sim_kernel);
  sim->add_option("--T", sim_T);
  add_common(sim, sim_c);

  // sweep
  Common sw_c;
  std::string sw_config;
  std::optional<int> sw_replicas;
  auto* sw = app.add_subcommand("sweep", "Monte Carlo sweep over lambda and kernels");
  sw->add_option("--config", sw_config)->required()->check(CLI::ExistingFile);
  sw->add_option("--replicas", sw_replicas);
  add_common(sw, sw_c);

  // lemma-suite
  Common ls_c;
  std::string ls_params;
  auto* ls = app.add_subcommand("lemma-suite", "Numerical checks of the inequalities");
  ls->add_option("--params", ls_params, "JSON params (defaults when omitted)");
  add_common(ls, ls_c);

  // report
  std::string rep_in;
  auto* rep = app.add_subcommand("report", "Print a sweep summary");
  rep->add_option("--in", rep_in, "Sweep output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*dal) {
      const auto kernel = csplab::parse_kernel(dal_kernel, dal_dim);
      const auto spectral = csplab::check_reinforced_dalang(kernel, dal_eta);
      const auto local = csplab::check_local_integrability(kernel, dal_eta);
      const bool a = spectral.converged && std::isfinite(spectral.value);
      const bool b = local.report.converged && std::isfinite(local.report.value);
      json j{{"kernel", dal_kernel},
             {"dim", dal_dim},
             {"eta", dal_eta},
             {"spectral", integral_json(spectral)},
             {"local", integral_json(local.report)},
             {"local_case", csplab::to_string(local.which)},
             {"agree", a == b}};
      std::ofstream f;
      out_stream(dal_c.out, f) << j.dump(2) << '\n';
      if (a != b) {
        std::cerr << "check-dalang: spectral and x-space verdicts disagree\n";
        return kRuntime;
      }
      return kOk;
    }

    if (*sn) {
      const auto grid = csplab::Grid::make(sn_dim, sn_n, sn_L);
      const auto kernel = csplab::parse_kernel(sn_kernel, sn_dim);
      const auto sampler = csplab::build_sampler(kernel, grid, sn_c.seed.value_or(0));
      std::vector<csplab::Lag> lags;
      for (int l : sn_lags) lags.push_back({l, 0});
      const auto rows = csplab::empirical_covariance(sampler, sn_samples, lags);
      std::ofstream f;
      csplab::write_covariance_csv(out_stream(sn_c.out, f), rows, sn_dim);
      std::cerr << "embedding defect " << sampler.defect() << '\n';
      return kOk;
    }

    if (*sim) {
      json cfg = csplab::harness::load_json(sim_config);
      if (sim_c.seed) cfg["seed"] = *sim_c.seed;
      if (sim_lambda) cfg["diffusion"]["lambda"] = *sim_lambda;
      if (sim_T) cfg["time"]["T"] = *sim_T;
      if (sim_kernel) {
        if (cfg.contains("kernel") && cfg["kernel"].is_object()) {
          cfg["kernel"]["spec"] = *sim_kernel;
        } else {
          cfg["kernel"] = *sim_kernel;
        }
      }
      const auto spec = csplab::harness::parse_run_config(cfg);
      const auto v = csplab::harness::validate_run(spec);
      const auto traj = csplab::simulate(spec.run, sim_replica);
      const fs::path dir(sim_c.out.empty() ? "simulate_out" : sim_c.out);
      fs::create_directories(dir);
      {
        std::ofstream os(dir / "trajectory.csv");
        csplab::write_trajectory_csv(os, traj);
      }
      for (std::size_t i = 0; i < traj.snapshots.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "field_%06zu.cspf", i);
        csplab::write_field((dir / name).string(), traj.snapshots[i].field,
                            traj.snapshots[i].time);
      }
      json meta{{"config_hash", traj.config_hash},
                {"replica", traj.replica},
                {"seed", traj.seed},
                {"dt", traj.dt},
                {"dt_max", v.dt_max},
                {"steps", traj.steps.empty() ? 0 : traj.steps.back()},
                {"clipped_mass", traj.clipped_mass},
                {"dalang", v.dalang}};
      std::ofstream(dir / "run.json") << meta.dump(2) << '\n';
      std::cout << "wrote " << (dir / "trajectory.csv").string() << '\n';
      return kOk;
    }

    if (*sw) {
      auto cfg = csplab::harness::parse_sweep_config(csplab::harness::load_json(sw_config));
      if (sw_c.seed) cfg.seed = *sw_c.seed;
      if (sw->count("--workers")) cfg.workers = sw_c.workers;
      if (!sw_c.out.empty()) cfg.output = sw_c.out;
      if (sw_replicas) cfg.replicas = *sw_replicas;
      const auto res = csplab::harness::run_sweep(cfg);
      csplab::harness::write_sweep_outputs(res);
      int blow = 0;
      for (const auto& r : res.records) blow += r.blow_up;
      std::cout << "sweep: " << res.records.size() << " replicas, " << blow << " blow-ups, "
                << "output in " << cfg.output << '\n';
      return kOk;
    }

    if (*ls) {
      const json params = ls_params.empty() ? json::object()
                                            : csplab::harness::load_json(ls_params);
      const auto res = csplab::harness::run_lemma_suite(
          params, ls_c.out.empty() ? "lemma_out" : ls_c.out);
      std::cout << res.summary.dump(2) << '\n';
      return res.violation ? kLemma : kOk;
    }

    if (*rep) {
      const json s = csplab::harness::load_json((fs::path(rep_in) / "summary.json").string());
      std::printf("%-8s %-22s %-8s %9s %18s %s\n", "lambda", "kernel", "eps", "fraction",
                  "wilson95", "note");
      for (const auto& c : s.at("cells")) {
        std::string note = c.at("regime").get<std::string>();
        if (!c.at("reliable").get<bool>()) note += ", unreliable";
        std::printf("%-8g %-22s %-8g %9.3f    [%5.3f, %5.3f] %s\n", c.at("lambda").get<double>(),
                    c.at("kernel").get<std::string>().c_str(), c.at("eps").get<double>(),
                    c.at("fraction").get<double>(), c.at("ci_low").get<double>(),
                    c.at("ci_high").get<double>(), note.c_str());
      }
      for (const auto& t : s.at("trends")) {
        std::printf("trend %s eps=%g: non-increasing %s, separated %s\n",
                    t.at("kernel").get<std::string>().c_str(), t.at("eps").get<double>(),
                    t.at("non_increasing").get<bool>() ? "yes" : "no",
                    t.at("separated").get<bool>() ? "yes" : "no");
      }
      return kOk;
    }
  } catch (const csplab::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidation;
  } catch (const json::exception& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
