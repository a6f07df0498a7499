#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "csplab/harness.hpp"

using namespace csplab;
using namespace csplab::harness;
namespace fs = std::filesystem;

namespace {

// Wilson bounds are the roots of (phat - p)^2 = z^2 p (1 - p) / n; found here
// by bisection on each side of phat.
double score_root(int k, int n, bool upper) {
  const double z = 1.959963984540054, phat = double(k) / n;
  auto accept = [&](double p) { return (phat - p) * (phat - p) <= z * z * p * (1 - p) / n; };
  double in = phat, out = upper ? 1.0 : 0.0;
  if (accept(out)) return out;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (in + out);
    (accept(mid) ? in : out) = mid;
  }
  return in;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("csplab_harness_" + name);
  fs::remove_all(p);
  return p;
}

json small_base() {
  return {{"grid", {{"dim", 1}, {"n", 64}, {"L", 8.0}}},
          {"kernel", {{"spec", "white"}, {"eta", 0.1}}},
          {"initial", {{"profile", "bump"}, {"R0", 1.0}}},
          {"time", {{"T", 0.05}}},
          {"recording", {{"stride", 4}}}};
}

SweepConfig small_sweep(const std::string& out) {
  SweepConfig c;
  c.base = small_base();
  c.lambda_list = {0.5};
  c.kernel_list = {"white"};
  c.replicas = 4;
  c.eps_list = {1e-8};
  c.R_max = 6.0;
  c.output = out;
  c.seed = 11;
  return c;
}

}  // namespace

TEST(Wilson, MatchesScoreTestInversion) {
  for (int n : {1, 5, 30, 50, 200}) {
    for (int k = 0; k <= n; ++k) {
      const auto w = wilson(k, n);
      EXPECT_NEAR(w.low, score_root(k, n, false), 1e-12) << k << "/" << n;
      EXPECT_NEAR(w.high, score_root(k, n, true), 1e-12) << k << "/" << n;
      EXPECT_LE(w.low, double(k) / n);
      EXPECT_GE(w.high, double(k) / n);
    }
  }
}

TEST(Wilson, Examples) {
  EXPECT_GT(wilson(30, 30).low, 0.88);
  const auto half = wilson(15, 30);
  EXPECT_NEAR(half.low, 0.33, 0.01);
  EXPECT_NEAR(half.high, 0.67, 0.01);
}

TEST(Estimate, FractionsFlagsAndReliability) {
  std::vector<ReplicaRecord> recs;
  for (int r = 0; r < 30; ++r) {
    recs.push_back({0.5, "white", std::uint64_t(r), {true}, 1.0, 0.0, false, ""});
    recs.push_back({1.3, "white", std::uint64_t(r), {false}, 9.0, 0.0, r == 0, ""});
  }
  for (int r = 0; r < 10; ++r) {
    recs.push_back({0.9, "white", std::uint64_t(r), {r < 5}, 1.0, 0.0, false, ""});
  }
  const auto cells = estimate_csp_probability(recs, {1e-8});
  ASSERT_EQ(cells.size(), 3u);
  EXPECT_EQ(cells[0].fraction, 1.0);
  EXPECT_GT(cells[0].ci_low, 0.88);
  EXPECT_TRUE(cells[0].reliable);
  EXPECT_FALSE(cells[0].failure_regime);
  EXPECT_EQ(cells[1].fraction, 0.0);
  EXPECT_EQ(cells[1].blow_ups, 1);
  EXPECT_TRUE(cells[1].failure_regime);
  EXPECT_FALSE(cells[2].reliable);
  const auto trends = trend_checks(cells);
  ASSERT_EQ(trends.size(), 1u);
  EXPECT_TRUE(trends[0].non_increasing);
  EXPECT_TRUE(trends[0].separated);
}

TEST(Estimate, BlowUpCountsAsUnbounded) {
  std::vector<ReplicaRecord> recs{{0.5, "white", 0, {false}, std::nullopt, 0.0, true, "x"},
                                  {0.5, "white", 1, {true}, 1.0, 0.0, false, ""}};
  const auto cells = estimate_csp_probability(recs, {1e-8});
  EXPECT_EQ(cells[0].bounded, 1);
  EXPECT_EQ(cells[0].blow_ups, 1);
}

TEST(Trend, InvertedIsRejected) {
  std::vector<CellEstimate> cells;
  for (auto [lam, frac] : {std::pair{0.3, 0.0}, std::pair{1.3, 1.0}}) {
    CellEstimate c;
    c.lambda = lam;
    c.kernel = "white";
    c.eps = 1e-8;
    c.total = 50;
    c.bounded = int(frac * 50);
    c.fraction = frac;
    const auto w = wilson(c.bounded, 50);
    c.ci_low = w.low;
    c.ci_high = w.high;
    cells.push_back(c);
  }
  const auto t = trend_checks(cells);
  EXPECT_FALSE(t[0].non_increasing);
  EXPECT_FALSE(t[0].separated);
}

TEST(RunConfig, ParsesAndValidates) {
  const auto s = parse_run_config(small_base());
  EXPECT_EQ(s.run.grid.n, 64);
  EXPECT_EQ(s.kernel_spec, "white");
  const auto v = validate_run(s);
  EXPECT_NEAR(v.dt, 0.9 * v.dt_max, 1e-15);
  EXPECT_EQ(parse_run_config(small_base()).run.config_hash, s.run.config_hash);
  json other = small_base();
  other["time"]["T"] = 0.1;
  EXPECT_NE(parse_run_config(other).run.config_hash, s.run.config_hash);
}

TEST(RunConfig, ValidationErrorsNameTheCheck) {
  auto expect_msg = [](const json& j, const std::string& needle) {
    try {
      validate_run(parse_run_config(j));
      ADD_FAILURE() << "no error for " << needle;
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  json d2 = small_base();
  d2["grid"] = {{"dim", 2}, {"n", 16}, {"L", 4.0}};
  expect_msg(d2, "dalang");
  json cfl = small_base();
  cfl["time"]["dt"] = 1.0;
  expect_msg(cfl, "stability limit");
  json ell = small_base();
  ell["coefficients"] = {{"type", "constant"}, {"a", {-1.0, 0.0, 1.0}}, {"K", 2.0}};
  expect_msg(ell, "ellipt");
  json bad = small_base();
  bad["coefficients"] = {{"type", "nope"}};
  expect_msg(bad, "unknown type");
  json typ = small_base();
  typ["grid"]["n"] = "many";
  expect_msg(typ, "bad value");
}

TEST(Sweep, EmptyLambdaListIsValidationError) {
  auto c = small_sweep(scratch("empty").string());
  c.lambda_list.clear();
  EXPECT_THROW(run_sweep(c), ValidationError);
}

TEST(Sweep, RejectsBadShape) {
  auto c = small_sweep(scratch("shape").string());
  c.R_max = 8.0;
  EXPECT_THROW(run_sweep(c), ValidationError);
  c.R_max = 6.0;
  c.replicas = 0;
  EXPECT_THROW(run_sweep(c), ValidationError);
}

TEST(Sweep, NothingRunsWhenValidationFails) {
  const auto out = scratch("dalang");
  auto c = small_sweep(out.string());
  c.kernel_list = {"white", "riesz:alpha=0.99"};
  c.base["kernel"]["eta"] = 0.6;  // white d=1 needs eta < 1/2
  EXPECT_THROW(run_sweep(c), ValidationError);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Sweep, SingleCellPlumbing) {
  const auto out = scratch("single");
  const auto res = run_sweep(small_sweep(out.string()));
  write_sweep_outputs(res);
  const auto cell = out / cell_dir_name(0.5, "white");
  int files = 0;
  for (const auto& e : fs::directory_iterator(cell)) files += e.path().extension() == ".csv";
  EXPECT_EQ(files, 4);
  ASSERT_EQ(res.cells.size(), 1u);
  EXPECT_GE(res.cells[0].fraction, 0.0);
  EXPECT_LE(res.cells[0].fraction, 1.0);
  EXPECT_TRUE(fs::exists(out / "sweep.csv"));
  EXPECT_TRUE(fs::exists(out / "aggregate.csv"));
  EXPECT_TRUE(fs::exists(out / "summary.json"));
  EXPECT_FALSE(res.cells[0].reliable);
}

TEST(Sweep, ByteIdenticalAcrossRunsAndWorkers) {
  auto c = small_sweep(scratch("det1").string());
  c.lambda_list = {0.3, 1.3};
  c.kernel_list = {"white", "ou:beta=1"};
  c.replicas = 5;
  write_sweep_outputs(run_sweep(c));
  auto c2 = c;
  c2.output = scratch("det2").string();
  c2.workers = 3;
  write_sweep_outputs(run_sweep(c2));
  for (const char* f : {"summary.json", "aggregate.csv", "sweep.csv"}) {
    EXPECT_EQ(slurp(fs::path(c.output) / f), slurp(fs::path(c2.output) / f)) << f;
  }
  EXPECT_EQ(slurp(fs::path(c.output) / cell_dir_name(1.3, "ou:beta=1") / "replica_4.csv"),
            slurp(fs::path(c2.output) / cell_dir_name(1.3, "ou:beta=1") / "replica_4.csv"));
  const auto s = slurp(fs::path(c.output) / "summary.json");
  EXPECT_NE(s.find("CSP-failure regime"), std::string::npos);
}

TEST(Sweep, BlowUpsAreRecordedNotFatal) {
  auto c = small_sweep(scratch("blow").string());
  c.base["initial"]["height"] = 1e13;
  c.replicas = 2;
  const auto res = run_sweep(c);
  ASSERT_EQ(res.records.size(), 2u);
  for (const auto& r : res.records) {
    EXPECT_TRUE(r.blow_up);
    EXPECT_FALSE(r.bounded[0]);
  }
  EXPECT_EQ(res.cells[0].blow_ups, 2);
  EXPECT_EQ(res.cells[0].fraction, 0.0);
}

namespace {

json quick_lemma_params() {
  return {{"members", 10},
          {"reverse_jensen", {{"m_1d", 16}, {"m_2d", 6}, {"m_t", 32}}},
          {"covariance",
           {{"count", 5},
            {"grid_1d", {{"n", 64}, {"L", 4.0}}},
            {"grid_2d", {{"n", 32}, {"L", 4.0}}}}},
          {"cutoff", {{"n_list", {10, 100}}}},
          {"exponent_lattice", 4}};
}

}  // namespace

TEST(LemmaSuite, WritesReportsAndPasses) {
  const auto out = scratch("lemma");
  const auto res = run_lemma_suite(quick_lemma_params(), out.string());
  EXPECT_FALSE(res.violation);
  EXPECT_GE(res.files.size(), 4u);
  for (const auto& f : res.files) EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_GT(res.summary.at("control_failures").get<int>(), 0);
}

TEST(LemmaSuite, FaultyPhiIsAViolation) {
  auto p = quick_lemma_params();
  p["covariance"]["phi_fraction"] = 4.0;
  EXPECT_TRUE(run_lemma_suite(p, scratch("lemma_bad").string()).violation);
}

TEST(LemmaSuite, InadmissibleRieszIsValidationError) {
  auto p = quick_lemma_params();
  p["covariance"]["kernels_2d"] = {"riesz:alpha=2"};
  EXPECT_THROW(run_lemma_suite(p, scratch("lemma_riesz").string()), ValidationError);
}
