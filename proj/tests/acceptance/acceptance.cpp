// Acceptance runner. One PASS/FAIL line per criterion, exit status 1 if
// any criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "translab/experiments.hpp"

namespace fs = std::filesystem;
using translab::ordered_json;

namespace {

struct Check {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (detail.tellp() > 0) detail << "; ";
    detail << (ok ? "" : "!") << what;
  }
};

std::string num(double x) { return translab::fmt(x); }

struct Runner {
  fs::path config_dir;
  fs::path examples_dir;
  fs::path out;
  int workers = 1;

  struct Timed {
    translab::ExperimentOutcome outcome;
    double seconds = 0.0;
  };

  Timed run(const std::string& config, int w) const {
    const auto cfg = translab::ExperimentConfig::load(config_dir / config);
    const auto t0 = std::chrono::steady_clock::now();
    auto outcome = translab::run_experiment(cfg, out / cfg.experiment_id, w);
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    return {std::move(outcome), dt.count()};
  }
  Timed run(const std::string& config) const { return run(config, workers); }
};

double value_of(const ordered_json& estimate) { return estimate.at("value").get<double>(); }
double ci_of(const ordered_json& estimate) {
  return estimate.at("ci_halfwidth_95").get<double>();
}

void free_particle(const Runner& r, Check& c) {
  const auto nemd = r.run("free_nemd.json");
  const auto& cell = nemd.outcome.summary.at("cells").at(0);
  const double a = value_of(cell.at("estimate")), ci = ci_of(cell.at("estimate"));
  c.require(std::abs(a - 1.0) <= ci, "NEMD alpha " + num(a) + " +- " + num(ci));
  c.require(2.0 * ci <= 0.05, "NEMD CI width " + num(2.0 * ci) + " <= 0.05");
  c.require(nemd.seconds <= 60.0, "NEMD " + num(nemd.seconds) + " s <= 60");

  const auto gk = r.run("free_gk.json");
  const auto& g = gk.outcome.summary.at("cells").at(0).at("estimate");
  const double b = value_of(g), ci_g = ci_of(g);
  c.require(std::abs(b - 1.0) <= ci_g, "GK alpha " + num(b) + " +- " + num(ci_g));
  c.require(2.0 * ci_g <= 0.05, "GK CI width " + num(2.0 * ci_g) + " <= 0.05");
  c.require(gk.seconds <= 60.0, "GK " + num(gk.seconds) + " s <= 60");
}

void overdamped_benchmark(const Runner& r, Check& c) {
  const auto res = r.run("overdamped_nemd.json");
  const auto& s = res.outcome.summary;
  for (const auto& cell : s.at("cells")) {
    const double eta = cell.at("eta").get<double>();
    const double a = value_of(cell.at("estimate"));
    const double se = ci_of(cell.at("estimate")) / translab::kZ95;
    const double o = cell.at("oracle").get<double>();
    c.require(std::abs(a - o) <= 3.0 * se,
              "eta=" + num(eta) + ": " + num(a) + " vs " + num(o) + " (z=" + num((a - o) / se) + ")");
  }
  const auto& fit = s.at("fits").at(0);
  const double alpha = fit.at("alpha").get<double>(), se = fit.at("stderr").get<double>();
  const double mob = s.at("mobility_oracle").get<double>();
  c.require(std::abs(alpha - mob) <= 3.0 * se,
            "fit alpha " + num(alpha) + " +- " + num(se) + " vs " + num(mob));
  c.require(res.seconds <= 120.0, num(res.seconds) + " s <= 120");
}

void bias_slopes(const Runner& r, Check& c) {
  const auto res = r.run("bias_slope_2d.json");
  const auto& fits = res.outcome.summary.at("slope_fits");
  auto slope = [&](const std::string& s, double lo, double hi) {
    const auto& f = fits.at(s);
    if (f.contains("error")) {
      c.require(false, s + ": " + f.at("error").get<std::string>());
      return;
    }
    const double k = f.at("slope").get<double>(), r2 = f.at("r_squared").get<double>();
    c.require(k >= lo && k <= hi, s + " slope " + num(k) + " in [" + num(lo) + ", " + num(hi) + "]");
    c.require(r2 >= 0.9, s + " R2 " + num(r2));
    if (!f.at("excluded_dt").empty()) c.detail << " (excluded dt " << f.at("excluded_dt").dump() << ")";
  };
  slope("BAC", 0.7, 1.3);
  slope("CBABC", 1.6, 2.4);
  c.require(res.seconds <= 900.0, num(res.seconds) + " s <= 900");
}

void gk_quadrature(const Runner& r, Check& c) {
  const auto res = r.run("gk_quadrature.json");
  const auto& s = res.outcome.summary;
  const auto& em = s.at("slope_fits").at("EM-rectangle");
  if (em.contains("error")) {
    c.require(false, "EM-rectangle: " + em.at("error").get<std::string>());
  } else {
    const double k = em.at("slope").get<double>();
    c.require(k >= 0.7 && k <= 1.3, "EM-rectangle slope " + num(k) + " in [0.7, 1.3]");
  }
  for (const auto& f : s.at("finest_dt")) {
    const auto series = f.at("series").get<std::string>();
    const double z = f.at("z_score").get<double>();
    if (series == "MALA-trapezoid")
      c.require(std::abs(z) <= 3.0, "MALA-trapezoid z at dt=" + num(f.at("dt").get<double>()) +
                                        " is " + num(z));
    else if (series == "MALA-rectangle")
      c.detail << " (MALA-rectangle z " << num(z) << ", informational)";
  }
  c.require(res.seconds <= 600.0, num(res.seconds) + " s <= 600");
}

void clt_scaling(const Runner& r, Check& c) {
  for (const char* name : {"clt_free.json", "clt_cosine.json"}) {
    const auto res = r.run(name);
    const auto& s = res.outcome.summary;
    const auto id = res.outcome.summary.at("experiment_id").get<std::string>();
    for (const auto& sp : s.at("normalized_spread")) {
      const double m = sp.at("max_over_min").get<double>();
      c.require(m <= 1.5, id + " spread " + num(m) + " <= 1.5");
    }
    if (s.contains("expected_normalized")) {
      const double e = s.at("expected_normalized").get<double>();
      for (const auto& cell : s.at("cells")) {
        const double v = cell.at("normalized").get<double>();
        c.require(std::abs(v - e) <= 0.3 * e, id + " eta=" + num(cell.at("eta").get<double>()) +
                                                  " normalized " + num(v) + " vs " + num(e));
      }
    }
  }
}

void gk_variance(const Runner& r, Check& c) {
  const auto res = r.run("gk_variance.json");
  const auto& f = res.outcome.summary.at("variance_fit");
  const double k = f.at("slope").get<double>(), r2 = f.at("r_squared").get<double>();
  c.require(r2 > 0.9, "R2 " + num(r2) + " > 0.9");
  c.require(k > 0.0, "slope " + num(k) + " > 0");
}

void martingale(const Runner& r, Check& c) {
  const auto res = r.run("martingale.json");
  const auto& s = res.outcome.summary;
  const double o = s.at("oracle").get<double>();
  for (const auto& cell : s.at("cells")) {
    const double h = cell.at("horizon").get<double>();
    const double z = cell.at("z_score").get<double>();
    c.require(std::abs(z) <= 3.0, "t=" + num(h) + ": " + num(value_of(cell.at("estimate"))) +
                                      " vs " + num(o) + " (z=" + num(z) + ")");
    if (cell.contains("variance_ratio_to_previous")) {
      const double ratio = cell.at("variance_ratio_to_previous").get<double>();
      c.require(ratio <= 1.5, "Var(t=" + num(h) + ")/Var(t/2) " + num(ratio) + " <= 1.5");
    }
  }
}

void oracle_consistency(const Runner&, Check& c) {
  using translab::PotentialModel;
  const auto free = PotentialModel::zero(1);
  auto poisson_error = [&](std::size_t n) {
    const double k = 2.0 * std::numbers::pi;
    const auto rv = translab::sample_on_grid([&](double q) { return std::sin(k * q); }, 1.0, n);
    const auto sol = translab::poisson_solve_1d(free, 1.0, rv, n);
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      e = std::max(e, std::abs(sol.values[i] - std::sin(k * sol.grid[i]) / (k * k)));
    return e;
  };
  const double e256 = poisson_error(256), e512 = poisson_error(512), e1024 = poisson_error(1024);
  c.require(e1024 <= 1e-6, "Poisson max error " + num(e1024) + " <= 1e-6 at n=1024");
  for (double ratio : {e256 / e512, e512 / e1024})
    c.require(ratio >= 3.5 && ratio <= 4.5, "refinement ratio " + num(ratio));

  const std::pair<const char*, PotentialModel> models[] = {
      {"zero", free}, {"cosine1d", PotentialModel::cosine_1d(0.5)}};
  for (const auto& [name, m] : models) {
    const double a = translab::mobility_oracle_1d(m, 1024);
    const double b = translab::overdamped_mobility_gk_1d(m, 1.0, 1024);
    const double rel = std::abs(a - b) / std::abs(a);
    c.require(rel <= 1e-4, std::string(name) + " mobility " + num(a) + " vs GK " + num(b) +
                               " (rel " + num(rel) + ")");
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void determinism(const Runner& r, Check& c) {
  std::vector<fs::path> configs;
  for (const auto& e : fs::directory_iterator(r.examples_dir))
    if (e.path().extension() == ".json") configs.push_back(e.path());
  std::sort(configs.begin(), configs.end());
  if (configs.empty()) c.require(false, "no example configs in " + r.examples_dir.string());
  std::size_t compared = 0;
  for (const auto& path : configs) {
    const auto cfg = translab::ExperimentConfig::load(path);
    const auto a = translab::run_experiment(cfg, r.out / "determinism" / "a", 1);
    const auto b = translab::run_experiment(cfg, r.out / "determinism" / "b", 2);
    for (std::size_t i = 0; i < a.files.size(); ++i) {
      if (a.files[i].extension() != ".csv") continue;  // summaries carry wall time
      ++compared;
      if (i >= b.files.size() || slurp(a.files[i]) != slurp(b.files[i]))
        c.require(false, a.files[i].filename().string() + " differs");
    }
  }
  c.require(c.pass, std::to_string(compared) + " CSVs from " + std::to_string(configs.size()) +
                        " configs identical across reruns (1 vs 2 workers)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for transport-lab"};
  Runner r;
  std::string out = "acceptance_out";
  std::string config_dir = TRANSLAB_CONFIG_DIR;
  std::string examples_dir = TRANSLAB_EXAMPLES_DIR;
  std::string only;
  r.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--out", out, "Output directory for CSVs and summaries");
  app.add_option("--configs", config_dir, "Acceptance config directory");
  app.add_option("--examples", examples_dir, "Example configs used for the determinism check");
  app.add_option("--workers", r.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--only", only, "Run only criteria whose name contains this string");
  CLI11_PARSE(app, argc, argv);
  r.out = out;
  r.config_dir = config_dir;
  r.examples_dir = examples_dir;

  const std::vector<std::pair<std::string, std::function<void(const Runner&, Check&)>>> criteria{
      {"free-particle-mobility", free_particle},
      {"overdamped-benchmark", overdamped_benchmark},
      {"timestep-bias-slopes", bias_slopes},
      {"gk-quadrature-correction", gk_quadrature},
      {"clt-scaling", clt_scaling},
      {"gk-variance-growth", gk_variance},
      {"martingale-estimator", martingale},
      {"oracle-consistency", oracle_consistency},
      {"determinism", determinism},
  };
  int run = 0, passed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && name.find(only) == std::string::npos) continue;
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(r, c);
    } catch (const std::exception& e) {
      c.require(false, std::string("error: ") + e.what());
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    ++run;
    passed += c.pass ? 1 : 0;
    std::printf("%s %s [%.1f s]: %s\n", c.pass ? "PASS" : "FAIL", name.c_str(), dt.count(),
                c.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", passed, run);
  return passed == run ? 0 : 1;
}
