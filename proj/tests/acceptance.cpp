// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any selected criterion fails.
//
//   acceptance [--only 1,2,8-12] [--realizations N] [--workers N]
//              [--config file] [--cli path/to/fsrm] [--out dir]
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "fsrm/balance.h"
#include "fsrm/config.h"
#include "fsrm/eval.h"
#include "fsrm/harness.h"
#include "fsrm/matching.h"
#include "grad_check.h"
#include "oracles.h"

using namespace fsrm;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

std::set<int> parse_selection(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) {
    const auto dash = tok.find('-');
    if (dash == std::string::npos) {
      out.insert(std::stoi(tok));
    } else {
      for (int k = std::stoi(tok.substr(0, dash)); k <= std::stoi(tok.substr(dash + 1)); ++k) out.insert(k);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark runs, computed on first use and shared between criteria.

class Runs {
 public:
  Runs(ExperimentConfig base, std::optional<std::filesystem::path> out) : base_(std::move(base)), out_(std::move(out)) {}

  const ExperimentResult& get(const std::string& name) {
    if (auto it = cache_.find(name); it != cache_.end()) return it->second;
    ExperimentConfig c = base_;
    c.metrics = {DistanceMetric::euclidean};
    if (name == "full") c.metrics = {DistanceMetric::euclidean, DistanceMetric::mahalanobis, DistanceMetric::propensity};
    if (name == "no_fsl") c.disable_fsl = true;
    if (name == "no_ipm" || name == "no_ipm_q1") c.disable_ipm = true;
    if (name == "full_q1" || name == "no_ipm_q1") c.q = 1.0;
    if (name == "augmented") c.augment_irrelevant = 35;
    if (out_) c.output_dir = *out_ / name;
    const auto t0 = std::chrono::steady_clock::now();
    std::cerr << "running " << name << " (" << c.n_realizations << " realizations)..." << std::endl;
    auto [it, _] = cache_.emplace(name, run_experiment(c, &std::cerr));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "  " << name << " took " << num(secs, 5) << " s" << std::endl;
    return it->second;
  }

  static double sqrt_pehe(const ExperimentResult& r, DistanceMetric m = DistanceMetric::euclidean) {
    for (const auto& a : r.aggregate)
      if (a.metric == m) return a.sqrt_pehe.mean;
    throw std::logic_error("metric not in run");
  }
  static double eps_ate(const ExperimentResult& r) { return r.aggregate.front().eps_ate.mean; }

 private:
  ExperimentConfig base_;
  std::optional<std::filesystem::path> out_;
  std::map<std::string, ExperimentResult> cache_;
};

double block_mean(const RealizationResult& r, BlockLabel label, std::size_t from = 0) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t j = from; j < r.importance.size() && j < r.labels.size(); ++j)
    if (r.labels[j] == label) s += r.importance[j], ++n;
  return n ? s / static_cast<double>(n) : std::nan("");
}

// Realizations whose mean importance over `noise` columns is below half the
// confounder mean.
std::size_t low_noise_importance(const ExperimentResult& r, std::size_t noise_from) {
  std::size_t k = 0;
  for (const auto& rr : r.realizations) {
    if (!rr.ok) continue;
    const double conf = block_mean(rr, BlockLabel::confounder);
    const double noise = block_mean(rr, BlockLabel::irrelevant, noise_from);
    if (noise < 0.5 * conf) ++k;
  }
  return k;
}

Verdict synthetic_benchmark(Runs& runs) {
  const auto& r = runs.get("full");
  const double sp = Runs::sqrt_pehe(r), ea = Runs::eps_ate(r);
  return {sp <= 0.20 && ea <= 0.03, "mean sqrt_pehe " + num(sp) + " (need <= 0.20), mean eps_ate " + num(ea) +
                                         " (need <= 0.03)"};
}

Verdict metric_ordering(Runs& runs) {
  const auto& r = runs.get("full");
  const double e = Runs::sqrt_pehe(r, DistanceMetric::euclidean);
  const double m = Runs::sqrt_pehe(r, DistanceMetric::mahalanobis);
  const double p = Runs::sqrt_pehe(r, DistanceMetric::propensity);
  return {e <= m && m <= p, "sqrt_pehe euclid " + num(e) + ", mahal " + num(m) + ", propensity " + num(p) +
                                " (need euclid <= mahal <= propensity)"};
}

Verdict ablation_fsl(Runs& runs) {
  const double full = Runs::sqrt_pehe(runs.get("full")), off = Runs::sqrt_pehe(runs.get("no_fsl"));
  return {off >= 2.0 * full, "sqrt_pehe without selection layer " + num(off) + " vs full " + num(full) +
                                 ", ratio " + num(off / full) + " (need >= 2)"};
}

Verdict ablation_ipm(Runs& runs) {
  const double f0 = Runs::sqrt_pehe(runs.get("full")), n0 = Runs::sqrt_pehe(runs.get("no_ipm"));
  const double f1 = Runs::sqrt_pehe(runs.get("full_q1")), n1 = Runs::sqrt_pehe(runs.get("no_ipm_q1"));
  const bool ok0 = std::abs(n0 - f0) < 0.05, ok1 = n1 - f1 >= 0.15;
  return {ok0 && ok1, "q=0: no-ipm " + num(n0) + " vs full " + num(f0) + " (need |diff| < 0.05, " +
                          (ok0 ? "ok" : "fails") + "); q=1: no-ipm " + num(n1) + " vs full " + num(f1) +
                          " (need no-ipm worse by >= 0.15, " + (ok1 ? "ok" : "fails") + ")"};
}

Verdict bias_robustness(Runs& runs) {
  const double f0 = Runs::sqrt_pehe(runs.get("full")), f1 = Runs::sqrt_pehe(runs.get("full_q1"));
  return {f1 <= 2.5 * f0, "sqrt_pehe q=1 " + num(f1) + " vs q=0 " + num(f0) + ", ratio " + num(f1 / f0) +
                              " (need <= 2.5)"};
}

Verdict feature_importance_check(Runs& runs) {
  const auto& r = runs.get("full");
  const std::size_t k = low_noise_importance(r, 0);
  const std::size_t n = r.realizations.size();
  double conf = 0, irr = 0;
  std::size_t ok = 0;
  for (const auto& rr : r.realizations)
    if (rr.ok) conf += block_mean(rr, BlockLabel::confounder), irr += block_mean(rr, BlockLabel::irrelevant), ++ok;
  const std::size_t need = (9 * n + 9) / 10;
  return {k >= need, "irrelevant mean importance < half the confounder mean in " + std::to_string(k) + " of " +
                         std::to_string(n) + " realizations (need >= " + std::to_string(need) +
                         "); averages: confounder " + num(conf / ok) + ", irrelevant " + num(irr / ok)};
}

Verdict augmentation(Runs& runs) {
  const auto& full = runs.get("full");
  const auto& aug = runs.get("augmented");
  const double a = Runs::sqrt_pehe(aug), f = Runs::sqrt_pehe(full);
  const std::size_t d = full.realizations.front().labels.size();
  const std::size_t k = low_noise_importance(aug, d);
  const std::size_t n = aug.realizations.size(), need = (9 * n + 9) / 10;
  const bool ok_pehe = std::abs(a - f) < 0.05, ok_imp = k >= need;
  return {ok_pehe && ok_imp, "35 appended noise columns: sqrt_pehe " + num(a) + " vs " + num(f) +
                                 " (need |diff| < 0.05, " + (ok_pehe ? "ok" : "fails") +
                                 "); appended-column importance < half the confounder mean in " + std::to_string(k) +
                                 " of " + std::to_string(n) + " (need >= " + std::to_string(need) + ", " +
                                 (ok_imp ? "ok" : "fails") + ")"};
}

// ---------------------------------------------------------------------------
// Oracle criteria.

Verdict gradient_suite() {
  const int configs = 60;
  double worst = 0;
  std::size_t checked = 0;
  std::string where;
  for (int s = 0; s < configs; ++s) {
    for (auto mode : {WassGradMode::unrolled, WassGradMode::envelope}) {
      if (mode == WassGradMode::envelope) continue;  // envelope is an approximation by design
      const auto r = gradcheck::check_random_configuration(50000 + static_cast<std::uint64_t>(s), mode);
      checked += r.checked;
      if (r.max_rel_error > worst) worst = r.max_rel_error, where = "config " + std::to_string(s) + ": " + r.worst;
    }
  }
  return {worst < 1e-4, std::to_string(configs) + " configurations, " + std::to_string(checked) +
                            " (term, parameter) pairs, max relative error " + num(worst, 3) + " (need < 1e-4)" +
                            (worst >= 1e-4 ? "; worst " + where : "")};
}

Verdict matching_oracle() {
  RandomStream rs(777);
  int mismatches = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t small = 1 + rs.uniform_index(7);
    const std::size_t large = small + rs.uniform_index(3);
    const bool tall = rs.bernoulli(0.5);
    Matrix c(static_cast<Eigen::Index>(tall ? large : small), static_cast<Eigen::Index>(tall ? small : large));
    // Integer-valued costs make every summation order exact.
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = static_cast<double>(rs.uniform_index(1000));
    oracle::Dense d(static_cast<std::size_t>(c.rows()), std::vector<double>(static_cast<std::size_t>(c.cols())));
    for (Eigen::Index i = 0; i < c.rows(); ++i)
      for (Eigen::Index j = 0; j < c.cols(); ++j) d[i][j] = c(i, j);
    if (optimal_assignment(c).total_cost != oracle::brute_force_assignment(d)) ++mismatches;
  }
  return {mismatches == 0, "200 random cost matrices (min dimension <= 7): " + std::to_string(mismatches) +
                               " differ from brute-force enumeration"};
}

Verdict transport_oracle() {
  RandomStream rs(888);
  double worst = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t m = 1 + rs.uniform_index(5), n = 1 + rs.uniform_index(5), dim = 1 + rs.uniform_index(3);
    Matrix a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dim));
    Matrix b(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rs.normal();
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rs.normal();
    oracle::Dense cost(m, std::vector<double>(n));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < dim; ++k) s += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
        cost[i][j] = std::sqrt(s);
      }
    const double exact = oracle::exact_transport(cost);
    const double approx = sinkhorn_wasserstein(a, b, 1e-3, 2000).cost;
    worst = std::max(worst, std::abs(approx - exact) / exact);
  }
  return {worst < 0.05, "50 point-set pairs (sizes <= 5), eps 1e-3, 2000 iterations: max relative gap to exact " +
                            num(worst, 3) + " (need < 0.05)"};
}

Verdict metric_arithmetic() {
  // Hand-computed fixture: treated units impute y0, controls impute y1.
  Dataset ds;
  ds.t = {1, 0, 1, 0};
  ds.y_f = {5, 2, 3, 1};
  ds.x = Matrix::Zero(4, 1);
  ds.mu0 = std::vector<double>{1, 1, 2, 0};
  ds.mu1 = std::vector<double>{4, 4, 2, 1};
  const std::vector<double> cf = {1, 4, 3, 0};
  const EffectEstimates est = estimate_effects(ds, cf);
  const MetricReport m = metrics(est);
  const std::vector<double> ite_expect = {4, 2, 0, -1};
  bool ok = true;
  for (std::size_t i = 0; i < 4; ++i) ok &= std::abs(est.ite_hat[i] - ite_expect[i]) <= 1e-12;
  ok &= std::abs(est.ate_hat - 1.25) <= 1e-12;
  ok &= std::abs(*est.ate_true - 1.75) <= 1e-12;
  ok &= std::abs(m.eps_ate - 0.5) <= 1e-12;
  ok &= std::abs(m.pehe - 1.5) <= 1e-12;
  ok &= std::abs(m.sqrt_pehe - 1.2247448713915890491) <= 1e-12;

  // sqrt_pehe^2 == pehe on random instances.
  RandomStream rs(999);
  double worst = std::abs(m.sqrt_pehe * m.sqrt_pehe - m.pehe);
  for (int rep = 0; rep < 1000; ++rep) {
    EffectEstimates e;
    const std::size_t n = 1 + rs.uniform_index(50);
    std::vector<double> truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      e.ite_hat.push_back(rs.normal() * 3);
      truth[i] = rs.normal() * 3;
    }
    e.ate_hat = mean(e.ite_hat);
    e.ate_true = mean(truth);
    e.ite_true = truth;
    const MetricReport r = metrics(e);
    worst = std::max(worst, std::abs(r.sqrt_pehe * r.sqrt_pehe - r.pehe));
  }
  ok &= worst <= 1e-12;
  return {ok, "ITE/ATE/eps_ate/PEHE fixture " + std::string(ok ? "exact" : "MISMATCH") +
                  "; max |sqrt_pehe^2 - pehe| " + num(worst, 3) + " (need <= 1e-12)"};
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict determinism(const std::string& cli) {
  const auto dir = std::filesystem::temp_directory_path() / "fsrm_acceptance_determinism";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream cfg(dir / "exp.cfg");
    cfg << "n_confounders = 4\nn_adjustment = 3\nn_instruments = 2\nn_irrelevant = 4\n"
           "pool_treated = 150\npool_control = 150\ndraw_treated = 50\ndraw_control = 100\n"
           "layer_dims = 16,8\npred_width = 8\nbatch_size = 50\nmax_epochs = 10\n"
           "metric = euclid,mahal,propensity\n";
  }
  std::string aggregates[2];
  for (int k = 0; k < 2; ++k) {
    const auto out = dir / ("run" + std::to_string(k));
    const std::string cmd = "\"" + cli + "\" experiment --config \"" + (dir / "exp.cfg").string() +
                            "\" --seed 2024 --realizations 3 --workers 2 --out \"" + out.string() + "\" > \"" +
                            (dir / "stdout.txt").string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "experiment command failed: " + read_all(dir / "stdout.txt")};
    aggregates[k] = read_all(out / "aggregate.csv");
  }
  const bool same = !aggregates[0].empty() && aggregates[0] == aggregates[1];
  return {same, std::string("two `experiment` runs with seed 2024: aggregate.csv ") +
                    (same ? "byte-identical" : "differs") + " (" + std::to_string(aggregates[0].size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string only = "1-12", config_path, out_dir;
  std::string cli = (std::filesystem::path(argv[0]).parent_path().parent_path() / "tools" / "fsrm").string();
  std::size_t realizations = 100;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--only", only, "Criteria to run, e.g. 1-7 or 8,9");
  app.add_option("--realizations", realizations, "Realizations per benchmark run");
  app.add_option("--workers", workers, "Worker threads for benchmark runs");
  app.add_option("--config", config_path, "Config file for benchmark runs (default settings otherwise)");
  app.add_option("--cli", cli, "Path to the fsrm executable");
  app.add_option("--out", out_dir, "Write per-run CSVs here");
  CLI11_PARSE(app, argc, argv);

  ExperimentConfig base;
  if (!config_path.empty()) base = load_config(config_path);
  base.n_realizations = realizations;
  base.workers = workers;
  base.seed = 20240601;
  Runs runs(base, out_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(out_dir));

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"synthetic benchmark accuracy", [&] { return synthetic_benchmark(runs); }},
      {"distance metric ordering", [&] { return metric_ordering(runs); }},
      {"selection layer ablation", [&] { return ablation_fsl(runs); }},
      {"balance term ablation", [&] { return ablation_ipm(runs); }},
      {"robustness to selection bias", [&] { return bias_robustness(runs); }},
      {"feature importance separates noise", [&] { return feature_importance_check(runs); }},
      {"noise augmentation", [&] { return augmentation(runs); }},
      {"gradient finite differences", gradient_suite},
      {"assignment vs brute force", matching_oracle},
      {"transport vs exact solver", transport_oracle},
      {"effect metric arithmetic", metric_arithmetic},
      {"experiment determinism", [&] { return determinism(cli); }},
  };

  const std::set<int> selected = parse_selection(only);
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.contains(id)) continue;
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << criteria[k].first << "): " << v.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
