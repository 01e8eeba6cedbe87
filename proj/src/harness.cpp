#include "fsrm/harness.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "fsrm/datagen.h"
#include "fsrm/train.h"

namespace fsrm {

namespace {

// Runs job(i) for i in [0, n) on up to `workers` threads. job must not throw.
template <typename Job>
void parallel_for(std::size_t n, std::size_t workers, Job&& job) {
  const std::size_t k = std::max<std::size_t>(1, std::min(workers, n));
  if (k == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(k);
  for (std::size_t w = 0; w < k; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) job(i);
    });
  for (auto& th : pool) th.join();
}

class Logger {
 public:
  explicit Logger(std::ostream* out) : out_(out) {}
  void line(const std::string& msg) {
    if (!out_) return;
    std::lock_guard lock(mu_);
    *out_ << msg << '\n';
  }

 private:
  std::ostream* out_;
  std::mutex mu_;
};

std::optional<Dataset> load_ingested(const ExperimentConfig& cfg) {
  if (!cfg.dataset) return std::nullopt;
  return read_dataset(*cfg.dataset);
}

Dataset build_dataset(const ExperimentConfig& cfg, const SyntheticSpec& spec, const std::optional<Dataset>& ingested,
                      RandomStream& rs) {
  RandomStream data = rs.split("data");
  RandomStream resample = rs.split("resample");
  RandomStream augment = rs.split("augment");
  Dataset ds;
  if (ingested) {
    ds = cfg.q > 0.0 ? biased_resample(*ingested, cfg.q, spec.draw_treated, spec.draw_control, resample) : *ingested;
  } else {
    const Dataset pool = generate_pool(spec, data);
    ds = biased_resample(pool, cfg.q, spec.draw_treated, spec.draw_control, resample);
  }
  if (cfg.augment_irrelevant > 0) ds = augment_irrelevant(ds, cfg.augment_irrelevant, augment);
  return ds;
}

RealizationResult run_realization(const ExperimentConfig& cfg, const TrainConfig& tc, const SyntheticSpec& spec,
                                  const std::optional<Dataset>& ingested, std::size_t index) {
  RealizationResult res;
  res.index = index;
  RandomStream rs = RandomStream(cfg.seed).split(static_cast<std::uint64_t>(index));
  const Dataset ds = build_dataset(cfg, spec, ingested, rs);
  RandomStream train_stream = rs.split("train");
  const TrainResult tr = train(tc, ds, train_stream);
  if (!std::isfinite(tr.best_validation)) throw NumericalError("training never reached a finite validation objective");

  res.val_loss = tr.best_validation;
  res.best_epoch = tr.best_epoch;
  if (!tr.history.empty()) res.train_loss = tr.history[tr.best_epoch].train.total();
  res.importance = feature_importance(tr.model.params);
  if (ds.block_labels) res.labels = *ds.block_labels;

  const ForwardResult fr = tr.model.predict(ds.x, ds.t);
  for (DistanceMetric m : cfg.metrics) {
    const MatchResult mr = impute_counterfactuals(ds, fr.representation, m, fr.p_treated);
    const EffectEstimates est = estimate_effects(ds, mr);
    MetricOutcome out;
    out.metric = m;
    out.report = metrics(est);
    out.ate_hat = est.ate_hat;
    out.pair_cost = mr.pair_cost;
    res.outcomes.push_back(out);
  }
  res.ok = true;
  return res;
}

std::vector<MetricAggregate> aggregate(const ExperimentConfig& cfg, const std::vector<RealizationResult>& rs) {
  std::vector<MetricAggregate> out;
  for (std::size_t k = 0; k < cfg.metrics.size(); ++k) {
    MetricAggregate a;
    a.metric = cfg.metrics[k];
    std::vector<double> sp, pe, ea, pc;
    for (const auto& r : rs) {
      if (!r.ok) {
        ++a.n_failed;
        continue;
      }
      const MetricOutcome& o = r.outcomes[k];
      sp.push_back(o.report.sqrt_pehe);
      pe.push_back(o.report.pehe);
      ea.push_back(o.report.eps_ate);
      pc.push_back(o.pair_cost);
    }
    a.n_ok = sp.size();
    a.sqrt_pehe = summarize(sp);
    a.pehe = summarize(pe);
    a.eps_ate = summarize(ea);
    a.pair_cost = summarize(pc);
    out.push_back(a);
  }
  return out;
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) {
    s.mean = s.sd = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

Dataset realization_dataset(const ExperimentConfig& cfg, std::size_t index) {
  const auto ingested = load_ingested(cfg);
  RandomStream rs = RandomStream(cfg.seed).split(static_cast<std::uint64_t>(index));
  return build_dataset(cfg, cfg.effective_synthetic_spec(), ingested, rs);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  const TrainConfig tc = cfg.effective_train_config();
  const SyntheticSpec spec = cfg.effective_synthetic_spec();
  const auto ingested = load_ingested(cfg);
  if (ingested && cfg.q > 0.0 && !ingested->e0)
    throw std::invalid_argument("run_experiment: q > 0 needs a dataset with e0");

  Logger logger(log);
  ExperimentResult result;
  result.seed = cfg.seed;
  result.realizations.resize(cfg.n_realizations);
  parallel_for(cfg.n_realizations, cfg.workers, [&](std::size_t i) {
    try {
      result.realizations[i] = run_realization(cfg, tc, spec, ingested, i);
    } catch (const std::exception& e) {
      RealizationResult failed;
      failed.index = i;
      failed.error = e.what();
      result.realizations[i] = std::move(failed);
      logger.line("realization " + std::to_string(i) + " failed: " + e.what());
    }
  });

  for (const auto& r : result.realizations) result.failures += r.ok ? 0 : 1;
  if (result.failures * 10 > cfg.n_realizations)
    throw std::runtime_error("run_experiment: " + std::to_string(result.failures) + " of " +
                             std::to_string(cfg.n_realizations) + " realizations failed");
  result.aggregate = aggregate(cfg, result.realizations);
  if (cfg.output_dir) write_experiment_outputs(result, *cfg.output_dir);
  return result;
}

std::string format_realizations_csv(const ExperimentResult& r) {
  std::string out = "seed,realization,metric,status,sqrt_pehe,pehe,eps_ate,ate_hat,pair_cost,train_loss,val_loss,best_epoch\n";
  for (const auto& rr : r.realizations) {
    const std::string head = std::to_string(r.seed) + "," + std::to_string(rr.index) + ",";
    if (!rr.ok) {
      for (const auto& a : r.aggregate) out += head + std::string(to_string(a.metric)) + ",failed,,,,,,,,\n";
      continue;
    }
    for (const auto& o : rr.outcomes) {
      out += head + std::string(to_string(o.metric)) + ",ok," + fmt(o.report.sqrt_pehe) + "," + fmt(o.report.pehe) +
             "," + fmt(o.report.eps_ate) + "," + fmt(o.ate_hat) + "," + fmt(o.pair_cost) + "," + fmt(rr.train_loss) +
             "," + fmt(rr.val_loss) + "," + std::to_string(rr.best_epoch) + "\n";
    }
  }
  return out;
}

std::string format_aggregate_csv(const ExperimentResult& r) {
  std::string out =
      "seed,metric,n_ok,n_failed,sqrt_pehe_mean,sqrt_pehe_sd,pehe_mean,pehe_sd,eps_ate_mean,eps_ate_sd,"
      "pair_cost_mean,pair_cost_sd\n";
  for (const auto& a : r.aggregate) {
    out += std::to_string(r.seed) + "," + std::string(to_string(a.metric)) + "," + std::to_string(a.n_ok) + "," +
           std::to_string(a.n_failed) + "," + fmt(a.sqrt_pehe.mean) + "," + fmt(a.sqrt_pehe.sd) + "," +
           fmt(a.pehe.mean) + "," + fmt(a.pehe.sd) + "," + fmt(a.eps_ate.mean) + "," + fmt(a.eps_ate.sd) + "," +
           fmt(a.pair_cost.mean) + "," + fmt(a.pair_cost.sd) + "\n";
  }
  return out;
}

std::string format_importance_csv(const ExperimentResult& r) {
  std::string out = "realization,column,block,importance\n";
  for (const auto& rr : r.realizations) {
    for (std::size_t j = 0; j < rr.importance.size(); ++j) {
      const BlockLabel b = j < rr.labels.size() ? rr.labels[j] : BlockLabel::unknown;
      out += std::to_string(rr.index) + "," + std::to_string(j) + "," + std::string(to_string(b)) + "," +
             fmt(rr.importance[j]) + "\n";
    }
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("error writing " + path.string());
}

void write_experiment_outputs(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "realizations.csv", format_realizations_csv(r));
  write_text_file(dir / "aggregate.csv", format_aggregate_csv(r));
  write_text_file(dir / "importance.csv", format_importance_csv(r));
}

std::vector<BiasSweepRow> bias_sweep(const ExperimentConfig& cfg, const std::vector<double>& q_grid,
                                     std::ostream* log) {
  if (q_grid.empty()) throw std::invalid_argument("bias_sweep: empty q grid");
  std::vector<BiasSweepRow> rows;
  for (double q : q_grid) {
    ExperimentConfig c = cfg;
    c.q = q;
    c.output_dir.reset();
    const ExperimentResult r = run_experiment(c, log);
    for (const auto& a : r.aggregate) rows.push_back({q, a});
  }
  return rows;
}

std::string format_bias_csv(const std::vector<BiasSweepRow>& rows) {
  std::string out = "q,metric,n_ok,sqrt_pehe_mean,sqrt_pehe_sd,eps_ate_mean,eps_ate_sd\n";
  for (const auto& row : rows) {
    out += fmt(row.q) + "," + std::string(to_string(row.agg.metric)) + "," + std::to_string(row.agg.n_ok) + "," +
           fmt(row.agg.sqrt_pehe.mean) + "," + fmt(row.agg.sqrt_pehe.sd) + "," + fmt(row.agg.eps_ate.mean) + "," +
           fmt(row.agg.eps_ate.sd) + "\n";
  }
  return out;
}

SearchResult hyper_search(const ExperimentConfig& cfg, const SearchGrid& grid, std::ostream* log) {
  if (grid.axes.empty()) throw std::invalid_argument("hyper_search: empty grid");
  for (const auto& [key, values] : grid.axes)
    if (values.empty()) throw std::invalid_argument("hyper_search: no values for '" + key + "'");
  cfg.validate();

  std::vector<std::vector<std::size_t>> choices;
  if (grid.budget == 0) {
    std::size_t total = 1;
    for (const auto& axis : grid.axes) {
      if (total > 1'000'000 / axis.second.size()) throw std::invalid_argument("hyper_search: grid product too large; set a budget");
      total *= axis.second.size();
    }
    for (std::size_t c = 0; c < total; ++c) {
      std::vector<std::size_t> pick(grid.axes.size());
      std::size_t rem = c;
      for (std::size_t a = grid.axes.size(); a-- > 0;) {
        pick[a] = rem % grid.axes[a].second.size();
        rem /= grid.axes[a].second.size();
      }
      choices.push_back(std::move(pick));
    }
  } else {
    RandomStream draws = RandomStream(cfg.seed).split("search");
    for (std::size_t c = 0; c < grid.budget; ++c) {
      std::vector<std::size_t> pick;
      for (const auto& axis : grid.axes) pick.push_back(draws.uniform_index(axis.second.size()));
      choices.push_back(std::move(pick));
    }
  }

  std::vector<SearchCandidate> cands(choices.size());
  for (std::size_t c = 0; c < choices.size(); ++c) {
    cands[c].id = c;
    cands[c].config = cfg;
    for (std::size_t a = 0; a < grid.axes.size(); ++a) {
      const auto& [key, values] = grid.axes[a];
      cands[c].settings.emplace_back(key, values[choices[c][a]]);
      apply_setting(cands[c].config, key, values[choices[c][a]]);
    }
  }

  // Candidates share the training realization; only their hyperparameters differ.
  const auto ingested = load_ingested(cfg);
  RandomStream rs = RandomStream(cfg.seed).split(std::uint64_t{0});
  const Dataset ds = build_dataset(cfg, cfg.effective_synthetic_spec(), ingested, rs);
  const RandomStream train_root = rs.split("train");
  const TrainConfig reference = cfg.effective_train_config();

  Logger logger(log);
  parallel_for(cands.size(), cfg.workers, [&](std::size_t c) {
    SearchCandidate& cand = cands[c];
    cand.score = std::numeric_limits<double>::infinity();
    try {
      cand.config.validate();
      RandomStream stream = train_root;
      const TrainResult tr = train(cand.config.effective_train_config(), ds, stream);
      cand.best_epoch = tr.best_epoch;
      Dataset val = ds.subset(tr.validation_indices);
      const Batch batch{tr.model.standardizer.apply(val.x), val.t, val.y_f};
      RandomStream unused(0);
      const double s = total_objective(tr.model.params, batch, reference, Mode::eval, unused).total();
      if (std::isfinite(s) && std::isfinite(tr.best_validation)) cand.score = s;
    } catch (const std::exception& e) {
      cand.error = e.what();
      logger.line("search candidate " + std::to_string(c) + " failed: " + e.what());
    }
  });

  SearchResult out;
  out.ranking = std::move(cands);
  std::stable_sort(out.ranking.begin(), out.ranking.end(),
                   [](const SearchCandidate& a, const SearchCandidate& b) { return a.score < b.score; });
  return out;
}

std::string format_ranking_csv(const SearchResult& r) {
  std::string out = "rank,candidate,score,best_epoch";
  if (!r.ranking.empty())
    for (const auto& [key, value] : r.ranking.front().settings) out += "," + key;
  out += ",error\n";
  for (std::size_t k = 0; k < r.ranking.size(); ++k) {
    const SearchCandidate& c = r.ranking[k];
    out += std::to_string(k + 1) + "," + std::to_string(c.id) + "," + fmt(c.score) + "," + std::to_string(c.best_epoch);
    for (const auto& [key, value] : c.settings) out += ",\"" + value + "\"";
    std::string err = c.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    out += ",\"" + err + "\"\n";
  }
  return out;
}

}  // namespace fsrm
