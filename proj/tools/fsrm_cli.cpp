// Command-line front end: one subcommand per pipeline stage plus the
// experiment drivers. Every failure ends with a one-line diagnostic.
#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fsrm/config.h"
#include "fsrm/datagen.h"
#include "fsrm/dataset.h"
#include "fsrm/eval.h"
#include "fsrm/harness.h"
#include "fsrm/matching.h"
#include "fsrm/train.h"

namespace {

using namespace fsrm;

struct CommonFlags {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string metric;
  bool no_fsl = false;
  bool no_ipm = false;
  std::optional<std::size_t> realizations;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--seed", f.seed, "Master seed");
  sub->add_option("--config", f.config, "key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--metric", f.metric, "euclid, mahal or propensity (comma list for experiments)");
  sub->add_flag("--no-fsl", f.no_fsl, "Drop the feature-selection layer");
  sub->add_flag("--no-ipm", f.no_ipm, "Drop the Wasserstein balance term");
  sub->add_option("--realizations", f.realizations, "Number of realizations");
  sub->add_option("--workers", f.workers, "Worker threads");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg;
  if (!f.config.empty()) cfg = load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.metric.empty()) apply_setting(cfg, "metric", f.metric);
  if (f.no_fsl) cfg.disable_fsl = true;
  if (f.no_ipm) cfg.disable_ipm = true;
  if (f.realizations) cfg.n_realizations = *f.realizations;
  if (f.workers) cfg.workers = *f.workers;
  return cfg;
}

std::string history_csv(const TrainResult& tr) {
  std::string out =
      "epoch,train_total,train_treatment,train_outcome,train_ipm,val_total,val_treatment,val_outcome,val_ipm,"
      "best_validation\n";
  for (const auto& r : tr.history) {
    out += std::to_string(r.epoch) + "," + format_double(r.train.total()) + "," + format_double(r.train.treatment) +
           "," + format_double(r.train.outcome) + "," + format_double(r.train.ipm) + "," +
           format_double(r.validation.total()) + "," + format_double(r.validation.treatment) + "," +
           format_double(r.validation.outcome) + "," + format_double(r.validation.ipm) + "," +
           format_double(r.best_validation) + "\n";
  }
  return out;
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty() || out_path == "-") std::cout << text;
  else write_text_file(out_path, text);
}

std::vector<double> parse_q_list(const std::string& text) {
  std::vector<double> qs;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = text.find(',', start);
    const std::string tok = text.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    std::size_t used = 0;
    const double q = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("bad q value '" + tok + "'");
    qs.push_back(q);
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return qs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-selection representation matching workbench"};
  app.require_subcommand(1);

  CommonFlags common;
  std::string out, dataset, checkpoint, report, grid_path, q_list = "0,0.25,0.5,0.75,1";
  std::size_t k = 0;

  auto* gen = app.add_subcommand("generate", "Draw one synthetic dataset");
  add_common(gen, common);
  gen->add_option("--out", out, "Dataset CSV (stdout if omitted)");

  auto* aug = app.add_subcommand("augment", "Append correlated irrelevant columns");
  add_common(aug, common);
  aug->add_option("dataset", dataset, "Input dataset CSV")->required()->check(CLI::ExistingFile);
  aug->add_option("-k,--columns", k, "Columns to append")->required();
  aug->add_option("--out", out, "Dataset CSV (stdout if omitted)");

  auto* tr = app.add_subcommand("train", "Train a network on a dataset");
  add_common(tr, common);
  tr->add_option("dataset", dataset, "Dataset CSV")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Checkpoint path")->required();
  std::string history_path;
  tr->add_option("--history", history_path, "History CSV (default: <out>.history.csv)");

  auto* mt = app.add_subcommand("match", "Impute counterfactuals by matching");
  add_common(mt, common);
  mt->add_option("--checkpoint", checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  mt->add_option("dataset", dataset, "Dataset CSV")->required()->check(CLI::ExistingFile);
  mt->add_option("--out", out, "Match report CSV (stdout if omitted)");

  auto* ev = app.add_subcommand("evaluate", "Effect metrics from a match report");
  add_common(ev, common);
  ev->add_option("report", report, "Match report CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("dataset", dataset, "Dataset CSV with ground truth")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", out, "Metrics CSV (stdout if omitted)");

  auto* ex = app.add_subcommand("experiment", "Replicated experiment");
  add_common(ex, common);
  ex->add_option("--out", out, "Output directory");

  auto* sw = app.add_subcommand("sweep-bias", "Experiment per selection-bias level q");
  add_common(sw, common);
  sw->add_option("--q", q_list, "Comma-separated q values");
  sw->add_option("--out", out, "CSV (stdout if omitted)");

  auto* se = app.add_subcommand("search", "Hyperparameter search");
  add_common(se, common);
  se->add_option("--grid", grid_path, "Grid file (default: built-in ranges)")->check(CLI::ExistingFile);
  se->add_option("--out", out, "Ranking CSV (stdout if omitted)");

  auto* im = app.add_subcommand("importance", "Per-feature importance of a checkpoint");
  add_common(im, common);
  im->add_option("--checkpoint", checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  im->add_option("--dataset", dataset, "Dataset CSV for block labels")->check(CLI::ExistingFile);
  im->add_option("--out", out, "CSV (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "fsrm: " << e.what() << "\n";
    return 2;
  }

  try {
    ExperimentConfig cfg = resolve(common);
    if (*gen) {
      cfg.augment_irrelevant = 0;
      emit(out, format_dataset_csv(realization_dataset(cfg, 0)));
    } else if (*aug) {
      RandomStream rs = RandomStream(cfg.seed).split("augment");
      emit(out, format_dataset_csv(augment_irrelevant(read_dataset(dataset), k, rs)));
    } else if (*tr) {
      const Dataset ds = read_dataset(dataset);
      RandomStream rs = RandomStream(cfg.seed).split("train");
      const TrainResult result = train(cfg.effective_train_config(), ds, rs);
      save_checkpoint(result.model, out);
      write_text_file(history_path.empty() ? out + ".history.csv" : history_path, history_csv(result));
      std::cerr << "best validation " << format_double(result.best_validation) << " at epoch " << result.best_epoch
                << "\n";
    } else if (*mt) {
      const Dataset ds = read_dataset(dataset);
      const Model model = load_checkpoint(checkpoint);
      const ForwardResult fr = model.predict(ds.x, ds.t);
      const MatchResult mr = impute_counterfactuals(ds, fr.representation, cfg.metrics.front(), fr.p_treated);
      emit(out, format_match_report(ds, mr));
    } else if (*ev) {
      const Dataset ds = read_dataset(dataset);
      const auto rows = read_match_report(report);
      if (rows.size() != ds.n()) throw std::invalid_argument("match report and dataset differ in unit count");
      std::vector<double> cf(ds.n());
      for (const auto& r : rows) {
        if (r.unit_id >= ds.n()) throw std::invalid_argument("match report unit out of range");
        cf[r.unit_id] = r.cf_outcome;
      }
      const EffectEstimates est = estimate_effects(ds, cf);
      const MetricReport m = metrics(est);
      emit(out, "n_units,sqrt_pehe,pehe,eps_ate,ate_hat,ate_true\n" + std::to_string(m.n_units) + "," +
                    format_double(m.sqrt_pehe) + "," + format_double(m.pehe) + "," + format_double(m.eps_ate) + "," +
                    format_double(est.ate_hat) + "," + format_double(*est.ate_true) + "\n");
    } else if (*ex) {
      if (!out.empty()) cfg.output_dir = out;
      const ExperimentResult r = run_experiment(cfg, &std::cerr);
      std::cout << format_aggregate_csv(r);
    } else if (*sw) {
      emit(out, format_bias_csv(bias_sweep(cfg, parse_q_list(q_list), &std::cerr)));
    } else if (*se) {
      const SearchGrid grid = grid_path.empty() ? default_search_grid() : load_grid(grid_path);
      const SearchResult r = hyper_search(cfg, grid, &std::cerr);
      emit(out, format_ranking_csv(r));
      std::cerr << "best candidate " << r.best().id << " score " << format_double(r.best().score) << "\n";
    } else if (*im) {
      const Model model = load_checkpoint(checkpoint);
      std::optional<std::vector<BlockLabel>> labels;
      if (!dataset.empty()) labels = read_dataset(dataset).block_labels;
      const auto imp = feature_importance(model.params);
      std::string text = "column,block,importance\n";
      for (std::size_t j = 0; j < imp.size(); ++j) {
        const BlockLabel b = labels && j < labels->size() ? (*labels)[j] : BlockLabel::unknown;
        text += std::to_string(j) + "," + std::string(to_string(b)) + "," + format_double(imp[j]) + "\n";
      }
      emit(out, text);
    }
  } catch (const std::exception& e) {
    std::cerr << "fsrm: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
