#include "fsrm/config.h"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace fsrm {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw std::invalid_argument("config: '" + std::string(key) + "' expects " + std::string(want) +
                              ", got '" + std::string(value) + "'");
}

double to_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a real number");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a nonnegative integer");
  return out;
}

std::size_t to_count(std::string_view key, std::string_view v) { return static_cast<std::size_t>(to_u64(key, v)); }

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::string join_counts(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

using Setter = std::function<void(ExperimentConfig&, std::string_view, std::string_view)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Field {
  const char* key;
  Setter set;
  Getter get;
};

#define REAL_FIELD(name, member)                                                              \
  Field {                                                                                     \
    name, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = to_real(k, v); }, \
        [](const ExperimentConfig& c) { return format_double(c.member); }                     \
  }
#define COUNT_FIELD(name, member)                                                              \
  Field {                                                                                      \
    name, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = to_count(k, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                     \
  }
#define BOOL_FIELD(name, member)                                                               \
  Field {                                                                                      \
    name, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = to_bool(k, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      REAL_FIELD("delta", train.delta),
      REAL_FIELD("gamma", train.gamma),
      REAL_FIELD("lambda_l2", train.lambda_l2),
      REAL_FIELD("alpha_l1", train.alpha_l1),
      REAL_FIELD("beta", train.beta),
      Field{"layer_dims",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              std::vector<std::size_t> dims;
              for (auto tok : split(v, ',')) {
                if (tok == "input" && dims.empty()) continue;
                dims.push_back(to_count(k, tok));
              }
              if (dims.empty()) bad_value(k, v, "a comma-separated list of layer widths");
              c.train.layer_dims = std::move(dims);
            },
            [](const ExperimentConfig& c) { return join_counts(c.train.layer_dims); }},
      COUNT_FIELD("pred_layers", train.pred_layers),
      COUNT_FIELD("pred_width", train.pred_width),
      COUNT_FIELD("batch_size", train.batch_size),
      REAL_FIELD("dropout_rate", train.dropout_rate),
      REAL_FIELD("learning_rate", train.learning_rate),
      REAL_FIELD("adam_beta1", train.adam_beta1),
      REAL_FIELD("adam_beta2", train.adam_beta2),
      REAL_FIELD("adam_eps", train.adam_eps),
      COUNT_FIELD("max_epochs", train.max_epochs),
      COUNT_FIELD("patience", train.patience),
      REAL_FIELD("val_fraction", train.val_fraction),
      REAL_FIELD("sinkhorn_eps", train.sinkhorn_eps),
      COUNT_FIELD("sinkhorn_iters", train.sinkhorn_iters),
      Field{"grad_mode",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              if (v == "unrolled") c.train.grad_mode = WassGradMode::unrolled;
              else if (v == "envelope") c.train.grad_mode = WassGradMode::envelope;
              else bad_value(k, v, "unrolled or envelope");
            },
            [](const ExperimentConfig& c) {
              return std::string(c.train.grad_mode == WassGradMode::unrolled ? "unrolled" : "envelope");
            }},
      COUNT_FIELD("n_confounders", synthetic.n_confounders),
      COUNT_FIELD("n_adjustment", synthetic.n_adjustment),
      COUNT_FIELD("n_instruments", synthetic.n_instruments),
      COUNT_FIELD("n_irrelevant", synthetic.n_irrelevant),
      REAL_FIELD("noise_std", synthetic.noise_std),
      COUNT_FIELD("pool_treated", synthetic.pool_treated),
      COUNT_FIELD("pool_control", synthetic.pool_control),
      COUNT_FIELD("draw_treated", synthetic.draw_treated),
      COUNT_FIELD("draw_control", synthetic.draw_control),
      Field{"dataset",
            [](ExperimentConfig& c, std::string_view, std::string_view v) {
              if (v.empty()) c.dataset.reset();
              else c.dataset = std::filesystem::path(std::string(v));
            },
            [](const ExperimentConfig& c) { return c.dataset ? c.dataset->string() : std::string(); }},
      COUNT_FIELD("augment_irrelevant", augment_irrelevant),
      Field{"metric",
            [](ExperimentConfig& c, std::string_view, std::string_view v) {
              std::vector<DistanceMetric> ms;
              for (auto tok : split(v, ',')) ms.push_back(parse_metric(tok));
              c.metrics = std::move(ms);
            },
            [](const ExperimentConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.metrics.size(); ++i) out += (i ? "," : "") + std::string(to_string(c.metrics[i]));
              return out;
            }},
      COUNT_FIELD("n_realizations", n_realizations),
      Field{"seed", [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.seed = to_u64(k, v); },
            [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      REAL_FIELD("q", q),
      BOOL_FIELD("disable_fsl", disable_fsl),
      BOOL_FIELD("disable_ipm", disable_ipm),
      Field{"output_dir",
            [](ExperimentConfig& c, std::string_view, std::string_view v) {
              if (v.empty()) c.output_dir.reset();
              else c.output_dir = std::filesystem::path(std::string(v));
            },
            [](const ExperimentConfig& c) { return c.output_dir ? c.output_dir->string() : std::string(); }},
      COUNT_FIELD("workers", workers),
  };
  return kFields;
}

#undef REAL_FIELD
#undef COUNT_FIELD
#undef BOOL_FIELD

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

template <typename F>
void for_each_setting(std::string_view text, F&& fn) {
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected 'key = value'");
    try {
      fn(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

TrainConfig ExperimentConfig::effective_train_config() const {
  TrainConfig t = train;
  if (disable_fsl) {
    t.feature_selection = false;
    t.lambda_l2 = 0.0;
    t.alpha_l1 = 0.0;
  }
  if (disable_ipm) t.gamma = 0.0;
  return t;
}

SyntheticSpec ExperimentConfig::effective_synthetic_spec() const {
  SyntheticSpec s = synthetic;
  if (s.b_tau.empty() && s.b_g.empty() && s.b_a.empty()) {
    RandomStream weights = RandomStream(seed).split("synthetic-weights");
    s.draw_weights(weights);
  }
  return s;
}

void ExperimentConfig::validate() const {
  effective_train_config().validate();
  if (!dataset) effective_synthetic_spec().validate();
  if (metrics.empty()) throw std::invalid_argument("config: at least one metric is required");
  if (n_realizations == 0) throw std::invalid_argument("config: n_realizations must be >= 1");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("config: q must lie in [0, 1]");
  if (workers == 0) throw std::invalid_argument("config: workers must be >= 1");
}

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(cfg, key, value);
      return;
    }
  }
  throw std::invalid_argument("config: unknown key '" + std::string(key) + "'");
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  for_each_setting(text, [&](std::string_view k, std::string_view v) { apply_setting(base, k, v); });
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  try {
    return parse_config(read_file(path), std::move(base));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

SearchGrid parse_grid(std::string_view text) {
  SearchGrid grid;
  ExperimentConfig probe;
  for_each_setting(text, [&](std::string_view k, std::string_view v) {
    if (k == "budget") {
      grid.budget = to_count(k, v);
      return;
    }
    std::vector<std::string> values;
    for (auto tok : split(v, '|')) {
      apply_setting(probe, k, tok);  // validates key and value
      values.emplace_back(tok);
    }
    grid.axes.emplace_back(std::string(k), std::move(values));
  });
  if (grid.axes.empty()) throw std::invalid_argument("search grid: no hyperparameter axes");
  return grid;
}

SearchGrid load_grid(const std::filesystem::path& path) {
  try {
    return parse_grid(read_file(path));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

SearchGrid default_search_grid() {
  const std::string weights = "0|1e-6|1e-5|1e-4|1e-3|1e-2|1e-1|1|0.2|0.5";
  return parse_grid(
      "delta = 0|1e-6|1e-5|1e-4|1e-3|1e-2|1e-1|1|10|100|0.2|0.5|2|5\n"
      "gamma = " + weights + "\n"
      "lambda_l2 = " + weights + "\n"
      "alpha_l1 = " + weights + "\n"
      "beta = " + weights + "\n"
      "layer_dims = 200,150,100|200,100,50|100,100|100,50\n"
      "pred_layers = 1|2|3|4\n"
      "pred_width = 50|100|150\n"
      "batch_size = 100|200|300\n"
      "budget = 24\n");
}

}  // namespace fsrm
