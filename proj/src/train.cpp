#include "fsrm/train.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fsrm {

namespace {

void accumulate(ObjectiveTerms& acc, const ObjectiveTerms& t, double w) {
  acc.treatment += w * t.treatment;
  acc.outcome += w * t.outcome;
  acc.ipm += w * t.ipm;
  acc.elastic_net += w * t.elastic_net;
  acc.prediction += w * t.prediction;
  acc.ipm_skipped = acc.ipm_skipped || t.ipm_skipped;
}

Batch make_batch(const Matrix& x, const Dataset& ds, std::span<const std::size_t> idx) {
  Batch b;
  b.x.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    b.x.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(idx[k]));
    b.t.push_back(ds.t[idx[k]]);
    b.y.push_back(ds.y_f[idx[k]]);
  }
  return b;
}

}  // namespace

Standardizer Standardizer::fit(const Matrix& x) {
  Standardizer s;
  const double n = static_cast<double>(x.rows());
  s.mean = x.colwise().mean().transpose();
  s.scale.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double sd = std::sqrt((x.col(j).array() - s.mean(j)).square().sum() / n);
    s.scale(j) = sd > 1e-12 * std::max(1.0, std::abs(s.mean(j))) ? sd : 0.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) throw std::invalid_argument("Standardizer: column count mismatch");
  const Vector inv = scale.unaryExpr([](double s) { return s > 0.0 ? 1.0 / s : 0.0; });
  return (x.rowwise() - mean.transpose()) * inv.asDiagonal();
}

ForwardResult Model::predict(const Matrix& x, std::span<const int> t) const {
  RandomStream unused(0);
  return forward(params, standardizer.apply(x), t, Mode::eval, 0.0, unused);
}

void split_train_validation(const Dataset& ds, double val_fraction, RandomStream& stream,
                            std::vector<std::size_t>& train_idx, std::vector<std::size_t>& val_idx) {
  train_idx.clear();
  val_idx.clear();
  for (int group : {1, 0}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.n(); ++i)
      if (ds.t[i] == group) members.push_back(i);
    stream.shuffle(members);
    auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(members.size())));
    if (members.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, members.size() - 1);
    else n_val = 0;
    val_idx.insert(val_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
}

TrainResult train(const TrainConfig& config, const Dataset& ds, RandomStream& stream) {
  config.validate();
  ds.validate();
  if (ds.n_treated() == 0 || ds.n_control() == 0)
    throw std::invalid_argument("train: dataset must contain both treated and control units");

  TrainResult result;
  RandomStream split_stream = stream.split("split");
  RandomStream init_stream = stream.split("init");
  RandomStream epoch_stream = stream.split("epochs");

  split_train_validation(ds, config.val_fraction, split_stream, result.train_indices,
                         result.validation_indices);
  Matrix x_train_raw(static_cast<Eigen::Index>(result.train_indices.size()), ds.x.cols());
  for (std::size_t k = 0; k < result.train_indices.size(); ++k)
    x_train_raw.row(static_cast<Eigen::Index>(k)) = ds.x.row(static_cast<Eigen::Index>(result.train_indices[k]));

  Model model;
  model.standardizer = Standardizer::fit(x_train_raw);
  const Matrix xs = model.standardizer.apply(ds.x);
  model.params = init_params(ds.d(), config, init_stream);
  result.model = model;

  if (config.max_epochs == 0) return result;

  const Batch val_batch = make_batch(xs, ds, result.validation_indices);
  AdamState adam = AdamState::for_params(model.params);
  std::vector<std::size_t> order = result.train_indices;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    epoch_stream.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    double seen = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      if (len < 2) break;
      const Batch batch = make_batch(xs, ds, std::span(order).subspan(start, len));
      const Gradient g = backward(model.params, batch, config, Mode::train, epoch_stream);
      adam_step(model.params, g.grad, adam, config);
      accumulate(rec.train, g.terms, static_cast<double>(len));
      seen += static_cast<double>(len);
    }
    if (seen > 0) {
      const ObjectiveTerms sum = rec.train;
      rec.train = {};
      accumulate(rec.train, sum, 1.0 / seen);
      rec.train.ipm_skipped = sum.ipm_skipped;
    }

    RandomStream no_dropout(0);
    rec.validation = total_objective(model.params, val_batch, config, Mode::eval, no_dropout);
    const double val = rec.validation.total();
    if (std::isfinite(val) && val < result.best_validation) {
      result.best_validation = val;
      result.best_epoch = epoch;
      result.model.params = model.params;
      since_best = 0;
    } else {
      ++since_best;
    }
    rec.best_validation = result.best_validation;
    result.history.push_back(rec);
    if (!std::isfinite(val) && !std::isfinite(rec.train.total())) break;  // diverged
    if (since_best >= config.patience) break;
  }
  return result;
}

}  // namespace fsrm
