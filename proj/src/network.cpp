#include "fsrm/network.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fsrm {

namespace {

constexpr double kProbClamp = 1e-12;

struct StackCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
  std::vector<Matrix> keep;  // dropout scaling mask; empty matrix when no dropout
};

struct StackOptions {
  bool relu_last;
  bool dropout_last;
};

Matrix stack_forward(const std::vector<Layer>& layers, const Matrix& in, StackOptions opt,
                     double dropout_rate, Mode mode, RandomStream& stream, StackCache& cache) {
  Matrix a = in;
  cache = {};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const bool last = l + 1 == layers.size();
    cache.inputs.push_back(a);
    Matrix z = a * layers[l].w;
    z.rowwise() += layers[l].b.transpose();
    cache.pre.push_back(z);
    const bool relu = !last || opt.relu_last;
    a = relu ? Matrix(z.cwiseMax(0.0)) : z;
    Matrix keep;
    if (relu && mode == Mode::train && dropout_rate > 0.0 && (!last || opt.dropout_last)) {
      keep.resize(a.rows(), a.cols());
      const double scale = 1.0 / (1.0 - dropout_rate);
      for (Eigen::Index i = 0; i < keep.size(); ++i)
        keep.data()[i] = stream.uniform() < dropout_rate ? 0.0 : scale;
      a = a.cwiseProduct(keep);
    }
    cache.keep.push_back(std::move(keep));
  }
  return a;
}

// Returns the gradient with respect to the stack input; accumulates parameter
// gradients into `grads`.
Matrix stack_backward(const std::vector<Layer>& layers, const StackCache& cache, StackOptions opt,
                      Matrix g, std::vector<Layer>& grads) {
  for (std::size_t l = layers.size(); l-- > 0;) {
    const bool last = l + 1 == layers.size();
    if (cache.keep[l].size()) g = g.cwiseProduct(cache.keep[l]);
    if (!last || opt.relu_last) g = g.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
    grads[l].w.noalias() += cache.inputs[l].transpose() * g;
    grads[l].b += g.colwise().sum().transpose();
    g = (g * layers[l].w.transpose()).eval();
  }
  return g;
}

constexpr StackOptions kRepOpts{true, false};
constexpr StackOptions kHeadOpts{false, false};

struct Pass {
  ForwardResult fr;
  Matrix selected;
  Matrix softmax;
  StackCache rep, treat, head0, head1;
};

Pass run_forward(const NetworkParams& params, const Matrix& x, std::span<const int> t, Mode mode,
                 double dropout_rate, RandomStream& stream) {
  params.validate();
  if (static_cast<std::size_t>(x.cols()) != params.input_dim())
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                " columns, network expects " + std::to_string(params.input_dim()));
  if (t.size() != static_cast<std::size_t>(x.rows()))
    throw std::invalid_argument("forward: treatment vector length does not match batch size");

  Pass pass;
  pass.selected = params.has_feature_selection()
                      ? Matrix(x * params.feature_weights.asDiagonal())
                      : x;
  auto& fr = pass.fr;
  fr.representation = stack_forward(params.rep_layers, pass.selected, kRepOpts, dropout_rate, mode,
                                    stream, pass.rep);
  fr.treat_logits = stack_forward(params.treat_head, fr.representation, kHeadOpts, dropout_rate, mode,
                                  stream, pass.treat);
  const Matrix out0 = stack_forward(params.out_head0, fr.representation, kHeadOpts, dropout_rate,
                                    mode, stream, pass.head0);
  const Matrix out1 = stack_forward(params.out_head1, fr.representation, kHeadOpts, dropout_rate,
                                    mode, stream, pass.head1);

  const Eigen::Index n = x.rows();
  pass.softmax.resize(n, 2);
  fr.y_hat.resize(static_cast<std::size_t>(n));
  fr.y0_hat.resize(static_cast<std::size_t>(n));
  fr.y1_hat.resize(static_cast<std::size_t>(n));
  fr.p_treated.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = fr.treat_logits.row(i).maxCoeff();
    const double e0 = std::exp(fr.treat_logits(i, 0) - m);
    const double e1 = std::exp(fr.treat_logits(i, 1) - m);
    pass.softmax(i, 0) = e0 / (e0 + e1);
    pass.softmax(i, 1) = e1 / (e0 + e1);
    const auto u = static_cast<std::size_t>(i);
    fr.p_treated[u] = pass.softmax(i, 1);
    fr.y0_hat[u] = out0(i, 0);
    fr.y1_hat[u] = out1(i, 0);
    fr.y_hat[u] = t[u] == 1 ? out1(i, 0) : out0(i, 0);
  }
  return pass;
}

double treatment_loss_from_probs(const Matrix& probs, std::span<const int> t) {
  if (t.empty()) throw std::invalid_argument("loss_treatment: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    s -= std::log(std::max(probs(static_cast<Eigen::Index>(i), t[i]), kProbClamp));
  return s / static_cast<double>(t.size());
}

void add_weight_penalty_grad(const Matrix& w, double l2, double l1, Matrix& grad) {
  if (l2 != 0.0) grad += 2.0 * l2 * w;
  if (l1 != 0.0) grad += l1 * w.unaryExpr([](double v) { return double((v > 0) - (v < 0)); });
}

std::vector<Layer> zero_layers(const std::vector<Layer>& layers) {
  std::vector<Layer> out;
  for (const auto& l : layers) out.push_back({Matrix::Zero(l.w.rows(), l.w.cols()), Vector::Zero(l.b.size())});
  return out;
}

void check_stack(const std::vector<Layer>& layers, std::size_t in, std::size_t out_last,
                 const char* name) {
  if (layers.empty()) throw std::invalid_argument(std::string("NetworkParams: ") + name + " is empty");
  std::size_t cur = in;
  for (const auto& l : layers) {
    if (l.in_dim() != cur || static_cast<std::size_t>(l.b.size()) != l.out_dim())
      throw std::invalid_argument(std::string("NetworkParams: ") + name +
                                  " layer dimensions do not compose");
    cur = l.out_dim();
  }
  if (out_last && cur != out_last)
    throw std::invalid_argument(std::string("NetworkParams: ") + name + " has wrong output width");
}

Layer init_layer(std::size_t in, std::size_t out, double gain, RandomStream& stream) {
  Layer l{Matrix(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out)),
          Vector::Zero(static_cast<Eigen::Index>(out))};
  const double limit = std::sqrt(gain / static_cast<double>(in));
  for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = (2.0 * stream.uniform() - 1.0) * limit;
  return l;
}

std::vector<Layer> init_head(std::size_t in, std::size_t hidden_layers, std::size_t width,
                             std::size_t out, RandomStream& stream) {
  std::vector<Layer> head;
  std::size_t cur = in;
  for (std::size_t k = 0; k < hidden_layers; ++k) {
    head.push_back(init_layer(cur, width, 6.0, stream));
    cur = width;
  }
  head.push_back(init_layer(cur, out, 3.0, stream));
  return head;
}

ObjectiveTerms evaluate(const NetworkParams& params, const Batch& batch, const TrainConfig& config,
                        Mode mode, RandomStream& stream, unsigned grad_terms, NetworkParams* grad) {
  if (batch.size() == 0) throw std::invalid_argument("objective: empty batch");
  const Pass pass = run_forward(params, batch.x, batch.t, mode, config.dropout_rate, stream);
  const auto& fr = pass.fr;
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  ObjectiveTerms terms;
  terms.treatment = treatment_loss_from_probs(pass.softmax, batch.t);
  terms.outcome = loss_outcome(fr, batch.y, config.delta);
  terms.elastic_net = elastic_net_penalty(params, config.lambda_l2, config.alpha_l1);
  terms.prediction = l2_prediction_penalty(params, config.beta);

  std::vector<Eigen::Index> treated, control;
  for (std::size_t i = 0; i < n; ++i) (batch.t[i] == 1 ? treated : control).push_back(static_cast<Eigen::Index>(i));
  terms.ipm_skipped = treated.empty() || control.empty();
  TransportPlan plan;
  Matrix rep_t, rep_c;
  if (!terms.ipm_skipped && config.gamma != 0.0) {
    rep_t = fr.representation(treated, Eigen::all);
    rep_c = fr.representation(control, Eigen::all);
    plan = sinkhorn_wasserstein(rep_t, rep_c, config.sinkhorn_eps, config.sinkhorn_iters);
    terms.ipm = config.gamma * plan.cost;
  }

  if (!grad) return terms;
  *grad = params.zeros_like();
  Matrix g_rep = Matrix::Zero(fr.representation.rows(), fr.representation.cols());

  if (grad_terms & kTermTreatment) {
    Matrix d_logits = pass.softmax;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      if (pass.softmax(r, batch.t[i]) < kProbClamp) {
        d_logits.row(r).setZero();
        continue;
      }
      d_logits(r, batch.t[i]) -= 1.0;
    }
    d_logits *= inv_n;
    g_rep += stack_backward(params.treat_head, pass.treat, kHeadOpts, d_logits, grad->treat_head);
  }

  if ((grad_terms & kTermOutcome) && config.delta != 0.0) {
    Matrix d0 = Matrix::Zero(static_cast<Eigen::Index>(n), 1);
    Matrix d1 = Matrix::Zero(static_cast<Eigen::Index>(n), 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = 2.0 * config.delta * inv_n * (fr.y_hat[i] - batch.y[i]);
      (batch.t[i] == 1 ? d1 : d0)(static_cast<Eigen::Index>(i), 0) = r;
    }
    g_rep += stack_backward(params.out_head0, pass.head0, kHeadOpts, d0, grad->out_head0);
    g_rep += stack_backward(params.out_head1, pass.head1, kHeadOpts, d1, grad->out_head1);
  }

  if ((grad_terms & kTermIpm) && plan.plan.size() > 0) {
    const WassersteinGradient wg = wasserstein_grad(plan, rep_t, rep_c, config.grad_mode);
    for (std::size_t k = 0; k < treated.size(); ++k) g_rep.row(treated[k]) += config.gamma * wg.d_treated.row(static_cast<Eigen::Index>(k));
    for (std::size_t k = 0; k < control.size(); ++k) g_rep.row(control[k]) += config.gamma * wg.d_control.row(static_cast<Eigen::Index>(k));
  }

  const Matrix g_selected = stack_backward(params.rep_layers, pass.rep, kRepOpts, g_rep, grad->rep_layers);
  if (params.has_feature_selection())
    grad->feature_weights = g_selected.cwiseProduct(batch.x).colwise().sum().transpose();

  if (grad_terms & kTermElasticNet) {
    if (params.has_feature_selection()) {
      Matrix fw = params.feature_weights;
      Matrix gfw = grad->feature_weights;
      add_weight_penalty_grad(fw, config.lambda_l2, config.alpha_l1, gfw);
      grad->feature_weights = gfw;
    }
    for (std::size_t l = 0; l < params.rep_layers.size(); ++l)
      add_weight_penalty_grad(params.rep_layers[l].w, config.lambda_l2, config.alpha_l1, grad->rep_layers[l].w);
  }
  if (grad_terms & kTermPrediction) {
    for (auto [stack, gstack] : {std::pair{&params.treat_head, &grad->treat_head},
                                 std::pair{&params.out_head0, &grad->out_head0},
                                 std::pair{&params.out_head1, &grad->out_head1}})
      for (std::size_t l = 0; l < stack->size(); ++l)
        add_weight_penalty_grad((*stack)[l].w, config.beta, 0.0, (*gstack)[l].w);
  }
  return terms;
}

}  // namespace

std::size_t NetworkParams::input_dim() const {
  if (has_feature_selection()) return static_cast<std::size_t>(feature_weights.size());
  return rep_layers.empty() ? 0 : rep_layers.front().in_dim();
}

std::size_t NetworkParams::rep_dim() const {
  return rep_layers.empty() ? 0 : rep_layers.back().out_dim();
}

NetworkParams NetworkParams::zeros_like() const {
  NetworkParams z;
  z.feature_weights = Vector::Zero(feature_weights.size());
  z.rep_layers = zero_layers(rep_layers);
  z.treat_head = zero_layers(treat_head);
  z.out_head0 = zero_layers(out_head0);
  z.out_head1 = zero_layers(out_head1);
  return z;
}

void NetworkParams::validate() const {
  check_stack(rep_layers, input_dim(), 0, "rep_layers");
  check_stack(treat_head, rep_dim(), 2, "treat_head");
  check_stack(out_head0, rep_dim(), 1, "out_head0");
  check_stack(out_head1, rep_dim(), 1, "out_head1");
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t k = 0;
  for_each_tensor([&](std::span<const double> s) { k += s.size(); });
  return k;
}

void TrainConfig::validate() const {
  for (double w : {delta, gamma, lambda_l2, alpha_l1, beta})
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("TrainConfig: loss weights must be finite and >= 0");
  if (layer_dims.empty()) throw std::invalid_argument("TrainConfig: layer_dims must be nonempty");
  for (auto w : layer_dims)
    if (w == 0) throw std::invalid_argument("TrainConfig: layer widths must be positive");
  if (pred_layers > 0 && pred_width == 0) throw std::invalid_argument("TrainConfig: pred_width must be positive");
  if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("TrainConfig: dropout_rate must lie in [0, 1)");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("TrainConfig: val_fraction must lie in (0, 1)");
  if (!(sinkhorn_eps > 0.0)) throw std::invalid_argument("TrainConfig: sinkhorn_eps must be positive");
  if (sinkhorn_iters == 0) throw std::invalid_argument("TrainConfig: sinkhorn_iters must be >= 1");
  if (!(learning_rate > 0.0) || !(adam_eps > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate and adam_eps must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("TrainConfig: Adam betas must lie in [0, 1)");
}

NetworkParams init_params(std::size_t input_dim, const TrainConfig& config, RandomStream& stream) {
  config.validate();
  if (input_dim == 0) throw std::invalid_argument("init_params: input_dim must be positive");
  NetworkParams p;
  if (config.feature_selection) p.feature_weights = Vector::Ones(static_cast<Eigen::Index>(input_dim));
  std::size_t cur = input_dim;
  for (auto width : config.layer_dims) {
    p.rep_layers.push_back(init_layer(cur, width, 6.0, stream));
    cur = width;
  }
  p.treat_head = init_head(cur, config.pred_layers, config.pred_width, 2, stream);
  p.out_head0 = init_head(cur, config.pred_layers, config.pred_width, 1, stream);
  p.out_head1 = init_head(cur, config.pred_layers, config.pred_width, 1, stream);
  return p;
}

ForwardResult forward(const NetworkParams& params, const Matrix& x, std::span<const int> t, Mode mode,
                      double dropout_rate, RandomStream& stream) {
  return run_forward(params, x, t, mode, dropout_rate, stream).fr;
}

double loss_treatment(const ForwardResult& fr, std::span<const int> t) {
  if (t.size() != static_cast<std::size_t>(fr.treat_logits.rows()))
    throw std::invalid_argument("loss_treatment: batch size mismatch");
  Matrix probs(fr.treat_logits.rows(), 2);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double m = fr.treat_logits.row(i).maxCoeff();
    const double e0 = std::exp(fr.treat_logits(i, 0) - m), e1 = std::exp(fr.treat_logits(i, 1) - m);
    probs(i, 0) = e0 / (e0 + e1);
    probs(i, 1) = e1 / (e0 + e1);
  }
  return treatment_loss_from_probs(probs, t);
}

double loss_outcome(const ForwardResult& fr, std::span<const double> y, double delta) {
  if (y.empty()) throw std::invalid_argument("loss_outcome: empty batch");
  if (y.size() != fr.y_hat.size()) throw std::invalid_argument("loss_outcome: batch size mismatch");
  if (delta == 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (fr.y_hat[i] - y[i]) * (fr.y_hat[i] - y[i]);
  return delta * s / static_cast<double>(y.size());
}

double elastic_net_penalty(const NetworkParams& params, double lambda_l2, double alpha_l1) {
  double sq = params.feature_weights.squaredNorm();
  double abs = params.feature_weights.cwiseAbs().sum();
  for (const auto& l : params.rep_layers) {
    sq += l.w.squaredNorm();
    abs += l.w.cwiseAbs().sum();
  }
  return lambda_l2 * sq + alpha_l1 * abs;
}

double l2_prediction_penalty(const NetworkParams& params, double beta) {
  double sq = 0.0;
  for (const auto* stack : {&params.treat_head, &params.out_head0, &params.out_head1})
    for (const auto& l : *stack) sq += l.w.squaredNorm();
  return beta * sq;
}

Batch Batch::from_dataset(const Dataset& ds) { return Batch{ds.x, ds.t, ds.y_f}; }

double ObjectiveTerms::term(Term t) const {
  switch (t) {
    case kTermTreatment: return treatment;
    case kTermOutcome: return outcome;
    case kTermIpm: return ipm;
    case kTermElasticNet: return elastic_net;
    case kTermPrediction: return prediction;
    default: return total();
  }
}

ObjectiveTerms total_objective(const NetworkParams& params, const Batch& batch,
                               const TrainConfig& config, Mode mode, RandomStream& stream) {
  return evaluate(params, batch, config, mode, stream, 0, nullptr);
}

Gradient backward(const NetworkParams& params, const Batch& batch, const TrainConfig& config,
                  Mode mode, RandomStream& stream, unsigned terms) {
  Gradient out;
  out.terms = evaluate(params, batch, config, mode, stream, terms, &out.grad);
  return out;
}

AdamState AdamState::for_params(const NetworkParams& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state,
               const TrainConfig& config) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.adam_beta1, t);
  const double c2 = 1.0 - std::pow(config.adam_beta2, t);
  std::vector<std::span<double>> p, m, v;
  std::vector<std::span<const double>> g;
  params.for_each_tensor([&](std::span<double> s) { p.push_back(s); });
  state.m.for_each_tensor([&](std::span<double> s) { m.push_back(s); });
  state.v.for_each_tensor([&](std::span<double> s) { v.push_back(s); });
  grads.for_each_tensor([&](std::span<const double> s) { g.push_back(s); });
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
    throw std::invalid_argument("adam_step: gradient structure does not match parameters");
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k].size() != g[k].size()) throw std::invalid_argument("adam_step: tensor size mismatch");
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      m[k][i] = config.adam_beta1 * m[k][i] + (1.0 - config.adam_beta1) * g[k][i];
      v[k][i] = config.adam_beta2 * v[k][i] + (1.0 - config.adam_beta2) * g[k][i] * g[k][i];
      const double m_hat = m[k][i] / c1;
      const double v_hat = v[k][i] / c2;
      p[k][i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
  }
}

}  // namespace fsrm
