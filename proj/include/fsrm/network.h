#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fsrm/balance.h"
#include "fsrm/dataset.h"
#include "fsrm/numcore.h"

namespace fsrm {

// Affine layer: out = in * w + b, w is (in_dim x out_dim).
struct Layer {
  Matrix w;
  Vector b;

  std::size_t in_dim() const { return static_cast<std::size_t>(w.rows()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(w.cols()); }
};

// Network parameters. Also used for gradients and optimizer moments, which
// mirror this shape.
struct NetworkParams {
  // Diagonal (one-to-one) feature-selection layer. Empty when the network is
  // built without it, in which case rep_layers[0] reads the raw input.
  Vector feature_weights;
  std::vector<Layer> rep_layers;
  std::vector<Layer> treat_head;  // ends in 2 logits
  std::vector<Layer> out_head0;   // ends in 1 output, control outcome
  std::vector<Layer> out_head1;   // ends in 1 output, treated outcome

  bool has_feature_selection() const { return feature_weights.size() > 0; }
  std::size_t input_dim() const;
  std::size_t rep_dim() const;

  NetworkParams zeros_like() const;
  // Throws std::invalid_argument if adjacent layer dimensions do not compose.
  void validate() const;

  // Visits every tensor as a flat span, in a fixed order.
  template <typename F>
  void for_each_tensor(F&& fn) {
    if (feature_weights.size()) fn(std::span<double>(feature_weights.data(), feature_weights.size()));
    for (auto* stack : {&rep_layers, &treat_head, &out_head0, &out_head1})
      for (auto& layer : *stack) {
        fn(std::span<double>(layer.w.data(), static_cast<std::size_t>(layer.w.size())));
        fn(std::span<double>(layer.b.data(), static_cast<std::size_t>(layer.b.size())));
      }
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    const_cast<NetworkParams*>(this)->for_each_tensor(
        [&](std::span<double> s) { fn(std::span<const double>(s.data(), s.size())); });
  }

  std::size_t parameter_count() const;
};

struct TrainConfig {
  double delta = 1.0;       // outcome loss weight
  double gamma = 1e-2;      // Wasserstein weight
  double lambda_l2 = 1e-4;  // elastic-net L2 on selection + representation weights
  double alpha_l1 = 1e-3;   // elastic-net L1 on selection + representation weights
  double beta = 1e-4;       // L2 on prediction-head weights
  bool feature_selection = true;
  std::vector<std::size_t> layer_dims = {100, 50};  // representation widths after the input
  std::size_t pred_layers = 1;                       // hidden layers per head
  std::size_t pred_width = 50;
  std::size_t batch_size = 100;
  double dropout_rate = 0.1;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t max_epochs = 100;
  std::size_t patience = 30;
  double val_fraction = 0.3;
  double sinkhorn_eps = 0.1;
  std::size_t sinkhorn_iters = 100;
  WassGradMode grad_mode = WassGradMode::unrolled;

  void validate() const;
};

NetworkParams init_params(std::size_t input_dim, const TrainConfig& config, RandomStream& stream);

enum class Mode { train, eval };

struct ForwardResult {
  Matrix representation;       // batch x rep_dim
  Matrix treat_logits;         // batch x 2
  std::vector<double> y_hat;   // factual-head prediction per unit
  std::vector<double> y0_hat;  // control head, all units
  std::vector<double> y1_hat;  // treated head, all units
  std::vector<double> p_treated;
};

// Dropout masks (train mode) are drawn from `stream`.
ForwardResult forward(const NetworkParams& params, const Matrix& x, std::span<const int> t, Mode mode,
                      double dropout_rate, RandomStream& stream);

double loss_treatment(const ForwardResult& fr, std::span<const int> t);
double loss_outcome(const ForwardResult& fr, std::span<const double> y, double delta);
double elastic_net_penalty(const NetworkParams& params, double lambda_l2, double alpha_l1);
double l2_prediction_penalty(const NetworkParams& params, double beta);

struct Batch {
  Matrix x;
  std::vector<int> t;
  std::vector<double> y;

  std::size_t size() const { return t.size(); }
  static Batch from_dataset(const Dataset& ds);
};

enum Term : unsigned {
  kTermTreatment = 1u << 0,
  kTermOutcome = 1u << 1,
  kTermIpm = 1u << 2,
  kTermElasticNet = 1u << 3,
  kTermPrediction = 1u << 4,
  kAllTerms = 0x1Fu,
};

struct ObjectiveTerms {
  double treatment = 0.0;
  double outcome = 0.0;
  double ipm = 0.0;  // already multiplied by gamma
  double elastic_net = 0.0;
  double prediction = 0.0;
  bool ipm_skipped = false;  // batch lacked a treatment group

  double total() const { return treatment + outcome + ipm + elastic_net + prediction; }
  double term(Term t) const;
};

ObjectiveTerms total_objective(const NetworkParams& params, const Batch& batch,
                               const TrainConfig& config, Mode mode, RandomStream& stream);

struct Gradient {
  NetworkParams grad;
  ObjectiveTerms terms;
};

// Analytic gradient of the selected terms. The dropout realization is drawn
// once from `stream`, so a copy of the stream passed to total_objective sees
// the same masks.
Gradient backward(const NetworkParams& params, const Batch& batch, const TrainConfig& config,
                  Mode mode, RandomStream& stream, unsigned terms = kAllTerms);

struct AdamState {
  NetworkParams m;
  NetworkParams v;
  std::uint64_t step = 0;

  static AdamState for_params(const NetworkParams& params);
};

void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state,
               const TrainConfig& config);

}  // namespace fsrm
