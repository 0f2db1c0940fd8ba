#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dpfb/accountant.hpp"
#include "dpfb/data.hpp"
#include "dpfb/rng.hpp"

namespace dpfb::trainer {

// Linear (hidden_dim = 0) or one-hidden-layer tanh network with a
// per-label sigmoid head.
struct ModelShape {
  int input_dim = 0;
  int hidden_dim = 0;  // 0 = linear
  int label_count = 0;

  // Flat parameter layout:
  //   hidden_dim = 0:  W (K x d, row-major), b (K)
  //   hidden_dim > 0:  W1 (h x d), b1 (h), W2 (K x h), b2 (K)
  std::size_t param_count() const;
  bool operator==(const ModelShape&) const = default;
};

struct Model {
  ModelShape shape;
  std::vector<double> params;

  void validate() const;  // ParameterError on size/finiteness violations
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  int nominal_batch = 128;
  double clip_norm = 1.0;          // may be +inf only when sigma == 0
  double noise_multiplier = 0.0;   // sigma; 0 = non-private
  int max_steps = 400;             // 0 = return the init untouched
  double delta = 6e-6;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int hidden_dim = 0;
  std::vector<double> class_weights;  // per-label, positive; empty = all 1

  void validate() const;
};

struct StepRecord {
  int step = 0;
  int batch_size = 0;
  double loss = 0.0;           // batch-mean weighted BCE; NaN on empty batch
  double grad_norm_q50 = 0.0;  // pre-clip per-sample gradient norm quantiles
  double grad_norm_q90 = 0.0;
  double grad_norm_max = 0.0;
};

struct TrainTrace {
  int steps = 0;
  double sampling_prob = 0.0;
  bool non_private = false;  // sigma == 0
  std::vector<StepRecord> records;
  accountant::PrivacySpend achieved;  // epsilon = inf when non-private
};

Model cold_init(const ModelShape& shape, std::uint64_t seed);

// Per-label sigmoid probabilities.
std::vector<double> forward(const Model& model, std::span<const double> features);

// Gradient of sum_k w_k * BCE(score_k, y_k) over the flat parameter vector.
std::vector<double> per_sample_grad(const Model& model,
                                    std::span<const double> features,
                                    std::span<const int> labels,
                                    std::span<const double> class_weights);

// In-place l2 clipping: g <- g * min(1, C / ||g||).
void clip(std::span<double> grad, double clip_norm);

// (sum of grads + N(0, sigma^2 C^2 I)) / nominal_batch. The divisor is the
// nominal batch size, never the realized one; sigma = 0 adds no noise and
// consumes nothing from rng.
std::vector<double> noisy_mean(const std::vector<std::vector<double>>& grads,
                               double sigma, double clip_norm, int nominal_batch,
                               std::size_t dim, Rng& rng);

// Each index in [0, n) kept independently with probability q.
std::vector<std::size_t> poisson_sample(std::size_t n, double q, Rng& rng);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;
};

// Bias-corrected Adam with decoupled weight decay:
// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
void adamw_step(std::vector<double>& params, AdamState& state,
                std::span<const double> grad, const TrainConfig& config);

// DP-SGD over the cohort's train-split rows: Poisson sampling, per-sample
// gradients, clipping, noisy mean, AdamW. The run's Rng(config.seed) owns
// sampling and noise; everything else is deterministic.
std::pair<Model, TrainTrace> train(const data::Cohort& cohort,
                                   const TrainConfig& config, const Model& init);

// Non-private pretraining on a source cohort (sigma forced to 0, clipping
// disabled), from a cold init derived from config.seed. Zero steps returns
// that init unchanged.
Model warm_start(const data::Cohort& source, const TrainConfig& config);

// Class weights inversely proportional to train-split label prevalence,
// normalized to mean 1; positive counts are clamped to >= 1 so rare labels
// stay finite.
std::vector<double> inverse_prevalence_weights(const data::Cohort& cohort);

}  // namespace dpfb::trainer
