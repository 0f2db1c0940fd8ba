#include "dpfb/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dpfb/error.hpp"
#include "dpfb/stats.hpp"

namespace dpfb::trainer {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// BCE from the logit: max(z,0) - z*y + log(1 + exp(-|z|)).
double bce_from_logit(double z, int y) {
  return std::max(z, 0.0) - z * static_cast<double>(y) +
         std::log1p(std::exp(-std::abs(z)));
}

struct Workspace {
  std::vector<double> hidden_a;  // tanh activations
  std::vector<double> logits;
  std::vector<double> delta;     // dL/dlogit
  std::vector<double> dhidden;
};

void forward_into(const Model& m, std::span<const double> x, Workspace& ws) {
  const int d = m.shape.input_dim;
  const int h = m.shape.hidden_dim;
  const int K = m.shape.label_count;
  const double* p = m.params.data();
  ws.logits.resize(K);
  if (h == 0) {
    for (int k = 0; k < K; ++k) {
      double z = p[static_cast<std::size_t>(K) * d + k];  // bias
      const double* row = p + static_cast<std::size_t>(k) * d;
      for (int j = 0; j < d; ++j) {
        z += row[j] * x[j];
      }
      ws.logits[k] = z;
    }
    return;
  }
  const std::size_t b1_off = static_cast<std::size_t>(h) * d;
  const std::size_t w2_off = b1_off + h;
  const std::size_t b2_off = w2_off + static_cast<std::size_t>(K) * h;
  ws.hidden_a.resize(h);
  for (int i = 0; i < h; ++i) {
    double u = p[b1_off + i];
    const double* row = p + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      u += row[j] * x[j];
    }
    ws.hidden_a[i] = std::tanh(u);
  }
  for (int k = 0; k < K; ++k) {
    double z = p[b2_off + k];
    const double* row = p + w2_off + static_cast<std::size_t>(k) * h;
    for (int i = 0; i < h; ++i) {
      z += row[i] * ws.hidden_a[i];
    }
    ws.logits[k] = z;
  }
}

// Weighted BCE loss and its analytic gradient over the flat parameters.
double grad_sample(const Model& m, std::span<const double> x,
                   std::span<const int> y, std::span<const double> w,
                   Workspace& ws, std::vector<double>& grad) {
  forward_into(m, x, ws);
  const int d = m.shape.input_dim;
  const int h = m.shape.hidden_dim;
  const int K = m.shape.label_count;
  double loss = 0.0;
  ws.delta.resize(K);
  for (int k = 0; k < K; ++k) {
    loss += w[k] * bce_from_logit(ws.logits[k], y[k]);
    ws.delta[k] = w[k] * (sigmoid(ws.logits[k]) - static_cast<double>(y[k]));
  }
  grad.assign(m.params.size(), 0.0);
  if (h == 0) {
    const std::size_t b_off = static_cast<std::size_t>(K) * d;
    for (int k = 0; k < K; ++k) {
      const double dk = ws.delta[k];
      double* row = grad.data() + static_cast<std::size_t>(k) * d;
      for (int j = 0; j < d; ++j) {
        row[j] = dk * x[j];
      }
      grad[b_off + k] = dk;
    }
    return loss;
  }
  const std::size_t b1_off = static_cast<std::size_t>(h) * d;
  const std::size_t w2_off = b1_off + h;
  const std::size_t b2_off = w2_off + static_cast<std::size_t>(K) * h;
  const double* p = m.params.data();
  ws.dhidden.assign(h, 0.0);
  for (int k = 0; k < K; ++k) {
    const double dk = ws.delta[k];
    const double* w2_row = p + w2_off + static_cast<std::size_t>(k) * h;
    double* g2_row = grad.data() + w2_off + static_cast<std::size_t>(k) * h;
    for (int i = 0; i < h; ++i) {
      g2_row[i] = dk * ws.hidden_a[i];
      ws.dhidden[i] += dk * w2_row[i];
    }
    grad[b2_off + k] = dk;
  }
  for (int i = 0; i < h; ++i) {
    const double du = ws.dhidden[i] * (1.0 - ws.hidden_a[i] * ws.hidden_a[i]);
    double* row = grad.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      row[j] = du * x[j];
    }
    grad[b1_off + i] = du;
  }
  return loss;
}

double l2_norm(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

std::vector<double> resolve_class_weights(const TrainConfig& config,
                                          std::size_t label_count) {
  if (config.class_weights.empty()) {
    return std::vector<double>(label_count, 1.0);
  }
  if (config.class_weights.size() != label_count) {
    throw ParameterError("class_weights length does not match label count");
  }
  return config.class_weights;
}

}  // namespace

std::size_t ModelShape::param_count() const {
  const auto d = static_cast<std::size_t>(input_dim);
  const auto h = static_cast<std::size_t>(hidden_dim);
  const auto K = static_cast<std::size_t>(label_count);
  return hidden_dim > 0 ? d * h + h + h * K + K : d * K + K;
}

void Model::validate() const {
  if (shape.input_dim < 1 || shape.hidden_dim < 0 || shape.label_count < 1) {
    throw ParameterError("model shape dimensions out of range");
  }
  if (params.size() != shape.param_count()) {
    throw ParameterError("parameter count does not match model shape");
  }
  for (double p : params) {
    if (!std::isfinite(p)) {
      throw ParameterError("non-finite model parameter");
    }
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ParameterError("learning_rate must be positive and finite");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ParameterError("weight_decay must be non-negative and finite");
  }
  if (nominal_batch < 1) {
    throw ParameterError("nominal_batch must be >= 1");
  }
  if (max_steps < 0) {
    throw ParameterError("max_steps must be >= 0");
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    throw ParameterError("delta must lie in (0, 1)");
  }
  if (!(noise_multiplier >= 0.0) || !std::isfinite(noise_multiplier)) {
    throw ParameterError("noise_multiplier must be non-negative and finite");
  }
  if (!(clip_norm > 0.0)) {
    throw ParameterError("clip_norm must be positive");
  }
  if (noise_multiplier > 0.0 && !std::isfinite(clip_norm)) {
    throw ParameterError("clip_norm must be finite when noise_multiplier > 0");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ParameterError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) {
    throw ParameterError("adam_eps must be positive");
  }
  if (hidden_dim < 0) {
    throw ParameterError("hidden_dim must be >= 0");
  }
  for (double w : class_weights) {
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw ParameterError("class weights must be positive and finite");
    }
  }
}

Model cold_init(const ModelShape& shape, std::uint64_t seed) {
  if (shape.input_dim < 1 || shape.hidden_dim < 0 || shape.label_count < 1) {
    throw ParameterError("model shape dimensions out of range");
  }
  Model m;
  m.shape = shape;
  m.params.assign(shape.param_count(), 0.0);
  Rng rng(seed);
  const auto glorot = [&rng](double* w, std::size_t n, int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = a * (2.0 * rng.uniform01() - 1.0);
    }
  };
  const auto d = static_cast<std::size_t>(shape.input_dim);
  const auto h = static_cast<std::size_t>(shape.hidden_dim);
  const auto K = static_cast<std::size_t>(shape.label_count);
  if (shape.hidden_dim == 0) {
    glorot(m.params.data(), K * d, shape.input_dim, shape.label_count);
  } else {
    glorot(m.params.data(), h * d, shape.input_dim, shape.hidden_dim);
    glorot(m.params.data() + h * d + h, K * h, shape.hidden_dim,
           shape.label_count);
  }
  return m;
}

std::vector<double> forward(const Model& model, std::span<const double> features) {
  model.validate();
  if (features.size() != static_cast<std::size_t>(model.shape.input_dim)) {
    throw ParameterError("feature length does not match model input_dim");
  }
  Workspace ws;
  forward_into(model, features, ws);
  std::vector<double> scores(model.shape.label_count);
  for (int k = 0; k < model.shape.label_count; ++k) {
    scores[k] = sigmoid(ws.logits[k]);
  }
  return scores;
}

std::vector<double> per_sample_grad(const Model& model,
                                    std::span<const double> features,
                                    std::span<const int> labels,
                                    std::span<const double> class_weights) {
  model.validate();
  const auto K = static_cast<std::size_t>(model.shape.label_count);
  if (features.size() != static_cast<std::size_t>(model.shape.input_dim) ||
      labels.size() != K || class_weights.size() != K) {
    throw ParameterError("per_sample_grad dimension mismatch");
  }
  for (double w : class_weights) {
    if (!(w > 0.0)) {
      throw ParameterError("class weights must be positive");
    }
  }
  Workspace ws;
  std::vector<double> grad;
  const double loss = grad_sample(model, features, labels, class_weights, ws, grad);
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss in per-sample gradient");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) {
      throw NumericError("non-finite per-sample gradient component");
    }
  }
  return grad;
}

void clip(std::span<double> grad, double clip_norm) {
  if (!(clip_norm > 0.0)) {
    throw ParameterError("clip_norm must be positive");
  }
  const double norm = l2_norm(grad);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (double& g : grad) {
      g *= scale;
    }
  }
}

std::vector<double> noisy_mean(const std::vector<std::vector<double>>& grads,
                               double sigma, double clip_norm, int nominal_batch,
                               std::size_t dim, Rng& rng) {
  if (nominal_batch < 1) {
    throw ParameterError("nominal_batch must be >= 1");
  }
  if (!(sigma >= 0.0)) {
    throw ParameterError("sigma must be non-negative");
  }
  std::vector<double> out(dim, 0.0);
  for (const auto& g : grads) {
    if (g.size() != dim) {
      throw ParameterError("gradient dimension mismatch");
    }
    if (l2_norm(g) > clip_norm + 1e-9) {
      throw NumericError("unclipped gradient reached the aggregator");
    }
    for (std::size_t i = 0; i < dim; ++i) {
      out[i] += g[i];
    }
  }
  if (sigma > 0.0) {
    const double noise_scale = sigma * clip_norm;
    for (std::size_t i = 0; i < dim; ++i) {
      out[i] += noise_scale * rng.normal();
    }
  }
  const double inv = 1.0 / static_cast<double>(nominal_batch);
  for (double& x : out) {
    x *= inv;
  }
  return out;
}

std::vector<std::size_t> poisson_sample(std::size_t n, double q, Rng& rng) {
  if (!(q > 0.0 && q <= 1.0)) {
    throw ParameterError("sampling probability must lie in (0, 1]");
  }
  std::vector<std::size_t> batch;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.bernoulli(q)) {
      batch.push_back(i);
    }
  }
  return batch;
}

void adamw_step(std::vector<double>& params, AdamState& state,
                std::span<const double> grad, const TrainConfig& config) {
  const std::size_t P = params.size();
  if (state.m.empty()) {
    state.m.assign(P, 0.0);
    state.v.assign(P, 0.0);
  }
  if (grad.size() != P || state.m.size() != P || state.v.size() != P) {
    throw ParameterError("adamw_step dimension mismatch");
  }
  state.t += 1;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < P; ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= config.learning_rate *
                 (m_hat / (std::sqrt(v_hat) + config.adam_eps) +
                  config.weight_decay * params[i]);
  }
  for (double p : params) {
    if (!std::isfinite(p)) {
      std::ostringstream msg;
      msg << "non-finite parameter after update step " << state.t;
      throw NumericError(msg.str());
    }
  }
}

std::pair<Model, TrainTrace> train(const data::Cohort& cohort,
                                   const TrainConfig& config, const Model& init) {
  config.validate();
  init.validate();
  const int K = static_cast<int>(cohort.label_names.size());
  if (init.shape.input_dim != cohort.feature_dim ||
      init.shape.label_count != K) {
    throw ParameterError("init model shape does not match cohort dimensions");
  }
  std::vector<std::size_t> train_rows;
  for (std::size_t i = 0; i < cohort.rows.size(); ++i) {
    if (cohort.rows[i].split == data::Split::kTrain) {
      train_rows.push_back(i);
    }
  }
  const std::size_t n = train_rows.size();
  if (n == 0) {
    throw ParameterError("cohort has no train-split rows");
  }
  if (static_cast<std::size_t>(config.nominal_batch) > n) {
    throw ParameterError("nominal_batch exceeds the train split size");
  }
  const std::vector<double> weights =
      resolve_class_weights(config, static_cast<std::size_t>(K));
  const double q = static_cast<double>(config.nominal_batch) /
                   static_cast<double>(n);

  Model model = init;
  AdamState state;
  TrainTrace trace;
  trace.sampling_prob = q;
  trace.non_private = config.noise_multiplier == 0.0;
  trace.records.reserve(config.max_steps);

  Rng rng(config.seed);
  Workspace ws;
  std::vector<std::vector<double>> grads;
  std::vector<double> norms;
  const std::size_t P = model.params.size();
  for (int step = 1; step <= config.max_steps; ++step) {
    const std::vector<std::size_t> batch = poisson_sample(n, q, rng);
    grads.resize(batch.size());
    norms.clear();
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const data::CohortRow& row = cohort.rows[train_rows[batch[b]]];
      loss_sum += grad_sample(model, row.features, row.labels, weights, ws,
                              grads[b]);
      norms.push_back(l2_norm(grads[b]));
      clip(grads[b], config.clip_norm);
    }
    StepRecord rec;
    rec.step = step;
    rec.batch_size = static_cast<int>(batch.size());
    if (batch.empty()) {
      rec.loss = kNaN;
      rec.grad_norm_q50 = rec.grad_norm_q90 = rec.grad_norm_max = kNaN;
    } else {
      rec.loss = loss_sum / static_cast<double>(batch.size());
      std::sort(norms.begin(), norms.end());
      rec.grad_norm_q50 = stats::percentile_sorted(norms, 0.5);
      rec.grad_norm_q90 = stats::percentile_sorted(norms, 0.9);
      rec.grad_norm_max = norms.back();
      if (!std::isfinite(rec.loss)) {
        std::ostringstream msg;
        msg << "loss diverged at step " << step << " (loss " << rec.loss << ")";
        throw TrainingError(msg.str());
      }
    }
    const std::vector<double> g = noisy_mean(
        grads, config.noise_multiplier, config.clip_norm, config.nominal_batch,
        P, rng);
    adamw_step(model.params, state, g, config);
    trace.records.push_back(rec);
  }
  trace.steps = config.max_steps;

  trace.achieved.delta = config.delta;
  if (trace.non_private) {
    trace.achieved.epsilon = kInf;
    trace.achieved.optimal_order = 0;
    trace.achieved.at_grid_edge = false;
  } else if (config.max_steps == 0) {
    trace.achieved.epsilon = 0.0;
    trace.achieved.optimal_order = 0;
    trace.achieved.at_grid_edge = false;
  } else {
    trace.achieved = accountant::epsilon_for(
        {config.noise_multiplier, q, config.max_steps, config.delta});
  }
  return {std::move(model), std::move(trace)};
}

Model warm_start(const data::Cohort& source, const TrainConfig& config) {
  config.validate();
  ModelShape shape;
  shape.input_dim = source.feature_dim;
  shape.hidden_dim = config.hidden_dim;
  shape.label_count = static_cast<int>(source.label_names.size());
  const Model init = cold_init(shape, derive_seed(config.seed, 1));
  if (config.max_steps == 0) {
    return init;
  }
  TrainConfig pretrain = config;
  pretrain.noise_multiplier = 0.0;
  pretrain.clip_norm = kInf;
  return train(source, pretrain, init).first;
}

std::vector<double> inverse_prevalence_weights(const data::Cohort& cohort) {
  const std::size_t K = cohort.label_names.size();
  if (K == 0) {
    throw ParameterError("cohort has no labels");
  }
  std::vector<std::int64_t> pos(K, 0);
  std::int64_t n = 0;
  for (const data::CohortRow& row : cohort.rows) {
    if (row.split != data::Split::kTrain) continue;
    ++n;
    for (std::size_t k = 0; k < K; ++k) {
      pos[k] += row.labels[k];
    }
  }
  if (n == 0) {
    throw ParameterError("cohort has no train-split rows");
  }
  std::vector<double> w(K);
  double sum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    w[k] = static_cast<double>(n) /
           static_cast<double>(std::max<std::int64_t>(pos[k], 1));
    sum += w[k];
  }
  const double scale = static_cast<double>(K) / sum;  // mean-1 normalization
  for (double& x : w) {
    x *= scale;
  }
  return w;
}

}  // namespace dpfb::trainer
