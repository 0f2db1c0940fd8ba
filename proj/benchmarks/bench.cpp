// Microbenchmarks for the hot paths: accountant curve evaluation and
// calibration, AUROC/Youden scans, per-sample gradients, one DP-SGD step,
// and the bootstrap loop. Run with --benchmark_filter=... to narrow.

#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "dpfb/accountant.hpp"
#include "dpfb/data.hpp"
#include "dpfb/metrics.hpp"
#include "dpfb/rng.hpp"
#include "dpfb/stats.hpp"
#include "dpfb/trainer.hpp"

namespace {

void BM_RdpCurvePoint(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(
        dpfb::accountant::subsampled_gaussian_rdp(0.064, 1.1, 64));
}
BENCHMARK(BM_RdpCurvePoint);

void BM_EpsilonFor(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(
        dpfb::accountant::epsilon_for({1.1, 0.064, 10000, 1e-5}));
}
BENCHMARK(BM_EpsilonFor);

void BM_CalibrateSigma(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(
        dpfb::accountant::calibrate_sigma(2.0, 0.064, 10000, 1e-5));
}
BENCHMARK(BM_CalibrateSigma);

void BM_Auroc(benchmark::State& state) {
  const std::size_t n = state.range(0);
  dpfb::Rng rng(1);
  std::vector<double> scores(n);
  std::vector<int> truths(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = std::round(rng.uniform01() * 100.0) / 100.0;  // heavy ties
    truths[i] = rng.bernoulli(0.3) ? 1 : 0;
  }
  truths[0] = 1;
  truths[1] = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(dpfb::metrics::auroc(scores, truths));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(10000);

void BM_YoudenThreshold(benchmark::State& state) {
  const std::size_t n = state.range(0);
  dpfb::Rng rng(2);
  std::vector<double> scores(n);
  std::vector<int> truths(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform01();
    truths[i] = rng.bernoulli(0.3) ? 1 : 0;
  }
  truths[0] = 1;
  truths[1] = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(dpfb::metrics::youden_threshold(scores, truths));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_YoudenThreshold)->Arg(1000)->Arg(10000);

void BM_PerSampleGrad(benchmark::State& state) {
  const int hidden = state.range(0);
  dpfb::trainer::ModelShape shape{20, hidden, 5};
  auto model = dpfb::trainer::cold_init(shape, 3);
  dpfb::Rng rng(4);
  std::vector<double> x(20);
  for (double& xi : x) xi = rng.normal();
  std::vector<int> y = {1, 0, 1, 0, 0};
  std::vector<double> w(5, 1.0);
  for (auto _ : state)
    benchmark::DoNotOptimize(dpfb::trainer::per_sample_grad(model, x, y, w));
}
BENCHMARK(BM_PerSampleGrad)->Arg(0)->Arg(64);

void BM_DpSgdStep(benchmark::State& state) {
  dpfb::trainer::ModelShape shape{20, 0, 5};
  auto model = dpfb::trainer::cold_init(shape, 5);
  dpfb::trainer::TrainConfig config;
  dpfb::Rng rng(6);
  std::vector<std::vector<double>> rows(128, std::vector<double>(20));
  std::vector<std::vector<int>> labels(128, std::vector<int>(5));
  for (auto& r : rows)
    for (double& v : r) v = rng.normal();
  for (auto& l : labels)
    for (int& v : l) v = rng.bernoulli(0.3) ? 1 : 0;
  std::vector<double> weights(5, 1.0);
  dpfb::trainer::AdamState adam;
  for (auto _ : state) {
    std::vector<std::vector<double>> grads;
    grads.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto g = dpfb::trainer::per_sample_grad(model, rows[i], labels[i], weights);
      dpfb::trainer::clip(g, config.clip_norm);
      grads.push_back(std::move(g));
    }
    auto mean = dpfb::trainer::noisy_mean(grads, 1.1, config.clip_norm,
                                          config.nominal_batch,
                                          model.params.size(), rng);
    dpfb::trainer::adamw_step(model.params, adam, mean, config);
  }
  state.SetItemsProcessed(state.iterations() * rows.size());
}
BENCHMARK(BM_DpSgdStep);

void BM_Bootstrap(benchmark::State& state) {
  dpfb::Rng rng(7);
  const std::size_t n = 500;
  std::vector<std::string> ids;
  std::vector<double> scores(n);
  std::vector<int> truths(n);
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back("p" + std::to_string(i % 250));  // ~2 rows per patient
    scores[i] = rng.uniform01();
    truths[i] = rng.bernoulli(0.3) ? 1 : 0;
  }
  truths[0] = 1;
  truths[1] = 0;
  auto metric = [&](std::span<const std::size_t> idx) {
    std::vector<double> s;
    std::vector<int> t;
    s.reserve(idx.size());
    t.reserve(idx.size());
    for (std::size_t i : idx) {
      s.push_back(scores[i]);
      t.push_back(truths[i]);
    }
    return dpfb::metrics::auroc(s, t);
  };
  dpfb::stats::BootstrapConfig config;
  config.n_resamples = 200;
  config.seed = 8;
  for (auto _ : state)
    benchmark::DoNotOptimize(dpfb::stats::bootstrap(ids, metric, config));
  state.SetItemsProcessed(state.iterations() * config.n_resamples);
}
BENCHMARK(BM_Bootstrap);

void BM_GenerateCohort(benchmark::State& state) {
  dpfb::data::CohortSpec spec;  // 2500 patients, d=20, K=5
  for (auto _ : state) benchmark::DoNotOptimize(dpfb::data::generate(spec));
}
BENCHMARK(BM_GenerateCohort);

}  // namespace

BENCHMARK_MAIN();
