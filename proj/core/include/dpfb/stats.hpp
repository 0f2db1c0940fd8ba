#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dpfb/rng.hpp"

namespace dpfb::stats {

struct BootstrapConfig {
  int n_resamples = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BootstrapResult {
  double mean = 0.0;
  double stddev = 0.0;     // of the bootstrap distribution (n-1 denominator)
  double ci_low = 0.0;     // percentile method, linear interpolation
  double ci_high = 0.0;
  int n_defined = 0;       // resamples on which the metric was defined
  std::vector<double> values;  // defined resample values, in resample order
};

struct PairedTestResult {
  double p_value = 1.0;    // floored at 2/n_resamples, capped at 1
  double mean_diff = 0.0;
  bool saturated = false;  // no resample crossed zero; p_value is the floor
  std::string p_display;   // publication rule ("P = 0.034", "P < 0.001")
  std::string floor_note;  // resolution bound when saturated ("P < 0.002")
};

// Draws as many patients as there are unique patients, with replacement,
// and returns the row-index multiset containing every row of each drawn
// patient (repeated per draw). Unique patients are taken in first-appearance
// order, so the layout is a pure function of (patient_ids, rng state).
std::vector<std::size_t> patient_resample(
    std::span<const std::string> patient_ids, Rng& rng);

// Metric over a row-index multiset. Throwing UndefinedMetricError marks the
// resample undefined (tolerated on at most 5% of resamples).
using Metric = std::function<double(std::span<const std::size_t>)>;

// Patient-level bootstrap of one metric. Resample r uses
// Rng(derive_seed(config.seed, r)), so resamples are order-independent and
// index sets are shared between any metrics run with the same seed/ids.
BootstrapResult bootstrap(std::span<const std::string> patient_ids,
                          const Metric& metric, const BootstrapConfig& config);

// Paired bootstrap test: identical resample indices feed both metrics and
// the two-sided p-value is computed from the per-resample differences.
PairedTestResult paired_test(std::span<const std::string> patient_ids,
                             const Metric& metric_a, const Metric& metric_b,
                             const BootstrapConfig& config);

// Same test on precomputed per-resample metric values (index-aligned, as
// produced by bootstrap() with a shared seed).
PairedTestResult paired_test_from_values(std::span<const double> a,
                                         std::span<const double> b);

// Benjamini-Hochberg step-up adjustment; returns q-values in input order.
std::vector<double> bh_fdr(std::span<const double> p_values);

// Percentile with linear interpolation between order statistics at rank
// p * (n - 1); input must be sorted ascending.
double percentile_sorted(std::span<const double> sorted, double p);

// Publication p-value formatting: two significant figures at or above
// 0.001, "P < 0.001" below.
std::string format_p(double p);

}  // namespace dpfb::stats
