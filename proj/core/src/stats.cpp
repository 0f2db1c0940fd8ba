#include "dpfb/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "dpfb/error.hpp"

namespace dpfb::stats {

namespace {

// Two-significant-figure decimal, exponent recomputed after rounding so
// cases like 0.0995 come out as "0.10".
std::string two_sig_figs(double p) {
  const int e = static_cast<int>(std::floor(std::log10(p)));
  const double scale = std::pow(10.0, e - 1);
  const double rounded = std::round(p / scale) * scale;
  const int e2 = static_cast<int>(std::floor(std::log10(rounded) + 1e-12));
  const int decimals = std::max(0, 1 - e2);
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, rounded);
  return buf;
}

struct ResamplePlan {
  std::vector<std::string> unique_patients;        // first-appearance order
  std::vector<std::vector<std::size_t>> rows_of;   // rows per unique patient
};

ResamplePlan build_plan(std::span<const std::string> patient_ids) {
  ResamplePlan plan;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < patient_ids.size(); ++i) {
    auto [it, inserted] = index.try_emplace(patient_ids[i], plan.unique_patients.size());
    if (inserted) {
      plan.unique_patients.push_back(patient_ids[i]);
      plan.rows_of.emplace_back();
    }
    plan.rows_of[it->second].push_back(i);
  }
  return plan;
}

std::vector<std::size_t> draw_from_plan(const ResamplePlan& plan, Rng& rng) {
  const std::size_t P = plan.unique_patients.size();
  std::vector<std::size_t> rows;
  for (std::size_t draw = 0; draw < P; ++draw) {
    const std::size_t p = rng.uniform_index(P);
    rows.insert(rows.end(), plan.rows_of[p].begin(), plan.rows_of[p].end());
  }
  return rows;
}

}  // namespace

void BootstrapConfig::validate() const {
  if (n_resamples < 2) {
    throw ParameterError("n_resamples must be >= 2");
  }
  if (!(level > 0.0 && level < 1.0)) {
    throw ParameterError("confidence level must lie in (0, 1)");
  }
}

std::vector<std::size_t> patient_resample(
    std::span<const std::string> patient_ids, Rng& rng) {
  if (patient_ids.empty()) {
    throw ParameterError("patient_resample needs a non-empty id list");
  }
  return draw_from_plan(build_plan(patient_ids), rng);
}

double percentile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) {
    throw ParameterError("percentile of an empty sample");
  }
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ParameterError("percentile rank must lie in [0, 1]");
  }
  const double rank = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(rank));
  const double w = rank - static_cast<double>(lo);
  return sorted[lo] * (1.0 - w) + sorted[hi] * w;
}

BootstrapResult bootstrap(std::span<const std::string> patient_ids,
                          const Metric& metric, const BootstrapConfig& config) {
  config.validate();
  if (patient_ids.empty()) {
    throw ParameterError("bootstrap needs a non-empty id list");
  }
  const ResamplePlan plan = build_plan(patient_ids);

  BootstrapResult res;
  std::string first_failure;
  int undefined = 0;
  for (int r = 0; r < config.n_resamples; ++r) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(r)));
    const std::vector<std::size_t> rows = draw_from_plan(plan, rng);
    try {
      res.values.push_back(metric(rows));
    } catch (const UndefinedMetricError& e) {
      ++undefined;
      if (first_failure.empty()) {
        first_failure = e.what();
      }
    }
  }
  if (undefined * 20 > config.n_resamples) {  // more than 5%
    std::ostringstream msg;
    msg << "metric undefined on " << undefined << "/" << config.n_resamples
        << " resamples (first cause: " << first_failure << ")";
    throw StatsError(msg.str());
  }
  if (res.values.size() < 2) {
    throw StatsError("fewer than 2 defined resamples");
  }
  res.n_defined = static_cast<int>(res.values.size());

  double sum = 0.0;
  for (double v : res.values) sum += v;
  res.mean = sum / res.n_defined;
  double ss = 0.0;
  for (double v : res.values) ss += (v - res.mean) * (v - res.mean);
  res.stddev = std::sqrt(ss / (res.n_defined - 1));

  std::vector<double> sorted = res.values;
  std::sort(sorted.begin(), sorted.end());
  const double tail = (1.0 - config.level) / 2.0;
  res.ci_low = percentile_sorted(sorted, tail);
  res.ci_high = percentile_sorted(sorted, 1.0 - tail);
  return res;
}

PairedTestResult paired_test_from_values(std::span<const double> a,
                                         std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ParameterError("paired test needs index-aligned value vectors");
  }
  if (a.size() < 2) {
    throw StatsError("fewer than 2 paired resamples");
  }
  const double R = static_cast<double>(a.size());
  std::int64_t n_le = 0;
  std::int64_t n_ge = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d;
    if (d <= 0.0) ++n_le;
    if (d >= 0.0) ++n_ge;
  }
  PairedTestResult res;
  res.mean_diff = sum / R;
  const std::int64_t min_tail = std::min(n_le, n_ge);
  res.saturated = (min_tail == 0);
  const double floor_p = 2.0 / R;
  const double p = 2.0 * static_cast<double>(min_tail) / R;
  res.p_value = std::min(1.0, std::max(p, floor_p));
  if (res.saturated) {
    // The observed tail fraction is zero; display follows the publication
    // rule while the raw resolution bound is carried alongside.
    res.p_display = "P < 0.001";
    res.floor_note = "P < " + two_sig_figs(floor_p);
  } else {
    res.p_display = format_p(res.p_value);
  }
  return res;
}

PairedTestResult paired_test(std::span<const std::string> patient_ids,
                             const Metric& metric_a, const Metric& metric_b,
                             const BootstrapConfig& config) {
  config.validate();
  if (patient_ids.empty()) {
    throw ParameterError("paired_test needs a non-empty id list");
  }
  const ResamplePlan plan = build_plan(patient_ids);
  std::vector<double> va;
  std::vector<double> vb;
  std::string first_failure;
  int undefined = 0;
  for (int r = 0; r < config.n_resamples; ++r) {
    // Identical resample indices for both metrics, by construction.
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(r)));
    const std::vector<std::size_t> rows = draw_from_plan(plan, rng);
    try {
      const double x = metric_a(rows);
      const double y = metric_b(rows);
      va.push_back(x);
      vb.push_back(y);
    } catch (const UndefinedMetricError& e) {
      ++undefined;
      if (first_failure.empty()) {
        first_failure = e.what();
      }
    }
  }
  if (undefined * 20 > config.n_resamples) {
    std::ostringstream msg;
    msg << "paired metric undefined on " << undefined << "/"
        << config.n_resamples << " resamples (first cause: " << first_failure
        << ")";
    throw StatsError(msg.str());
  }
  return paired_test_from_values(va, vb);
}

std::vector<double> bh_fdr(std::span<const double> p_values) {
  const std::size_t m = p_values.size();
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ParameterError("p-values must lie in [0, 1]");
    }
  }
  if (m == 0) {
    return {};
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return p_values[a] < p_values[b];
  });
  std::vector<double> q(m, 0.0);
  double running = 1.0;
  for (std::size_t i = m; i > 0; --i) {
    const std::size_t idx = order[i - 1];
    const double adj =
        p_values[idx] * static_cast<double>(m) / static_cast<double>(i);
    running = std::min(running, std::min(adj, 1.0));
    q[idx] = running;
  }
  return q;
}

std::string format_p(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ParameterError("p-value must lie in [0, 1]");
  }
  if (p < 0.001) {
    return "P < 0.001";
  }
  return "P = " + two_sig_figs(p);
}

}  // namespace dpfb::stats
