#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dpfb/error.hpp"
#include "dpfb/rng.hpp"
#include "dpfb/stats.hpp"

using namespace dpfb;
using namespace dpfb::stats;

namespace {

// Independent BH step-up: q at sorted rank i (1-based) is
// min_{j >= i} p_(j) * m / j, capped at 1, with the same stable tie order.
std::vector<double> brute_bh(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> q(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = 1.0;
    for (std::size_t j = i; j < m; ++j) {
      best = std::min(best, p[order[j]] * static_cast<double>(m) /
                                static_cast<double>(j + 1));
    }
    q[order[i]] = best;
  }
  return q;
}

}  // namespace

TEST_CASE("percentile_sorted hand values") {
  const std::vector<double> s = {1.0, 2.0, 3.0, 4.0};
  CHECK(percentile_sorted(s, 0.0) == 1.0);
  CHECK(percentile_sorted(s, 1.0) == 4.0);
  CHECK(percentile_sorted(s, 0.5) == 2.5);
  CHECK(percentile_sorted(s, 0.25) == 1.75);
  const std::vector<double> one = {7.0};
  CHECK(percentile_sorted(one, 0.3) == 7.0);
  CHECK_THROWS_AS(percentile_sorted(std::vector<double>{}, 0.5), ParameterError);
  CHECK_THROWS_AS(percentile_sorted(s, 1.5), ParameterError);
}

TEST_CASE("patient_resample draws whole patients in first-appearance order") {
  const std::vector<std::string> ids = {"a", "a", "b", "c", "c", "c"};
  const std::vector<std::vector<std::size_t>> blocks = {{0, 1}, {2}, {3, 4, 5}};
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<std::size_t> rows = patient_resample(ids, rng);
    // The result must be a concatenation of exactly P = 3 patient blocks.
    std::size_t i = 0;
    int draws = 0;
    while (i < rows.size()) {
      bool matched = false;
      for (const auto& b : blocks) {
        if (i + b.size() <= rows.size() &&
            std::equal(b.begin(), b.end(), rows.begin() + i)) {
          i += b.size();
          ++draws;
          matched = true;
          break;
        }
      }
      REQUIRE(matched);
    }
    CHECK(draws == 3);
  }
  Rng r2(3);
  CHECK_THROWS_AS(patient_resample(std::vector<std::string>{}, r2), ParameterError);
}

TEST_CASE("bootstrap is deterministic and resample-index independent") {
  std::vector<std::string> ids;
  for (int i = 0; i < 40; ++i) {
    ids.push_back("p" + std::to_string(i / 2));  // 20 patients, 2 rows each
  }
  const Metric size_sum = [](std::span<const std::size_t> rows) {
    double s = 0.0;
    for (std::size_t r : rows) s += static_cast<double>(r);
    return s / static_cast<double>(rows.size());
  };
  BootstrapConfig cfg;
  cfg.n_resamples = 50;
  cfg.seed = 99;
  const BootstrapResult a = bootstrap(ids, size_sum, cfg);
  const BootstrapResult b = bootstrap(ids, size_sum, cfg);
  CHECK(a.values == b.values);
  CHECK(a.mean == b.mean);

  // Resample r depends only on (seed, r): growing R keeps a prefix.
  BootstrapConfig big = cfg;
  big.n_resamples = 80;
  const BootstrapResult c = bootstrap(ids, size_sum, big);
  REQUIRE(c.values.size() == 80);
  CHECK(std::equal(a.values.begin(), a.values.end(), c.values.begin()));

  BootstrapConfig other = cfg;
  other.seed = 100;
  const BootstrapResult d = bootstrap(ids, size_sum, other);
  CHECK(a.values != d.values);
}

TEST_CASE("bootstrap summary statistics match direct recomputation") {
  std::vector<std::string> ids;
  for (int i = 0; i < 30; ++i) ids.push_back("p" + std::to_string(i));
  const Metric m = [](std::span<const std::size_t> rows) {
    double s = 0.0;
    for (std::size_t r : rows) s += static_cast<double>(r % 7);
    return s / static_cast<double>(rows.size());
  };
  BootstrapConfig cfg;
  cfg.n_resamples = 200;
  cfg.level = 0.9;
  cfg.seed = 7;
  const BootstrapResult res = bootstrap(ids, m, cfg);
  REQUIRE(res.n_defined == 200);

  double mean = 0.0;
  for (double v : res.values) mean += v;
  mean /= 200.0;
  double ss = 0.0;
  for (double v : res.values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / 199.0);
  CHECK(res.mean == doctest::Approx(mean).epsilon(1e-15));
  CHECK(res.stddev == doctest::Approx(sd).epsilon(1e-12));

  std::vector<double> sorted = res.values;
  std::sort(sorted.begin(), sorted.end());
  CHECK(res.ci_low == percentile_sorted(sorted, 0.05));
  CHECK(res.ci_high == percentile_sorted(sorted, 0.95));
  CHECK(res.ci_low <= res.mean);
  CHECK(res.mean <= res.ci_high);
}

TEST_CASE("bootstrap tolerates up to 5% undefined resamples") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("p" + std::to_string(i));
  BootstrapConfig cfg;
  cfg.n_resamples = 100;
  cfg.seed = 1;

  int calls = 0;
  const Metric four_bad = [&calls](std::span<const std::size_t>) -> double {
    if (calls++ < 4) {
      throw UndefinedMetricError("synthetic: single-class resample");
    }
    return 1.0;
  };
  const BootstrapResult ok = bootstrap(ids, four_bad, cfg);
  CHECK(ok.n_defined == 96);

  calls = 0;
  const Metric five_bad = [&calls](std::span<const std::size_t>) -> double {
    if (calls++ < 5) {
      throw UndefinedMetricError("synthetic: single-class resample");
    }
    return 1.0;
  };
  // Exactly 5% is still tolerated; the threshold is strict.
  CHECK(bootstrap(ids, five_bad, cfg).n_defined == 95);

  calls = 0;
  const Metric six_bad = [&calls](std::span<const std::size_t>) -> double {
    if (calls++ < 6) {
      throw UndefinedMetricError("synthetic: single-class resample");
    }
    return 1.0;
  };
  CHECK_THROWS_WITH_AS(bootstrap(ids, six_bad, cfg),
                       doctest::Contains("6/100"), StatsError);
  calls = 0;
  CHECK_THROWS_WITH_AS(bootstrap(ids, six_bad, cfg),
                       doctest::Contains("single-class resample"), StatsError);
}

TEST_CASE("paired test hand values") {
  // diffs: +1, -1, +1, +1 -> min tail = 1 (one d <= 0), p = 2*1/4 = 0.5.
  const std::vector<double> a = {2, 1, 3, 4};
  const std::vector<double> b = {1, 2, 2, 3};
  const PairedTestResult r = paired_test_from_values(a, b);
  CHECK(r.p_value == 0.5);
  CHECK_FALSE(r.saturated);
  CHECK(r.mean_diff == 0.5);
  CHECK(r.p_display == "P = 0.50");
  CHECK(r.floor_note.empty());

  // Zero diffs land in both tails: identical inputs give p = 1.
  const PairedTestResult same = paired_test_from_values(a, a);
  CHECK(same.p_value == 1.0);
  CHECK(same.mean_diff == 0.0);
  CHECK(same.p_display == "P = 1.0");

  CHECK_THROWS_AS(paired_test_from_values(a, std::vector<double>{1.0}),
                  ParameterError);
  CHECK_THROWS_AS(paired_test_from_values(std::vector<double>{1.0},
                                          std::vector<double>{2.0}),
                  StatsError);
}

TEST_CASE("paired test saturation reports the resolution floor") {
  std::vector<double> a(1000), b(1000);
  for (int i = 0; i < 1000; ++i) {
    a[i] = 1.0 + 0.001 * i;
    b[i] = a[i] - 0.5;  // every diff positive
  }
  const PairedTestResult r = paired_test_from_values(a, b);
  CHECK(r.saturated);
  CHECK(r.p_value == 0.002);  // 2/R floor, never exactly zero
  CHECK(r.p_display == "P < 0.001");
  CHECK(r.floor_note == "P < 0.0020");

  // Coarser resolution: R = 100 -> floor 0.02.
  std::vector<double> a2(100, 2.0), b2(100, 1.0);
  const PairedTestResult r2 = paired_test_from_values(a2, b2);
  CHECK(r2.saturated);
  CHECK(r2.p_value == 0.02);
  CHECK(r2.floor_note == "P < 0.020");
}

TEST_CASE("paired_test shares resample indices across both metrics") {
  std::vector<std::string> ids;
  for (int i = 0; i < 25; ++i) ids.push_back("p" + std::to_string(i));
  const Metric ma = [](std::span<const std::size_t> rows) {
    double s = 0.0;
    for (std::size_t r : rows) s += static_cast<double>(r);
    return s;
  };
  const Metric mb = [&ma](std::span<const std::size_t> rows) {
    return ma(rows) + 2.5;  // constant shift on the same index multiset
  };
  BootstrapConfig cfg;
  cfg.n_resamples = 64;
  cfg.seed = 11;
  const PairedTestResult r = paired_test(ids, ma, mb, cfg);
  // If indices were shared, every diff is exactly -2.5.
  CHECK(r.mean_diff == -2.5);
  CHECK(r.saturated);
  CHECK(r.p_value == 2.0 / 64.0);

  // Consistency with two independent bootstrap() calls at the same seed.
  const BootstrapResult ba = bootstrap(ids, ma, cfg);
  const BootstrapResult bb = bootstrap(ids, mb, cfg);
  REQUIRE(ba.values.size() == bb.values.size());
  for (std::size_t i = 0; i < ba.values.size(); ++i) {
    CHECK(ba.values[i] - bb.values[i] == -2.5);
  }
}

TEST_CASE("bh_fdr hand case and brute-force agreement") {
  const std::vector<double> p = {0.01, 0.04, 0.03, 0.005};
  const std::vector<double> q = bh_fdr(p);
  REQUIRE(q.size() == 4);
  CHECK(q[0] == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(q[1] == doctest::Approx(0.04).epsilon(1e-15));
  CHECK(q[2] == doctest::Approx(0.04).epsilon(1e-15));
  CHECK(q[3] == doctest::Approx(0.02).epsilon(1e-15));

  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(12);
    std::vector<double> ps(m);
    for (auto& v : ps) {
      // Quantized to [0,1] with duplicates to exercise the tie order.
      v = static_cast<double>(rng.uniform_index(21)) / 20.0;
    }
    const std::vector<double> got = bh_fdr(ps);
    const std::vector<double> want = brute_bh(ps);
    for (std::size_t i = 0; i < m; ++i) {
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-15));
      CHECK(got[i] <= 1.0);
      CHECK(got[i] >= ps[i] - 1e-15);
    }
  }

  CHECK(bh_fdr(std::vector<double>{}).empty());
  CHECK(bh_fdr(std::vector<double>{0.5}) == std::vector<double>{0.5});
  CHECK_THROWS_AS(bh_fdr(std::vector<double>{1.5}), ParameterError);
}

TEST_CASE("format_p publication rules") {
  CHECK(format_p(0.0005) == "P < 0.001");
  CHECK(format_p(0.0) == "P < 0.001");
  CHECK(format_p(0.001) == "P = 0.0010");
  CHECK(format_p(0.0015) == "P = 0.0015");
  CHECK(format_p(0.034) == "P = 0.034");
  CHECK(format_p(0.0349) == "P = 0.035");
  CHECK(format_p(0.0995) == "P = 0.10");  // rounding carries the exponent
  CHECK(format_p(0.10) == "P = 0.10");
  CHECK(format_p(0.23) == "P = 0.23");
  CHECK(format_p(0.5) == "P = 0.50");
  CHECK(format_p(0.995) == "P = 1.0");
  CHECK(format_p(1.0) == "P = 1.0");
  CHECK_THROWS_AS(format_p(1.5), ParameterError);
  CHECK_THROWS_AS(format_p(-0.1), ParameterError);
}

TEST_CASE("bootstrap config validation") {
  BootstrapConfig cfg;
  cfg.n_resamples = 1;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg.n_resamples = 100;
  cfg.level = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg.level = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg.level = 0.95;
  CHECK_NOTHROW(cfg.validate());

  const Metric m = [](std::span<const std::size_t>) { return 1.0; };
  CHECK_THROWS_AS(bootstrap(std::vector<std::string>{}, m, cfg), ParameterError);
}
