#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dpfb/accountant.hpp"
#include "dpfb/data.hpp"
#include "dpfb/metrics.hpp"
#include "dpfb/stats.hpp"
#include "dpfb/trainer.hpp"

namespace dpfb::harness {

enum class Strategy { kCold, kWarmShifted, kWarmMatched };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

struct ExperimentConfig {
  // Target cohort: generated per seed from `cohort` (patient seed re-derived
  // per experiment seed, task pinned), or loaded once from `cohort_path`
  // with its stored split reused for every seed.
  data::CohortSpec cohort;
  std::string cohort_path;
  double test_fraction = 0.2;

  std::vector<Strategy> strategies = {Strategy::kCold, Strategy::kWarmShifted,
                                      Strategy::kWarmMatched};
  // Positive floats; +inf = the non-private baseline. Each target must land
  // in a distinct EpsilonRange.
  std::vector<double> epsilon_targets = {
      0.5, 2.0, 8.0, std::numeric_limits<double>::infinity()};
  std::vector<double> data_fractions = {1.0};  // of train patients, (0, 1]
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  trainer::TrainConfig train;        // per-cell template; sigma/seed derived
  stats::BootstrapConfig bootstrap;  // resample count / level
  int pretrain_steps = 400;          // warm-start pretraining budget
  int source_patients = 0;           // 0 = cohort.n_patients
  double source_shift = 0.1;         // weight sign-flip prob for warm_shifted
  bool fairness_ci = true;           // bootstrap the disparity metrics too
  int jobs = 1;                      // parallel cell workers

  void validate() const;
};

struct MetricWithCi {
  double value = 0.0;  // point estimate on the full test split
  double mean = 0.0;   // bootstrap distribution summary
  double stddev = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool defined = false;
};

struct FairnessSummary {
  metrics::FairnessReport point;
  MetricWithCi auroc_disparity;
  MetricWithCi eod;
  MetricWithCi od;
};

struct Cell {
  Strategy strategy = Strategy::kCold;
  double epsilon_target = 0.0;  // +inf = non-private
  double data_fraction = 1.0;
  std::uint64_t seed = 0;

  bool completed = false;
  std::string error;  // first failure; empty when completed

  double sigma = 0.0;
  accountant::PrivacySpend achieved;
  std::string range;       // achieved-epsilon range label
  bool on_boundary = false;
  bool range_miss = false;  // achieved range != target range
  int train_rows = 0;
  int test_rows = 0;
  int steps = 0;
  double final_loss = 0.0;

  metrics::MetricReport point;  // test-split metrics at test-split thresholds
  MetricWithCi auroc;
  MetricWithCi accuracy;
  MetricWithCi sensitivity;
  MetricWithCi specificity;
  FairnessSummary sex;
  FairnessSummary age;
  std::vector<std::string> notes;  // non-fatal issues (e.g. CI skipped)
};

struct PairedComparison {
  std::string family;  // FDR family id, e.g. "auroc"
  std::string label;   // human-readable comparison description
  double mean_diff = 0.0;
  double p_raw = 1.0;
  double q_fdr = 1.0;
  bool saturated = false;
  std::string p_display;
  std::string q_display;
  std::string floor_note;
};

struct TrendStat {
  std::string label;
  double lhs = 0.0;
  double rhs = 0.0;
  bool held = false;
};

struct TrendVerdicts {
  bool monotone_epsilon = false;
  int monotone_held = 0;
  int monotone_total = 0;
  std::vector<TrendStat> monotone_detail;
  bool strategy_ordering = false;
  std::vector<TrendStat> ordering_detail;
  bool fraction_scaling = false;
  std::vector<TrendStat> fraction_detail;
};

struct ExperimentReport {
  // Grid echo, in configured order.
  std::vector<std::string> strategies;
  std::vector<double> epsilon_targets;
  std::vector<double> data_fractions;
  std::vector<std::uint64_t> seeds;

  std::vector<Cell> cells;  // deterministic grid order
  std::vector<PairedComparison> comparisons;
  TrendVerdicts trends;
  bool all_completed = false;
  std::string fdr_note;  // declared comparison-family grouping
};

// Runs the full (strategy x epsilon x fraction x seed) grid: per cell,
// build the init, calibrate sigma for the target, DP-train, evaluate on the
// fixed test split, bootstrap CIs, then paired tests on shared resample
// indices with BH-FDR per metric family and aggregate trend verdicts.
// Cell failures are recorded in-place; the grid always completes.
ExperimentReport run_experiment(const ExperimentConfig& config);

// format: "json" (canonical, byte-stable) or "markdown".
std::string render_report(const ExperimentReport& report,
                          const std::string& format);

}  // namespace dpfb::harness
