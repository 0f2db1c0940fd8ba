#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dpfb::metrics {

// One scored example: demographics, per-label truth, per-label score.
struct PredictionRow {
  std::string patient_id;
  std::string sex;        // "F" | "M"
  std::string age_group;  // "<40" | "40-70" | ">70"
  std::vector<int> truths;      // 0/1, K entries
  std::vector<double> scores;   // [0,1], K entries
};

struct PredictionTable {
  std::vector<std::string> label_names;
  std::vector<PredictionRow> rows;

  // Throws ParameterError on schema violations (score range, truth domain,
  // demographic vocabulary, length mismatches, empty patient ids).
  void validate() const;
};

struct Subgroup {
  std::string label;                  // e.g. "F" or "40-70"
  std::vector<std::size_t> rows;      // indices into the table
};

struct SubgroupPartition {
  std::string attribute;              // "sex" | "age_group"
  std::vector<Subgroup> groups;       // canonical order, non-empty only
};

// Groups rows by one demographic attribute. Canonical group order is
// F, M for sex and <40, 40-70, >70 for age_group; empty groups are dropped.
SubgroupPartition partition_by(const PredictionTable& table,
                               const std::string& attribute);

// Mann-Whitney AUROC, ties counted 1/2. Throws UndefinedMetricError when
// only one class is present.
double auroc(std::span<const double> scores, std::span<const int> truths);

// AUROC over a row multiset given integer row weights (weight 0 = absent).
// Equals auroc() on the expanded multiset exactly; used by bootstrap loops.
double auroc_weighted(std::span<const double> scores, std::span<const int> truths,
                      std::span<const std::int64_t> weights);

// Threshold among the distinct observed scores (predict positive iff
// score >= threshold) maximizing TPR - FPR; ties resolved toward the
// smaller threshold. Throws UndefinedMetricError on single-class truth.
double youden_threshold(std::span<const double> scores,
                        std::span<const int> truths);

struct Confusion {
  double accuracy = 0.0;
  double sensitivity = 0.0;  // NaN when no positives
  double specificity = 0.0;  // NaN when no negatives
};

// Confusion-matrix rates at a fixed threshold (prediction positive iff
// score >= threshold). Components with an empty denominator come back NaN;
// callers must exclude-and-flag rather than treat them as zeros.
Confusion confusion_at(std::span<const double> scores,
                       std::span<const int> truths, double threshold);

Confusion confusion_weighted(std::span<const double> scores,
                             std::span<const int> truths, double threshold,
                             std::span<const std::int64_t> weights);

// Whole-table utility metrics. Per-label values are NaN when the label is
// inevaluable (single-class truth); such labels are excluded from the
// label averages and listed in `excluded_labels`.
struct MetricReport {
  std::vector<std::string> label_names;
  std::vector<double> auroc_per_label;
  std::vector<double> threshold_per_label;
  std::vector<double> accuracy_per_label;
  std::vector<double> sensitivity_per_label;
  std::vector<double> specificity_per_label;
  std::vector<bool> label_evaluable;
  std::vector<std::string> excluded_labels;
  double auroc = 0.0;        // label-averaged over evaluable labels
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

// Fits whole-cohort Youden thresholds per label and evaluates everything.
MetricReport evaluate(const PredictionTable& table);

// Same, at externally supplied thresholds (one per label).
MetricReport evaluate_with_thresholds(const PredictionTable& table,
                                      std::span<const double> thresholds);

// Eq. 1: max pairwise |label-averaged subgroup AUROC difference|.
// A (group, label) pair with single-class truth is excluded from that
// group's average and flagged; fewer than 2 evaluable groups is an error.
double auroc_disparity(const SubgroupPartition& partition,
                       const PredictionTable& table,
                       std::vector<std::string>* excluded = nullptr);

// Eq. 2: max pairwise |label-averaged subgroup sensitivity difference| at
// the whole-cohort thresholds.
double eod(const SubgroupPartition& partition, const PredictionTable& table,
           std::span<const double> thresholds,
           std::vector<std::string>* excluded = nullptr);

// Eq. 4: as eod but on false positive rates (equivalently specificities).
double od(const SubgroupPartition& partition, const PredictionTable& table,
          std::span<const double> thresholds,
          std::vector<std::string>* excluded = nullptr);

// Eqs. 5-6: signed one-vs-rest accuracy gap per group, size-weighted.
// Two-group input reduces exactly to the binary form A_1 - A_2.
std::vector<double> ptd(const SubgroupPartition& partition,
                        const PredictionTable& table,
                        std::span<const double> thresholds);

// Per-attribute fairness summary with exclusion flags.
struct FairnessReport {
  std::string attribute;
  std::vector<std::string> group_labels;       // evaluated groups, in order
  std::vector<std::int64_t> group_sizes;
  std::vector<double> group_auroc;             // label-averaged, NaN if inevaluable
  std::vector<double> group_sensitivity;
  std::vector<double> group_specificity;
  std::vector<double> group_accuracy;
  double auroc_disparity = 0.0;
  double eod = 0.0;
  double od = 0.0;
  std::vector<double> ptd;                     // signed, one per group
  std::vector<std::string> excluded;           // "attr=g label=L metric" flags
};

FairnessReport audit_attribute(const PredictionTable& table,
                               const std::string& attribute,
                               std::span<const double> thresholds);

}  // namespace dpfb::metrics
