#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpfb/metrics.hpp"

namespace dpfb::data {

enum class Split { kTrain, kTest };

struct CohortRow {
  std::string patient_id;
  std::string sex;        // "F" | "M"
  std::string age_group;  // "<40" | "40-70" | ">70"
  Split split = Split::kTrain;
  std::vector<double> features;
  std::vector<int> labels;  // 0/1, patient-level (identical across a
                            // patient's rows)
};

struct Cohort {
  std::vector<std::string> label_names;
  int feature_dim = 0;
  std::vector<CohortRow> rows;

  // Schema and invariant checks; includes the patient split disjointness
  // rule (no patient on both sides). Throws ParameterError.
  void validate() const;
};

struct CohortSpec {
  int n_patients = 2500;
  int min_images = 1;  // images per patient, uniform over [min, max]
  int max_images = 3;
  int feature_dim = 20;
  int label_count = 5;
  std::vector<std::string> label_names;  // defaults to label_0..label_{K-1}
  std::vector<double> sex_mix = {0.5, 0.5};        // F, M
  std::vector<double> age_mix = {0.3, 0.45, 0.25}; // <40, 40-70, >70
  // prevalence[subgroup][label], subgroup index = sex_idx * 3 + age_idx
  // with sex order (F, M) and age order (<40, 40-70, >70). Empty uses
  // default_prevalence(label_count).
  std::vector<std::vector<double>> prevalence;
  double signal_strength = 2.0;     // noise scales by 1/signal_strength
  double distribution_shift = 0.0;  // per-coordinate sign-flip probability
  std::uint64_t task_seed = 7;      // pins the generating weights
  std::uint64_t seed = 1;           // pins the patient sample

  void validate() const;
};

// Built-in prevalence matrix with a strong age gradient and a mild sex
// gradient, so subgroup metrics have non-trivial targets.
std::vector<std::vector<double>> default_prevalence(int label_count);

// Synthesizes a cohort: per patient, demographics from the mix proportions
// and labels from subgroup-conditional Bernoulli draws; per image, features
// are the label-signed sum of the task's unit weight directions plus
// isotropic Gaussian noise scaled by 1/signal_strength. Cohorts sharing
// task_seed share the generating weights; distribution_shift flips the sign
// of each weight coordinate independently to build shifted source cohorts.
Cohort generate(const CohortSpec& spec);

// Assigns whole patients to train/test. Test patient count is
// floor(test_fraction * P), clamped to [1, P-1].
Cohort patient_split(const Cohort& cohort, double test_fraction,
                     std::uint64_t seed);

// Keeps the first floor(fraction * P) patients (at least 1) of a seeded
// shuffle, so fractions drawn with one seed are nested.
Cohort subsample_fraction(const Cohort& cohort, double fraction,
                          std::uint64_t seed);

// CSV schema: patient_id,sex,age_group,split,f_0..f_{d-1},y_<label>...
// UTF-8, header mandatory, CRLF tolerated, doubles round-trip losslessly.
Cohort read_cohort(const std::string& path);
void write_cohort(const Cohort& cohort, const std::string& path);

// CSV schema: patient_id,sex,age_group,y_<label>...,s_<label>...
metrics::PredictionTable read_predictions(const std::string& path);
void write_predictions(const metrics::PredictionTable& table,
                       const std::string& path);

// Writes text (typically rendered report JSON/markdown) to a file.
void write_report(const std::string& text, const std::string& path);

// Shortest decimal form that parses back to exactly the same double.
std::string format_double(double value);

}  // namespace dpfb::data
