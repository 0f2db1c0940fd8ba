#include "dpfb/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dpfb/error.hpp"
#include "dpfb/rng.hpp"

namespace dpfb::data {

namespace {

constexpr const char* kSexVocab[2] = {"F", "M"};
constexpr const char* kAgeVocab[3] = {"<40", "40-70", ">70"};

std::vector<std::string> default_label_names(int label_count) {
  std::vector<std::string> names;
  names.reserve(label_count);
  for (int k = 0; k < label_count; ++k) {
    names.push_back("label_" + std::to_string(k));
  }
  return names;
}

void check_mix(const std::vector<double>& mix, std::size_t expected,
               const char* what) {
  if (mix.size() != expected) {
    throw ParameterError(std::string(what) + " mix has wrong length");
  }
  double sum = 0.0;
  for (double m : mix) {
    if (!(m > 0.0)) {
      throw ParameterError(std::string(what) + " mix proportions must be positive");
    }
    sum += m;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ParameterError(std::string(what) + " mix proportions must sum to 1");
  }
}

std::size_t pick_mixture(const std::vector<double>& mix, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    acc += mix[i];
    if (u < acc) {
      return i;
    }
  }
  return mix.size() - 1;
}

std::vector<std::string> unique_patients(const Cohort& cohort) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const CohortRow& row : cohort.rows) {
    if (seen.insert(row.patient_id).second) {
      out.push_back(row.patient_id);
    }
  }
  return out;
}

void shuffle_patients(std::vector<std::string>& patients, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = patients.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(patients[i - 1], patients[j]);
  }
}

[[noreturn]] void line_error(const std::string& path, std::size_t line,
                             const std::string& message) {
  std::ostringstream msg;
  msg << path << ":line " << line << ": " << message;
  throw IoError(msg.str());
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

// Reads a whole file into lines, normalizing CRLF and a missing final
// newline; drops a trailing empty line.
std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) {
    lines.pop_back();
  }
  return lines;
}

double parse_double(const std::string& field, const std::string& path,
                    std::size_t line, const char* what) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    line_error(path, line, std::string("malformed ") + what + ": '" + field + "'");
  }
  return value;
}

int parse_binary(const std::string& field, const std::string& path,
                 std::size_t line, const char* what) {
  if (field == "0") return 0;
  if (field == "1") return 1;
  line_error(path, line, std::string(what) + " must be 0 or 1, got '" + field + "'");
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) {
    throw NumericError("double formatting failed");
  }
  return std::string(buf, ptr);
}

void Cohort::validate() const {
  if (feature_dim < 1) {
    throw ParameterError("cohort feature_dim must be >= 1");
  }
  if (label_names.empty()) {
    throw ParameterError("cohort has no labels");
  }
  std::unordered_set<std::string> name_set(label_names.begin(), label_names.end());
  if (name_set.size() != label_names.size()) {
    throw ParameterError("duplicate label names");
  }
  std::unordered_map<std::string, Split> split_of;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const CohortRow& row = rows[i];
    if (row.patient_id.empty()) {
      throw ParameterError("row " + std::to_string(i) + ": empty patient_id");
    }
    if (row.sex != kSexVocab[0] && row.sex != kSexVocab[1]) {
      throw ParameterError("row " + std::to_string(i) + ": sex must be F or M");
    }
    if (row.age_group != kAgeVocab[0] && row.age_group != kAgeVocab[1] &&
        row.age_group != kAgeVocab[2]) {
      throw ParameterError("row " + std::to_string(i) +
                           ": age_group must be <40, 40-70 or >70");
    }
    if (row.features.size() != static_cast<std::size_t>(feature_dim)) {
      throw ParameterError("row " + std::to_string(i) + ": feature count mismatch");
    }
    for (double f : row.features) {
      if (!std::isfinite(f)) {
        throw ParameterError("row " + std::to_string(i) + ": non-finite feature");
      }
    }
    if (row.labels.size() != label_names.size()) {
      throw ParameterError("row " + std::to_string(i) + ": label count mismatch");
    }
    for (int y : row.labels) {
      if (y != 0 && y != 1) {
        throw ParameterError("row " + std::to_string(i) + ": labels must be 0 or 1");
      }
    }
    auto [it, inserted] = split_of.try_emplace(row.patient_id, row.split);
    if (!inserted && it->second != row.split) {
      throw ParameterError("patient " + row.patient_id +
                           " appears in both train and test splits");
    }
  }
}

void CohortSpec::validate() const {
  if (n_patients < 1) {
    throw ParameterError("n_patients must be >= 1");
  }
  if (min_images < 1 || max_images < min_images) {
    throw ParameterError("images_per_patient range must satisfy 1 <= min <= max");
  }
  if (feature_dim < 1 || label_count < 1) {
    throw ParameterError("feature_dim and label_count must be >= 1");
  }
  if (!label_names.empty() &&
      label_names.size() != static_cast<std::size_t>(label_count)) {
    throw ParameterError("label_names length must equal label_count");
  }
  check_mix(sex_mix, 2, "sex");
  check_mix(age_mix, 3, "age");
  if (!prevalence.empty()) {
    if (prevalence.size() != 6) {
      throw ParameterError("prevalence matrix must have 6 subgroup rows");
    }
    for (const auto& row : prevalence) {
      if (row.size() != static_cast<std::size_t>(label_count)) {
        throw ParameterError("prevalence row length must equal label_count");
      }
      for (double p : row) {
        if (!(p > 0.0 && p < 1.0)) {
          throw ParameterError("prevalences must lie in (0, 1)");
        }
      }
    }
  }
  if (!(signal_strength > 0.0) || !std::isfinite(signal_strength)) {
    throw ParameterError("signal_strength must be positive and finite");
  }
  if (!(distribution_shift >= 0.0 && distribution_shift <= 1.0)) {
    throw ParameterError("distribution_shift must lie in [0, 1]");
  }
}

std::vector<std::vector<double>> default_prevalence(int label_count) {
  // Strong age gradient, mild sex gradient; mirrors cohorts whose disease
  // prevalence rises steeply with age.
  const double age_factor[3] = {0.6, 1.0, 1.5};
  const double sex_factor[2] = {0.9, 1.1};
  std::vector<std::vector<double>> prev(6, std::vector<double>(label_count));
  for (int s = 0; s < 2; ++s) {
    for (int a = 0; a < 3; ++a) {
      for (int k = 0; k < label_count; ++k) {
        const double base = 0.15 + 0.05 * (k % 5);
        const double p = base * age_factor[a] * sex_factor[s];
        prev[s * 3 + a][k] = std::clamp(p, 0.02, 0.9);
      }
    }
  }
  return prev;
}

Cohort generate(const CohortSpec& spec) {
  spec.validate();
  const int d = spec.feature_dim;
  const int K = spec.label_count;
  const auto prevalence =
      spec.prevalence.empty() ? default_prevalence(K) : spec.prevalence;

  // Generating weights: one unit direction per label, scaled by 1/sqrt(K)
  // so the total signal magnitude is label-count-invariant. Pinned by
  // task_seed alone, so matched cohorts share the task.
  Rng task_rng(spec.task_seed);
  std::vector<std::vector<double>> directions(K, std::vector<double>(d));
  for (int k = 0; k < K; ++k) {
    double norm_sq = 0.0;
    for (int j = 0; j < d; ++j) {
      directions[k][j] = task_rng.normal();
      norm_sq += directions[k][j] * directions[k][j];
    }
    const double scale = 1.0 / (std::sqrt(norm_sq) * std::sqrt(static_cast<double>(K)));
    for (int j = 0; j < d; ++j) {
      directions[k][j] *= scale;
    }
  }
  if (spec.distribution_shift > 0.0) {
    Rng shift_rng(derive_seed(spec.task_seed, 1));
    for (int k = 0; k < K; ++k) {
      for (int j = 0; j < d; ++j) {
        if (shift_rng.bernoulli(spec.distribution_shift)) {
          directions[k][j] = -directions[k][j];
        }
      }
    }
  }

  Cohort cohort;
  cohort.feature_dim = d;
  cohort.label_names =
      spec.label_names.empty() ? default_label_names(K) : spec.label_names;

  const double noise_scale = 1.0 / spec.signal_strength;
  Rng rng(spec.seed);
  char pid[16];
  for (int i = 0; i < spec.n_patients; ++i) {
    std::snprintf(pid, sizeof(pid), "p%06d", i);
    const std::size_t sex_idx = pick_mixture(spec.sex_mix, rng);
    const std::size_t age_idx = pick_mixture(spec.age_mix, rng);
    const auto& prev = prevalence[sex_idx * 3 + age_idx];
    std::vector<int> labels(K);
    for (int k = 0; k < K; ++k) {
      labels[k] = rng.bernoulli(prev[k]) ? 1 : 0;
    }
    const int n_images =
        spec.min_images +
        static_cast<int>(rng.uniform_index(spec.max_images - spec.min_images + 1));
    for (int img = 0; img < n_images; ++img) {
      CohortRow row;
      row.patient_id = pid;
      row.sex = kSexVocab[sex_idx];
      row.age_group = kAgeVocab[age_idx];
      row.labels = labels;
      row.features.resize(d);
      for (int j = 0; j < d; ++j) {
        double signal = 0.0;
        for (int k = 0; k < K; ++k) {
          signal += (2 * labels[k] - 1) * directions[k][j];
        }
        row.features[j] = signal + rng.normal() * noise_scale;
      }
      cohort.rows.push_back(std::move(row));
    }
  }
  return cohort;
}

Cohort patient_split(const Cohort& cohort, double test_fraction,
                     std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ParameterError("test_fraction must lie in (0, 1)");
  }
  std::vector<std::string> patients = unique_patients(cohort);
  if (patients.size() < 2) {
    throw ParameterError("patient_split needs at least 2 patients");
  }
  shuffle_patients(patients, seed);
  const std::size_t P = patients.size();
  std::size_t n_test = static_cast<std::size_t>(
      std::floor(test_fraction * static_cast<double>(P)));
  n_test = std::clamp<std::size_t>(n_test, 1, P - 1);
  std::unordered_set<std::string> test_set(patients.begin(),
                                           patients.begin() + n_test);
  Cohort out = cohort;
  for (CohortRow& row : out.rows) {
    row.split = test_set.count(row.patient_id) ? Split::kTest : Split::kTrain;
  }
  return out;
}

Cohort subsample_fraction(const Cohort& cohort, double fraction,
                          std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ParameterError("fraction must lie in (0, 1]");
  }
  if (fraction == 1.0) {
    return cohort;
  }
  std::vector<std::string> patients = unique_patients(cohort);
  if (patients.empty()) {
    throw ParameterError("subsample_fraction on an empty cohort");
  }
  shuffle_patients(patients, seed);
  const std::size_t keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::floor(fraction * static_cast<double>(patients.size()))));
  std::unordered_set<std::string> keep_set(patients.begin(),
                                           patients.begin() + keep);
  Cohort out;
  out.label_names = cohort.label_names;
  out.feature_dim = cohort.feature_dim;
  for (const CohortRow& row : cohort.rows) {
    if (keep_set.count(row.patient_id)) {
      out.rows.push_back(row);
    }
  }
  return out;
}

void write_cohort(const Cohort& cohort, const std::string& path) {
  cohort.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  out << "patient_id,sex,age_group,split";
  for (int j = 0; j < cohort.feature_dim; ++j) {
    out << ",f_" << j;
  }
  for (const std::string& name : cohort.label_names) {
    out << ",y_" << name;
  }
  out << "\n";
  for (const CohortRow& row : cohort.rows) {
    out << row.patient_id << ',' << row.sex << ',' << row.age_group << ','
        << (row.split == Split::kTrain ? "train" : "test");
    for (double f : row.features) {
      out << ',' << format_double(f);
    }
    for (int y : row.labels) {
      out << ',' << y;
    }
    out << "\n";
  }
  if (!out) {
    throw IoError("write failed: " + path);
  }
}

Cohort read_cohort(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) {
    throw IoError(path + ": empty file, header required");
  }
  const std::vector<std::string> header = split_fields(lines[0]);
  if (header.size() < 6 || header[0] != "patient_id" || header[1] != "sex" ||
      header[2] != "age_group" || header[3] != "split") {
    line_error(path, 1, "header must start with patient_id,sex,age_group,split");
  }
  Cohort cohort;
  std::size_t col = 4;
  while (col < header.size() && header[col].rfind("f_", 0) == 0) {
    const std::string expected = "f_" + std::to_string(col - 4);
    if (header[col] != expected) {
      line_error(path, 1, "feature columns must be f_0..f_{d-1} in order");
    }
    ++col;
  }
  cohort.feature_dim = static_cast<int>(col - 4);
  while (col < header.size() && header[col].rfind("y_", 0) == 0) {
    cohort.label_names.push_back(header[col].substr(2));
    ++col;
  }
  if (col != header.size() || cohort.feature_dim < 1 ||
      cohort.label_names.empty()) {
    line_error(path, 1, "header must be f_* columns followed by y_* columns");
  }

  const std::size_t expected_fields =
      4 + cohort.feature_dim + cohort.label_names.size();
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    const std::vector<std::string> f = split_fields(lines[li]);
    if (f.size() != expected_fields) {
      line_error(path, line_no,
                 "expected " + std::to_string(expected_fields) + " fields, got " +
                     std::to_string(f.size()));
    }
    CohortRow row;
    row.patient_id = f[0];
    row.sex = f[1];
    row.age_group = f[2];
    if (f[3] == "train") {
      row.split = Split::kTrain;
    } else if (f[3] == "test") {
      row.split = Split::kTest;
    } else {
      line_error(path, line_no, "split must be train or test, got '" + f[3] + "'");
    }
    for (int j = 0; j < cohort.feature_dim; ++j) {
      row.features.push_back(parse_double(f[4 + j], path, line_no, "feature"));
    }
    for (std::size_t k = 0; k < cohort.label_names.size(); ++k) {
      row.labels.push_back(
          parse_binary(f[4 + cohort.feature_dim + k], path, line_no, "label"));
    }
    cohort.rows.push_back(std::move(row));
  }
  try {
    cohort.validate();
  } catch (const ParameterError& e) {
    throw IoError(path + ": " + e.what());
  }
  return cohort;
}

void write_predictions(const metrics::PredictionTable& table,
                       const std::string& path) {
  table.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  out << "patient_id,sex,age_group";
  for (const std::string& name : table.label_names) {
    out << ",y_" << name;
  }
  for (const std::string& name : table.label_names) {
    out << ",s_" << name;
  }
  out << "\n";
  for (const metrics::PredictionRow& row : table.rows) {
    out << row.patient_id << ',' << row.sex << ',' << row.age_group;
    for (int y : row.truths) {
      out << ',' << y;
    }
    for (double s : row.scores) {
      out << ',' << format_double(s);
    }
    out << "\n";
  }
  if (!out) {
    throw IoError("write failed: " + path);
  }
}

metrics::PredictionTable read_predictions(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) {
    throw IoError(path + ": empty file, header required");
  }
  const std::vector<std::string> header = split_fields(lines[0]);
  if (header.size() < 5 || header[0] != "patient_id" || header[1] != "sex" ||
      header[2] != "age_group") {
    line_error(path, 1, "header must start with patient_id,sex,age_group");
  }
  metrics::PredictionTable table;
  std::size_t col = 3;
  while (col < header.size() && header[col].rfind("y_", 0) == 0) {
    table.label_names.push_back(header[col].substr(2));
    ++col;
  }
  const std::size_t K = table.label_names.size();
  if (K == 0) {
    line_error(path, 1, "no y_* truth columns");
  }
  for (std::size_t k = 0; k < K; ++k, ++col) {
    if (col >= header.size() || header[col] != "s_" + table.label_names[k]) {
      line_error(path, 1, "s_* columns must mirror y_* columns in order");
    }
  }
  if (col != header.size()) {
    line_error(path, 1, "unexpected trailing columns");
  }

  const std::size_t expected_fields = 3 + 2 * K;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    const std::vector<std::string> f = split_fields(lines[li]);
    if (f.size() != expected_fields) {
      line_error(path, line_no,
                 "expected " + std::to_string(expected_fields) + " fields, got " +
                     std::to_string(f.size()));
    }
    metrics::PredictionRow row;
    row.patient_id = f[0];
    row.sex = f[1];
    row.age_group = f[2];
    for (std::size_t k = 0; k < K; ++k) {
      row.truths.push_back(parse_binary(f[3 + k], path, line_no, "truth"));
    }
    for (std::size_t k = 0; k < K; ++k) {
      const double s = parse_double(f[3 + K + k], path, line_no, "score");
      if (!(s >= 0.0 && s <= 1.0)) {
        line_error(path, line_no,
                   "score outside [0, 1]: " + f[3 + K + k] + " (column s_" +
                       table.label_names[k] + ")");
      }
      row.scores.push_back(s);
    }
    table.rows.push_back(std::move(row));
  }
  try {
    table.validate();
  } catch (const ParameterError& e) {
    throw IoError(path + ": " + e.what());
  }
  return table;
}

void write_report(const std::string& text, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  out << text;
  if (!out) {
    throw IoError("write failed: " + path);
  }
}

}  // namespace dpfb::data
