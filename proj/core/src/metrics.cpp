#include "dpfb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>

#include "dpfb/error.hpp"

namespace dpfb::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::vector<std::string>& sex_vocab() {
  static const std::vector<std::string> v = {"F", "M"};
  return v;
}

const std::vector<std::string>& age_vocab() {
  static const std::vector<std::string> v = {"<40", "40-70", ">70"};
  return v;
}

void check_pair_sizes(std::span<const double> scores,
                      std::span<const int> truths) {
  if (scores.size() != truths.size()) {
    throw ParameterError("scores/truths length mismatch");
  }
  if (scores.empty()) {
    throw ParameterError("empty prediction set");
  }
}

// Sort order of rows by ascending score; shared by the rank walks below.
std::vector<std::size_t> score_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

// Core Mann-Whitney numerator over integer-weighted rows. All counts are
// integers and the 0.5 tie credit is a dyadic rational, so the sums stay
// exact in double up to ~2^52 pairs; the final division is the only
// rounding step, shared with any brute-force oracle computing
// (#(pos>neg) + 0.5 #(pos=neg)) / (P*N).
double auroc_from_order(std::span<const double> scores,
                        std::span<const int> truths,
                        std::span<const std::int64_t> weights,
                        std::span<const std::size_t> order) {
  double num = 0.0;
  double neg_below = 0.0;
  double pos_total = 0.0;
  double neg_total = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double pos_here = 0.0;
    double neg_here = 0.0;
    const double s = scores[order[i]];
    while (j < order.size() && scores[order[j]] == s) {
      const double w = static_cast<double>(weights[order[j]]);
      if (truths[order[j]] == 1) {
        pos_here += w;
      } else {
        neg_here += w;
      }
      ++j;
    }
    num += pos_here * neg_below + 0.5 * pos_here * neg_here;
    neg_below += neg_here;
    pos_total += pos_here;
    neg_total += neg_here;
    i = j;
  }
  if (pos_total == 0.0 || neg_total == 0.0) {
    throw UndefinedMetricError("AUROC undefined: single-class truth");
  }
  return num / (pos_total * neg_total);
}

enum class Family { kAuroc, kSensitivity, kSpecificity, kAccuracy };

const char* family_name(Family f) {
  switch (f) {
    case Family::kAuroc: return "auroc";
    case Family::kSensitivity: return "sensitivity";
    case Family::kSpecificity: return "specificity";
    case Family::kAccuracy: return "accuracy";
  }
  return "?";
}

void gather_label(const PredictionTable& table, std::span<const std::size_t> rows,
                  std::size_t label, std::vector<double>& scores,
                  std::vector<int>& truths) {
  scores.clear();
  truths.clear();
  scores.reserve(rows.size());
  truths.reserve(rows.size());
  for (std::size_t r : rows) {
    scores.push_back(table.rows[r].scores[label]);
    truths.push_back(table.rows[r].truths[label]);
  }
}

// Label-averaged value of one metric family for one group of rows.
// Inevaluable labels are skipped and flagged; returns NaN when no label
// is evaluable for this group.
double group_label_average(const PredictionTable& table,
                           const Subgroup& group, Family family,
                           std::span<const double> thresholds,
                           const std::string& attribute,
                           std::vector<std::string>* excluded) {
  std::vector<double> scores;
  std::vector<int> truths;
  double sum = 0.0;
  int used = 0;
  for (std::size_t k = 0; k < table.label_names.size(); ++k) {
    gather_label(table, group.rows, k, scores, truths);
    std::int64_t pos = 0;
    for (int t : truths) pos += t;
    const std::int64_t neg = static_cast<std::int64_t>(truths.size()) - pos;
    const bool need_pos = (family == Family::kAuroc || family == Family::kSensitivity);
    const bool need_neg = (family == Family::kAuroc || family == Family::kSpecificity);
    if ((need_pos && pos == 0) || (need_neg && neg == 0)) {
      if (excluded != nullptr) {
        std::ostringstream flag;
        flag << attribute << "=" << group.label << " label="
             << table.label_names[k] << ": "
             << (pos == 0 ? "no positives" : "no negatives") << " ("
             << family_name(family) << ")";
        excluded->push_back(flag.str());
      }
      continue;
    }
    double value = 0.0;
    switch (family) {
      case Family::kAuroc:
        value = auroc(scores, truths);
        break;
      case Family::kSensitivity:
        value = confusion_at(scores, truths, thresholds[k]).sensitivity;
        break;
      case Family::kSpecificity:
        value = confusion_at(scores, truths, thresholds[k]).specificity;
        break;
      case Family::kAccuracy:
        value = confusion_at(scores, truths, thresholds[k]).accuracy;
        break;
    }
    sum += value;
    ++used;
  }
  return used > 0 ? sum / used : kNaN;
}

// Max pairwise absolute difference over the groups evaluable for `family`.
double disparity(const SubgroupPartition& partition, const PredictionTable& table,
                 Family family, std::span<const double> thresholds,
                 std::vector<std::string>* excluded) {
  std::vector<double> values;
  for (const Subgroup& g : partition.groups) {
    const double v = group_label_average(table, g, family, thresholds,
                                         partition.attribute, excluded);
    if (std::isfinite(v)) {
      values.push_back(v);
    }
  }
  if (values.size() < 2) {
    std::ostringstream msg;
    msg << "fewer than 2 evaluable groups for " << family_name(family)
        << " disparity on attribute " << partition.attribute;
    throw UndefinedMetricError(msg.str());
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return *hi - *lo;
}

}  // namespace

void PredictionTable::validate() const {
  if (label_names.empty()) {
    throw ParameterError("prediction table has no labels");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const PredictionRow& row = rows[i];
    if (row.patient_id.empty()) {
      throw ParameterError("row " + std::to_string(i) + ": empty patient_id");
    }
    if (std::find(sex_vocab().begin(), sex_vocab().end(), row.sex) ==
        sex_vocab().end()) {
      throw ParameterError("row " + std::to_string(i) + ": sex must be F or M");
    }
    if (std::find(age_vocab().begin(), age_vocab().end(), row.age_group) ==
        age_vocab().end()) {
      throw ParameterError("row " + std::to_string(i) +
                           ": age_group must be <40, 40-70 or >70");
    }
    if (row.truths.size() != label_names.size() ||
        row.scores.size() != label_names.size()) {
      throw ParameterError("row " + std::to_string(i) +
                           ": truth/score count does not match labels");
    }
    for (std::size_t k = 0; k < label_names.size(); ++k) {
      if (row.truths[k] != 0 && row.truths[k] != 1) {
        throw ParameterError("row " + std::to_string(i) +
                             ": truth values must be 0 or 1");
      }
      if (!(row.scores[k] >= 0.0 && row.scores[k] <= 1.0)) {
        throw ParameterError("row " + std::to_string(i) +
                             ": score outside [0, 1]");
      }
    }
  }
}

SubgroupPartition partition_by(const PredictionTable& table,
                               const std::string& attribute) {
  const std::vector<std::string>* vocab = nullptr;
  if (attribute == "sex") {
    vocab = &sex_vocab();
  } else if (attribute == "age_group") {
    vocab = &age_vocab();
  } else {
    throw ParameterError("unknown attribute: " + attribute);
  }
  SubgroupPartition part;
  part.attribute = attribute;
  for (const std::string& g : *vocab) {
    Subgroup sub;
    sub.label = g;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const std::string& v =
          attribute == "sex" ? table.rows[i].sex : table.rows[i].age_group;
      if (v == g) {
        sub.rows.push_back(i);
      }
    }
    if (!sub.rows.empty()) {
      part.groups.push_back(std::move(sub));
    }
  }
  return part;
}

double auroc(std::span<const double> scores, std::span<const int> truths) {
  check_pair_sizes(scores, truths);
  static thread_local std::vector<std::int64_t> unit_weights;
  unit_weights.assign(scores.size(), 1);
  const std::vector<std::size_t> order = score_order(scores);
  return auroc_from_order(scores, truths, unit_weights, order);
}

double auroc_weighted(std::span<const double> scores, std::span<const int> truths,
                      std::span<const std::int64_t> weights) {
  check_pair_sizes(scores, truths);
  if (weights.size() != scores.size()) {
    throw ParameterError("weights length mismatch");
  }
  const std::vector<std::size_t> order = score_order(scores);
  return auroc_from_order(scores, truths, weights, order);
}

double youden_threshold(std::span<const double> scores,
                        std::span<const int> truths) {
  check_pair_sizes(scores, truths);
  std::int64_t pos_total = 0;
  for (int t : truths) pos_total += t;
  const std::int64_t neg_total = static_cast<std::int64_t>(truths.size()) - pos_total;
  if (pos_total == 0 || neg_total == 0) {
    throw UndefinedMetricError("Youden threshold undefined: single-class truth");
  }

  // Walk candidate thresholds (distinct scores) from high to low keeping
  // running counts of scores >= threshold. J is compared as the exact
  // integer TP*N - FP*P; on ties the later (smaller) threshold wins.
  const std::vector<std::size_t> order = score_order(scores);
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t best_j = std::numeric_limits<std::int64_t>::min();
  double best_threshold = 0.0;
  std::size_t i = order.size();
  while (i > 0) {
    std::size_t j = i;
    const double s = scores[order[i - 1]];
    while (j > 0 && scores[order[j - 1]] == s) {
      if (truths[order[j - 1]] == 1) {
        ++tp;
      } else {
        ++fp;
      }
      --j;
    }
    const std::int64_t J = tp * neg_total - fp * pos_total;
    if (J >= best_j) {
      best_j = J;
      best_threshold = s;
    }
    i = j;
  }
  return best_threshold;
}

Confusion confusion_at(std::span<const double> scores,
                       std::span<const int> truths, double threshold) {
  static thread_local std::vector<std::int64_t> unit_weights;
  unit_weights.assign(scores.size(), 1);
  return confusion_weighted(scores, truths, threshold, unit_weights);
}

Confusion confusion_weighted(std::span<const double> scores,
                             std::span<const int> truths, double threshold,
                             std::span<const std::int64_t> weights) {
  check_pair_sizes(scores, truths);
  if (weights.size() != scores.size()) {
    throw ParameterError("weights length mismatch");
  }
  if (!std::isfinite(threshold)) {
    throw ParameterError("threshold must be finite");
  }
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::int64_t w = weights[i];
    const bool pred = scores[i] >= threshold;
    if (truths[i] == 1) {
      (pred ? tp : fn) += w;
    } else {
      (pred ? fp : tn) += w;
    }
  }
  const std::int64_t total = tp + fp + tn + fn;
  if (total == 0) {
    throw ParameterError("empty prediction set");
  }
  Confusion c;
  c.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
  c.sensitivity = (tp + fn) > 0
                      ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                      : kNaN;
  c.specificity = (tn + fp) > 0
                      ? static_cast<double>(tn) / static_cast<double>(tn + fp)
                      : kNaN;
  return c;
}

MetricReport evaluate(const PredictionTable& table) {
  table.validate();
  if (table.rows.empty()) {
    throw ParameterError("empty prediction table");
  }
  const std::size_t K = table.label_names.size();
  std::vector<std::size_t> all(table.rows.size());
  std::iota(all.begin(), all.end(), std::size_t{0});

  std::vector<double> thresholds(K, kNaN);
  std::vector<double> scores;
  std::vector<int> truths;
  for (std::size_t k = 0; k < K; ++k) {
    gather_label(table, all, k, scores, truths);
    std::int64_t pos = 0;
    for (int t : truths) pos += t;
    if (pos > 0 && pos < static_cast<std::int64_t>(truths.size())) {
      thresholds[k] = youden_threshold(scores, truths);
    }
  }
  return evaluate_with_thresholds(table, thresholds);
}

MetricReport evaluate_with_thresholds(const PredictionTable& table,
                                      std::span<const double> thresholds) {
  table.validate();
  if (table.rows.empty()) {
    throw ParameterError("empty prediction table");
  }
  const std::size_t K = table.label_names.size();
  if (thresholds.size() != K) {
    throw ParameterError("threshold count does not match labels");
  }
  std::vector<std::size_t> all(table.rows.size());
  std::iota(all.begin(), all.end(), std::size_t{0});

  MetricReport rep;
  rep.label_names = table.label_names;
  rep.auroc_per_label.assign(K, kNaN);
  rep.threshold_per_label.assign(thresholds.begin(), thresholds.end());
  rep.accuracy_per_label.assign(K, kNaN);
  rep.sensitivity_per_label.assign(K, kNaN);
  rep.specificity_per_label.assign(K, kNaN);
  rep.label_evaluable.assign(K, false);

  std::vector<double> scores;
  std::vector<int> truths;
  int used = 0;
  double sum_auroc = 0, sum_acc = 0, sum_sens = 0, sum_spec = 0;
  for (std::size_t k = 0; k < K; ++k) {
    gather_label(table, all, k, scores, truths);
    std::int64_t pos = 0;
    for (int t : truths) pos += t;
    const std::int64_t neg = static_cast<std::int64_t>(truths.size()) - pos;
    if (pos == 0 || neg == 0 || !std::isfinite(thresholds[k])) {
      rep.excluded_labels.push_back(table.label_names[k] +
                                    ": single-class truth or missing threshold");
      continue;
    }
    rep.label_evaluable[k] = true;
    rep.auroc_per_label[k] = auroc(scores, truths);
    const Confusion c = confusion_at(scores, truths, thresholds[k]);
    rep.accuracy_per_label[k] = c.accuracy;
    rep.sensitivity_per_label[k] = c.sensitivity;
    rep.specificity_per_label[k] = c.specificity;
    sum_auroc += rep.auroc_per_label[k];
    sum_acc += c.accuracy;
    sum_sens += c.sensitivity;
    sum_spec += c.specificity;
    ++used;
  }
  if (used == 0) {
    throw UndefinedMetricError("no evaluable label: all labels single-class");
  }
  rep.auroc = sum_auroc / used;
  rep.accuracy = sum_acc / used;
  rep.sensitivity = sum_sens / used;
  rep.specificity = sum_spec / used;
  return rep;
}

double auroc_disparity(const SubgroupPartition& partition,
                       const PredictionTable& table,
                       std::vector<std::string>* excluded) {
  return disparity(partition, table, Family::kAuroc, {}, excluded);
}

double eod(const SubgroupPartition& partition, const PredictionTable& table,
           std::span<const double> thresholds,
           std::vector<std::string>* excluded) {
  if (thresholds.size() != table.label_names.size()) {
    throw ParameterError("threshold count does not match labels");
  }
  return disparity(partition, table, Family::kSensitivity, thresholds, excluded);
}

double od(const SubgroupPartition& partition, const PredictionTable& table,
          std::span<const double> thresholds,
          std::vector<std::string>* excluded) {
  if (thresholds.size() != table.label_names.size()) {
    throw ParameterError("threshold count does not match labels");
  }
  // Specificity differences equal FPR differences (FPR = 1 - specificity).
  return disparity(partition, table, Family::kSpecificity, thresholds, excluded);
}

std::vector<double> ptd(const SubgroupPartition& partition,
                        const PredictionTable& table,
                        std::span<const double> thresholds) {
  if (thresholds.size() != table.label_names.size()) {
    throw ParameterError("threshold count does not match labels");
  }
  if (partition.groups.size() < 2) {
    throw UndefinedMetricError("PtD undefined on a singleton partition");
  }
  const std::size_t G = partition.groups.size();
  std::vector<double> acc(G, 0.0);
  std::vector<double> n(G, 0.0);
  for (std::size_t i = 0; i < G; ++i) {
    acc[i] = group_label_average(table, partition.groups[i], Family::kAccuracy,
                                 thresholds, partition.attribute, nullptr);
    n[i] = static_cast<double>(partition.groups[i].rows.size());
  }
  std::vector<double> out(G, 0.0);
  for (std::size_t i = 0; i < G; ++i) {
    double rest_weighted = 0.0;
    double rest_n = 0.0;
    for (std::size_t j = 0; j < G; ++j) {
      if (j == i) continue;
      rest_weighted += n[j] * acc[j];
      rest_n += n[j];
    }
    out[i] = acc[i] - rest_weighted / rest_n;
  }
  return out;
}

FairnessReport audit_attribute(const PredictionTable& table,
                               const std::string& attribute,
                               std::span<const double> thresholds) {
  const SubgroupPartition part = partition_by(table, attribute);
  FairnessReport rep;
  rep.attribute = attribute;
  for (const Subgroup& g : part.groups) {
    rep.group_labels.push_back(g.label);
    rep.group_sizes.push_back(static_cast<std::int64_t>(g.rows.size()));
    rep.group_auroc.push_back(group_label_average(
        table, g, Family::kAuroc, thresholds, attribute, &rep.excluded));
    rep.group_sensitivity.push_back(group_label_average(
        table, g, Family::kSensitivity, thresholds, attribute, &rep.excluded));
    rep.group_specificity.push_back(group_label_average(
        table, g, Family::kSpecificity, thresholds, attribute, &rep.excluded));
    rep.group_accuracy.push_back(group_label_average(
        table, g, Family::kAccuracy, thresholds, attribute, &rep.excluded));
  }
  rep.auroc_disparity = auroc_disparity(part, table, nullptr);
  rep.eod = eod(part, table, thresholds, nullptr);
  rep.od = od(part, table, thresholds, nullptr);
  rep.ptd = ptd(part, table, thresholds);
  return rep;
}

}  // namespace dpfb::metrics
