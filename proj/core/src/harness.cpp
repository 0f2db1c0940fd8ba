#include "dpfb/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include "json.hpp"

#include "dpfb/error.hpp"
#include "dpfb/rng.hpp"

namespace dpfb::harness {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Seed streams. Patient material derives from the cohort seed so the task
// stays pinned while the sample varies; run-level streams derive from the
// experiment seed so every cell is a pure function of (config, seed).
constexpr std::uint64_t kSplitStream = 2;
constexpr std::uint64_t kSubsampleStream = 3;
constexpr std::uint64_t kMatchedSourceStream = 5;
constexpr std::uint64_t kShiftedSourceStream = 6;
constexpr std::uint64_t kColdInitStream = 10;
constexpr std::uint64_t kMatchedPretrainStream = 11;
constexpr std::uint64_t kShiftedPretrainStream = 12;
// Training stream = base + eps_idx * 64 + frac_idx: identical across
// strategies, so cells at the same grid point share batches and noise
// (common random numbers).
constexpr std::uint64_t kTrainStreamBase = 500;
constexpr std::uint64_t kBootstrapStream = 1000;

std::string eps_label(double eps) {
  return std::isinf(eps) ? "inf" : data::format_double(eps);
}

// ---------------------------------------------------------------------------
// Shared per-seed artifacts, built sequentially before the cell grid runs.

struct FractionEntry {
  bool ok = false;
  std::string error;
  data::Cohort train;  // subsampled train-split rows only
  int rows = 0;
  std::vector<double> class_weights;
};

struct WarmEntry {
  bool ok = false;
  std::string error;
  trainer::Model model;
};

struct TestView {
  metrics::PredictionTable base;          // scores zeroed, filled per cell
  std::vector<std::size_t> cohort_rows;   // test rows, cohort order
  std::vector<std::string> patient_ids;   // one per test row
};

struct SeedContext {
  bool ok = false;
  std::string error;
  data::Cohort cohort;  // split target cohort
  TestView test;
  std::vector<FractionEntry> fractions;  // config order
  std::map<Strategy, WarmEntry> warm;
};

struct SigmaEntry {
  bool ok = false;
  std::string error;
  double sigma = 0.0;
};

trainer::Model make_warm(const ExperimentConfig& cfg, const data::Cohort& target,
                         std::uint64_t sd, Strategy strat) {
  data::CohortSpec src = cfg.cohort;
  if (cfg.source_patients > 0) {
    src.n_patients = cfg.source_patients;
  }
  if (src.feature_dim != target.feature_dim ||
      src.label_count != static_cast<int>(target.label_names.size())) {
    throw ParameterError(
        "source cohort spec dimensions do not match the target cohort");
  }
  const bool shifted = (strat == Strategy::kWarmShifted);
  src.distribution_shift = shifted ? cfg.source_shift : 0.0;
  src.seed = derive_seed(derive_seed(cfg.cohort.seed, sd),
                         shifted ? kShiftedSourceStream : kMatchedSourceStream);
  const data::Cohort source = data::generate(src);

  trainer::TrainConfig pc = cfg.train;
  pc.max_steps = cfg.pretrain_steps;
  pc.seed = derive_seed(sd, shifted ? kShiftedPretrainStream
                                    : kMatchedPretrainStream);
  if (pc.class_weights.empty()) {
    pc.class_weights = trainer::inverse_prevalence_weights(source);
  }
  return trainer::warm_start(source, pc);
}

SeedContext build_seed_context(const ExperimentConfig& cfg,
                               const data::Cohort* loaded, std::uint64_t sd) {
  SeedContext ctx;
  try {
    if (loaded != nullptr) {
      ctx.cohort = *loaded;
    } else {
      data::CohortSpec spec = cfg.cohort;
      spec.seed = derive_seed(cfg.cohort.seed, sd);
      ctx.cohort = data::patient_split(data::generate(spec), cfg.test_fraction,
                                       derive_seed(sd, kSplitStream));
    }

    const std::size_t K = ctx.cohort.label_names.size();
    data::Cohort train_all;
    train_all.label_names = ctx.cohort.label_names;
    train_all.feature_dim = ctx.cohort.feature_dim;
    ctx.test.base.label_names = ctx.cohort.label_names;
    for (std::size_t i = 0; i < ctx.cohort.rows.size(); ++i) {
      const data::CohortRow& row = ctx.cohort.rows[i];
      if (row.split == data::Split::kTrain) {
        train_all.rows.push_back(row);
      } else {
        ctx.test.cohort_rows.push_back(i);
        ctx.test.patient_ids.push_back(row.patient_id);
        metrics::PredictionRow pr;
        pr.patient_id = row.patient_id;
        pr.sex = row.sex;
        pr.age_group = row.age_group;
        pr.truths = row.labels;
        pr.scores.assign(K, 0.0);
        ctx.test.base.rows.push_back(std::move(pr));
      }
    }
    if (train_all.rows.empty()) {
      throw ParameterError("cohort has no train rows");
    }
    if (ctx.test.base.rows.empty()) {
      throw ParameterError("cohort has no test rows");
    }

    for (double f : cfg.data_fractions) {
      FractionEntry fe;
      try {
        fe.train = data::subsample_fraction(train_all, f,
                                            derive_seed(sd, kSubsampleStream));
        fe.rows = static_cast<int>(fe.train.rows.size());
        fe.class_weights = cfg.train.class_weights.empty()
                               ? trainer::inverse_prevalence_weights(fe.train)
                               : cfg.train.class_weights;
        fe.ok = true;
      } catch (const std::exception& e) {
        fe.error = e.what();
      }
      ctx.fractions.push_back(std::move(fe));
    }

    for (Strategy s : cfg.strategies) {
      if (s == Strategy::kCold) {
        continue;
      }
      WarmEntry we;
      try {
        we.model = make_warm(cfg, ctx.cohort, sd, s);
        we.ok = true;
      } catch (const std::exception& e) {
        we.error = e.what();
      }
      ctx.warm.emplace(s, std::move(we));
    }
    ctx.ok = true;
  } catch (const std::exception& e) {
    ctx.error = e.what();
  }
  return ctx;
}

// ---------------------------------------------------------------------------
// Per-cell bootstrap: one resample loop feeds every CI of the cell, all on
// the same index sets (seed = derive_seed(experiment seed, bootstrap
// stream), resample r = derive_seed(that, r), exactly as stats::bootstrap).

metrics::SubgroupPartition resample_partition(
    const metrics::PredictionTable& table, std::span<const std::size_t> rows,
    const std::string& attribute) {
  static const std::vector<std::string> kSex = {"F", "M"};
  static const std::vector<std::string> kAge = {"<40", "40-70", ">70"};
  const std::vector<std::string>& vocab = (attribute == "sex") ? kSex : kAge;

  metrics::SubgroupPartition part;
  part.attribute = attribute;
  std::vector<std::vector<std::size_t>> buckets(vocab.size());
  for (std::size_t r : rows) {
    const std::string& v = (attribute == "sex") ? table.rows[r].sex
                                                : table.rows[r].age_group;
    for (std::size_t g = 0; g < vocab.size(); ++g) {
      if (v == vocab[g]) {
        buckets[g].push_back(r);
        break;
      }
    }
  }
  for (std::size_t g = 0; g < vocab.size(); ++g) {
    if (!buckets[g].empty()) {
      part.groups.push_back({vocab[g], std::move(buckets[g])});
    }
  }
  return part;
}

// Mirrors the stats::bootstrap summary (n-1 stddev, percentile CI, 5%
// undefined tolerance); aligned holds NaN where the resample was undefined.
MetricWithCi summarize(double point, const std::vector<double>& aligned,
                       const stats::BootstrapConfig& bc,
                       std::vector<std::string>& notes,
                       const std::string& name) {
  MetricWithCi m;
  m.value = point;
  std::vector<double> defined;
  defined.reserve(aligned.size());
  for (double v : aligned) {
    if (std::isfinite(v)) {
      defined.push_back(v);
    }
  }
  const int R = static_cast<int>(aligned.size());
  const int undef = R - static_cast<int>(defined.size());
  if (undef * 20 > R || defined.size() < 2) {
    notes.push_back(name + " ci skipped: undefined on " +
                    std::to_string(undef) + "/" + std::to_string(R) +
                    " resamples");
    return m;
  }
  double sum = 0.0;
  for (double v : defined) sum += v;
  m.mean = sum / static_cast<double>(defined.size());
  double ss = 0.0;
  for (double v : defined) ss += (v - m.mean) * (v - m.mean);
  m.stddev = std::sqrt(ss / static_cast<double>(defined.size() - 1));
  std::sort(defined.begin(), defined.end());
  const double tail = (1.0 - bc.level) / 2.0;
  m.ci_low = stats::percentile_sorted(defined, tail);
  m.ci_high = stats::percentile_sorted(defined, 1.0 - tail);
  m.defined = true;
  return m;
}

void bootstrap_cell(const ExperimentConfig& cfg, const SeedContext& ctx,
                    const metrics::PredictionTable& table, Cell& cell,
                    std::vector<double>& aligned_auroc) {
  const int R = cfg.bootstrap.n_resamples;
  const std::uint64_t bseed = derive_seed(cell.seed, kBootstrapStream);
  const std::span<const double> th(cell.point.threshold_per_label);

  std::vector<std::size_t> evaluable;
  for (std::size_t k = 0; k < cell.point.label_evaluable.size(); ++k) {
    if (cell.point.label_evaluable[k]) {
      evaluable.push_back(k);
    }
  }

  std::vector<double> a_auroc(R, kNaN), a_acc(R, kNaN), a_sens(R, kNaN),
      a_spec(R, kNaN);
  // sex disparity / eod / od, then the same for age_group.
  std::vector<std::vector<double>> fair(6, std::vector<double>(R, kNaN));

  std::vector<double> scores;
  std::vector<int> truths;
  for (int r = 0; r < R; ++r) {
    Rng rng(derive_seed(bseed, static_cast<std::uint64_t>(r)));
    const std::vector<std::size_t> rows =
        stats::patient_resample(ctx.test.patient_ids, rng);

    double s_auroc = 0, s_acc = 0, s_sens = 0, s_spec = 0;
    int n_auroc = 0, n_acc = 0, n_sens = 0, n_spec = 0;
    for (std::size_t k : evaluable) {
      scores.clear();
      truths.clear();
      for (std::size_t i : rows) {
        scores.push_back(table.rows[i].scores[k]);
        truths.push_back(table.rows[i].truths[k]);
      }
      std::int64_t pos = 0;
      for (int t : truths) pos += t;
      const std::int64_t neg = static_cast<std::int64_t>(truths.size()) - pos;
      if (pos > 0 && neg > 0) {
        s_auroc += metrics::auroc(scores, truths);
        ++n_auroc;
      }
      const metrics::Confusion c = metrics::confusion_at(scores, truths, th[k]);
      s_acc += c.accuracy;
      ++n_acc;
      if (std::isfinite(c.sensitivity)) {
        s_sens += c.sensitivity;
        ++n_sens;
      }
      if (std::isfinite(c.specificity)) {
        s_spec += c.specificity;
        ++n_spec;
      }
    }
    if (n_auroc > 0) a_auroc[r] = s_auroc / n_auroc;
    if (n_acc > 0) a_acc[r] = s_acc / n_acc;
    if (n_sens > 0) a_sens[r] = s_sens / n_sens;
    if (n_spec > 0) a_spec[r] = s_spec / n_spec;

    if (cfg.fairness_ci) {
      const std::array<std::string, 2> attrs = {"sex", "age_group"};
      for (std::size_t a = 0; a < attrs.size(); ++a) {
        const metrics::SubgroupPartition part =
            resample_partition(table, rows, attrs[a]);
        try {
          fair[a * 3 + 0][r] = metrics::auroc_disparity(part, table, nullptr);
        } catch (const UndefinedMetricError&) {
        }
        try {
          fair[a * 3 + 1][r] = metrics::eod(part, table, th, nullptr);
        } catch (const UndefinedMetricError&) {
        }
        try {
          fair[a * 3 + 2][r] = metrics::od(part, table, th, nullptr);
        } catch (const UndefinedMetricError&) {
        }
      }
    }
  }

  cell.auroc = summarize(cell.point.auroc, a_auroc, cfg.bootstrap, cell.notes,
                         "auroc");
  cell.accuracy = summarize(cell.point.accuracy, a_acc, cfg.bootstrap,
                            cell.notes, "accuracy");
  cell.sensitivity = summarize(cell.point.sensitivity, a_sens, cfg.bootstrap,
                               cell.notes, "sensitivity");
  cell.specificity = summarize(cell.point.specificity, a_spec, cfg.bootstrap,
                               cell.notes, "specificity");
  FairnessSummary* fs[2] = {&cell.sex, &cell.age};
  for (std::size_t a = 0; a < 2; ++a) {
    const std::string prefix = (a == 0) ? "sex " : "age ";
    if (cfg.fairness_ci) {
      fs[a]->auroc_disparity =
          summarize(fs[a]->point.auroc_disparity, fair[a * 3 + 0],
                    cfg.bootstrap, cell.notes, prefix + "auroc_disparity");
      fs[a]->eod = summarize(fs[a]->point.eod, fair[a * 3 + 1], cfg.bootstrap,
                             cell.notes, prefix + "eod");
      fs[a]->od = summarize(fs[a]->point.od, fair[a * 3 + 2], cfg.bootstrap,
                            cell.notes, prefix + "od");
    } else {
      fs[a]->auroc_disparity.value = fs[a]->point.auroc_disparity;
      fs[a]->eod.value = fs[a]->point.eod;
      fs[a]->od.value = fs[a]->point.od;
    }
  }
  aligned_auroc = std::move(a_auroc);
}

// ---------------------------------------------------------------------------

void fill_cell(const ExperimentConfig& cfg, const SeedContext& ctx,
               const SigmaEntry* sigma, std::size_t e_idx, std::size_t f_idx,
               Cell& cell, std::vector<double>& aligned_auroc) {
  if (!ctx.ok) {
    cell.error = ctx.error;
    return;
  }
  const FractionEntry& fe = ctx.fractions[f_idx];
  if (!fe.ok) {
    cell.error = fe.error;
    return;
  }
  const bool nonprivate = std::isinf(cell.epsilon_target);
  if (!nonprivate) {
    if (!sigma->ok) {
      cell.error = sigma->error;
      return;
    }
    cell.sigma = sigma->sigma;
  }

  trainer::TrainConfig tc = cfg.train;
  tc.class_weights = fe.class_weights;
  tc.seed = derive_seed(cell.seed, kTrainStreamBase + e_idx * 64 + f_idx);
  if (nonprivate) {
    tc.noise_multiplier = 0.0;
    tc.clip_norm = kInf;
  } else {
    tc.noise_multiplier = cell.sigma;
  }

  try {
    trainer::Model init;
    if (cell.strategy == Strategy::kCold) {
      const trainer::ModelShape shape{
          ctx.cohort.feature_dim, tc.hidden_dim,
          static_cast<int>(ctx.cohort.label_names.size())};
      init = trainer::cold_init(shape, derive_seed(cell.seed, kColdInitStream));
    } else {
      const WarmEntry& we = ctx.warm.at(cell.strategy);
      if (!we.ok) {
        cell.error = we.error;
        return;
      }
      init = we.model;
    }

    auto [model, trace] = trainer::train(fe.train, tc, init);
    cell.steps = trace.steps;
    cell.final_loss = trace.records.empty() ? kNaN : trace.records.back().loss;
    cell.achieved = trace.achieved;
    const accountant::RangeClassification achieved_range =
        accountant::classify_epsilon_range(trace.achieved.epsilon);
    cell.range = accountant::to_string(achieved_range.range);
    cell.on_boundary = achieved_range.on_boundary;
    const accountant::RangeClassification target_range =
        accountant::classify_epsilon_range(cell.epsilon_target);
    cell.range_miss = (achieved_range.range != target_range.range);
    cell.train_rows = fe.rows;
    cell.test_rows = static_cast<int>(ctx.test.base.rows.size());

    metrics::PredictionTable table = ctx.test.base;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      table.rows[i].scores = trainer::forward(
          model, ctx.cohort.rows[ctx.test.cohort_rows[i]].features);
    }
    cell.point = metrics::evaluate(table);
    const std::span<const double> th(cell.point.threshold_per_label);
    cell.sex.point = metrics::audit_attribute(table, "sex", th);
    cell.age.point = metrics::audit_attribute(table, "age_group", th);

    bootstrap_cell(cfg, ctx, table, cell, aligned_auroc);
    cell.completed = true;
  } catch (const std::exception& e) {
    cell.completed = false;
    cell.error = e.what();
  }
}

// ---------------------------------------------------------------------------
// Paired comparisons and trend verdicts over the finished grid.

struct GridIndex {
  std::size_t S, E, F, D;
  std::size_t operator()(std::size_t s, std::size_t e, std::size_t f,
                         std::size_t d) const {
    return ((s * E + e) * F + f) * D + d;
  }
};

void add_comparison(std::vector<PairedComparison>& out,
                    const std::vector<Cell>& cells,
                    const std::vector<std::vector<double>>& aligned,
                    std::size_t a, std::size_t b, const std::string& label) {
  if (!cells[a].completed || !cells[b].completed) {
    return;
  }
  const std::vector<double>& va = aligned[a];
  const std::vector<double>& vb = aligned[b];
  if (va.size() != vb.size() || va.empty()) {
    return;
  }
  std::vector<double> pa, pb;
  pa.reserve(va.size());
  pb.reserve(vb.size());
  for (std::size_t r = 0; r < va.size(); ++r) {
    if (std::isfinite(va[r]) && std::isfinite(vb[r])) {
      pa.push_back(va[r]);
      pb.push_back(vb[r]);
    }
  }
  const std::size_t dropped = va.size() - pa.size();
  if (dropped * 20 > va.size() || pa.size() < 2) {
    return;  // mirrors the paired-test undefined tolerance
  }
  const stats::PairedTestResult t = stats::paired_test_from_values(pa, pb);
  PairedComparison c;
  c.family = "auroc";
  c.label = label;
  c.mean_diff = t.mean_diff;
  c.p_raw = t.p_value;
  c.saturated = t.saturated;
  c.p_display = t.p_display;
  c.floor_note = t.floor_note;
  out.push_back(std::move(c));
}

std::string cmp_suffix(double eps, double frac, std::uint64_t sd) {
  return " eps=" + eps_label(eps) + " f=" + data::format_double(frac) +
         " seed=" + std::to_string(sd);
}

void build_comparisons(const ExperimentConfig& cfg, ExperimentReport& rep,
                       const std::vector<std::vector<double>>& aligned,
                       const GridIndex& at) {
  const auto& eps = cfg.epsilon_targets;
  std::optional<std::size_t> inf_idx;
  for (std::size_t e = 0; e < eps.size(); ++e) {
    if (std::isinf(eps[e])) {
      inf_idx = e;
    }
  }

  // DP conditions against the matching non-private baseline.
  if (inf_idx.has_value()) {
    for (std::size_t d = 0; d < cfg.seeds.size(); ++d) {
      for (std::size_t f = 0; f < cfg.data_fractions.size(); ++f) {
        for (std::size_t e = 0; e < eps.size(); ++e) {
          if (std::isinf(eps[e])) {
            continue;
          }
          for (std::size_t s = 0; s < cfg.strategies.size(); ++s) {
            add_comparison(rep.comparisons, rep.cells, aligned,
                           at(s, e, f, d), at(s, *inf_idx, f, d),
                           "auroc: " + to_string(cfg.strategies[s]) +
                               cmp_suffix(eps[e], cfg.data_fractions[f],
                                          cfg.seeds[d]) +
                               " vs nonprivate");
          }
        }
      }
    }
  }

  // Strategy pairs at every grid point, warm-over-cold direction first.
  const std::array<std::pair<Strategy, Strategy>, 3> pairs = {
      std::make_pair(Strategy::kWarmMatched, Strategy::kWarmShifted),
      std::make_pair(Strategy::kWarmMatched, Strategy::kCold),
      std::make_pair(Strategy::kWarmShifted, Strategy::kCold)};
  std::map<Strategy, std::size_t> s_idx;
  for (std::size_t s = 0; s < cfg.strategies.size(); ++s) {
    s_idx.emplace(cfg.strategies[s], s);
  }
  for (std::size_t d = 0; d < cfg.seeds.size(); ++d) {
    for (std::size_t f = 0; f < cfg.data_fractions.size(); ++f) {
      for (std::size_t e = 0; e < eps.size(); ++e) {
        for (const auto& [hi, lo] : pairs) {
          const auto ih = s_idx.find(hi);
          const auto il = s_idx.find(lo);
          if (ih == s_idx.end() || il == s_idx.end()) {
            continue;
          }
          add_comparison(rep.comparisons, rep.cells, aligned,
                         at(ih->second, e, f, d), at(il->second, e, f, d),
                         "auroc: " + to_string(hi) + " vs " + to_string(lo) +
                             cmp_suffix(eps[e], cfg.data_fractions[f],
                                        cfg.seeds[d]));
        }
      }
    }
  }

  std::vector<double> p;
  p.reserve(rep.comparisons.size());
  for (const PairedComparison& c : rep.comparisons) {
    p.push_back(c.p_raw);
  }
  const std::vector<double> q = stats::bh_fdr(p);
  for (std::size_t i = 0; i < q.size(); ++i) {
    rep.comparisons[i].q_fdr = q[i];
    rep.comparisons[i].q_display = stats::format_p(q[i]);
  }
}

void build_trends(const ExperimentConfig& cfg, ExperimentReport& rep,
                  const GridIndex& at) {
  const std::size_t D = cfg.seeds.size();
  // Seed-mean point AUROC; nullopt when any contributing cell failed.
  auto group_mean = [&](std::size_t s, std::size_t e,
                        std::size_t f) -> std::optional<double> {
    double sum = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const Cell& c = rep.cells[at(s, e, f, d)];
      if (!c.completed) {
        return std::nullopt;
      }
      sum += c.point.auroc;
    }
    return sum / static_cast<double>(D);
  };
  auto stat = [](std::string label, std::optional<double> lhs,
                 std::optional<double> rhs, bool strict) {
    TrendStat st;
    st.label = std::move(label);
    st.lhs = lhs.value_or(kNaN);
    st.rhs = rhs.value_or(kNaN);
    st.held = lhs.has_value() && rhs.has_value() &&
              (strict ? (st.lhs > st.rhs) : (st.lhs <= st.rhs));
    return st;
  };

  std::vector<std::size_t> eorder(cfg.epsilon_targets.size());
  std::iota(eorder.begin(), eorder.end(), std::size_t{0});
  std::sort(eorder.begin(), eorder.end(), [&](std::size_t a, std::size_t b) {
    return cfg.epsilon_targets[a] < cfg.epsilon_targets[b];
  });

  // Utility must not decrease as the budget loosens.
  TrendVerdicts& tv = rep.trends;
  for (std::size_t s = 0; s < cfg.strategies.size(); ++s) {
    for (std::size_t f = 0; f < cfg.data_fractions.size(); ++f) {
      for (std::size_t i = 0; i + 1 < eorder.size(); ++i) {
        const std::size_t lo = eorder[i];
        const std::size_t hi = eorder[i + 1];
        TrendStat st = stat(
            to_string(cfg.strategies[s]) + " f=" +
                data::format_double(cfg.data_fractions[f]) + ": eps " +
                eps_label(cfg.epsilon_targets[lo]) + " -> " +
                eps_label(cfg.epsilon_targets[hi]),
            group_mean(s, lo, f), group_mean(s, hi, f), /*strict=*/false);
        ++tv.monotone_total;
        if (st.held) {
          ++tv.monotone_held;
        }
        tv.monotone_detail.push_back(std::move(st));
      }
    }
  }
  // The published-rate analog: at least 8 of 9 transitions hold.
  tv.monotone_epsilon =
      (tv.monotone_total == 0) || (tv.monotone_held * 9 >= tv.monotone_total * 8);

  // Matched pretraining beats shifted beats cold at every finite budget.
  std::map<Strategy, std::size_t> s_idx;
  for (std::size_t s = 0; s < cfg.strategies.size(); ++s) {
    s_idx.emplace(cfg.strategies[s], s);
  }
  const std::array<std::pair<Strategy, Strategy>, 3> pairs = {
      std::make_pair(Strategy::kWarmMatched, Strategy::kWarmShifted),
      std::make_pair(Strategy::kWarmMatched, Strategy::kCold),
      std::make_pair(Strategy::kWarmShifted, Strategy::kCold)};
  bool ordering = true;
  for (std::size_t e = 0; e < cfg.epsilon_targets.size(); ++e) {
    if (std::isinf(cfg.epsilon_targets[e])) {
      continue;
    }
    for (std::size_t f = 0; f < cfg.data_fractions.size(); ++f) {
      for (const auto& [hi, lo] : pairs) {
        const auto ih = s_idx.find(hi);
        const auto il = s_idx.find(lo);
        if (ih == s_idx.end() || il == s_idx.end()) {
          continue;
        }
        TrendStat st = stat(
            "eps=" + eps_label(cfg.epsilon_targets[e]) + " f=" +
                data::format_double(cfg.data_fractions[f]) + ": " +
                to_string(hi) + " > " + to_string(lo),
            group_mean(ih->second, e, f), group_mean(il->second, e, f),
            /*strict=*/true);
        ordering = ordering && st.held;
        tv.ordering_detail.push_back(std::move(st));
      }
    }
  }
  tv.strategy_ordering = ordering;

  // More data never hurts at a fixed budget, and cold starts gain more
  // from extra data than matched warm starts.
  bool scaling = true;
  if (cfg.data_fractions.size() >= 2) {
    std::vector<std::size_t> forder(cfg.data_fractions.size());
    std::iota(forder.begin(), forder.end(), std::size_t{0});
    std::sort(forder.begin(), forder.end(), [&](std::size_t a, std::size_t b) {
      return cfg.data_fractions[a] < cfg.data_fractions[b];
    });
    for (std::size_t s = 0; s < cfg.strategies.size(); ++s) {
      for (std::size_t e = 0; e < cfg.epsilon_targets.size(); ++e) {
        if (std::isinf(cfg.epsilon_targets[e])) {
          continue;
        }
        for (std::size_t i = 0; i + 1 < forder.size(); ++i) {
          TrendStat st = stat(
              to_string(cfg.strategies[s]) + " eps=" +
                  eps_label(cfg.epsilon_targets[e]) + ": f " +
                  data::format_double(cfg.data_fractions[forder[i]]) + " -> " +
                  data::format_double(cfg.data_fractions[forder[i + 1]]),
              group_mean(s, e, forder[i]), group_mean(s, e, forder[i + 1]),
              /*strict=*/false);
          scaling = scaling && st.held;
          tv.fraction_detail.push_back(std::move(st));
        }
      }
    }
    const auto icold = s_idx.find(Strategy::kCold);
    const auto iwm = s_idx.find(Strategy::kWarmMatched);
    if (icold != s_idx.end() && iwm != s_idx.end()) {
      for (std::size_t e = 0; e < cfg.epsilon_targets.size(); ++e) {
        if (std::isinf(cfg.epsilon_targets[e])) {
          continue;
        }
        auto gap = [&](std::size_t s) -> std::optional<double> {
          const auto lo = group_mean(s, e, forder.front());
          const auto hi = group_mean(s, e, forder.back());
          if (!lo.has_value() || !hi.has_value()) {
            return std::nullopt;
          }
          return *hi - *lo;
        };
        TrendStat st = stat("eps=" + eps_label(cfg.epsilon_targets[e]) +
                                ": cold fraction gap > warm_matched gap",
                            gap(icold->second), gap(iwm->second),
                            /*strict=*/true);
        scaling = scaling && st.held;
        tv.fraction_detail.push_back(std::move(st));
      }
    }
  }
  tv.fraction_scaling = scaling;
}

// ---------------------------------------------------------------------------
// Rendering. JSON is the canonical byte-stable form; infinities are encoded
// as the string "inf" and undefined values as null.

ordered_json num_json(double v) {
  if (std::isnan(v)) {
    return nullptr;
  }
  if (std::isinf(v)) {
    return v > 0 ? "inf" : "-inf";
  }
  return v;
}

ordered_json arr_json(const std::vector<double>& v) {
  ordered_json a = ordered_json::array();
  for (double x : v) {
    a.push_back(num_json(x));
  }
  return a;
}

ordered_json ci_json(const MetricWithCi& m) {
  ordered_json j;
  j["value"] = num_json(m.value);
  j["defined"] = m.defined;
  j["mean"] = m.defined ? num_json(m.mean) : ordered_json(nullptr);
  j["stddev"] = m.defined ? num_json(m.stddev) : ordered_json(nullptr);
  j["ci"] = m.defined
                ? ordered_json::array({num_json(m.ci_low), num_json(m.ci_high)})
                : ordered_json(nullptr);
  return j;
}

ordered_json fairness_json(const FairnessSummary& f) {
  ordered_json j;
  j["attribute"] = f.point.attribute;
  j["groups"] = f.point.group_labels;
  j["sizes"] = f.point.group_sizes;
  j["group_auroc"] = arr_json(f.point.group_auroc);
  j["group_sensitivity"] = arr_json(f.point.group_sensitivity);
  j["group_specificity"] = arr_json(f.point.group_specificity);
  j["group_accuracy"] = arr_json(f.point.group_accuracy);
  j["ptd"] = arr_json(f.point.ptd);
  j["auroc_disparity"] = ci_json(f.auroc_disparity);
  j["eod"] = ci_json(f.eod);
  j["od"] = ci_json(f.od);
  j["excluded"] = f.point.excluded;
  return j;
}

ordered_json cell_json(const Cell& c) {
  ordered_json j;
  j["strategy"] = to_string(c.strategy);
  j["epsilon_target"] = num_json(c.epsilon_target);
  j["data_fraction"] = c.data_fraction;
  j["seed"] = c.seed;
  j["completed"] = c.completed;
  if (!c.completed) {
    j["error"] = c.error;
    return j;
  }
  j["sigma"] = c.sigma;
  j["achieved"] = {{"epsilon", num_json(c.achieved.epsilon)},
                   {"delta", c.achieved.delta},
                   {"optimal_order", c.achieved.optimal_order},
                   {"at_grid_edge", c.achieved.at_grid_edge}};
  j["range"] = c.range;
  j["on_boundary"] = c.on_boundary;
  j["range_miss"] = c.range_miss;
  j["train_rows"] = c.train_rows;
  j["test_rows"] = c.test_rows;
  j["steps"] = c.steps;
  j["final_loss"] = num_json(c.final_loss);
  ordered_json m;
  m["labels"] = c.point.label_names;
  m["auroc"] = ci_json(c.auroc);
  m["accuracy"] = ci_json(c.accuracy);
  m["sensitivity"] = ci_json(c.sensitivity);
  m["specificity"] = ci_json(c.specificity);
  ordered_json pl;
  pl["auroc"] = arr_json(c.point.auroc_per_label);
  pl["threshold"] = arr_json(c.point.threshold_per_label);
  pl["accuracy"] = arr_json(c.point.accuracy_per_label);
  pl["sensitivity"] = arr_json(c.point.sensitivity_per_label);
  pl["specificity"] = arr_json(c.point.specificity_per_label);
  m["per_label"] = pl;
  m["excluded"] = c.point.excluded_labels;
  j["metrics"] = m;
  j["fairness"] = {{"sex", fairness_json(c.sex)}, {"age", fairness_json(c.age)}};
  j["notes"] = c.notes;
  return j;
}

std::string render_json(const ExperimentReport& rep) {
  ordered_json root;
  root["schema"] = "dpfb.report.v1";
  ordered_json grid;
  grid["strategies"] = rep.strategies;
  ordered_json eps = ordered_json::array();
  for (double e : rep.epsilon_targets) {
    eps.push_back(num_json(e));
  }
  grid["epsilon_targets"] = eps;
  grid["data_fractions"] = rep.data_fractions;
  grid["seeds"] = rep.seeds;
  root["grid"] = grid;
  root["all_completed"] = rep.all_completed;
  root["fdr_note"] = rep.fdr_note;

  ordered_json cells = ordered_json::array();
  for (const Cell& c : rep.cells) {
    cells.push_back(cell_json(c));
  }
  root["cells"] = cells;

  ordered_json cmps = ordered_json::array();
  for (const PairedComparison& c : rep.comparisons) {
    ordered_json j;
    j["family"] = c.family;
    j["label"] = c.label;
    j["mean_diff"] = num_json(c.mean_diff);
    j["p_raw"] = c.p_raw;
    j["q_fdr"] = c.q_fdr;
    j["saturated"] = c.saturated;
    j["p_display"] = c.p_display;
    j["q_display"] = c.q_display;
    j["floor_note"] = c.floor_note;
    cmps.push_back(std::move(j));
  }
  root["comparisons"] = cmps;

  auto detail_json = [](const std::vector<TrendStat>& v) {
    ordered_json a = ordered_json::array();
    for (const TrendStat& s : v) {
      ordered_json j;
      j["label"] = s.label;
      j["lhs"] = num_json(s.lhs);
      j["rhs"] = num_json(s.rhs);
      j["held"] = s.held;
      a.push_back(std::move(j));
    }
    return a;
  };
  ordered_json trends;
  trends["monotone_epsilon"] = {{"pass", rep.trends.monotone_epsilon},
                                {"held", rep.trends.monotone_held},
                                {"total", rep.trends.monotone_total},
                                {"detail", detail_json(rep.trends.monotone_detail)}};
  trends["strategy_ordering"] = {{"pass", rep.trends.strategy_ordering},
                                 {"detail", detail_json(rep.trends.ordering_detail)}};
  trends["fraction_scaling"] = {{"pass", rep.trends.fraction_scaling},
                                {"detail", detail_json(rep.trends.fraction_detail)}};
  root["trends"] = trends;
  return root.dump(2) + "\n";
}

std::string fmt_pct_ci(const MetricWithCi& m) {
  char buf[160];
  if (!std::isfinite(m.value)) {
    return "n/a";
  }
  if (!m.defined) {
    std::snprintf(buf, sizeof(buf), "%.1f", m.value * 100.0);
    return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.1f ± %.1f (%.1f, %.1f)", m.value * 100.0,
                m.stddev * 100.0, m.ci_low * 100.0, m.ci_high * 100.0);
  return buf;
}

std::string fmt_short(double v) {
  if (std::isinf(v)) {
    return v > 0 ? "inf" : "-inf";
  }
  if (std::isnan(v)) {
    return "n/a";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string render_markdown(const ExperimentReport& rep) {
  std::ostringstream out;
  std::size_t done = 0;
  for (const Cell& c : rep.cells) {
    if (c.completed) {
      ++done;
    }
  }
  out << "# dpfb experiment report\n\n";
  out << "- completed cells: " << done << "/" << rep.cells.size() << "\n";
  out << "- fdr: " << (rep.fdr_note.empty() ? "n/a" : rep.fdr_note) << "\n\n";

  out << "## cells\n\n";
  out << "| strategy | eps target | achieved eps | range | fraction | seed | "
         "auroc | accuracy | sensitivity | specificity | auroc disp (sex) | "
         "eod (sex) | od (sex) | auroc disp (age) | eod (age) | od (age) | "
         "flags |\n";
  out << "|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|"
         "---|\n";
  for (const Cell& c : rep.cells) {
    out << "| " << to_string(c.strategy) << " | " << eps_label(c.epsilon_target)
        << " | ";
    if (!c.completed) {
      out << "— | — | " << data::format_double(c.data_fraction) << " | "
          << c.seed << " | — | — | — | — | — | — | — | — | — | — | failed: "
          << c.error << " |\n";
      continue;
    }
    std::vector<std::string> flags = c.notes;
    if (c.range_miss) {
      flags.insert(flags.begin(), "range-miss");
    }
    if (c.on_boundary) {
      flags.push_back("on-boundary");
    }
    std::string joined;
    for (std::size_t i = 0; i < flags.size(); ++i) {
      joined += (i > 0 ? "; " : "") + flags[i];
    }
    out << fmt_short(c.achieved.epsilon) << " | " << c.range << " | "
        << data::format_double(c.data_fraction) << " | " << c.seed << " | "
        << fmt_pct_ci(c.auroc) << " | " << fmt_pct_ci(c.accuracy) << " | "
        << fmt_pct_ci(c.sensitivity) << " | " << fmt_pct_ci(c.specificity)
        << " | " << fmt_pct_ci(c.sex.auroc_disparity) << " | "
        << fmt_pct_ci(c.sex.eod) << " | " << fmt_pct_ci(c.sex.od) << " | "
        << fmt_pct_ci(c.age.auroc_disparity) << " | " << fmt_pct_ci(c.age.eod)
        << " | " << fmt_pct_ci(c.age.od) << " | " << joined << " |\n";
  }

  out << "\n## comparisons\n\n";
  out << "| family | comparison | mean diff | p | q (fdr) |\n";
  out << "|---|---|---|---|---|\n";
  for (const PairedComparison& c : rep.comparisons) {
    out << "| " << c.family << " | " << c.label << " | " << fmt_short(c.mean_diff)
        << " | " << c.p_display
        << (c.saturated ? " [" + c.floor_note + "]" : "") << " | "
        << c.q_display << " |\n";
  }

  auto verdict = [&](const char* name, bool pass, const std::string& extra,
                     const std::vector<TrendStat>& detail) {
    out << "- " << name << ": " << (pass ? "PASS" : "FAIL");
    if (!extra.empty()) {
      out << " (" << extra << ")";
    }
    out << "\n";
    for (const TrendStat& s : detail) {
      out << "  - " << s.label << ": " << fmt_short(s.lhs) << " vs "
          << fmt_short(s.rhs) << " [" << (s.held ? "held" : "violated")
          << "]\n";
    }
  };
  out << "\n## trends\n\n";
  verdict("monotone_epsilon", rep.trends.monotone_epsilon,
          std::to_string(rep.trends.monotone_held) + "/" +
              std::to_string(rep.trends.monotone_total) + " transitions",
          rep.trends.monotone_detail);
  verdict("strategy_ordering", rep.trends.strategy_ordering, "",
          rep.trends.ordering_detail);
  verdict("fraction_scaling", rep.trends.fraction_scaling, "",
          rep.trends.fraction_detail);
  return out.str();
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kCold:
      return "cold";
    case Strategy::kWarmShifted:
      return "warm_shifted";
    case Strategy::kWarmMatched:
      return "warm_matched";
  }
  throw ParameterError("unknown strategy value");
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "cold") {
    return Strategy::kCold;
  }
  if (name == "warm_shifted") {
    return Strategy::kWarmShifted;
  }
  if (name == "warm_matched") {
    return Strategy::kWarmMatched;
  }
  throw ParameterError("unknown strategy '" + name +
                       "' (expected cold, warm_shifted or warm_matched)");
}

void ExperimentConfig::validate() const {
  if (cohort_path.empty()) {
    cohort.validate();
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
      throw ParameterError("test_fraction must lie in (0, 1)");
    }
  }
  if (strategies.empty()) {
    throw ParameterError("at least one strategy is required");
  }
  std::set<int> seen_s;
  for (Strategy s : strategies) {
    if (!seen_s.insert(static_cast<int>(s)).second) {
      throw ParameterError("duplicate strategy " + to_string(s));
    }
  }
  if (epsilon_targets.empty()) {
    throw ParameterError("at least one epsilon target is required");
  }
  std::set<accountant::EpsilonRange> seen_r;
  for (double e : epsilon_targets) {
    if (!(e > 0.0)) {
      throw ParameterError("epsilon targets must be positive");
    }
    const auto r = accountant::classify_epsilon_range(e).range;
    if (!seen_r.insert(r).second) {
      throw ParameterError("epsilon target " + eps_label(e) +
                           " shares the reporting range " +
                           accountant::to_string(r) + " with another target");
    }
  }
  if (data_fractions.empty()) {
    throw ParameterError("at least one data fraction is required");
  }
  std::set<double> seen_f;
  for (double f : data_fractions) {
    if (!(f > 0.0 && f <= 1.0)) {
      throw ParameterError("data fractions must lie in (0, 1]");
    }
    if (!seen_f.insert(f).second) {
      throw ParameterError("duplicate data fraction " + data::format_double(f));
    }
  }
  if (seeds.empty()) {
    throw ParameterError("at least one seed is required");
  }
  std::set<std::uint64_t> seen_d;
  for (std::uint64_t d : seeds) {
    if (!seen_d.insert(d).second) {
      throw ParameterError("duplicate seed " + std::to_string(d));
    }
  }
  train.validate();
  if (train.max_steps < 1) {
    throw ParameterError("experiments need at least one training step");
  }
  bootstrap.validate();
  if (pretrain_steps < 0) {
    throw ParameterError("pretrain_steps must be non-negative");
  }
  if (source_patients < 0) {
    throw ParameterError("source_patients must be non-negative");
  }
  if (!(source_shift >= 0.0 && source_shift <= 1.0)) {
    throw ParameterError("source_shift must lie in [0, 1]");
  }
  if (jobs < 1) {
    throw ParameterError("jobs must be at least 1");
  }
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();

  std::optional<data::Cohort> loaded;
  if (!config.cohort_path.empty()) {
    loaded = data::read_cohort(config.cohort_path);
    bool has_train = false;
    bool has_test = false;
    for (const data::CohortRow& row : loaded->rows) {
      (row.split == data::Split::kTrain ? has_train : has_test) = true;
    }
    if (!has_train || !has_test) {
      throw ParameterError("loaded cohort needs both train and test rows");
    }
  }

  ExperimentReport rep;
  for (Strategy s : config.strategies) {
    rep.strategies.push_back(to_string(s));
  }
  rep.epsilon_targets = config.epsilon_targets;
  rep.data_fractions = config.data_fractions;
  rep.seeds = config.seeds;
  rep.fdr_note =
      "BH-FDR applied within one family per metric and dataset; this grid "
      "contributes the single family 'auroc'";

  const std::size_t S = config.strategies.size();
  const std::size_t E = config.epsilon_targets.size();
  const std::size_t F = config.data_fractions.size();
  const std::size_t D = config.seeds.size();
  const GridIndex at{S, E, F, D};

  // Shared artifacts first (sequential, so --jobs never changes results).
  std::vector<SeedContext> ctxs;
  ctxs.reserve(D);
  for (std::uint64_t sd : config.seeds) {
    ctxs.push_back(
        build_seed_context(config, loaded ? &*loaded : nullptr, sd));
  }

  // sigma[d][f][e]; calibration is cached on (target, train-row count).
  std::map<std::pair<std::size_t, int>, SigmaEntry> calib_cache;
  std::vector<std::vector<std::vector<SigmaEntry>>> sigma(
      D, std::vector<std::vector<SigmaEntry>>(F, std::vector<SigmaEntry>(E)));
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t f = 0; f < F; ++f) {
      if (!ctxs[d].ok || !ctxs[d].fractions[f].ok) {
        continue;
      }
      const int rows = ctxs[d].fractions[f].rows;
      for (std::size_t e = 0; e < E; ++e) {
        const double target = config.epsilon_targets[e];
        if (std::isinf(target)) {
          continue;
        }
        const auto key = std::make_pair(e, rows);
        auto it = calib_cache.find(key);
        if (it == calib_cache.end()) {
          SigmaEntry entry;
          try {
            const double q = static_cast<double>(config.train.nominal_batch) /
                             static_cast<double>(rows);
            entry.sigma = accountant::calibrate_sigma(
                target, q, config.train.max_steps, config.train.delta);
            entry.ok = true;
          } catch (const std::exception& ex) {
            entry.error = ex.what();
          }
          it = calib_cache.emplace(key, std::move(entry)).first;
        }
        sigma[d][f][e] = it->second;
      }
    }
  }

  const std::size_t N = S * E * F * D;
  rep.cells.assign(N, Cell{});
  std::vector<std::vector<double>> aligned(N);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t e = 0; e < E; ++e) {
      for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t d = 0; d < D; ++d) {
          Cell& cell = rep.cells[at(s, e, f, d)];
          cell.strategy = config.strategies[s];
          cell.epsilon_target = config.epsilon_targets[e];
          cell.data_fraction = config.data_fractions[f];
          cell.seed = config.seeds[d];
        }
      }
    }
  }

  auto run_one = [&](std::size_t idx) {
    const std::size_t d = idx % D;
    const std::size_t f = (idx / D) % F;
    const std::size_t e = (idx / (D * F)) % E;
    fill_cell(config, ctxs[d], &sigma[d][f][e], e, f, rep.cells[idx],
              aligned[idx]);
  };
  const int jobs = std::max(1, config.jobs);
  if (jobs == 1 || N <= 1) {
    for (std::size_t i = 0; i < N; ++i) {
      run_one(i);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    const int n_workers = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(jobs), N));
    workers.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w) {
      workers.emplace_back([&]() {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= N) {
            return;
          }
          run_one(i);
        }
      });
    }
    for (std::thread& w : workers) {
      w.join();
    }
  }

  rep.all_completed = true;
  for (const Cell& c : rep.cells) {
    rep.all_completed = rep.all_completed && c.completed;
  }

  build_comparisons(config, rep, aligned, at);
  build_trends(config, rep, at);
  return rep;
}

std::string render_report(const ExperimentReport& report,
                          const std::string& format) {
  if (format == "json") {
    return render_json(report);
  }
  if (format == "markdown") {
    return render_markdown(report);
  }
  throw ParameterError("unknown report format '" + format +
                       "' (expected json or markdown)");
}

}  // namespace dpfb::harness
