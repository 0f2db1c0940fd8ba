// dpfb command line tool.
//
// Subcommands: eps, calibrate, generate, train, predict, evaluate, audit,
// experiment. Exit codes: 0 success, 2 parameter/usage error, 3 calibration
// failure, 1 anything else. Config files use the flat key = value format
// parsed by dpfb::flatcfg (see README for the schemas).

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dpfb/accountant.hpp"
#include "dpfb/data.hpp"
#include "dpfb/error.hpp"
#include "dpfb/flatcfg.hpp"
#include "dpfb/harness.hpp"
#include "dpfb/metrics.hpp"
#include "dpfb/rng.hpp"
#include "dpfb/stats.hpp"
#include "dpfb/trainer.hpp"

namespace {

using json = nlohmann::ordered_json;

// NaN -> null, +-inf -> "inf"/"-inf" strings; same convention as the
// experiment report renderer.
json num_json(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  return json(v);
}

json spend_json(const dpfb::accountant::PrivacySpend& spend) {
  auto cls = dpfb::accountant::classify_epsilon_range(spend.epsilon);
  return json{{"epsilon", num_json(spend.epsilon)},
              {"delta", spend.delta},
              {"optimal_order", spend.optimal_order},
              {"at_grid_edge", spend.at_grid_edge},
              {"range", dpfb::accountant::to_string(cls.range)},
              {"on_boundary", cls.on_boundary}};
}

std::string eps_display(double eps) {
  return std::isinf(eps) ? "inf" : dpfb::data::format_double(eps);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(item);
  if (!s.empty() && s.back() == ',') out.push_back("");
  return out;
}

// ---------------------------------------------------------------------------
// eps / calibrate

int cmd_eps(double sigma, double q, std::int64_t steps, double delta) {
  dpfb::accountant::PrivacyParams params;
  params.noise_multiplier = sigma;
  params.sampling_prob = q;
  params.steps = steps;
  params.delta = delta;
  auto spend = dpfb::accountant::epsilon_for(params);
  std::cout << spend_json(spend).dump(2) << "\n";
  return 0;
}

int cmd_calibrate(double target_eps, double q, std::int64_t steps, double delta) {
  double sigma = dpfb::accountant::calibrate_sigma(target_eps, q, steps, delta);
  std::cout << dpfb::data::format_double(sigma) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// generate

// Reads CohortSpec fields under `prefix` and appends every accepted key to
// `known`. Optional prevalence rows use dotted keys prevalence.0, .1, ...
dpfb::data::CohortSpec spec_from_config(const dpfb::flatcfg::Config& cfg,
                                        const std::string& prefix,
                                        std::vector<std::string>& known) {
  dpfb::data::CohortSpec spec;
  auto key = [&](const char* name) {
    std::string k = prefix + name;
    known.push_back(k);
    return k;
  };
  spec.n_patients = static_cast<int>(cfg.get_int(key("n_patients"), spec.n_patients));
  spec.min_images = static_cast<int>(cfg.get_int(key("min_images"), spec.min_images));
  spec.max_images = static_cast<int>(cfg.get_int(key("max_images"), spec.max_images));
  spec.feature_dim = static_cast<int>(cfg.get_int(key("feature_dim"), spec.feature_dim));
  spec.label_count = static_cast<int>(cfg.get_int(key("label_count"), spec.label_count));
  if (std::string k = key("label_names"); cfg.has(k))
    spec.label_names = cfg.get_string_list(k);
  spec.sex_mix = cfg.get_double_list(key("sex_mix"), spec.sex_mix);
  spec.age_mix = cfg.get_double_list(key("age_mix"), spec.age_mix);
  spec.signal_strength = cfg.get_double(key("signal_strength"), spec.signal_strength);
  spec.distribution_shift =
      cfg.get_double(key("distribution_shift"), spec.distribution_shift);
  spec.task_seed = cfg.get_u64(key("task_seed"), spec.task_seed);
  spec.seed = cfg.get_u64(key("seed"), spec.seed);
  for (int i = 0;; ++i) {
    std::string k = prefix + "prevalence." + std::to_string(i);
    if (!cfg.has(k)) break;
    known.push_back(k);
    spec.prevalence.push_back(cfg.get_double_list(k));
  }
  return spec;
}

int cmd_generate(const std::string& config_path, const std::string& out_path) {
  auto cfg = dpfb::flatcfg::Config::parse_file(config_path);
  std::vector<std::string> known;
  dpfb::data::CohortSpec spec = spec_from_config(cfg, "", known);
  known.push_back("test_fraction");
  known.push_back("split_seed");
  double test_fraction = cfg.get_double("test_fraction", 0.2);
  std::uint64_t split_seed =
      cfg.get_u64("split_seed", dpfb::derive_seed(spec.seed, 2));
  cfg.check_unknown(known);

  auto cohort = dpfb::data::generate(spec);
  cohort = dpfb::data::patient_split(cohort, test_fraction, split_seed);
  dpfb::data::write_cohort(cohort, out_path);
  std::cout << "wrote " << out_path << " (rows: " << cohort.rows.size()
            << ", patients: " << spec.n_patients << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train / predict

json model_json(const dpfb::trainer::Model& model,
                const std::vector<std::string>& label_names,
                const dpfb::trainer::TrainTrace& trace) {
  json trace_json{{"steps", trace.steps},
                  {"sampling_prob", trace.sampling_prob},
                  {"non_private", trace.non_private}};
  if (trace.records.empty()) {
    trace_json["final_loss"] = nullptr;
    trace_json["mean_batch"] = nullptr;
  } else {
    trace_json["final_loss"] = num_json(trace.records.back().loss);
    double batch_sum = 0.0;
    for (const auto& rec : trace.records) batch_sum += rec.batch_size;
    trace_json["mean_batch"] = batch_sum / static_cast<double>(trace.records.size());
  }
  return json{{"schema", "dpfb.model.v1"},
              {"shape",
               {{"input_dim", model.shape.input_dim},
                {"hidden_dim", model.shape.hidden_dim},
                {"label_count", model.shape.label_count}}},
              {"label_names", label_names},
              {"params", model.params},
              {"trace", trace_json},
              {"achieved", spend_json(trace.achieved)}};
}

dpfb::trainer::Model load_model(const std::string& path,
                                std::vector<std::string>* label_names) {
  std::ifstream in(path);
  if (!in) throw dpfb::IoError("cannot open model file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw dpfb::ParameterError(path + ": not valid JSON: " + e.what());
  }
  try {
    if (doc.at("schema").get<std::string>() != "dpfb.model.v1")
      throw dpfb::ParameterError(path + ": unsupported model schema");
    dpfb::trainer::Model model;
    const json& shape = doc.at("shape");
    model.shape.input_dim = shape.at("input_dim").get<int>();
    model.shape.hidden_dim = shape.at("hidden_dim").get<int>();
    model.shape.label_count = shape.at("label_count").get<int>();
    model.params = doc.at("params").get<std::vector<double>>();
    if (label_names && doc.contains("label_names"))
      *label_names = doc.at("label_names").get<std::vector<std::string>>();
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw dpfb::ParameterError(path + ": malformed model JSON: " + e.what());
  }
}

int cmd_train(const std::string& config_path, const std::string& out_path) {
  auto cfg = dpfb::flatcfg::Config::parse_file(config_path);
  std::vector<std::string> known = {
      "cohort",     "init",          "init_seed",  "learning_rate",
      "weight_decay", "batch_size",  "clip_norm",  "noise_multiplier",
      "max_steps",  "delta",         "seed",       "adam_beta1",
      "adam_beta2", "adam_eps",      "hidden_dim", "class_weights",
      "inverse_prevalence_weights"};
  cfg.check_unknown(known);

  dpfb::trainer::TrainConfig tc;
  tc.learning_rate = cfg.get_double("learning_rate", tc.learning_rate);
  tc.weight_decay = cfg.get_double("weight_decay", tc.weight_decay);
  tc.nominal_batch = static_cast<int>(cfg.get_int("batch_size", tc.nominal_batch));
  tc.clip_norm = cfg.get_double("clip_norm", tc.clip_norm);
  tc.noise_multiplier = cfg.get_double("noise_multiplier", tc.noise_multiplier);
  tc.max_steps = static_cast<int>(cfg.get_int("max_steps", tc.max_steps));
  tc.delta = cfg.get_double("delta", tc.delta);
  tc.seed = cfg.get_u64("seed", tc.seed);
  tc.adam_beta1 = cfg.get_double("adam_beta1", tc.adam_beta1);
  tc.adam_beta2 = cfg.get_double("adam_beta2", tc.adam_beta2);
  tc.adam_eps = cfg.get_double("adam_eps", tc.adam_eps);
  tc.hidden_dim = static_cast<int>(cfg.get_int("hidden_dim", tc.hidden_dim));
  if (cfg.has("class_weights")) tc.class_weights = cfg.get_double_list("class_weights");

  auto cohort = dpfb::data::read_cohort(cfg.get_string("cohort"));
  if (cfg.get_bool("inverse_prevalence_weights", false)) {
    if (!tc.class_weights.empty())
      throw dpfb::ParameterError(
          config_path +
          ": class_weights and inverse_prevalence_weights are mutually exclusive");
    tc.class_weights = dpfb::trainer::inverse_prevalence_weights(cohort);
  }

  std::string init = cfg.get_string("init", "cold");
  dpfb::trainer::Model start;
  if (init == "cold") {
    dpfb::trainer::ModelShape shape{cohort.feature_dim, tc.hidden_dim,
                                    static_cast<int>(cohort.label_names.size())};
    std::uint64_t init_seed = cfg.get_u64("init_seed", dpfb::derive_seed(tc.seed, 1));
    start = dpfb::trainer::cold_init(shape, init_seed);
  } else if (init.rfind("warm:", 0) == 0) {
    start = load_model(init.substr(5), nullptr);
    if (start.shape.input_dim != cohort.feature_dim ||
        start.shape.label_count != static_cast<int>(cohort.label_names.size()))
      throw dpfb::ParameterError("warm model shape does not match the cohort (" +
                                 std::to_string(start.shape.input_dim) + "x" +
                                 std::to_string(start.shape.label_count) + " vs " +
                                 std::to_string(cohort.feature_dim) + "x" +
                                 std::to_string(cohort.label_names.size()) + ")");
    if (cfg.has("hidden_dim") && tc.hidden_dim != start.shape.hidden_dim)
      throw dpfb::ParameterError(
          "hidden_dim conflicts with the warm model's hidden layer");
    tc.hidden_dim = start.shape.hidden_dim;
  } else {
    throw dpfb::ParameterError(config_path +
                               ": init must be \"cold\" or \"warm:PATH\", got \"" +
                               init + "\"");
  }

  auto [model, trace] = dpfb::trainer::train(cohort, tc, start);
  dpfb::data::write_report(model_json(model, cohort.label_names, trace).dump(2) + "\n",
                           out_path);
  std::cout << "wrote " << out_path << " (steps: " << trace.steps
            << ", epsilon: " << eps_display(trace.achieved.epsilon) << ")\n";
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& cohort_path,
                const std::string& out_path, const std::string& split) {
  if (split != "test" && split != "train" && split != "all")
    throw dpfb::ParameterError("--split must be test, train or all, got '" + split +
                               "'");
  auto model = load_model(model_path, nullptr);
  auto cohort = dpfb::data::read_cohort(cohort_path);
  if (model.shape.input_dim != cohort.feature_dim ||
      model.shape.label_count != static_cast<int>(cohort.label_names.size()))
    throw dpfb::ParameterError("model shape does not match the cohort");

  dpfb::metrics::PredictionTable table;
  table.label_names = cohort.label_names;
  for (const auto& row : cohort.rows) {
    bool is_test = row.split == dpfb::data::Split::kTest;
    if (split == "test" && !is_test) continue;
    if (split == "train" && is_test) continue;
    dpfb::metrics::PredictionRow out;
    out.patient_id = row.patient_id;
    out.sex = row.sex;
    out.age_group = row.age_group;
    out.truths = row.labels;
    out.scores = dpfb::trainer::forward(model, row.features);
    table.rows.push_back(std::move(out));
  }
  if (table.rows.empty())
    throw dpfb::ParameterError("no rows in the requested split '" + split + "'");
  dpfb::data::write_predictions(table, out_path);
  std::cout << "wrote " << out_path << " (rows: " << table.rows.size() << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate / audit

json metric_report_json(const dpfb::metrics::MetricReport& report,
                        std::size_t n_rows) {
  json per_label = json::array();
  for (std::size_t k = 0; k < report.label_names.size(); ++k) {
    per_label.push_back({{"label", report.label_names[k]},
                         {"evaluable", static_cast<bool>(report.label_evaluable[k])},
                         {"auroc", num_json(report.auroc_per_label[k])},
                         {"threshold", num_json(report.threshold_per_label[k])},
                         {"accuracy", num_json(report.accuracy_per_label[k])},
                         {"sensitivity", num_json(report.sensitivity_per_label[k])},
                         {"specificity", num_json(report.specificity_per_label[k])}});
  }
  return json{{"schema", "dpfb.metrics.v1"},
              {"rows", n_rows},
              {"labels", report.label_names},
              {"summary",
               {{"auroc", num_json(report.auroc)},
                {"accuracy", num_json(report.accuracy)},
                {"sensitivity", num_json(report.sensitivity)},
                {"specificity", num_json(report.specificity)}}},
              {"per_label", per_label},
              {"excluded_labels", report.excluded_labels}};
}

// Label-averaged resample metrics matching the experiment harness: a label
// is skipped when the resample leaves it single-class; a resample where no
// label survives is undefined.
dpfb::stats::Metric resample_metric(const dpfb::metrics::PredictionTable& table,
                                    const std::vector<double>& thresholds,
                                    const std::string& which) {
  const std::size_t n_labels = table.label_names.size();
  return [&table, thresholds, which,
          n_labels](std::span<const std::size_t> idx) -> double {
    double sum = 0.0;
    int defined = 0;
    std::vector<double> scores(idx.size());
    std::vector<int> truths(idx.size());
    for (std::size_t k = 0; k < n_labels; ++k) {
      int positives = 0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& row = table.rows[idx[i]];
        scores[i] = row.scores[k];
        truths[i] = row.truths[k];
        positives += row.truths[k];
      }
      double value = std::numeric_limits<double>::quiet_NaN();
      if (which == "auroc") {
        if (positives == 0 || positives == static_cast<int>(idx.size())) continue;
        value = dpfb::metrics::auroc(scores, truths);
      } else {
        auto confusion = dpfb::metrics::confusion_at(scores, truths, thresholds[k]);
        if (which == "accuracy") value = confusion.accuracy;
        if (which == "sensitivity") value = confusion.sensitivity;
        if (which == "specificity") value = confusion.specificity;
      }
      if (!std::isfinite(value)) continue;
      sum += value;
      ++defined;
    }
    if (defined == 0)
      throw dpfb::UndefinedMetricError(which + " undefined on resample");
    return sum / defined;
  };
}

int cmd_evaluate(const std::string& predictions_path, const std::string& out_path,
                 int n_resamples, std::uint64_t seed) {
  auto table = dpfb::data::read_predictions(predictions_path);
  auto report = dpfb::metrics::evaluate(table);
  json out = metric_report_json(report, table.rows.size());

  if (n_resamples > 0) {
    std::vector<std::string> patient_ids;
    patient_ids.reserve(table.rows.size());
    for (const auto& row : table.rows) patient_ids.push_back(row.patient_id);
    std::vector<double> thresholds = report.threshold_per_label;
    dpfb::stats::BootstrapConfig bc;
    bc.n_resamples = n_resamples;
    bc.seed = seed;
    json blocks = json::array();
    for (const char* name : {"auroc", "accuracy", "sensitivity", "specificity"}) {
      auto result = dpfb::stats::bootstrap(
          patient_ids, resample_metric(table, thresholds, name), bc);
      blocks.push_back({{"metric", name},
                        {"mean", num_json(result.mean)},
                        {"sd", num_json(result.stddev)},
                        {"ci95", json::array({num_json(result.ci_low),
                                              num_json(result.ci_high)})},
                        {"n_resamples", bc.n_resamples},
                        {"seed", bc.seed}});
    }
    out["bootstrap"] = blocks;
  }

  dpfb::data::write_report(out.dump(2) + "\n", out_path);
  std::cout << "wrote " << out_path << " (rows: " << table.rows.size()
            << ", label-averaged AUROC: " << dpfb::data::format_double(report.auroc)
            << ")\n";
  return 0;
}

json fairness_json(const dpfb::metrics::FairnessReport& report) {
  json groups = json::array();
  for (std::size_t g = 0; g < report.group_labels.size(); ++g) {
    groups.push_back({{"label", report.group_labels[g]},
                      {"size", report.group_sizes[g]},
                      {"auroc", num_json(report.group_auroc[g])},
                      {"sensitivity", num_json(report.group_sensitivity[g])},
                      {"specificity", num_json(report.group_specificity[g])},
                      {"accuracy", num_json(report.group_accuracy[g])},
                      {"ptd", num_json(report.ptd[g])}});
  }
  return json{{"attribute", report.attribute},
              {"groups", groups},
              {"auroc_disparity", num_json(report.auroc_disparity)},
              {"eod", num_json(report.eod)},
              {"od", num_json(report.od)},
              {"excluded", report.excluded}};
}

int cmd_audit(const std::string& predictions_path, const std::string& attributes,
              const std::string& out_path) {
  auto table = dpfb::data::read_predictions(predictions_path);
  std::vector<std::string> attrs = split_csv(attributes);
  if (attrs.empty()) throw dpfb::ParameterError("--attributes must not be empty");
  for (const auto& attr : attrs)
    if (attr != "sex" && attr != "age_group")
      throw dpfb::ParameterError("unknown attribute '" + attr +
                                 "' (expected sex or age_group)");

  auto report = dpfb::metrics::evaluate(table);
  json out{{"schema", "dpfb.fairness.v1"},
           {"rows", table.rows.size()},
           {"labels", table.label_names}};
  json blocks = json::array();
  for (const auto& attr : attrs) {
    auto fairness =
        dpfb::metrics::audit_attribute(table, attr, report.threshold_per_label);
    blocks.push_back(fairness_json(fairness));
  }
  out["attributes"] = blocks;
  dpfb::data::write_report(out.dump(2) + "\n", out_path);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// experiment

std::vector<std::uint64_t> parse_seed_env(const std::string& value) {
  std::vector<std::uint64_t> seeds;
  for (const auto& token : split_csv(value)) {
    std::uint64_t seed = 0;
    auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), seed);
    if (ec != std::errc() || p != token.data() + token.size())
      throw dpfb::ParameterError("DPFB_SEED: malformed seed '" + token + "'");
    seeds.push_back(seed);
  }
  return seeds;
}

dpfb::harness::ExperimentConfig experiment_from_config(const std::string& path) {
  auto cfg = dpfb::flatcfg::Config::parse_file(path);
  dpfb::harness::ExperimentConfig out;
  std::vector<std::string> known = {"cohort_path",    "test_fraction",
                                    "strategies",     "epsilon_targets",
                                    "data_fractions", "seeds",
                                    "pretrain_steps", "source_patients",
                                    "source_shift",   "fairness_ci",
                                    "jobs"};

  if (cfg.has("cohort_path")) {
    out.cohort_path = cfg.get_string("cohort_path");
    for (const auto& key : cfg.keys())
      if (key.rfind("cohort.", 0) == 0)
        throw dpfb::ParameterError(
            path + ": cohort_path and cohort.* keys are mutually exclusive");
  } else {
    out.cohort = spec_from_config(cfg, "cohort.", known);
  }
  out.test_fraction = cfg.get_double("test_fraction", out.test_fraction);

  if (cfg.has("strategies")) {
    out.strategies.clear();
    for (const auto& name : cfg.get_string_list("strategies"))
      out.strategies.push_back(dpfb::harness::strategy_from_string(name));
  }
  out.epsilon_targets = cfg.get_double_list("epsilon_targets", out.epsilon_targets);
  out.data_fractions = cfg.get_double_list("data_fractions", out.data_fractions);
  out.seeds = cfg.get_u64_list("seeds", out.seeds);

  auto& tc = out.train;
  auto train_key = [&](const char* name) {
    std::string k = std::string("train.") + name;
    known.push_back(k);
    return k;
  };
  tc.learning_rate = cfg.get_double(train_key("learning_rate"), tc.learning_rate);
  tc.weight_decay = cfg.get_double(train_key("weight_decay"), tc.weight_decay);
  tc.nominal_batch =
      static_cast<int>(cfg.get_int(train_key("batch_size"), tc.nominal_batch));
  tc.clip_norm = cfg.get_double(train_key("clip_norm"), tc.clip_norm);
  tc.max_steps = static_cast<int>(cfg.get_int(train_key("max_steps"), tc.max_steps));
  tc.delta = cfg.get_double(train_key("delta"), tc.delta);
  tc.adam_beta1 = cfg.get_double(train_key("adam_beta1"), tc.adam_beta1);
  tc.adam_beta2 = cfg.get_double(train_key("adam_beta2"), tc.adam_beta2);
  tc.adam_eps = cfg.get_double(train_key("adam_eps"), tc.adam_eps);
  tc.hidden_dim = static_cast<int>(cfg.get_int(train_key("hidden_dim"), tc.hidden_dim));
  if (std::string k = train_key("class_weights"); cfg.has(k))
    tc.class_weights = cfg.get_double_list(k);

  out.bootstrap.n_resamples = static_cast<int>(
      cfg.get_int("bootstrap.n_resamples", out.bootstrap.n_resamples));
  out.bootstrap.level = cfg.get_double("bootstrap.level", out.bootstrap.level);
  known.push_back("bootstrap.n_resamples");
  known.push_back("bootstrap.level");

  out.pretrain_steps =
      static_cast<int>(cfg.get_int("pretrain_steps", out.pretrain_steps));
  out.source_patients =
      static_cast<int>(cfg.get_int("source_patients", out.source_patients));
  out.source_shift = cfg.get_double("source_shift", out.source_shift);
  out.fairness_ci = cfg.get_bool("fairness_ci", out.fairness_ci);
  out.jobs = static_cast<int>(cfg.get_int("jobs", out.jobs));

  cfg.check_unknown(known);
  return out;
}

int cmd_experiment(const std::string& config_path, const std::string& out_path,
                   const std::string& markdown_path, int jobs_override) {
  auto cfg = experiment_from_config(config_path);
  if (const char* env = std::getenv("DPFB_SEED"); env && *env) {
    cfg.seeds = parse_seed_env(env);
    std::cout << "seed list overridden by DPFB_SEED (" << cfg.seeds.size()
              << (cfg.seeds.size() == 1 ? " seed)\n" : " seeds)\n");
  }
  if (jobs_override > 0) cfg.jobs = jobs_override;
  cfg.validate();

  auto report = dpfb::harness::run_experiment(cfg);
  dpfb::data::write_report(dpfb::harness::render_report(report, "json"), out_path);
  if (!markdown_path.empty())
    dpfb::data::write_report(dpfb::harness::render_report(report, "markdown"),
                             markdown_path);

  std::size_t completed = 0;
  for (const auto& cell : report.cells) completed += cell.completed ? 1 : 0;
  std::cout << "wrote " << out_path << " (completed cells: " << completed << "/"
            << report.cells.size() << ")\n";
  auto verdict = [](bool pass) { return pass ? "PASS" : "FAIL"; };
  std::cout << "trends: monotone_epsilon " << verdict(report.trends.monotone_epsilon)
            << ", strategy_ordering " << verdict(report.trends.strategy_ordering)
            << ", fraction_scaling " << verdict(report.trends.fraction_scaling)
            << "\n";
  if (!report.all_completed) {
    std::cerr << "error: " << (report.cells.size() - completed)
              << " cell(s) failed; see the report for details\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentially private training and fairness auditing toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;

  auto* eps = app.add_subcommand("eps", "privacy spend of a DP-SGD run as JSON");
  double sigma = 0.0, q = 0.0, delta = 0.0, target_eps = 0.0;
  std::int64_t steps = 0;
  eps->add_option("--sigma", sigma, "noise multiplier")->required();
  eps->add_option("--q", q, "Poisson sampling probability")->required();
  eps->add_option("--steps", steps, "number of composed steps")->required();
  eps->add_option("--delta", delta, "target delta")->required();
  eps->callback([&] { exit_code = cmd_eps(sigma, q, steps, delta); });

  auto* calibrate =
      app.add_subcommand("calibrate", "smallest sigma achieving a target epsilon");
  calibrate->add_option("--target-eps", target_eps, "epsilon target")->required();
  calibrate->add_option("--q", q, "Poisson sampling probability")->required();
  calibrate->add_option("--steps", steps, "number of composed steps")->required();
  calibrate->add_option("--delta", delta, "target delta")->required();
  calibrate->callback(
      [&] { exit_code = cmd_calibrate(target_eps, q, steps, delta); });

  std::string config_path, out_path, markdown_path, model_path, cohort_path;
  std::string predictions_path, split = "test", attributes = "sex,age_group";
  int n_resamples = 0, jobs = 0;
  std::uint64_t seed = 0;

  auto* generate =
      app.add_subcommand("generate", "synthesize a cohort CSV from a config");
  generate->add_option("--config", config_path, "cohort config file")->required();
  generate->add_option("--out", out_path, "output cohort CSV")->required();
  generate->callback([&] { exit_code = cmd_generate(config_path, out_path); });

  auto* train = app.add_subcommand("train", "DP-SGD training from a config");
  train->add_option("--config", config_path, "training config file")->required();
  train->add_option("--out", out_path, "output model JSON")->required();
  train->callback([&] { exit_code = cmd_train(config_path, out_path); });

  auto* predict =
      app.add_subcommand("predict", "score a cohort with a trained model");
  predict->add_option("--model", model_path, "model JSON")->required();
  predict->add_option("--cohort", cohort_path, "cohort CSV")->required();
  predict->add_option("--out", out_path, "output predictions CSV")->required();
  predict->add_option("--split", split, "rows to score: test, train or all");
  predict->callback(
      [&] { exit_code = cmd_predict(model_path, cohort_path, out_path, split); });

  auto* evaluate =
      app.add_subcommand("evaluate", "utility metrics for a predictions CSV");
  evaluate->add_option("--predictions", predictions_path, "predictions CSV")
      ->required();
  evaluate->add_option("--out", out_path, "output report JSON")->required();
  evaluate->add_option("--bootstrap", n_resamples,
                       "patient-bootstrap resample count (0 = point only)");
  evaluate->add_option("--seed", seed, "bootstrap seed");
  evaluate->callback([&] {
    exit_code = cmd_evaluate(predictions_path, out_path, n_resamples, seed);
  });

  auto* audit =
      app.add_subcommand("audit", "subgroup fairness audit for a predictions CSV");
  audit->add_option("--predictions", predictions_path, "predictions CSV")
      ->required();
  audit->add_option("--attributes", attributes,
                    "comma-separated list from {sex, age_group}");
  audit->add_option("--out", out_path, "output report JSON")->required();
  audit->callback(
      [&] { exit_code = cmd_audit(predictions_path, attributes, out_path); });

  auto* experiment =
      app.add_subcommand("experiment", "run the full strategy/epsilon/fraction grid");
  experiment->add_option("--config", config_path, "experiment config file")
      ->required();
  experiment->add_option("--out", out_path, "output report JSON")->required();
  experiment->add_option("--markdown", markdown_path, "also render markdown here");
  experiment->add_option("--jobs", jobs, "worker threads (overrides the config)");
  experiment->callback([&] {
    exit_code = cmd_experiment(config_path, out_path, markdown_path, jobs);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const dpfb::ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const dpfb::CalibrationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
