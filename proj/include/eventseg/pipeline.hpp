#pragma once

// End-to-end wiring of the three pipeline stages plus the configuration
// document the CLI reads.  Unspecified config fields keep their defaults.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eventseg/anomaly.hpp"
#include "eventseg/common.hpp"
#include "eventseg/flda.hpp"
#include "eventseg/hmm.hpp"
#include "eventseg/ingest.hpp"
#include "eventseg/sessions.hpp"
#include "eventseg/types.hpp"
#include "json.hpp"

namespace eventseg::pipeline {

struct PipelineConfig {
  // ingest
  std::vector<std::string> channels;        // empty: all CSV columns
  std::vector<double> sample_rates_hz;      // empty: inferred
  double epoch_length = 600.0;              // 10 minutes
  double availability_threshold = 0.9;
  double missing_gate = 0.4;
  double abnormal_gate = 0.4;
  double clock_offset_hours = 0.0;

  // feature selection
  std::vector<std::string> features;        // explicit selection; empty: SWSI
  ClockWindow swsi_sleep_window{2.0, 5.0};
  ClockWindow swsi_wake_window{19.0, 22.0};
  bool swsi_long_record_windows = false;    // 21-22 / 4-5 variant
  double swsi_threshold = 0.7;
  double swsi_subject_fraction = 0.75;
  double correlation_dedup = 0.95;

  // anomaly
  bool anomaly_enabled = true;
  int anomaly_k = 3;
  double anomaly_quantile = 0.025;
  std::vector<std::string> filtering_features = {"HR_MED", "TEMP_MED"};
  anomaly::TreeFeatures tree_features;
  anomaly::ActivePredicate active_predicate;

  // hmm + adaptation (Table defaults: baseline 0-36 h, 3 h test window,
  // 12..60 h training windows, gamma 1)
  double baseline_begin = 0.0;
  double baseline_end = 36.0 * kSecondsPerHour;
  double test_window = 3.0 * kSecondsPerHour;
  double train_min_hours = 12.0;
  double train_max_hours = 60.0;
  double gamma = 1.0;
  std::string sleep_rule_feature = "HR_MED";
  bool sleep_rule_lower_is_sleep = true;
  int hmm_restarts = 3;
  double hmm_tol = 1e-6;
  int hmm_max_iter = 500;
  bool hmm_diagonal = false;

  // postprocessing
  int smoothing_window_epochs = 9;
  double min_sleep_minutes = 60.0;
  double night_cutoff_hour = 5.0;

  std::uint64_t seed = 1;

  flda::AdaptationSchedule schedule() const {
    flda::AdaptationSchedule s;
    s.baseline_end = baseline_end;
    s.test_window = test_window;
    for (int h = static_cast<int>(train_min_hours); h <= static_cast<int>(train_max_hours); ++h)
      s.candidate_train_lengths.push_back(h * kSecondsPerHour);
    return s;
  }

  ClockWindow sleep_window() const {
    return swsi_long_record_windows ? ClockWindow{4.0, 5.0} : swsi_sleep_window;
  }
  ClockWindow wake_window() const {
    return swsi_long_record_windows ? ClockWindow{21.0, 22.0} : swsi_wake_window;
  }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["channels"] = c.channels;
  j["sample_rates_hz"] = c.sample_rates_hz;
  j["epoch_length_seconds"] = c.epoch_length;
  j["availability_threshold"] = c.availability_threshold;
  j["missing_gate"] = c.missing_gate;
  j["abnormal_gate"] = c.abnormal_gate;
  j["clock_offset_hours"] = c.clock_offset_hours;
  j["features"] = c.features;
  j["swsi"] = {{"sleep_window", {c.swsi_sleep_window.start_hour, c.swsi_sleep_window.end_hour}},
               {"wake_window", {c.swsi_wake_window.start_hour, c.swsi_wake_window.end_hour}},
               {"long_record_windows", c.swsi_long_record_windows},
               {"threshold", c.swsi_threshold},
               {"subject_fraction", c.swsi_subject_fraction},
               {"correlation_dedup", c.correlation_dedup}};
  j["anomaly"] = {{"enabled", c.anomaly_enabled},
                  {"k", c.anomaly_k},
                  {"quantile", c.anomaly_quantile},
                  {"filtering_features", c.filtering_features},
                  {"tree_features",
                   {{"hr", c.tree_features.hr},
                    {"temp", c.tree_features.temp},
                    {"acc", c.tree_features.acc}}},
                  {"active_predicate",
                   {{"hr_max", c.active_predicate.hr_max},
                    {"acc_max", c.active_predicate.acc_max}}}};
  j["baseline"] = {{"begin_seconds", c.baseline_begin}, {"end_seconds", c.baseline_end}};
  j["test_window_seconds"] = c.test_window;
  j["train_window_hours"] = {c.train_min_hours, c.train_max_hours};
  j["gamma"] = c.gamma;
  j["sleep_rule"] = {{"feature", c.sleep_rule_feature},
                     {"lower_is_sleep", c.sleep_rule_lower_is_sleep}};
  j["hmm"] = {{"restarts", c.hmm_restarts},
              {"tol", c.hmm_tol},
              {"max_iter", c.hmm_max_iter},
              {"diagonal", c.hmm_diagonal}};
  j["smoothing"] = {{"window_epochs", c.smoothing_window_epochs},
                    {"min_sleep_minutes", c.min_sleep_minutes},
                    {"night_cutoff_hour", c.night_cutoff_hour}};
  j["seed"] = c.seed;
  return j;
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  c.channels = j.value("channels", c.channels);
  c.sample_rates_hz = j.value("sample_rates_hz", c.sample_rates_hz);
  c.epoch_length = j.value("epoch_length_seconds", c.epoch_length);
  c.availability_threshold = j.value("availability_threshold", c.availability_threshold);
  c.missing_gate = j.value("missing_gate", c.missing_gate);
  c.abnormal_gate = j.value("abnormal_gate", c.abnormal_gate);
  c.clock_offset_hours = j.value("clock_offset_hours", c.clock_offset_hours);
  c.features = j.value("features", c.features);
  if (j.contains("swsi")) {
    const auto& s = j.at("swsi");
    auto window = [&](const char* key, ClockWindow def) {
      if (!s.contains(key)) return def;
      const auto v = s.at(key).get<std::vector<double>>();
      if (v.size() != 2) throw validation_error("config: clock windows need [start, end]");
      return ClockWindow{v[0], v[1]};
    };
    c.swsi_sleep_window = window("sleep_window", c.swsi_sleep_window);
    c.swsi_wake_window = window("wake_window", c.swsi_wake_window);
    c.swsi_long_record_windows = s.value("long_record_windows", c.swsi_long_record_windows);
    c.swsi_threshold = s.value("threshold", c.swsi_threshold);
    c.swsi_subject_fraction = s.value("subject_fraction", c.swsi_subject_fraction);
    c.correlation_dedup = s.value("correlation_dedup", c.correlation_dedup);
  }
  if (j.contains("anomaly")) {
    const auto& a = j.at("anomaly");
    c.anomaly_enabled = a.value("enabled", c.anomaly_enabled);
    c.anomaly_k = a.value("k", c.anomaly_k);
    c.anomaly_quantile = a.value("quantile", c.anomaly_quantile);
    c.filtering_features = a.value("filtering_features", c.filtering_features);
    if (a.contains("tree_features")) {
      const auto& t = a.at("tree_features");
      c.tree_features.hr = t.value("hr", c.tree_features.hr);
      c.tree_features.temp = t.value("temp", c.tree_features.temp);
      c.tree_features.acc = t.value("acc", c.tree_features.acc);
    }
    if (a.contains("active_predicate")) {
      const auto& p = a.at("active_predicate");
      c.active_predicate.hr_max = p.value("hr_max", c.active_predicate.hr_max);
      c.active_predicate.acc_max = p.value("acc_max", c.active_predicate.acc_max);
    }
  }
  if (j.contains("baseline")) {
    c.baseline_begin = j.at("baseline").value("begin_seconds", c.baseline_begin);
    c.baseline_end = j.at("baseline").value("end_seconds", c.baseline_end);
  }
  c.test_window = j.value("test_window_seconds", c.test_window);
  if (j.contains("train_window_hours")) {
    const auto v = j.at("train_window_hours").get<std::vector<double>>();
    if (v.size() != 2) throw validation_error("config: train_window_hours needs [min, max]");
    c.train_min_hours = v[0];
    c.train_max_hours = v[1];
  }
  c.gamma = j.value("gamma", c.gamma);
  if (j.contains("sleep_rule")) {
    c.sleep_rule_feature = j.at("sleep_rule").value("feature", c.sleep_rule_feature);
    c.sleep_rule_lower_is_sleep =
        j.at("sleep_rule").value("lower_is_sleep", c.sleep_rule_lower_is_sleep);
  }
  if (j.contains("hmm")) {
    const auto& h = j.at("hmm");
    c.hmm_restarts = h.value("restarts", c.hmm_restarts);
    c.hmm_tol = h.value("tol", c.hmm_tol);
    c.hmm_max_iter = h.value("max_iter", c.hmm_max_iter);
    c.hmm_diagonal = h.value("diagonal", c.hmm_diagonal);
  }
  if (j.contains("smoothing")) {
    const auto& s = j.at("smoothing");
    c.smoothing_window_epochs = s.value("window_epochs", c.smoothing_window_epochs);
    c.min_sleep_minutes = s.value("min_sleep_minutes", c.min_sleep_minutes);
    c.night_cutoff_hour = s.value("night_cutoff_hour", c.night_cutoff_hour);
  }
  c.seed = j.value("seed", c.seed);
  return c;
}

// FNV-1a over the canonical config dump, for the run manifest.
inline std::string config_hash(const PipelineConfig& c) {
  const std::string dump = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Per-subject segmentation.
// ---------------------------------------------------------------------------

struct SegmentResult {
  EpochFeatureMatrix epochs;                 // full feature set
  SubjectGate gate;
  std::vector<char> abnormal_mask;
  std::vector<anomaly::AbnormalityVerdict> verdicts;
  std::vector<std::string> selected_features;
  hmm::GaussianHmm model;
  LabelSequence labels;                      // final smoothed + reinserted
  std::vector<flda::BatchDiagnostic> diagnostics;
  std::vector<sessions::Session> session_list;
  sessions::SessionFeatureTable feature_table;
};

// Runs epochize -> abnormality filter -> gate -> HMM baseline -> FLDA
// adaptation -> abnormality classification -> smoothing -> reinsertion ->
// sessions -> session features for one subject.  `selected` must name the
// model features (the CLI resolves SWSI selection across subjects first).
inline SegmentResult segment_subject(const MultiChannelSeries& series,
                                     const PipelineConfig& config,
                                     const std::vector<std::string>& selected) {
  SegmentResult result;
  result.epochs = ingest::epochize(series, config.epoch_length, config.availability_threshold);
  const auto n = result.epochs.epoch_count();

  result.abnormal_mask.assign(static_cast<std::size_t>(n), 0);
  if (config.anomaly_enabled) {
    const auto region = anomaly::fit_normal_region(result.epochs, config.filtering_features,
                                                   config.anomaly_k, config.anomaly_quantile);
    result.abnormal_mask = anomaly::filter_abnormal(result.epochs, region);
  }
  result.gate = ingest::gate_subject(result.epochs, result.abnormal_mask,
                                     config.missing_gate, config.abnormal_gate);
  if (!result.gate.admitted) return result;

  result.selected_features = selected;
  EpochFeatureMatrix model_epochs = result.epochs.select(selected);
  for (Eigen::Index i = 0; i < n; ++i)
    if (result.abnormal_mask[static_cast<std::size_t>(i)])
      model_epochs.present[static_cast<std::size_t>(i)] = 0;

  // record length must reach past the baseline
  const double record_end = model_epochs.epoch_start(n - 1) + config.epoch_length;
  if (record_end <= config.baseline_end)
    throw validation_error("record shorter than the baseline interval");

  hmm::FitOptions fit_opts;
  fit_opts.K = 2;
  fit_opts.tol = config.hmm_tol;
  fit_opts.max_iter = config.hmm_max_iter;
  fit_opts.restarts = config.hmm_restarts;
  fit_opts.seed = config.seed;
  fit_opts.diagonal = config.hmm_diagonal;
  const auto baseline_segments =
      hmm::present_segments(model_epochs, config.baseline_begin, config.baseline_end);
  if (baseline_segments.empty())
    throw insufficient_data_error("no usable epochs inside the baseline interval");
  result.model = hmm::fit_em(model_epochs.values, baseline_segments, fit_opts);

  int rule_index = -1;
  for (std::size_t i = 0; i < selected.size(); ++i)
    if (selected[i] == config.sleep_rule_feature) rule_index = static_cast<int>(i);
  if (rule_index < 0)
    throw validation_error("sleep rule feature '" + config.sleep_rule_feature +
                           "' is not among the selected features");
  const int sleep_state = hmm::sleep_state_index(result.model, rule_index,
                                                 config.sleep_rule_lower_is_sleep);

  LabelSequence baseline = LabelSequence::unlabeled(
      model_epochs.start0, model_epochs.epoch_length, static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  for (const auto& [b, e] : baseline_segments) {
    const auto dec = hmm::decode(result.model,
                                 model_epochs.values.middleRows(b, e - b));
    for (Eigen::Index i = 0; i < e - b; ++i) {
      baseline.labels[static_cast<std::size_t>(b + i)] =
          dec.states[static_cast<std::size_t>(i)] == sleep_state ? 1 : 0;
      baseline.sources[static_cast<std::size_t>(b + i)] = LabelSource::hmm_baseline;
    }
    row += e - b;
  }

  auto adapted = flda::gradual_self_train(model_epochs, baseline, config.schedule(),
                                          config.gamma);
  result.diagnostics = std::move(adapted.diagnostics);

  if (config.anomaly_enabled) {
    std::vector<Eigen::Index> abnormal_idx, reference_idx;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!result.epochs.present[static_cast<std::size_t>(i)]) continue;
      if (result.abnormal_mask[static_cast<std::size_t>(i)])
        abnormal_idx.push_back(i);
      else
        reference_idx.push_back(i);
    }
    if (!abnormal_idx.empty())
      result.verdicts = anomaly::classify_abnormal(result.epochs, abnormal_idx,
                                                   reference_idx, config.tree_features,
                                                   config.active_predicate);
  }

  const auto smoothed = sessions::smooth_labels(adapted.labels, config.smoothing_window_epochs,
                                                config.min_sleep_minutes);
  result.session_list = sessions::build_sessions(smoothed, result.verdicts,
                                                 config.clock_offset_hours,
                                                 config.night_cutoff_hour);
  // final label stream: smoothed labels plus reinsertions applied inside
  // build_sessions; reconstruct it from the sessions for the export
  result.labels = smoothed;
  for (const auto& s : result.session_list)
    for (Eigen::Index idx : s.epoch_indices) {
      const auto i = static_cast<std::size_t>(idx);
      const int lab = s.kind == sessions::SessionKind::sleep ? 1 : 0;
      if (result.labels.labels[i] < 0) {
        result.labels.labels[i] = lab;
        result.labels.sources[i] = LabelSource::reinserted;
      }
    }
  result.feature_table = sessions::session_features(result.session_list, result.epochs);
  return result;
}

}  // namespace eventseg::pipeline
