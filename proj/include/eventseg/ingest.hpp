#pragma once

// Stage-1 ingestion: raw sample streams -> epoch features, subject gating,
// and SWSI-driven feature selection.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "eventseg/common.hpp"
#include "eventseg/csv.hpp"
#include "eventseg/types.hpp"

namespace eventseg::ingest {

// Reads `timestamp,<channel1>,...` CSV.  Empty cells become missing samples.
// `schema` names the channels to load; empty schema loads every non-timestamp
// column in header order.  `rates_hz` gives nominal per-channel rates; when
// empty, the per-channel rate is inferred from the median inter-sample gap.
inline MultiChannelSeries load_series(const std::string& path,
                                      std::vector<std::string> schema = {},
                                      std::vector<double> rates_hz = {},
                                      const std::string& subject_id = "") {
  CsvTable table = read_csv(path);
  if (table.header.empty() || table.header[0] != "timestamp")
    throw validation_error("first CSV column must be 'timestamp' in " + path);
  if (schema.empty())
    schema.assign(table.header.begin() + 1, table.header.end());

  std::vector<int> cols;
  for (const auto& name : schema) {
    int c = table.column(name);
    if (c <= 0)
      throw validation_error("declared channel '" + name + "' not in header of " + path);
    cols.push_back(c);
  }

  MultiChannelSeries series;
  series.subject_id = subject_id.empty() ? path : subject_id;
  series.channel_names = schema;
  series.timestamps.reserve(table.rows.size());
  series.values.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::size_t line_no = r + 2;
    const auto& row = table.rows[r];
    if (row[0].empty()) throw parse_error("missing timestamp", line_no);
    const double t = parse_cell(row[0], line_no);
    std::vector<double> vals(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j)
      vals[j] = parse_cell(row[static_cast<std::size_t>(cols[j])], line_no);
    if (!series.timestamps.empty() && !(t > series.timestamps.back()))
      throw validation_error("timestamps not strictly increasing at line " +
                             std::to_string(line_no) + " of " + path);
    series.timestamps.push_back(t);
    series.values.push_back(std::move(vals));
  }

  if (rates_hz.empty()) {
    double rate = 1.0;
    if (series.timestamps.size() >= 2) {
      std::vector<double> gaps;
      gaps.reserve(series.timestamps.size() - 1);
      for (std::size_t i = 1; i < series.timestamps.size(); ++i)
        gaps.push_back(series.timestamps[i] - series.timestamps[i - 1]);
      const double step = median(gaps);
      if (step > 0) rate = 1.0 / step;
    }
    rates_hz.assign(schema.size(), rate);
  }
  series.sample_rates_hz = std::move(rates_hz);
  series.validate();
  return series;
}

// Aggregates samples into fixed epochs with MEAN/MED/SD per channel.  Epoch
// availability is the minimum across channels of (observed samples / nominal
// expected samples); epochs below the threshold keep their availability but
// have every feature absent.  The grid is anchored at the first timestamp
// rounded down to a whole epoch boundary.
inline EpochFeatureMatrix epochize(const MultiChannelSeries& series,
                                   double epoch_length,
                                   double availability_threshold = 0.9) {
  if (!(epoch_length > 0)) throw validation_error("epoch_length must be positive");
  series.validate();
  if (series.timestamps.empty())
    throw insufficient_data_error("no samples: zero epochs fit in series span");

  const std::size_t p = series.channel_count();
  const double anchor = std::floor(series.timestamps.front() / epoch_length) * epoch_length;
  const double span_end = series.timestamps.back();
  const auto n_epochs =
      static_cast<Eigen::Index>(std::floor((span_end - anchor) / epoch_length)) + 1;
  if (n_epochs <= 0)
    throw insufficient_data_error("zero epochs fit in series span");

  EpochFeatureMatrix out;
  out.subject_id = series.subject_id;
  out.epoch_length = epoch_length;
  out.start0 = anchor;
  static const char* stat_names[] = {"MEAN", "MED", "SD"};
  for (std::size_t c = 0; c < p; ++c)
    for (const char* s : stat_names)
      out.feature_names.push_back(series.channel_names[c] + "_" + s);
  out.values.setConstant(n_epochs, static_cast<Eigen::Index>(3 * p),
                         std::numeric_limits<double>::quiet_NaN());
  out.availability.assign(static_cast<std::size_t>(n_epochs), 0.0);
  out.present.assign(static_cast<std::size_t>(n_epochs), 0);

  // Bucket sample values per epoch per channel.  The small epsilon (in
  // epoch units) keeps timestamps that round-trip as 599.999... from
  // falling into the previous bucket.
  std::vector<std::vector<std::vector<double>>> buckets(
      static_cast<std::size_t>(n_epochs), std::vector<std::vector<double>>(p));
  for (std::size_t i = 0; i < series.timestamps.size(); ++i) {
    auto e = static_cast<std::size_t>(std::floor(
        (series.timestamps[i] - anchor) / epoch_length + 1e-9));
    if (e >= static_cast<std::size_t>(n_epochs)) e = static_cast<std::size_t>(n_epochs) - 1;
    for (std::size_t c = 0; c < p; ++c) {
      const double v = series.values[i][c];
      if (!std::isnan(v)) buckets[e][c].push_back(v);
    }
  }

  for (std::size_t e = 0; e < static_cast<std::size_t>(n_epochs); ++e) {
    double avail = 1.0;
    for (std::size_t c = 0; c < p; ++c) {
      const double expected =
          std::max(1.0, std::round(series.sample_rates_hz[c] * epoch_length));
      avail = std::min(avail, static_cast<double>(buckets[e][c].size()) / expected);
    }
    out.availability[e] = std::min(avail, 1.0);
    if (out.availability[e] < availability_threshold) continue;
    bool any_empty = false;
    for (std::size_t c = 0; c < p; ++c)
      if (buckets[e][c].empty()) any_empty = true;
    if (any_empty) continue;  // only possible with threshold 0
    out.present[e] = 1;
    for (std::size_t c = 0; c < p; ++c) {
      const auto& v = buckets[e][c];
      const auto col = static_cast<Eigen::Index>(3 * c);
      out.values(static_cast<Eigen::Index>(e), col + 0) = mean(v);
      out.values(static_cast<Eigen::Index>(e), col + 1) = median(v);
      out.values(static_cast<Eigen::Index>(e), col + 2) = sample_sd(v);
    }
  }
  return out;
}

// Admission gate: missing proportion over all expected epochs, abnormal
// proportion over the non-missing ones.
inline SubjectGate gate_subject(const EpochFeatureMatrix& epochs,
                                const std::vector<char>& abnormal_mask,
                                double missing_threshold = 0.4,
                                double abnormal_threshold = 0.4) {
  const auto n = static_cast<std::size_t>(epochs.epoch_count());
  if (abnormal_mask.size() != n)
    throw validation_error("abnormal mask length must equal epoch count");
  SubjectGate gate;
  gate.subject_id = epochs.subject_id;
  std::size_t missing = 0, abnormal = 0, observed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!epochs.present[i]) {
      ++missing;
      continue;
    }
    ++observed;
    if (abnormal_mask[i]) ++abnormal;
  }
  gate.missing_proportion = n ? static_cast<double>(missing) / static_cast<double>(n) : 1.0;
  gate.abnormal_proportion =
      observed ? static_cast<double>(abnormal) / static_cast<double>(observed) : 0.0;
  gate.admitted = gate.missing_proportion <= missing_threshold &&
                  gate.abnormal_proportion <= abnormal_threshold;
  return gate;
}

// Sleep/wake separability index of one scalar feature series: epochs inside
// the putative sleep window get label 1, inside the wake window label 0, and
// the index is the fraction of labelled epochs whose nearest neighbour in
// feature value (self excluded, ties to the lowest epoch index) shares the
// putative label.
inline double swsi(const std::vector<double>& values,
                   const std::vector<double>& epoch_start_seconds,
                   const ClockWindow& sleep_window, const ClockWindow& wake_window,
                   double clock_offset_hours = 0.0) {
  if (values.size() != epoch_start_seconds.size())
    throw validation_error("swsi: values/times size mismatch");
  std::vector<double> v;
  std::vector<int> labels;
  std::size_t n_sleep = 0, n_wake = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) continue;
    const double h = clock_hour(epoch_start_seconds[i], clock_offset_hours);
    if (sleep_window.contains(h)) {
      v.push_back(values[i]);
      labels.push_back(1);
      ++n_sleep;
    } else if (wake_window.contains(h)) {
      v.push_back(values[i]);
      labels.push_back(0);
      ++n_wake;
    }
  }
  if (n_sleep == 0 || n_wake == 0)
    throw insufficient_data_error("swsi: a putative window captures zero epochs");
  return nn_label_agreement(v, labels);
}

inline double swsi(const EpochFeatureMatrix& epochs, const std::string& feature,
                   const ClockWindow& sleep_window, const ClockWindow& wake_window,
                   double clock_offset_hours = 0.0) {
  const int col = epochs.require_feature(feature);
  std::vector<double> values, times;
  for (Eigen::Index i = 0; i < epochs.epoch_count(); ++i) {
    values.push_back(epochs.values(i, col));
    times.push_back(epochs.epoch_start(i));
  }
  return swsi(values, times, sleep_window, wake_window, clock_offset_hours);
}

struct FeatureSelection {
  std::vector<std::string> selected;
  // per feature, SWSI across the subjects where it was computable
  std::map<std::string, std::vector<double>> swsi_by_feature;
};

// Retains features whose SWSI exceeds `swsi_threshold` for at least
// `subject_fraction` of the subjects where the index is computable, then
// drops, from every retained pair correlated above `correlation_dedup`
// (absolute Pearson, pooled over subjects), the feature with the lower 25%
// SWSI quantile.
inline FeatureSelection select_features(
    const std::vector<EpochFeatureMatrix>& subjects, const ClockWindow& sleep_window,
    const ClockWindow& wake_window, double swsi_threshold = 0.7,
    double subject_fraction = 0.75, double correlation_dedup = 0.95,
    double clock_offset_hours = 0.0) {
  if (subjects.empty())
    throw validation_error("select_features: need at least one admitted subject");
  const auto& names = subjects.front().feature_names;
  for (const auto& s : subjects)
    if (s.feature_names != names)
      throw validation_error("select_features: subjects disagree on feature names");

  FeatureSelection sel;
  std::vector<std::string> retained;
  for (const auto& name : names) {
    std::vector<double> per_subject;
    for (const auto& s : subjects) {
      try {
        per_subject.push_back(
            swsi(s, name, sleep_window, wake_window, clock_offset_hours));
      } catch (const insufficient_data_error&) {
        // subject contributes no vote for this feature
      }
    }
    sel.swsi_by_feature[name] = per_subject;
    if (per_subject.empty()) continue;
    std::size_t passing = 0;
    for (double v : per_subject)
      if (v > swsi_threshold) ++passing;
    if (static_cast<double>(passing) >=
        subject_fraction * static_cast<double>(per_subject.size()))
      retained.push_back(name);
  }

  if (retained.empty()) {
    std::ostringstream msg;
    msg << "no feature passed SWSI selection (threshold " << swsi_threshold << "):";
    for (const auto& [name, vals] : sel.swsi_by_feature)
      msg << " " << name << "=" << (vals.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                 : median(vals));
    throw insufficient_data_error(msg.str());
  }

  // Rank retained features by their lower-quartile SWSI, then greedily keep
  // the strongest of every over-correlated pair.
  auto lower_quartile = [&](const std::string& name) {
    return quantile(sel.swsi_by_feature.at(name), 0.25);
  };
  std::vector<std::string> ranked = retained;
  std::stable_sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    return lower_quartile(a) > lower_quartile(b);
  });

  auto pooled_values = [&](const std::string& a, const std::string& b,
                           std::vector<double>& va, std::vector<double>& vb) {
    for (const auto& s : subjects) {
      const int ca = s.require_feature(a), cb = s.require_feature(b);
      for (Eigen::Index i = 0; i < s.epoch_count(); ++i) {
        const double x = s.values(i, ca), y = s.values(i, cb);
        if (!std::isnan(x) && !std::isnan(y)) {
          va.push_back(x);
          vb.push_back(y);
        }
      }
    }
  };

  for (const auto& cand : ranked) {
    bool duplicate = false;
    for (const auto& kept : sel.selected) {
      std::vector<double> va, vb;
      pooled_values(cand, kept, va, vb);
      if (va.size() >= 2 &&
          std::abs(pearson_correlation(va, vb)) > correlation_dedup) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) sel.selected.push_back(cand);
  }
  // restore original feature order
  std::vector<std::string> ordered;
  for (const auto& name : names)
    if (std::find(sel.selected.begin(), sel.selected.end(), name) != sel.selected.end())
      ordered.push_back(name);
  sel.selected = ordered;
  return sel;
}

// Epoch matrix export: `epoch_start,availability,<feature...>`.
inline void write_epochs_csv(const EpochFeatureMatrix& epochs, const std::string& path) {
  CsvWriter w(path);
  std::vector<std::string> head = {"epoch_start", "availability"};
  head.insert(head.end(), epochs.feature_names.begin(), epochs.feature_names.end());
  w.header(head);
  for (Eigen::Index i = 0; i < epochs.epoch_count(); ++i) {
    std::vector<double> row = {epochs.epoch_start(i),
                               epochs.availability[static_cast<std::size_t>(i)]};
    for (Eigen::Index j = 0; j < epochs.feature_count(); ++j)
      row.push_back(epochs.values(i, j));
    w.numeric_line(row);
  }
}

}  // namespace eventseg::ingest
