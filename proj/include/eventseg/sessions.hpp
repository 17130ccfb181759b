#pragma once

// Stage-3 postprocessing: label smoothing, session construction with
// reinsertion and day alignment, and the session-level feature table.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "eventseg/anomaly.hpp"
#include "eventseg/common.hpp"
#include "eventseg/csv.hpp"
#include "eventseg/types.hpp"

namespace eventseg::sessions {

// ---------------------------------------------------------------------------
// Smoothing.
// ---------------------------------------------------------------------------

namespace detail {

// One pass of an order-`window` median filter on a {-1,0,1} label stream.
// The window shrinks at the edges; unlabeled epochs are skipped both as
// window members and as outputs; a tied window keeps the current label.
inline std::vector<int> median_pass(const std::vector<int>& labels, int window) {
  const int h = window / 2;
  const int n = static_cast<int>(labels.size());
  std::vector<int> out(labels);
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0) continue;
    int c0 = 0, c1 = 0;
    for (int j = std::max(0, i - h); j <= std::min(n - 1, i + h); ++j) {
      if (labels[j] == 0) ++c0;
      if (labels[j] == 1) ++c1;
    }
    if (c1 > c0)
      out[i] = 1;
    else if (c0 > c1)
      out[i] = 0;
  }
  return out;
}

}  // namespace detail

// Median smoothing followed by short-sleep elimination.  The median filter
// is iterated to a fixed point (binary median filtering converges quickly);
// afterwards every maximal sleep run shorter than min_sleep_minutes is
// relabelled wake.  The composite is idempotent: the iterated filter leaves
// only runs it cannot change, and run removal only merges wake runs, which
// the filter also leaves unchanged.  Runs are broken by unlabeled epochs.
inline LabelSequence smooth_labels(const LabelSequence& input, int window_epochs = 9,
                                   double min_sleep_minutes = 60.0) {
  if (window_epochs < 1 || window_epochs % 2 == 0)
    throw validation_error("smooth_labels: window_epochs must be a positive odd integer");
  LabelSequence out = input;

  for (int pass = 0; pass < 64; ++pass) {
    std::vector<int> next = detail::median_pass(out.labels, window_epochs);
    if (next == out.labels) break;
    out.labels = std::move(next);
  }

  const double min_epochs = min_sleep_minutes * 60.0 / out.epoch_length;
  std::size_t i = 0;
  const std::size_t n = out.labels.size();
  while (i < n) {
    if (out.labels[i] != 1) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && out.labels[j] == 1) ++j;
    if (static_cast<double>(j - i) < min_epochs)
      for (std::size_t k = i; k < j; ++k) out.labels[k] = 0;
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sessions.
// ---------------------------------------------------------------------------

enum class SessionKind { wake, sleep };

inline const char* to_string(SessionKind k) {
  return k == SessionKind::sleep ? "sleep" : "wake";
}

struct Session {
  SessionKind kind = SessionKind::wake;
  double start = 0.0;  // seconds
  double end = 0.0;
  long day_index = 0;
  std::vector<Eigen::Index> epoch_indices;
};

// Merges maximal label runs into sessions.  Reinsertion-eligible verdicts
// first fill their epochs with the label of the immediately preceding
// labelled epoch (or the following one, with a warning, when nothing
// precedes).  A sleep session whose onset clock-time falls before 05:00 is
// assigned to the previous calendar day.
inline std::vector<Session> build_sessions(
    const LabelSequence& smoothed, const std::vector<anomaly::AbnormalityVerdict>& verdicts,
    double clock_offset_hours = 0.0, double night_cutoff_hour = 5.0) {
  LabelSequence labels = smoothed;
  std::vector<Eigen::Index> reinserted;
  for (const auto& v : verdicts)
    if (v.reinserted) reinserted.push_back(v.epoch_index);
  std::sort(reinserted.begin(), reinserted.end());
  for (Eigen::Index idx : reinserted) {
    const auto i = static_cast<std::size_t>(idx);
    if (i >= labels.size() || labels.labels[i] >= 0) continue;
    int found = -1;
    for (std::size_t j = i; j-- > 0;) {
      if (labels.labels[j] >= 0) {
        found = labels.labels[j];
        break;
      }
    }
    if (found < 0) {
      for (std::size_t j = i + 1; j < labels.size(); ++j) {
        if (labels.labels[j] >= 0) {
          found = labels.labels[j];
          break;
        }
      }
      if (found >= 0)
        log_warn("build_sessions: reinsertion before any labelled epoch; using the "
                 "following epoch's label");
    }
    if (found >= 0) {
      labels.labels[i] = found;
      labels.sources[i] = LabelSource::reinserted;
    }
  }

  std::vector<Session> sessions;
  const std::size_t n = labels.size();
  std::size_t i = 0;
  while (i < n) {
    if (labels.labels[i] < 0) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < n && labels.labels[j + 1] == labels.labels[i]) ++j;
    Session s;
    s.kind = labels.labels[i] == 1 ? SessionKind::sleep : SessionKind::wake;
    s.start = labels.epoch_start(i);
    s.end = labels.epoch_start(j) + labels.epoch_length;
    for (std::size_t k = i; k <= j; ++k)
      s.epoch_indices.push_back(static_cast<Eigen::Index>(k));
    const double clock_start = s.start + clock_offset_hours * kSecondsPerHour;
    s.day_index = static_cast<long>(std::floor(clock_start / kSecondsPerDay));
    if (s.kind == SessionKind::sleep) {
      const double hour = clock_start / kSecondsPerHour -
                          static_cast<double>(s.day_index) * 24.0;
      if (hour < night_cutoff_hour) s.day_index -= 1;
    }
    sessions.push_back(std::move(s));
    i = j + 1;
  }
  return sessions;
}

// ---------------------------------------------------------------------------
// Session-level feature table.
// ---------------------------------------------------------------------------

struct SessionFeatureTable {
  std::vector<std::string> columns;
  struct Row {
    std::string subject_id;
    long day_index = 0;
    std::vector<double> values;  // NaN = absent
  };
  std::vector<Row> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    return -1;
  }
};

namespace detail {

constexpr double kLogFloor = 1e-12;

inline double log_floored(double v) { return std::log(std::max(v, kLogFloor)); }

// Pooled per-session-normalized time axis and values for one feature over a
// set of same-kind sessions (duration weighting falls out of pooling epochs).
inline void pooled_series(const std::vector<const Session*>& group,
                          const EpochFeatureMatrix& epochs, int col,
                          std::vector<double>& tau, std::vector<double>& vals) {
  for (const Session* s : group) {
    std::vector<double> sv, st;
    for (Eigen::Index idx : s->epoch_indices) {
      const double v = epochs.values(idx, col);
      if (std::isnan(v)) continue;
      sv.push_back(v);
      st.push_back(epochs.epoch_start(idx));
    }
    if (sv.empty()) continue;
    const double t0 = st.front(), t1 = st.back();
    for (std::size_t i = 0; i < sv.size(); ++i) {
      tau.push_back(t1 > t0 ? (st[i] - t0) / (t1 - t0) : 0.0);
      vals.push_back(sv[i]);
    }
  }
}

inline std::size_t distinct_count(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v.size();
}

}  // namespace detail

// Computes the per-day session feature table: sleep durations and night
// onset/offset, plus per feature and per session kind the within-session
// mean/median/sd and the linear and quadratic coefficients of the feature
// against normalized within-session time.  Multiple same-kind sessions of a
// day are pooled epoch-wise before summarizing.  sd-summary outputs are
// log-transformed with a 1e-12 floor.  With the 4-channel x 3-statistic
// input this emits exactly 196 columns.
inline SessionFeatureTable session_features(const std::vector<Session>& sessions,
                                            const EpochFeatureMatrix& epochs) {
  SessionFeatureTable table;
  table.columns = {"total_duration", "night_duration", "onset", "offset"};
  static const char* summaries[] = {"mean",       "median",     "sd",
                                    "linear.coef0", "linear.coef1", "quad.coef0",
                                    "quad.coef1", "quad.coef2"};
  for (const auto& feature : epochs.feature_names)
    for (const char* kind : {"sleep", "wake"})
      for (const char* summary : summaries)
        table.columns.push_back(feature + "." + summary + "." + kind);

  std::map<long, std::vector<const Session*>> by_day;
  for (const auto& s : sessions) by_day[s.day_index].push_back(&s);

  for (const auto& [day, group] : by_day) {
    SessionFeatureTable::Row row;
    row.subject_id = epochs.subject_id;
    row.day_index = day;
    row.values.assign(table.columns.size(), std::numeric_limits<double>::quiet_NaN());

    std::vector<const Session*> sleeps, wakes;
    for (const Session* s : group)
      (s->kind == SessionKind::sleep ? sleeps : wakes).push_back(s);

    if (!sleeps.empty()) {
      double total = 0.0;
      const Session* night = sleeps.front();
      for (const Session* s : sleeps) {
        total += s->end - s->start;
        if (s->end - s->start > night->end - night->start) night = s;
      }
      row.values[0] = total / kSecondsPerHour;
      row.values[1] = (night->end - night->start) / kSecondsPerHour;
      // onset/offset as clock hours relative to the assigned day's midnight
      const double day_start = static_cast<double>(day) * kSecondsPerDay;
      row.values[2] = (night->start - day_start) / kSecondsPerHour;
      row.values[3] = (night->end - day_start) / kSecondsPerHour;
    }

    std::size_t col = 4;
    for (Eigen::Index f = 0; f < epochs.feature_count(); ++f) {
      for (const auto* group_ptr : {&sleeps, &wakes}) {
        if (group_ptr->empty()) {
          col += 8;
          continue;
        }
        std::vector<double> tau, vals;
        detail::pooled_series(*group_ptr, epochs, static_cast<int>(f), tau, vals);
        if (vals.empty()) {
          col += 8;
          continue;
        }
        row.values[col + 0] = mean(vals);
        row.values[col + 1] = median(vals);
        row.values[col + 2] = detail::log_floored(sample_sd(vals));
        const std::size_t distinct_tau = detail::distinct_count(tau);
        if (distinct_tau >= 2) {
          const auto lin = polyfit(tau, vals, 1);
          row.values[col + 3] = lin[0];
          row.values[col + 4] = lin[1];
        }
        if (distinct_tau >= 3) {
          const auto quad = polyfit(tau, vals, 2);
          row.values[col + 5] = quad[0];
          row.values[col + 6] = quad[1];
          row.values[col + 7] = quad[2];
        }
        col += 8;
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

// Sessions export: `subject,day,kind,start,end`.
inline void write_sessions_csv(const std::vector<Session>& sessions,
                               const std::string& subject_id, const std::string& path) {
  CsvWriter w(path);
  w.header({"subject", "day", "kind", "start", "end"});
  for (const auto& s : sessions)
    w.line({subject_id, std::to_string(s.day_index), to_string(s.kind),
            format_double(s.start), format_double(s.end)});
}

// Feature table export: one row per (subject, day).
inline void write_feature_table_csv(const SessionFeatureTable& table,
                                    const std::string& path, bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw error("cannot open file for writing: " + path);
  if (!append) {
    out << "subject,day";
    for (const auto& c : table.columns) out << ',' << c;
    out << '\n';
  }
  for (const auto& row : table.rows) {
    out << row.subject_id << ',' << row.day_index;
    for (double v : row.values) out << ',' << format_double(v);
    out << '\n';
  }
}

}  // namespace eventseg::sessions
