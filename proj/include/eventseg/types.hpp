#pragma once

// Domain types shared across the pipeline stages.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "eventseg/common.hpp"

namespace eventseg {

// Raw timestamped multi-channel samples.  NaN marks a missing sample slot.
struct MultiChannelSeries {
  std::string subject_id;
  std::vector<std::string> channel_names;    // size p
  std::vector<double> sample_rates_hz;       // size p, nominal rates
  std::vector<double> timestamps;            // seconds, strictly increasing
  std::vector<std::vector<double>> values;   // one row per timestamp, p slots

  std::size_t channel_count() const { return channel_names.size(); }

  void validate() const {
    if (channel_names.empty())
      throw validation_error("series must have at least one channel");
    if (sample_rates_hz.size() != channel_names.size())
      throw validation_error("sample_rates size must match channel count");
    if (values.size() != timestamps.size())
      throw validation_error("values/timestamps size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i)
      if (values[i].size() != channel_names.size())
        throw validation_error("sample row " + std::to_string(i) +
                               " does not have one slot per channel");
    for (std::size_t i = 1; i < timestamps.size(); ++i)
      if (!(timestamps[i] > timestamps[i - 1]))
        throw validation_error("timestamps must be strictly increasing (row " +
                               std::to_string(i) + ")");
    for (double r : sample_rates_hz)
      if (!(r > 0)) throw validation_error("sample rates must be positive");
  }
};

// Per-epoch statistical features on a fixed grid.  Epoch i starts at
// start0 + i * epoch_length.  Features of an epoch are either all present or
// all absent (NaN), controlled by the availability threshold at build time.
struct EpochFeatureMatrix {
  std::string subject_id;
  double epoch_length = 600.0;  // seconds
  double start0 = 0.0;          // first epoch start, seconds
  std::vector<std::string> feature_names;
  Eigen::MatrixXd values;             // n_epochs x M, NaN where absent
  std::vector<double> availability;   // n_epochs, in [0,1]
  std::vector<char> present;          // n_epochs

  Eigen::Index epoch_count() const { return values.rows(); }
  Eigen::Index feature_count() const { return values.cols(); }
  double epoch_start(Eigen::Index i) const { return start0 + static_cast<double>(i) * epoch_length; }

  int feature_index(const std::string& name) const {
    for (std::size_t i = 0; i < feature_names.size(); ++i)
      if (feature_names[i] == name) return static_cast<int>(i);
    return -1;
  }

  int require_feature(const std::string& name) const {
    int idx = feature_index(name);
    if (idx < 0) throw validation_error("unknown feature: " + name);
    return idx;
  }

  // A copy restricted to the named feature columns (presence flags kept).
  EpochFeatureMatrix select(const std::vector<std::string>& names) const {
    EpochFeatureMatrix out;
    out.subject_id = subject_id;
    out.epoch_length = epoch_length;
    out.start0 = start0;
    out.feature_names = names;
    out.values.resize(values.rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j)
      out.values.col(static_cast<Eigen::Index>(j)) = values.col(require_feature(names[j]));
    out.availability = availability;
    out.present = present;
    return out;
  }
};

// Where a label came from, for the output streams.
enum class LabelSource { none, hmm_baseline, flda, carried_forward, reinserted };

inline const char* to_string(LabelSource s) {
  switch (s) {
    case LabelSource::hmm_baseline: return "hmm-baseline";
    case LabelSource::flda: return "flda";
    case LabelSource::carried_forward: return "carried-forward";
    case LabelSource::reinserted: return "reinserted";
    default: return "none";
  }
}

// Per-epoch event labels on the same grid as an EpochFeatureMatrix.
// label: 0 = wake, 1 = sleep, -1 = unlabeled (missing or excluded epoch).
struct LabelSequence {
  double start0 = 0.0;
  double epoch_length = 600.0;
  std::vector<int> labels;
  std::vector<LabelSource> sources;

  std::size_t size() const { return labels.size(); }
  double epoch_start(std::size_t i) const { return start0 + static_cast<double>(i) * epoch_length; }

  static LabelSequence unlabeled(double start0, double epoch_length, std::size_t n) {
    LabelSequence seq;
    seq.start0 = start0;
    seq.epoch_length = epoch_length;
    seq.labels.assign(n, -1);
    seq.sources.assign(n, LabelSource::none);
    return seq;
  }
};

struct SubjectGate {
  std::string subject_id;
  double missing_proportion = 0.0;
  double abnormal_proportion = 0.0;
  bool admitted = false;
};

// Daily clock interval in hours, e.g. {19, 22}.  Supports midnight wrap.
struct ClockWindow {
  double start_hour = 0.0;
  double end_hour = 0.0;

  bool contains(double hour) const {
    if (start_hour <= end_hour) return hour >= start_hour && hour < end_hour;
    return hour >= start_hour || hour < end_hour;
  }
};

// Clock hour of day for a timestamp (seconds since study start), given the
// study's clock offset: offset_hours is the clock time at t = 0.
inline double clock_hour(double t_seconds, double offset_hours) {
  double h = std::fmod(t_seconds / kSecondsPerHour + offset_hours, 24.0);
  if (h < 0) h += 24.0;
  return h;
}

}  // namespace eventseg
