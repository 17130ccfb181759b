#pragma once

// The adaptive core: Fisher's LDA weights, naive-Bayes classification of
// projected scores, the projection-distance separability index, and the
// gradual self-training loop that carries labels forward batch by batch.
//
// Time conventions: epochs are referenced by their start times.  A training
// window of length d ending at batch start t contains epochs with start in
// [t-d, t); the batch itself covers starts in [t, t+test_window).

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eventseg/common.hpp"
#include "eventseg/csv.hpp"
#include "eventseg/types.hpp"

namespace eventseg::flda {

struct FldaState {
  Eigen::VectorXd w;
  double z_mean0 = 0.0, z_mean1 = 0.0;   // class means of projected scores
  double z_var0 = 1.0, z_var1 = 1.0;     // class variances (denominator n-1)
  double gamma = 1.0;                    // prior odds ratio
  double train_begin = 0.0, train_end = 0.0;
};

// Ridge used when the caller does not pass one: 1e-8 * trace(S_W)/p.
inline constexpr double kAutoRidge = -1.0;

// w = (S_W + ridge*I)^{-1} (mean1 - mean0), with S_W the within-class
// scatter.  Throws class_starvation_error when either class has fewer than
// two members.
inline Eigen::VectorXd fisher_weights(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                      std::span<const int> y,
                                      double ridge = kAutoRidge) {
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw validation_error("fisher_weights: rows/labels mismatch");
  const Eigen::Index p = x.cols();
  Eigen::VectorXd sum0 = Eigen::VectorXd::Zero(p), sum1 = Eigen::VectorXd::Zero(p);
  double n0 = 0, n1 = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (y[static_cast<std::size_t>(i)] == 1) {
      sum1 += x.row(i).transpose();
      n1 += 1;
    } else {
      sum0 += x.row(i).transpose();
      n0 += 1;
    }
  }
  if (n0 < 2 || n1 < 2)
    throw class_starvation_error("fisher_weights: a class is absent or singleton");
  const Eigen::VectorXd mean0 = sum0 / n0, mean1 = sum1 / n1;

  Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd d =
        x.row(i).transpose() - (y[static_cast<std::size_t>(i)] == 1 ? mean1 : mean0);
    sw.noalias() += d * d.transpose();
  }
  if (ridge == kAutoRidge) ridge = 1e-8 * sw.trace() / static_cast<double>(p);
  sw.diagonal().array() += ridge;
  return sw.ldlt().solve(mean1 - mean0);
}

inline Eigen::VectorXd fisher_weights(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                      double ridge = kAutoRidge) {
  return fisher_weights(Eigen::Ref<const Eigen::MatrixXd>(x),
                        std::span<const int>(y.data(), y.size()), ridge);
}

// Fits the full classifier state on a labelled window: weights plus the
// class means/variances of the projected scores within that window.
//
// The decision rule is the MAP classifier under conjugate priors, so the
// class variances are posterior estimates: each sample variance is shrunk
// toward the pooled within-class variance with a weak (two pseudo-point)
// inverse-gamma prior.  Without this, a window whose boundary slices two or
// three epochs off a run can report a near-zero class variance and reject
// the entire class on the next batch.
inline constexpr double kVariancePriorWeight = 2.0;

inline FldaState fit_state(const Eigen::Ref<const Eigen::MatrixXd>& x,
                           std::span<const int> y, double gamma = 1.0,
                           double ridge = kAutoRidge) {
  FldaState s;
  s.w = fisher_weights(x, y, ridge);
  s.gamma = gamma;
  const Eigen::VectorXd z = x * s.w;
  double n0 = 0, n1 = 0, m0 = 0, m1 = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (y[static_cast<std::size_t>(i)] == 1) {
      m1 += z(i);
      n1 += 1;
    } else {
      m0 += z(i);
      n0 += 1;
    }
  }
  m0 /= n0;
  m1 /= n1;
  double ss0 = 0, ss1 = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double d = z(i) - (y[static_cast<std::size_t>(i)] == 1 ? m1 : m0);
    (y[static_cast<std::size_t>(i)] == 1 ? ss1 : ss0) += d * d;
  }
  const double pooled = (ss0 + ss1) / (n0 + n1 - 2);
  if (!(pooled > 0))
    throw class_starvation_error("fit_state: zero within-class score variance");
  const double nu = kVariancePriorWeight;
  const double v0 = (ss0 + nu * pooled) / ((n0 - 1) + nu);
  const double v1 = (ss1 + nu * pooled) / ((n1 - 1) + nu);
  s.z_mean0 = m0;
  s.z_mean1 = m1;
  s.z_var0 = v0;
  s.z_var1 = v1;
  return s;
}

inline FldaState fit_state(const Eigen::MatrixXd& x, const std::vector<int>& y,
                           double gamma = 1.0, double ridge = kAutoRidge) {
  return fit_state(Eigen::Ref<const Eigen::MatrixXd>(x),
                   std::span<const int>(y.data(), y.size()), gamma, ridge);
}

// Naive-Bayes decision on the projected score:
//   1{ (z-z0)^2/v0 - (z-z1)^2/v1 > log(gamma * v1/v0) }.
inline int classify_score(const FldaState& s, double z) {
  const double lhs = (z - s.z_mean0) * (z - s.z_mean0) / s.z_var0 -
                     (z - s.z_mean1) * (z - s.z_mean1) / s.z_var1;
  const double rhs = std::log(s.gamma * s.z_var1 / s.z_var0);
  return lhs > rhs ? 1 : 0;
}

inline int project_classify(const FldaState& s, const Eigen::VectorXd& x) {
  return classify_score(s, s.w.dot(x));
}

// Separability index over a merged labelled sample: the fraction of points
// whose nearest neighbour under the projection distance |w'(x - x')| shares
// their predicted label.  Ties in distance break towards the lowest index.
inline double separability_index(const std::vector<double>& scores,
                                 const std::vector<int>& labels) {
  if (scores.size() < 2)
    throw insufficient_data_error("separability_index: merged set size must be >= 2");
  return nn_label_agreement(scores, labels);
}

inline double separability_index(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                 const Eigen::VectorXd& w) {
  const Eigen::VectorXd z = x * w;
  std::vector<double> values(z.data(), z.data() + z.size());
  return separability_index(values, labels);
}

// ---------------------------------------------------------------------------
// Gradual self-training (the adaptation loop).
// ---------------------------------------------------------------------------

struct AdaptationSchedule {
  double baseline_end = 36.0 * kSecondsPerHour;
  double test_window = 3.0 * kSecondsPerHour;
  std::vector<double> candidate_train_lengths;  // ascending, all >= test_window

  static AdaptationSchedule table_default() {
    AdaptationSchedule s;
    for (int h = 12; h <= 60; ++h)
      s.candidate_train_lengths.push_back(h * kSecondsPerHour);
    return s;
  }

  void validate() const {
    if (!(test_window > 0)) throw validation_error("schedule: test_window must be positive");
    if (candidate_train_lengths.empty())
      throw validation_error("schedule: no candidate training lengths");
    double prev = 0;
    for (double d : candidate_train_lengths) {
      if (d < test_window)
        throw validation_error("schedule: candidate lengths must be >= test_window");
      if (d <= prev)
        throw validation_error("schedule: candidate lengths must be ascending");
      prev = d;
    }
  }
};

struct BatchDiagnostic {
  double batch_start = 0.0;
  double chosen_train_length = std::numeric_limits<double>::quiet_NaN();  // NaN = carried forward
  double si = std::numeric_limits<double>::quiet_NaN();
};

struct SelfTrainResult {
  LabelSequence labels;
  std::vector<BatchDiagnostic> diagnostics;
  std::vector<FldaState> committed_states;  // one per non-empty batch, in order
  std::vector<double> batch_starts;         // aligned with committed_states
};

// Gradual self-training: starting from the HMM baseline labels, walk the
// post-baseline stream in test_window batches.  For every candidate training
// length d, refit the FLDA state on the already-labelled window [t-d, t),
// classify the batch, and score the separability index over train+test;
// commit the labels of the candidate with the highest SI (the smallest d
// wins ties).  Candidate windows with an absent or singleton class are
// skipped; when every candidate is skipped the batch is classified by the
// last valid state and marked carried-forward.  Baseline labels are never
// modified and the loop is deterministic.
inline SelfTrainResult gradual_self_train(const EpochFeatureMatrix& epochs,
                                          const LabelSequence& baseline_labels,
                                          const AdaptationSchedule& schedule,
                                          double gamma = 1.0,
                                          double ridge = kAutoRidge) {
  schedule.validate();
  const auto n = epochs.epoch_count();
  if (n == 0) throw validation_error("gradual_self_train: empty epoch matrix");
  if (baseline_labels.size() != static_cast<std::size_t>(n) ||
      baseline_labels.start0 != epochs.start0 ||
      baseline_labels.epoch_length != epochs.epoch_length)
    throw validation_error("gradual_self_train: baseline labels not aligned with epochs");
  if (schedule.baseline_end - epochs.start0 < schedule.candidate_train_lengths.front())
    throw validation_error(
        "gradual_self_train: baseline shorter than the smallest training window");

  SelfTrainResult result;
  result.labels = baseline_labels;
  for (std::size_t i = 0; i < result.labels.size(); ++i) {
    if (epochs.epoch_start(static_cast<Eigen::Index>(i)) >= schedule.baseline_end) {
      result.labels.labels[i] = -1;  // adaptation fills these
      result.labels.sources[i] = LabelSource::none;
    } else if (result.labels.labels[i] >= 0) {
      result.labels.sources[i] = LabelSource::hmm_baseline;
    }
  }

  const double step = epochs.epoch_length;
  // first epoch index with start >= t
  auto index_at = [&](double t) {
    const double raw = std::ceil((t - epochs.start0) / step - 1e-9);
    return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(raw), 0, n);
  };

  std::optional<FldaState> last_state;
  const double stream_end = epochs.epoch_start(n - 1) + step;
  const double d_max = schedule.candidate_train_lengths.back();

  for (double t = schedule.baseline_end; t < stream_end; t += schedule.test_window) {
    std::vector<Eigen::Index> batch;
    for (Eigen::Index i = index_at(t); i < index_at(t + schedule.test_window); ++i)
      if (epochs.present[static_cast<std::size_t>(i)]) batch.push_back(i);
    if (batch.empty()) continue;

    Eigen::MatrixXd batch_x(static_cast<Eigen::Index>(batch.size()), epochs.feature_count());
    for (std::size_t i = 0; i < batch.size(); ++i)
      batch_x.row(static_cast<Eigen::Index>(i)) = epochs.values.row(batch[i]);

    // Labelled pool covering the largest candidate window, time-ascending;
    // every candidate window is a suffix of it.
    std::vector<Eigen::Index> pool;
    for (Eigen::Index i = index_at(t - d_max); i < index_at(t); ++i)
      if (result.labels.labels[static_cast<std::size_t>(i)] >= 0) pool.push_back(i);
    Eigen::MatrixXd pool_x(static_cast<Eigen::Index>(pool.size()), epochs.feature_count());
    std::vector<int> pool_y(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      pool_x.row(static_cast<Eigen::Index>(i)) = epochs.values.row(pool[i]);
      pool_y[i] = result.labels.labels[static_cast<std::size_t>(pool[i])];
    }

    struct Candidate {
      double d = 0.0;
      double si = -1.0;
      FldaState state;
      std::vector<int> preds;
    };
    std::optional<Candidate> best;

    for (double d : schedule.candidate_train_lengths) {
      // suffix of the pool with start >= t - d
      const Eigen::Index lo = index_at(t - d);
      std::size_t offset = 0;
      while (offset < pool.size() && pool[offset] < lo) ++offset;
      const auto rows = static_cast<Eigen::Index>(pool.size() - offset);
      if (rows < 4) continue;

      FldaState state;
      try {
        state = fit_state(pool_x.bottomRows(rows),
                          std::span<const int>(pool_y.data() + offset,
                                               static_cast<std::size_t>(rows)),
                          gamma, ridge);
        state.train_begin = t - d;
        state.train_end = t;
      } catch (const class_starvation_error&) {
        continue;  // skipped, not scored
      }

      std::vector<int> preds(batch.size());
      std::vector<double> merged_z;
      std::vector<int> merged_y;
      merged_z.reserve(static_cast<std::size_t>(rows) + batch.size());
      merged_y.reserve(merged_z.capacity());
      const Eigen::VectorXd ztrain = pool_x.bottomRows(rows) * state.w;
      for (Eigen::Index i = 0; i < rows; ++i) {
        merged_z.push_back(ztrain(i));
        merged_y.push_back(pool_y[offset + static_cast<std::size_t>(i)]);
      }
      const Eigen::VectorXd zbatch = batch_x * state.w;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        preds[i] = classify_score(state, zbatch(static_cast<Eigen::Index>(i)));
        merged_z.push_back(zbatch(static_cast<Eigen::Index>(i)));
        merged_y.push_back(preds[i]);
      }
      const double si = separability_index(merged_z, merged_y);
      if (!best || si > best->si)
        best = Candidate{d, si, std::move(state), std::move(preds)};
    }

    BatchDiagnostic diag;
    diag.batch_start = t;
    if (best) {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        result.labels.labels[static_cast<std::size_t>(batch[i])] = best->preds[i];
        result.labels.sources[static_cast<std::size_t>(batch[i])] = LabelSource::flda;
      }
      diag.chosen_train_length = best->d;
      diag.si = best->si;
      last_state = best->state;
      result.committed_states.push_back(std::move(best->state));
      result.batch_starts.push_back(t);
    } else if (last_state) {
      log_warn("gradual_self_train: all candidate windows class-starved at t=" +
               std::to_string(t / kSecondsPerHour) + "h; carrying last state forward");
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const int pred = classify_score(
            *last_state, last_state->w.dot(batch_x.row(static_cast<Eigen::Index>(i))));
        result.labels.labels[static_cast<std::size_t>(batch[i])] = pred;
        result.labels.sources[static_cast<std::size_t>(batch[i])] = LabelSource::carried_forward;
      }
      result.committed_states.push_back(*last_state);
      result.batch_starts.push_back(t);
    } else {
      throw insufficient_data_error(
          "gradual_self_train: no valid FLDA state could be fitted for the first batch");
    }
    result.diagnostics.push_back(diag);
  }
  return result;
}

// Label stream export: `epoch_start,label,source`.
inline void write_labels_csv(const LabelSequence& labels, const std::string& path) {
  CsvWriter w(path);
  w.header({"epoch_start", "label", "source"});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.labels[i] < 0) continue;
    w.line({format_double(labels.epoch_start(i)), std::to_string(labels.labels[i]),
            to_string(labels.sources[i])});
  }
}

// Per-batch diagnostics export: `batch_start,chosen_d,si`.
inline void write_diagnostics_csv(const std::vector<BatchDiagnostic>& diags,
                                  const std::string& path) {
  CsvWriter w(path);
  w.header({"batch_start", "chosen_d", "si"});
  for (const auto& d : diags)
    w.numeric_line({d.batch_start, d.chosen_train_length, d.si});
}

}  // namespace eventseg::flda
