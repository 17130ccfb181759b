#pragma once

// Evaluation harness: the five segmentation metrics, LOESS detrending for
// the dHMM baseline, the benchmark runner, and paired t-tests.

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "eventseg/common.hpp"
#include "eventseg/flda.hpp"
#include "eventseg/hmm.hpp"
#include "eventseg/sessions.hpp"
#include "eventseg/simgen.hpp"
#include "eventseg/types.hpp"
#include "json.hpp"

namespace eventseg::eval {

// ---------------------------------------------------------------------------
// Single-trial metrics.
// ---------------------------------------------------------------------------

struct TrialMetrics {
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> f1;             // absent when truth has one class
  std::optional<double> cosine;         // absent when either vector is all-zero
  std::optional<double> onset_diff;     // hours; absent without predicted sessions
  std::optional<double> duration_diff;  // hours
  std::string f1_reason;
};

namespace detail {

struct Run {
  std::size_t begin, end;  // [begin, end) epoch indices
};

inline std::vector<Run> sleep_runs(const std::vector<int>& labels) {
  std::vector<Run> runs;
  std::size_t i = 0;
  while (i < labels.size()) {
    if (labels[i] != 1) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < labels.size() && labels[j] == 1) ++j;
    runs.push_back({i, j});
    i = j;
  }
  return runs;
}

}  // namespace detail

// Scores a predicted label sequence against the truth on a shared epoch
// grid.  Sleep (=1) is the positive class.  Onset error averages, over the
// predicted sleep sessions, the distance to the nearest true onset;
// duration error compares each predicted sleep session with the true
// session overlapping it most, charging non-overlapping predictions their
// full length.
inline TrialMetrics score(const std::vector<int>& pred, const std::vector<int>& truth,
                          double epoch_hours) {
  if (pred.size() != truth.size())
    throw validation_error("score: sequences must share the epoch grid");
  TrialMetrics m;

  std::size_t correct = 0, valid = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
  double dot = 0, norm_p = 0, norm_t = 0;
  bool truth_has_sleep = false, truth_has_wake = false;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || truth[i] < 0) continue;
    ++valid;
    if (pred[i] == truth[i]) ++correct;
    if (truth[i] == 1) truth_has_sleep = true;
    if (truth[i] == 0) truth_has_wake = true;
    if (pred[i] == 1 && truth[i] == 1) ++tp;
    if (pred[i] == 1 && truth[i] == 0) ++fp;
    if (pred[i] == 0 && truth[i] == 1) ++fn;
    dot += pred[i] * truth[i];
    norm_p += pred[i];
    norm_t += truth[i];
  }
  if (valid == 0) throw insufficient_data_error("score: no jointly labelled epochs");
  m.accuracy = static_cast<double>(correct) / static_cast<double>(valid);

  if (!truth_has_sleep || !truth_has_wake) {
    m.f1_reason = "truth contains a single class";
  } else if (tp + fp == 0 || tp + fn == 0) {
    if (tp + fp + fn == 0) {
      m.f1_reason = "no sleep in prediction or truth";
    } else {
      m.f1 = 0.0;  // sleep exists but precision or recall is zero
    }
  } else {
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  if (norm_p > 0 && norm_t > 0) m.cosine = dot / std::sqrt(norm_p * norm_t);

  const auto pred_runs = detail::sleep_runs(pred);
  const auto true_runs = detail::sleep_runs(truth);
  if (!pred_runs.empty() && !true_runs.empty()) {
    double onset_sum = 0, duration_sum = 0;
    for (const auto& pr : pred_runs) {
      const double p_on = static_cast<double>(pr.begin) * epoch_hours;
      const double p_dur = static_cast<double>(pr.end - pr.begin) * epoch_hours;
      double best_onset = std::numeric_limits<double>::infinity();
      double best_overlap = 0;
      double overlap_dur = 0;
      for (const auto& tr : true_runs) {
        const double t_on = static_cast<double>(tr.begin) * epoch_hours;
        best_onset = std::min(best_onset, std::abs(p_on - t_on));
        const double lo = std::max(pr.begin, tr.begin);
        const double hi = std::min(pr.end, tr.end);
        const double ov = hi > lo ? (hi - lo) * epoch_hours : 0.0;
        if (ov > best_overlap) {
          best_overlap = ov;
          overlap_dur = static_cast<double>(tr.end - tr.begin) * epoch_hours;
        }
      }
      onset_sum += best_onset;
      duration_sum += best_overlap > 0 ? std::abs(p_dur - overlap_dur) : p_dur;
    }
    m.onset_diff = onset_sum / static_cast<double>(pred_runs.size());
    m.duration_diff = duration_sum / static_cast<double>(pred_runs.size());
  }
  return m;
}

struct MetricReport {
  int n_trials = 0;
  int n_failed = 0;
  std::vector<double> accuracy, f1, cosine, onset_diff, duration_diff;  // per trial

  double mean_of(const std::vector<double>& v) const { return eventseg::mean(v); }
  double mean_accuracy() const { return mean_of(accuracy); }
  double mean_f1() const { return mean_of(f1); }
  double mean_cosine() const { return mean_of(cosine); }
  double mean_onset_diff() const { return mean_of(onset_diff); }
  double mean_duration_diff() const { return mean_of(duration_diff); }

  void add(const TrialMetrics& m) {
    ++n_trials;
    accuracy.push_back(m.accuracy);
    if (m.f1) f1.push_back(*m.f1);
    if (m.cosine) cosine.push_back(*m.cosine);
    if (m.onset_diff) onset_diff.push_back(*m.onset_diff);
    if (m.duration_diff) duration_diff.push_back(*m.duration_diff);
  }
};

// ---------------------------------------------------------------------------
// LOESS detrending (tricube-weighted local linear regression on the sample
// index), level-preserving: residuals plus the global mean.
// ---------------------------------------------------------------------------

inline std::vector<double> loess_detrend(const std::vector<double>& values, double span = 0.75) {
  const int n = static_cast<int>(values.size());
  if (n < 5) throw insufficient_data_error("loess_detrend: need at least 5 points");
  if (!(span > 0.0) || span > 1.0)
    throw validation_error("loess_detrend: span must lie in (0, 1]");
  const int q = std::min(n, static_cast<int>(std::ceil(span * n)));
  if (q < 3) throw validation_error("loess_detrend: span too small for local fits");

  const double grand_mean = mean(values);
  std::vector<double> out(values.size());
  for (int i = 0; i < n; ++i) {
    int a = std::clamp(i - (q - 1) / 2, 0, n - q);
    // weighted linear fit over window [a, a+q)
    const double dmax = std::max(std::abs(i - a), std::abs(a + q - 1 - i));
    double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
    for (int j = a; j < a + q; ++j) {
      const double u = dmax > 0 ? std::abs(j - i) / dmax : 0.0;
      const double w = u < 1.0 ? std::pow(1.0 - u * u * u, 3) : 0.0;
      const double x = j - i;  // center the regressor at the fit point
      sw += w;
      swx += w * x;
      swy += w * values[static_cast<std::size_t>(j)];
      swxx += w * x * x;
      swxy += w * x * values[static_cast<std::size_t>(j)];
    }
    const double det = sw * swxx - swx * swx;
    double fitted;
    if (std::abs(det) < 1e-12 * std::max(1.0, sw * swxx))
      fitted = swy / sw;  // degenerate window: weighted mean
    else
      fitted = (swxx * swy - swx * swxy) / det;  // intercept at x = 0
    out[static_cast<std::size_t>(i)] = values[static_cast<std::size_t>(i)] - fitted + grand_mean;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paired t-test, with the t CDF evaluated through the regularized
// incomplete beta function (continued fraction, |error| < 1e-10).
// ---------------------------------------------------------------------------

namespace detail {

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Continued fraction for the regularized incomplete beta (Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double front =
      std::exp(a * std::log(x) + b * std::log(1.0 - x) - log_beta(a, b));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - std::exp(b * std::log(1.0 - x) + a * std::log(x) - log_beta(b, a)) *
                   beta_cf(b, a, 1.0 - x) / b;
}

}  // namespace detail

inline double student_t_cdf(double t, double df) {
  if (df <= 0) throw validation_error("student_t_cdf: df must be positive");
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  const double x = df / (df + t * t);
  const double tail = 0.5 * detail::incomplete_beta(0.5 * df, 0.5, x);
  return t > 0 ? 1.0 - tail : tail;
}

enum class Alternative { greater, less, two_sided };

struct TTestResult {
  double t = 0.0;
  double p = std::numeric_limits<double>::quiet_NaN();
  double df = 0.0;
  bool degenerate = false;  // zero variance of the differences
};

inline TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b,
                                Alternative alternative = Alternative::greater) {
  if (a.size() != b.size() || a.size() < 2)
    throw validation_error("paired_ttest: need equal-length samples of size >= 2");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double m = mean(d);
  const double sd = sample_sd(d);
  TTestResult r;
  r.df = static_cast<double>(d.size() - 1);
  if (sd == 0.0) {
    r.degenerate = true;
    r.t = m == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), m);
    return r;
  }
  r.t = m / (sd / std::sqrt(static_cast<double>(d.size())));
  switch (alternative) {
    case Alternative::greater: r.p = 1.0 - student_t_cdf(r.t, r.df); break;
    case Alternative::less: r.p = student_t_cdf(r.t, r.df); break;
    case Alternative::two_sided: r.p = 2.0 * (1.0 - student_t_cdf(std::abs(r.t), r.df)); break;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Benchmark runner.
// ---------------------------------------------------------------------------

enum class Method { hmm, dhmm, proposed };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::hmm: return "hmm";
    case Method::dhmm: return "dhmm";
    default: return "proposed";
  }
}

inline Method method_from_string(const std::string& s) {
  if (s == "hmm") return Method::hmm;
  if (s == "dhmm") return Method::dhmm;
  if (s == "proposed" || s == "hmm-flda") return Method::proposed;
  throw validation_error("unknown method '" + s + "' (valid: hmm, dhmm, proposed)");
}

enum class Protocol { in_sample, out_of_sample };

struct BenchmarkOptions {
  std::vector<Method> methods = {Method::hmm, Method::dhmm, Method::proposed};
  int n_realizations = 100;
  int n_repeats = 10;  // held-out draws per training realization (out-of-sample)
  Protocol protocol = Protocol::out_of_sample;
  std::uint64_t seed = 1;
  double baseline_end_hours = 36.0;
  double loess_span = 0.75;
  int jobs = 1;
  flda::AdaptationSchedule schedule = flda::AdaptationSchedule::table_default();
  hmm::FitOptions hmm_options;
  // The adaptive method's stage ends with the modified median filter; the
  // HMM decoders are already smoothed by their transition prior.
  int smoothing_window_epochs = 9;
  double min_sleep_minutes = 60.0;
};

struct BenchmarkReport {
  std::map<Method, MetricReport> reports;
  // p[{a,b}][metric] = one-sided p-value that a outperforms b
  std::map<std::pair<Method, Method>, std::map<std::string, double>> pairwise_p;
  int n_trials = 0;
};

namespace detail {

struct TrainedMethods {
  hmm::GaussianHmm model;          // shared baseline HMM fit (raw channels)
  int sleep_state = 0;
  hmm::GaussianHmm dhmm_model;     // fit on detrended channels
  int dhmm_sleep_state = 0;
  flda::SelfTrainResult self_train;
  std::vector<int> proposed_in_sample;
};

inline Eigen::MatrixXd detrend_channels(const Eigen::MatrixXd& x, double span) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    std::vector<double> col(x.col(c).data(), x.col(c).data() + x.rows());
    const auto det = loess_detrend(col, span);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      out(i, c) = det[static_cast<std::size_t>(i)];
  }
  return out;
}

inline EpochFeatureMatrix realization_epochs(const simgen::SimRealization& real) {
  EpochFeatureMatrix epochs;
  epochs.subject_id = "sim";
  epochs.start0 = 0.0;
  epochs.epoch_length =
      real.time_hours.size() > 1
          ? (real.time_hours[1] - real.time_hours[0]) * kSecondsPerHour
          : 600.0;
  epochs.feature_names = {"X1", "X2"};
  epochs.values = real.observations;
  epochs.availability.assign(real.time_hours.size(), 1.0);
  epochs.present.assign(real.time_hours.size(), 1);
  return epochs;
}

inline std::vector<int> decode_to_labels(const hmm::GaussianHmm& model, int sleep_state,
                                         const Eigen::MatrixXd& x) {
  const auto dec = hmm::decode(model, x);
  std::vector<int> labels(dec.states.size());
  for (std::size_t i = 0; i < dec.states.size(); ++i)
    labels[i] = dec.states[i] == sleep_state ? 1 : 0;
  return labels;
}

inline Eigen::Index baseline_rows(const simgen::SimRealization& real, double baseline_end_hours) {
  Eigen::Index n = 0;
  while (n < static_cast<Eigen::Index>(real.time_hours.size()) &&
         real.time_hours[static_cast<std::size_t>(n)] < baseline_end_hours)
    ++n;
  return n;
}

inline TrainedMethods train_on(const simgen::SimRealization& real,
                               const BenchmarkOptions& opts, bool want_dhmm,
                               bool want_proposed, std::uint64_t trial_seed) {
  TrainedMethods tm;
  const Eigen::Index n0 = baseline_rows(real, opts.baseline_end_hours);
  if (n0 < 8) throw insufficient_data_error("benchmark: baseline too short");

  hmm::FitOptions fit_opts = opts.hmm_options;
  fit_opts.K = 2;
  fit_opts.seed = trial_seed;
  tm.model = hmm::fit_em(real.observations.topRows(n0), fit_opts);
  tm.sleep_state = hmm::sleep_state_index(tm.model, 0, true);

  if (want_dhmm) {
    const Eigen::MatrixXd det = detrend_channels(real.observations, opts.loess_span);
    tm.dhmm_model = hmm::fit_em(det.topRows(n0), fit_opts);
    tm.dhmm_sleep_state = hmm::sleep_state_index(tm.dhmm_model, 0, true);
  }

  if (want_proposed) {
    EpochFeatureMatrix epochs = realization_epochs(real);
    const auto dec = hmm::decode(tm.model, real.observations.topRows(n0));
    LabelSequence baseline =
        LabelSequence::unlabeled(0.0, epochs.epoch_length, epochs.present.size());
    for (Eigen::Index i = 0; i < n0; ++i) {
      baseline.labels[static_cast<std::size_t>(i)] =
          dec.states[static_cast<std::size_t>(i)] == tm.sleep_state ? 1 : 0;
      baseline.sources[static_cast<std::size_t>(i)] = LabelSource::hmm_baseline;
    }
    flda::AdaptationSchedule schedule = opts.schedule;
    schedule.baseline_end = opts.baseline_end_hours * kSecondsPerHour;
    tm.self_train = flda::gradual_self_train(epochs, baseline, schedule);
    tm.proposed_in_sample = tm.self_train.labels.labels;
  }
  return tm;
}

// Out-of-sample application of the proposed method: the baseline of the
// held-out realization is decoded with the trained HMM, and each
// post-baseline batch is classified by the FLDA state committed for that
// batch on the training realization (the last state carries forward past
// the training stream's end).
inline std::vector<int> replay_proposed(const TrainedMethods& tm,
                                        const simgen::SimRealization& test,
                                        const BenchmarkOptions& opts) {
  const Eigen::Index n = test.observations.rows();
  const Eigen::Index n0 = baseline_rows(test, opts.baseline_end_hours);
  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  const auto dec = hmm::decode(tm.model, test.observations.topRows(n0));
  for (Eigen::Index i = 0; i < n0; ++i)
    labels[static_cast<std::size_t>(i)] =
        dec.states[static_cast<std::size_t>(i)] == tm.sleep_state ? 1 : 0;

  if (tm.self_train.committed_states.empty())
    throw insufficient_data_error("benchmark: no committed FLDA states to replay");
  const double step_h = test.time_hours.size() > 1
                            ? test.time_hours[1] - test.time_hours[0]
                            : 1.0 / 6.0;
  const double test_window_h = opts.schedule.test_window / kSecondsPerHour;
  for (Eigen::Index i = n0; i < n; ++i) {
    const double t = test.time_hours[static_cast<std::size_t>(i)];
    auto batch = static_cast<std::size_t>(
        std::floor((t - opts.baseline_end_hours) / test_window_h + 1e-9));
    (void)step_h;
    if (batch >= tm.self_train.committed_states.size())
      batch = tm.self_train.committed_states.size() - 1;
    const auto& state = tm.self_train.committed_states[batch];
    labels[static_cast<std::size_t>(i)] = flda::classify_score(
        state, state.w.dot(test.observations.row(i)));
  }
  return labels;
}

inline std::vector<int> smooth_proposed(const std::vector<int>& labels,
                                        double epoch_hours,
                                        const BenchmarkOptions& opts) {
  LabelSequence seq =
      LabelSequence::unlabeled(0.0, epoch_hours * kSecondsPerHour, labels.size());
  seq.labels = labels;
  return sessions::smooth_labels(seq, opts.smoothing_window_epochs, opts.min_sleep_minutes)
      .labels;
}

}  // namespace detail

inline BenchmarkReport run_benchmark(const simgen::SimConfig& scenario,
                                     const BenchmarkOptions& opts) {
  if (opts.n_realizations < 1 || opts.n_repeats < 1)
    throw validation_error("run_benchmark: need at least one trial");
  if (opts.methods.empty()) throw validation_error("run_benchmark: no methods requested");

  const bool want_hmm =
      std::find(opts.methods.begin(), opts.methods.end(), Method::hmm) != opts.methods.end();
  const bool want_dhmm =
      std::find(opts.methods.begin(), opts.methods.end(), Method::dhmm) != opts.methods.end();
  const bool want_proposed = std::find(opts.methods.begin(), opts.methods.end(),
                                       Method::proposed) != opts.methods.end();

  const int repeats = opts.protocol == Protocol::out_of_sample ? opts.n_repeats : 1;
  const int total = opts.n_realizations * repeats;

  struct TrialOutcome {
    bool failed = false;
    std::map<Method, TrialMetrics> metrics;
  };
  std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(total));

  std::atomic<int> next{0};
  auto worker = [&]() {
    while (true) {
      const int trial = next.fetch_add(1);
      if (trial >= total) break;
      const int r = trial / repeats;
      const int rep = trial % repeats;
      TrialOutcome& out = outcomes[static_cast<std::size_t>(trial)];
      try {
        simgen::SimConfig train_cfg = scenario;
        train_cfg.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(r), 0);
        const auto train_real = simgen::generate(train_cfg);

        const auto tm = detail::train_on(train_real, opts, want_dhmm, want_proposed,
                                         derive_seed(opts.seed, static_cast<std::uint64_t>(r), 1));

        simgen::SimRealization test_real;
        if (opts.protocol == Protocol::out_of_sample) {
          simgen::SimConfig test_cfg = scenario;
          test_cfg.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(r),
                                      2 + static_cast<std::uint64_t>(rep));
          test_real = simgen::generate(test_cfg);
        } else {
          test_real = train_real;
        }
        const double epoch_hours = scenario.sample_step_hours;

        if (want_hmm) {
          const auto labels =
              detail::decode_to_labels(tm.model, tm.sleep_state, test_real.observations);
          out.metrics[Method::hmm] = score(labels, test_real.truth_labels, epoch_hours);
        }
        if (want_dhmm) {
          const Eigen::MatrixXd det =
              detail::detrend_channels(test_real.observations, opts.loess_span);
          const auto labels =
              detail::decode_to_labels(tm.dhmm_model, tm.dhmm_sleep_state, det);
          out.metrics[Method::dhmm] = score(labels, test_real.truth_labels, epoch_hours);
        }
        if (want_proposed) {
          auto labels = opts.protocol == Protocol::out_of_sample
                            ? detail::replay_proposed(tm, test_real, opts)
                            : tm.proposed_in_sample;
          labels = detail::smooth_proposed(labels, epoch_hours, opts);
          out.metrics[Method::proposed] = score(labels, test_real.truth_labels, epoch_hours);
        }
      } catch (const std::exception& e) {
        out.failed = true;
        log_warn(std::string("benchmark trial failed: ") + e.what());
      }
    }
  };

  const int jobs = std::max(1, opts.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  BenchmarkReport report;
  report.n_trials = total;
  for (Method m : opts.methods) report.reports[m] = MetricReport{};
  for (const auto& out : outcomes) {
    for (Method m : opts.methods) {
      auto& rep = report.reports[m];
      if (out.failed) {
        ++rep.n_failed;
        continue;
      }
      rep.add(out.metrics.at(m));
    }
  }

  // pairwise one-sided tests on trials where both methods succeeded
  for (Method a : opts.methods)
    for (Method b : opts.methods) {
      if (a == b) continue;
      std::map<std::string, double> ps;
      auto run_test = [&](const char* name, auto accessor, Alternative alt) {
        std::vector<double> va, vb;
        for (const auto& out : outcomes) {
          if (out.failed) continue;
          const auto ma = accessor(out.metrics.at(a));
          const auto mb = accessor(out.metrics.at(b));
          if (ma && mb) {
            va.push_back(*ma);
            vb.push_back(*mb);
          }
        }
        if (va.size() >= 2) {
          const auto t = paired_ttest(va, vb, alt);
          if (!t.degenerate) ps[name] = t.p;
        }
      };
      auto opt_acc = [](const TrialMetrics& m) { return std::optional<double>(m.accuracy); };
      run_test("accuracy", opt_acc, Alternative::greater);
      run_test("f1", [](const TrialMetrics& m) { return m.f1; }, Alternative::greater);
      run_test("cosine", [](const TrialMetrics& m) { return m.cosine; }, Alternative::greater);
      run_test("onset_diff", [](const TrialMetrics& m) { return m.onset_diff; },
               Alternative::less);
      run_test("duration_diff", [](const TrialMetrics& m) { return m.duration_diff; },
               Alternative::less);
      report.pairwise_p[{a, b}] = std::move(ps);
    }
  return report;
}

inline nlohmann::json to_json(const BenchmarkReport& report) {
  nlohmann::json j;
  j["n_trials"] = report.n_trials;
  for (const auto& [method, rep] : report.reports) {
    nlohmann::json m;
    m["n_trials"] = rep.n_trials;
    m["n_failed"] = rep.n_failed;
    auto emit = [&](const char* name, const std::vector<double>& v) {
      m[std::string("mean_") + name] = eventseg::mean(v);
      m[std::string("sd_") + name] = sample_sd(v);
      m[std::string("per_trial_") + name] = v;
    };
    emit("accuracy", rep.accuracy);
    emit("f1", rep.f1);
    emit("cosine", rep.cosine);
    emit("onset_diff", rep.onset_diff);
    emit("duration_diff", rep.duration_diff);
    j["methods"][to_string(method)] = std::move(m);
  }
  for (const auto& [pair, ps] : report.pairwise_p) {
    const std::string key =
        std::string(to_string(pair.first)) + "_beats_" + to_string(pair.second);
    for (const auto& [metric, p] : ps) j["pairwise_p"][key][metric] = p;
  }
  return j;
}

// Per-trial CSV for external plotting: `method,trial,metric,value`.
inline void write_trials_csv(const BenchmarkReport& report, const std::string& path) {
  CsvWriter w(path);
  w.header({"method", "trial", "metric", "value"});
  for (const auto& [method, rep] : report.reports) {
    auto emit = [&](const char* name, const std::vector<double>& v) {
      for (std::size_t i = 0; i < v.size(); ++i)
        w.line({to_string(method), std::to_string(i), name, format_double(v[i])});
    };
    emit("accuracy", rep.accuracy);
    emit("f1", rep.f1);
    emit("cosine", rep.cosine);
    emit("onset_diff", rep.onset_diff);
    emit("duration_diff", rep.duration_diff);
  }
}

}  // namespace eventseg::eval
