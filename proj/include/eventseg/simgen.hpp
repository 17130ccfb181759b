#pragma once

// Ground-truth simulation generator: a Markov wake/sleep session process
// with truncated-normal durations, a truncated-normal channel and a
// log-normal channel, and quadratic post-baseline mean trends.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "eventseg/common.hpp"
#include "eventseg/csv.hpp"
#include "json.hpp"

namespace eventseg::simgen {

enum class Scenario { stable, unstable_pp, unstable_pm };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::stable: return "stable";
    case Scenario::unstable_pp: return "unstable++";
    default: return "unstable+-";
  }
}

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "stable") return Scenario::stable;
  if (s == "unstable++" || s == "unstable_pp") return Scenario::unstable_pp;
  if (s == "unstable+-" || s == "unstable_pm") return Scenario::unstable_pm;
  throw validation_error("unknown scenario '" + s +
                         "' (valid: stable, unstable++, unstable+-)");
}

// State indices: 0 = wake, 1 = sleep.  A session is one (wake, sleep) pair.
struct SimConfig {
  Scenario scenario = Scenario::stable;
  int sessions = 11;            // M
  double sample_step_hours = 1.0 / 6.0;

  // durations: wake ~ TN(duration_mean_wake, duration_sd); sleep mean is
  // 24 - duration_mean_wake so a session averages one day
  double duration_mean_wake = 16.0;
  double duration_sd = 1.0;
  // in unstable scenarios the sleep duration mean shrinks linearly by this
  // many hours toward the apex session and recovers after it
  double sleep_mean_shrink_hours = 0.0;

  // channel 1, truncated normal on (0, inf): heart-rate analog.  The scale
  // constants are calibrated so the per-epoch Bayes error of the two-channel
  // classifier is a fraction of a percent; gradual self-training destabilizes
  // when wrong labels are common enough to pair up inside a training window.
  double ch1_mean[2] = {75.0, 58.0};
  double ch1_sd[2] = {5.0, 2.5};
  // channel 2, log-normal: accelerometer-sd analog (location/scale on log scale)
  double ch2_logmean[2] = {-1.0, -2.5};
  double ch2_logsd[2] = {0.35, 0.35};

  // quadratic trend magnitudes b_k^(i), indexed [channel][state]
  double trend_b[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  std::vector<int> apex_sessions = {5, 6, 7};  // m_o drawn uniformly from these

  std::uint64_t seed = 1;

  void validate() const {
    if (sessions < 2) throw validation_error("sim: need at least 2 sessions");
    if (!(sample_step_hours > 0)) throw validation_error("sim: sample step must be positive");
    if (!(duration_sd > 0)) throw validation_error("sim: duration sd must be positive");
    if (duration_mean_wake >= 24.0 || duration_mean_wake <= 0.0)
      throw validation_error("sim: wake duration mean must lie in (0, 24) hours");
    for (int k = 0; k < 2; ++k) {
      if (!(ch1_sd[k] > 0) || !(ch2_logsd[k] > 0))
        throw validation_error("sim: channel scales must be positive");
    }
    if (apex_sessions.empty()) throw validation_error("sim: apex session set empty");
  }
};

struct SimRealization {
  std::vector<int> truth_labels;             // per sample
  std::vector<double> time_hours;            // per sample
  Eigen::MatrixXd observations;              // n x 2
  std::vector<double> transition_times;      // tau_m, hours
  int apex_session = 0;                      // drawn m_o
  // applied location parameters, [channel][state] per session
  std::vector<std::array<std::array<double, 2>, 2>> session_means;
};

namespace detail {

inline double truncated_normal(std::mt19937_64& rng, double mu, double sigma,
                               double lower) {
  if (mu < lower - 8.0 * sigma)
    throw validation_error("truncated normal location too far below its bound");
  std::normal_distribution<double> normal(mu, sigma);
  for (int i = 0; i < 100000; ++i) {
    const double v = normal(rng);
    if (v > lower) return v;
  }
  throw error("truncated normal sampling failed to accept");
}

// u_mk = u_1k - b*(m - m_o)^2/(1 - m_o)^2 + b: equals u_1k at m = 1 and
// u_1k + b at the apex m_o.
inline double quadratic_trend(double base, double b, int m, int apex) {
  if (b == 0.0) return base;
  const double num = static_cast<double>(m - apex);
  const double den = static_cast<double>(1 - apex);
  return base - b * (num * num) / (den * den) + b;
}

}  // namespace detail

inline SimRealization generate(const SimConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);

  SimRealization real;
  const int apex_pick = static_cast<int>(
      std::uniform_int_distribution<std::size_t>(0, config.apex_sessions.size() - 1)(rng));
  real.apex_session = config.apex_sessions[apex_pick];

  const double sleep_mean_base = 24.0 - config.duration_mean_wake;
  const double step = config.sample_step_hours;

  // per-session duration means; the sleep mean follows a tent toward the apex
  std::vector<double> wake_mean(config.sessions), sleep_mean(config.sessions);
  for (int m = 1; m <= config.sessions; ++m) {
    double shrink = 0.0;
    if (config.sleep_mean_shrink_hours != 0.0 && real.apex_session > 1) {
      const double closeness = 1.0 - std::abs(static_cast<double>(m - real.apex_session)) /
                                         static_cast<double>(real.apex_session - 1);
      shrink = config.sleep_mean_shrink_hours * std::max(0.0, closeness);
    }
    sleep_mean[m - 1] = std::max(step, sleep_mean_base - shrink);
    wake_mean[m - 1] = 24.0 - sleep_mean[m - 1];
  }

  // alternating durations, discretized transition times
  std::vector<double> tau;
  double t = 0.0;
  for (int m = 1; m <= config.sessions; ++m) {
    for (int k = 0; k < 2; ++k) {
      const double mu = k == 0 ? wake_mean[m - 1] : sleep_mean[m - 1];
      double dur = detail::truncated_normal(rng, mu, config.duration_sd, 0.0);
      dur = std::max(dur, step);  // keep every session on the grid
      t += dur;
      tau.push_back(t);
    }
  }
  real.transition_times = tau;

  // per-session applied channel locations
  real.session_means.resize(config.sessions);
  for (int m = 1; m <= config.sessions; ++m)
    for (int k = 0; k < 2; ++k) {
      real.session_means[m - 1][0][k] = detail::quadratic_trend(
          config.ch1_mean[k], config.trend_b[0][k], m, real.apex_session);
      real.session_means[m - 1][1][k] = detail::quadratic_trend(
          config.ch2_logmean[k], config.trend_b[1][k], m, real.apex_session);
    }

  const auto n = static_cast<Eigen::Index>(std::floor(tau.back() / step));
  real.time_hours.resize(static_cast<std::size_t>(n));
  real.truth_labels.resize(static_cast<std::size_t>(n));
  real.observations.resize(n, 2);

  std::size_t seg = 0;  // index into tau; segment s covers [tau_{s-1}, tau_s)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ti = static_cast<double>(i) * step;
    while (seg + 1 < tau.size() && ti >= tau[seg]) ++seg;
    const int state = static_cast<int>(seg % 2);  // even segment index = wake
    const int session = static_cast<int>(seg / 2);
    real.time_hours[static_cast<std::size_t>(i)] = ti;
    real.truth_labels[static_cast<std::size_t>(i)] = state;
    const double u1 = real.session_means[static_cast<std::size_t>(session)][0][state];
    const double u2 = real.session_means[static_cast<std::size_t>(session)][1][state];
    real.observations(i, 0) = detail::truncated_normal(rng, u1, config.ch1_sd[state], 0.0);
    std::normal_distribution<double> log_draw(u2, config.ch2_logsd[state]);
    real.observations(i, 1) = std::exp(log_draw(rng));
  }
  return real;
}

// The three benchmark settings, with the trend tuples
// (b_0^(1), b_1^(1), b_0^(2), b_1^(2)) = (0,0,0,0), (15,10,0.5,-0.5) and
// (-15,15,0.5,-0.5).  Locations and scales are calibration constants; they
// are exposed in the config rather than fixed by the settings.
inline std::map<Scenario, SimConfig> default_configs(std::uint64_t seed = 1) {
  std::map<Scenario, SimConfig> configs;
  SimConfig stable;
  stable.scenario = Scenario::stable;
  stable.seed = seed;
  configs[Scenario::stable] = stable;

  SimConfig pp = stable;
  pp.scenario = Scenario::unstable_pp;
  pp.trend_b[0][0] = 15.0;
  pp.trend_b[0][1] = 10.0;
  pp.trend_b[1][0] = 0.5;
  pp.trend_b[1][1] = -0.5;
  pp.sleep_mean_shrink_hours = 2.0;
  configs[Scenario::unstable_pp] = pp;

  SimConfig pm = stable;
  pm.scenario = Scenario::unstable_pm;
  pm.trend_b[0][0] = -15.0;
  pm.trend_b[0][1] = 15.0;
  pm.trend_b[1][0] = 0.5;
  pm.trend_b[1][1] = -0.5;
  pm.sleep_mean_shrink_hours = 2.0;
  configs[Scenario::unstable_pm] = pm;
  return configs;
}

// ---------------------------------------------------------------------------
// Config / realization I/O.
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const SimConfig& c) {
  nlohmann::json j;
  j["scenario"] = to_string(c.scenario);
  j["sessions"] = c.sessions;
  j["sample_step_hours"] = c.sample_step_hours;
  j["duration_mean_wake"] = c.duration_mean_wake;
  j["duration_sd"] = c.duration_sd;
  j["sleep_mean_shrink_hours"] = c.sleep_mean_shrink_hours;
  j["ch1_mean"] = {c.ch1_mean[0], c.ch1_mean[1]};
  j["ch1_sd"] = {c.ch1_sd[0], c.ch1_sd[1]};
  j["ch2_logmean"] = {c.ch2_logmean[0], c.ch2_logmean[1]};
  j["ch2_logsd"] = {c.ch2_logsd[0], c.ch2_logsd[1]};
  j["trend_b"] = {{c.trend_b[0][0], c.trend_b[0][1]}, {c.trend_b[1][0], c.trend_b[1][1]}};
  j["apex_sessions"] = c.apex_sessions;
  j["seed"] = c.seed;
  return j;
}

inline SimConfig config_from_json(const nlohmann::json& j) {
  Scenario sc = Scenario::stable;
  if (j.contains("scenario")) sc = scenario_from_string(j.at("scenario"));
  SimConfig c = default_configs().at(sc);
  c.sessions = j.value("sessions", c.sessions);
  c.sample_step_hours = j.value("sample_step_hours", c.sample_step_hours);
  c.duration_mean_wake = j.value("duration_mean_wake", c.duration_mean_wake);
  c.duration_sd = j.value("duration_sd", c.duration_sd);
  c.sleep_mean_shrink_hours = j.value("sleep_mean_shrink_hours", c.sleep_mean_shrink_hours);
  auto load_pair = [&](const char* key, double* out) {
    if (j.contains(key)) {
      const auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != 2) throw validation_error(std::string("sim config: ") + key + " needs 2 values");
      out[0] = v[0];
      out[1] = v[1];
    }
  };
  load_pair("ch1_mean", c.ch1_mean);
  load_pair("ch1_sd", c.ch1_sd);
  load_pair("ch2_logmean", c.ch2_logmean);
  load_pair("ch2_logsd", c.ch2_logsd);
  if (j.contains("trend_b")) {
    const auto v = j.at("trend_b").get<std::vector<std::vector<double>>>();
    if (v.size() != 2 || v[0].size() != 2 || v[1].size() != 2)
      throw validation_error("sim config: trend_b must be a 2x2 array");
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < 2; ++k) c.trend_b[i][k] = v[i][k];
  }
  if (j.contains("apex_sessions"))
    c.apex_sessions = j.at("apex_sessions").get<std::vector<int>>();
  c.seed = j.value("seed", c.seed);
  return c;
}

// Realization export: `time_hours,y_true,x1,x2`.
inline void write_realization_csv(const SimRealization& real, const std::string& path) {
  CsvWriter w(path);
  w.header({"time_hours", "y_true", "x1", "x2"});
  for (std::size_t i = 0; i < real.time_hours.size(); ++i)
    w.line({format_double(real.time_hours[i]), std::to_string(real.truth_labels[i]),
            format_double(real.observations(static_cast<Eigen::Index>(i), 0)),
            format_double(real.observations(static_cast<Eigen::Index>(i), 1))});
}

// Ingest-ready export: `timestamp,X1,X2` with timestamps in seconds,
// rounded to the microsecond so grid multiples stay exact.
inline void write_samples_csv(const SimRealization& real, const std::string& path) {
  CsvWriter w(path);
  w.header({"timestamp", "X1", "X2"});
  for (std::size_t i = 0; i < real.time_hours.size(); ++i) {
    const double seconds =
        std::round(real.time_hours[i] * kSecondsPerHour * 1e6) / 1e6;
    w.line({format_double(seconds),
            format_double(real.observations(static_cast<Eigen::Index>(i), 0)),
            format_double(real.observations(static_cast<Eigen::Index>(i), 1))});
  }
}

}  // namespace eventseg::simgen
