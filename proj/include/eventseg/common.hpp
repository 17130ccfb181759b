#pragma once

// Shared error types, logging and small numeric helpers used across the
// eventseg modules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace eventseg {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr double kSecondsPerHour = 3600.0;
inline constexpr double kSecondsPerDay = 86400.0;

// ---------------------------------------------------------------------------
// Errors.  validation_error (and subclasses) mean the caller handed us bad
// input or configuration; the CLI maps those to exit code 2, everything else
// derived from `error` to exit code 1.
// ---------------------------------------------------------------------------

class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class validation_error : public error {
public:
  using error::error;
};

class parse_error : public validation_error {
public:
  parse_error(const std::string& what, std::size_t line)
      : validation_error(what + " (line " + std::to_string(line) + ")"),
        line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

class insufficient_data_error : public error {
public:
  using error::error;
};

class degenerate_data_error : public error {
public:
  using error::error;
};

// Raised by FLDA fitting when a class is absent or has fewer than two
// members; gradual_self_train treats it as a skippable candidate window.
class class_starvation_error : public error {
public:
  using error::error;
};

// ---------------------------------------------------------------------------
// Logging, controlled by the EVENTSEG_LOG environment variable
// (off|error|warn|info|debug; default warn).
// ---------------------------------------------------------------------------

enum class log_level { off = 0, error = 1, warn = 2, info = 3, debug = 4 };

inline log_level& logging_threshold() {
  static log_level level = [] {
    const char* env = std::getenv("EVENTSEG_LOG");
    if (!env) return log_level::warn;
    std::string s(env);
    std::transform(s.begin(), s.end(), s.begin(), ::tolower);
    if (s == "off" || s == "none") return log_level::off;
    if (s == "error") return log_level::error;
    if (s == "warn" || s == "warning") return log_level::warn;
    if (s == "info") return log_level::info;
    if (s == "debug") return log_level::debug;
    return log_level::warn;
  }();
  return level;
}

inline void log_message(log_level level, const std::string& msg) {
  static const char* names[] = {"off", "error", "warn", "info", "debug"};
  if (level <= logging_threshold() && level != log_level::off)
    std::cerr << "[eventseg:" << names[static_cast<int>(level)] << "] " << msg
              << "\n";
}

inline void log_error(const std::string& msg) { log_message(log_level::error, msg); }
inline void log_warn(const std::string& msg) { log_message(log_level::warn, msg); }
inline void log_info(const std::string& msg) { log_message(log_level::info, msg); }

// ---------------------------------------------------------------------------
// Small statistics helpers.
// ---------------------------------------------------------------------------

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation with denominator n-1; 0 for n < 2.
inline double sample_sd(const std::vector<double>& v) {
  const std::size_t n = v.size();
  if (n < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(n - 1));
}

// Median; the mean of the two middle values on even-sized samples.
inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Linearly interpolated sample quantile (R type 7).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (q <= 0.0) return *std::min_element(v.begin(), v.end());
  if (q >= 1.0) return *std::max_element(v.begin(), v.end());
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= v.size()) return v[lo];
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

inline double pearson_correlation(const std::vector<double>& a,
                                  const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw validation_error("pearson_correlation: need two equal-length samples of size >= 2");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// One-dimensional nearest-neighbour label agreement: the fraction of points
// whose nearest neighbour (absolute difference on `values`, self excluded)
// carries the same label.  Ties in distance are broken towards the point
// with the lowest original index.  This is the engine behind both the
// separability index and the sleep/wake separability index.
// ---------------------------------------------------------------------------

inline double nn_label_agreement(const std::vector<double>& values,
                                 const std::vector<int>& labels) {
  const std::size_t n = values.size();
  if (labels.size() != n)
    throw validation_error("nn_label_agreement: values/labels size mismatch");
  if (n < 2)
    throw insufficient_data_error("nn_label_agreement: need at least 2 points");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] < values[b];
    return a < b;
  });

  // Runs of equal value, each with its two smallest original indices.
  struct run {
    double value;
    std::size_t begin, end;  // positions in `order`
    std::size_t min1, min2;  // smallest / second smallest original index
  };
  std::vector<run> runs;
  std::vector<std::size_t> run_of(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    run r{values[order[i]], i, i, n, n};
    while (j < n && values[order[j]] == r.value) {
      const std::size_t idx = order[j];
      if (idx < r.min1) {
        r.min2 = r.min1;
        r.min1 = idx;
      } else if (idx < r.min2) {
        r.min2 = idx;
      }
      ++j;
    }
    r.end = j;
    for (std::size_t k = i; k < j; ++k) run_of[order[k]] = runs.size();
    runs.push_back(r);
    i = j;
  }

  std::size_t agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const run& r = runs[run_of[i]];
    std::size_t neighbour;
    if (r.end - r.begin >= 2) {
      neighbour = (r.min1 != i) ? r.min1 : r.min2;  // distance 0
    } else {
      const bool has_left = run_of[i] > 0;
      const bool has_right = run_of[i] + 1 < runs.size();
      if (has_left && has_right) {
        const run& lr = runs[run_of[i] - 1];
        const run& rr = runs[run_of[i] + 1];
        const double dl = r.value - lr.value;
        const double dr = rr.value - r.value;
        if (dl < dr)
          neighbour = lr.min1;
        else if (dr < dl)
          neighbour = rr.min1;
        else
          neighbour = std::min(lr.min1, rr.min1);
      } else if (has_left) {
        neighbour = runs[run_of[i] - 1].min1;
      } else {
        neighbour = runs[run_of[i] + 1].min1;
      }
    }
    if (labels[i] == labels[neighbour]) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Polynomial least squares on a handful of coefficients (degree <= 3) via
// normal equations with partial-pivot elimination.
// ---------------------------------------------------------------------------

inline std::vector<double> polyfit(const std::vector<double>& x,
                                   const std::vector<double>& y, int degree) {
  if (x.size() != y.size())
    throw validation_error("polyfit: x/y size mismatch");
  const int m = degree + 1;
  if (static_cast<int>(x.size()) < m)
    throw insufficient_data_error("polyfit: fewer points than coefficients");

  // normal equations from the power sums sum(x^k) and sum(y x^r)
  std::vector<double> xpow(static_cast<std::size_t>(2 * m - 1), 0.0);
  std::vector<double> b(m, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double p = 1.0;
    for (int k = 0; k < 2 * m - 1; ++k) {
      xpow[static_cast<std::size_t>(k)] += p;
      if (k < m) b[static_cast<std::size_t>(k)] += p * y[i];
      p *= x[i];
    }
  }
  std::vector<std::vector<double>> a(m, std::vector<double>(m, 0.0));
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) a[r][c] = xpow[static_cast<std::size_t>(r + c)];

  // Gaussian elimination with partial pivoting.
  for (int col = 0; col < m; ++col) {
    int piv = col;
    for (int r = col + 1; r < m; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    if (std::abs(a[col][col]) < 1e-300)
      throw degenerate_data_error("polyfit: singular normal equations");
    for (int r = col + 1; r < m; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < m; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> coef(m, 0.0);
  for (int r = m - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < m; ++c) s -= a[r][c] * coef[c];
    coef[r] = s / a[r][r];
  }
  return coef;
}

// ---------------------------------------------------------------------------
// Seed derivation for parallel trials (splitmix64).
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(base ^ (a * 0x9e3779b97f4a7c15ULL)) ^ b);
}

}  // namespace eventseg
