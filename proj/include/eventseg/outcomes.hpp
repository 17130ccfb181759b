#pragma once

// Downstream outcome prediction: logistic regression via IRLS,
// continuation-ratio ordinal regression, tie-aware AUC, leave-one-out
// cross-validation and SMOTE rebalancing.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "eventseg/common.hpp"
#include "eventseg/types.hpp"

namespace eventseg::outcomes {

// ---------------------------------------------------------------------------
// Data.
// ---------------------------------------------------------------------------

struct OutcomeDataset {
  std::vector<std::string> feature_names;
  std::vector<std::string> subject_ids;
  Eigen::MatrixXd x;       // n x m, no missing values in modeled features
  std::vector<int> y;      // binary {0,1} or ordinal {1..J}
  int dropped_rows = 0;    // rows removed for missing modeled features
};

enum class ModelKind { logistic, continuation_ratio };

struct FittedGlm {
  ModelKind kind = ModelKind::logistic;
  // raw-scale coefficients: intercept(s) first, then slopes.  The
  // continuation-ratio model has one intercept per level below the top.
  std::vector<double> coefficients;
  std::vector<double> standard_errors;     // raw scale, aligned with coefficients
  std::vector<bool> identifiable;          // per coefficient
  bool converged = false;
  bool separation = false;
  int iterations = 0;
};

namespace detail {

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;

  static Standardizer fit(const Eigen::MatrixXd& x) {
    Standardizer s;
    s.mean = x.colwise().mean();
    s.sd.resize(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double var = (x.col(c).array() - s.mean(c)).square().sum() /
                         std::max<double>(1.0, static_cast<double>(x.rows() - 1));
      s.sd(c) = var > 0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out = x;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      out.col(c) = (x.col(c).array() - mean(c)) / sd(c);
    return out;
  }
};

struct IrlsResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;
  bool converged = false;
  bool separation = false;
  int iterations = 0;
};

// IRLS on a prepared design matrix (intercept columns included).
inline IrlsResult irls(const Eigen::MatrixXd& design, const std::vector<int>& y,
                       int max_iter, double tol, double separation_bound) {
  const Eigen::Index n = design.rows(), m = design.cols();
  IrlsResult r;
  r.beta = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  for (int iter = 1; iter <= max_iter; ++iter) {
    r.iterations = iter;
    Eigen::VectorXd p(n), w(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = sigmoid(eta(i));
      w(i) = std::max(p(i) * (1.0 - p(i)), 1e-14);
      z(i) = eta(i) + (y[static_cast<std::size_t>(i)] - p(i)) / w(i);
    }
    const Eigen::MatrixXd xtw = design.transpose() * w.asDiagonal();
    const Eigen::MatrixXd hess = xtw * design;
    const Eigen::VectorXd beta_new = hess.ldlt().solve(xtw * z);
    const double delta = (beta_new - r.beta).cwiseAbs().maxCoeff();
    r.beta = beta_new;
    eta = design * r.beta;
    if (r.beta.cwiseAbs().maxCoeff() > separation_bound) {
      r.separation = true;
      break;
    }
    if (delta < tol) {
      r.converged = true;
      break;
    }
  }
  Eigen::VectorXd p(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p(i) = sigmoid(eta(i));
    w(i) = std::max(p(i) * (1.0 - p(i)), 1e-14);
  }
  const Eigen::MatrixXd hess = design.transpose() * w.asDiagonal() * design;
  r.covariance = hess.ldlt().solve(Eigen::MatrixXd::Identity(m, m));
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Logistic regression.
// ---------------------------------------------------------------------------

// Maximum-likelihood logistic fit.  Features are standardized internally
// (training statistics); reported coefficients are back-transformed to the
// raw scale.  Separation is declared when any standardized coefficient
// exceeds `separation_bound`.
inline FittedGlm fit_logistic(const Eigen::MatrixXd& x, const std::vector<int>& y,
                              int max_iter = 100, double tol = 1e-8,
                              double separation_bound = 30.0) {
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw validation_error("fit_logistic: rows/labels mismatch");
  bool has0 = false, has1 = false;
  for (int v : y) (v == 1 ? has1 : has0) = true;
  if (!has0 || !has1)
    throw validation_error("fit_logistic: both outcome classes must be present");

  const auto std = detail::Standardizer::fit(x);
  const Eigen::MatrixXd xs = std.apply(x);
  const Eigen::Index n = x.rows(), m = x.cols();
  Eigen::MatrixXd design(n, m + 1);
  design.col(0).setOnes();
  design.rightCols(m) = xs;

  const auto r = detail::irls(design, y, max_iter, tol, separation_bound);

  // back-transform: slope_raw = slope_std / sd; intercept folds the means in
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(m + 1, m + 1);
  jac(0, 0) = 1.0;
  for (Eigen::Index c = 0; c < m; ++c) {
    jac(0, c + 1) = -std.mean(c) / std.sd(c);
    jac(c + 1, c + 1) = 1.0 / std.sd(c);
  }
  const Eigen::VectorXd beta_raw = jac * r.beta;
  const Eigen::MatrixXd cov_raw = jac * r.covariance * jac.transpose();

  FittedGlm fit;
  fit.kind = ModelKind::logistic;
  fit.coefficients.assign(beta_raw.data(), beta_raw.data() + beta_raw.size());
  for (Eigen::Index i = 0; i < beta_raw.size(); ++i)
    fit.standard_errors.push_back(std::sqrt(std::max(0.0, cov_raw(i, i))));
  fit.identifiable.assign(fit.coefficients.size(), true);
  fit.converged = r.converged && !r.separation;
  fit.separation = r.separation;
  fit.iterations = r.iterations;
  return fit;
}

inline double predict_logistic(const FittedGlm& fit, const Eigen::VectorXd& x) {
  double eta = fit.coefficients[0];
  for (Eigen::Index c = 0; c < x.size(); ++c)
    eta += fit.coefficients[static_cast<std::size_t>(c) + 1] * x(c);
  return detail::sigmoid(eta);
}

// ---------------------------------------------------------------------------
// Continuation-ratio regression: logit P(Y = y | Y >= y) = beta_0y + beta' x
// with per-level intercepts and slopes shared across levels, fitted by
// expanding every subject into its sequence of conditional Bernoulli trials.
// ---------------------------------------------------------------------------

inline FittedGlm fit_continuation_ratio(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                        int max_iter = 100, double tol = 1e-8,
                                        double separation_bound = 30.0) {
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw validation_error("fit_continuation_ratio: rows/labels mismatch");
  int levels = 0;
  for (int v : y) {
    if (v < 1) throw validation_error("fit_continuation_ratio: ordinal levels start at 1");
    levels = std::max(levels, v);
  }
  std::vector<int> level_count(static_cast<std::size_t>(levels) + 1, 0);
  for (int v : y) ++level_count[static_cast<std::size_t>(v)];
  int populated = 0;
  for (int l = 1; l <= levels; ++l)
    if (level_count[static_cast<std::size_t>(l)] > 0) ++populated;
  if (populated < 2)
    throw validation_error("fit_continuation_ratio: need at least two populated levels");

  const auto std = detail::Standardizer::fit(x);
  const Eigen::MatrixXd xs = std.apply(x);
  const Eigen::Index m = x.cols();
  const int j = levels - 1;  // modelled levels

  // which levels are identifiable: level l needs someone at l and someone above
  std::vector<bool> level_ok(static_cast<std::size_t>(j), false);
  for (int l = 1; l <= j; ++l) {
    int at = 0, ge = 0;
    for (int v : y) {
      if (v >= l) ++ge;
      if (v == l) ++at;
    }
    level_ok[static_cast<std::size_t>(l - 1)] = ge > 0 && at > 0 && at < ge;
  }
  std::vector<int> level_col(static_cast<std::size_t>(j), -1);
  int n_cols = 0;
  for (int l = 0; l < j; ++l)
    if (level_ok[static_cast<std::size_t>(l)]) level_col[static_cast<std::size_t>(l)] = n_cols++;

  // expansion: one Bernoulli trial per subject per level l <= min(y, J-1)
  std::vector<Eigen::Index> trial_rows;
  std::vector<int> trial_level, trial_y;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int yi = y[static_cast<std::size_t>(i)];
    for (int l = 1; l <= std::min(yi, j); ++l) {
      if (level_col[static_cast<std::size_t>(l - 1)] < 0) continue;
      trial_rows.push_back(i);
      trial_level.push_back(l);
      trial_y.push_back(yi == l ? 1 : 0);
    }
  }
  if (trial_rows.empty())
    throw validation_error("fit_continuation_ratio: no identifiable conditional trials");

  Eigen::MatrixXd design(static_cast<Eigen::Index>(trial_rows.size()),
                         n_cols + m);
  design.setZero();
  for (std::size_t t = 0; t < trial_rows.size(); ++t) {
    design(static_cast<Eigen::Index>(t),
           level_col[static_cast<std::size_t>(trial_level[t] - 1)]) = 1.0;
    design.block(static_cast<Eigen::Index>(t), n_cols, 1, m) = xs.row(trial_rows[t]);
  }
  const auto r = detail::irls(design, trial_y, max_iter, tol, separation_bound);

  FittedGlm fit;
  fit.kind = ModelKind::continuation_ratio;
  fit.coefficients.assign(static_cast<std::size_t>(j) + static_cast<std::size_t>(m),
                          std::numeric_limits<double>::quiet_NaN());
  fit.standard_errors = fit.coefficients;
  fit.identifiable.assign(fit.coefficients.size(), false);
  for (int l = 0; l < j; ++l) {
    const int col = level_col[static_cast<std::size_t>(l)];
    if (col < 0) continue;
    // intercept back-transform folds the feature means through the slopes
    double b0 = r.beta(col);
    for (Eigen::Index c = 0; c < m; ++c)
      b0 -= r.beta(n_cols + c) * std.mean(c) / std.sd(c);
    fit.coefficients[static_cast<std::size_t>(l)] = b0;
    fit.standard_errors[static_cast<std::size_t>(l)] =
        std::sqrt(std::max(0.0, r.covariance(col, col)));
    fit.identifiable[static_cast<std::size_t>(l)] = true;
  }
  for (Eigen::Index c = 0; c < m; ++c) {
    fit.coefficients[static_cast<std::size_t>(j) + static_cast<std::size_t>(c)] =
        r.beta(n_cols + c) / std.sd(c);
    fit.standard_errors[static_cast<std::size_t>(j) + static_cast<std::size_t>(c)] =
        std::sqrt(std::max(0.0, r.covariance(n_cols + c, n_cols + c))) / std.sd(c);
    fit.identifiable[static_cast<std::size_t>(j) + static_cast<std::size_t>(c)] = true;
  }
  fit.converged = r.converged && !r.separation;
  fit.separation = r.separation;
  fit.iterations = r.iterations;
  return fit;
}

// Level probabilities from the continuation-ratio chain.
inline std::vector<double> predict_cr_levels(const FittedGlm& fit, const Eigen::VectorXd& x,
                                             int levels) {
  const int j = levels - 1;
  double linear = 0.0;
  for (Eigen::Index c = 0; c < x.size(); ++c)
    linear += fit.coefficients[static_cast<std::size_t>(j) + static_cast<std::size_t>(c)] * x(c);
  std::vector<double> probs(static_cast<std::size_t>(levels), 0.0);
  double survive = 1.0;
  for (int l = 0; l < j; ++l) {
    const double b0 = fit.coefficients[static_cast<std::size_t>(l)];
    const double h = std::isnan(b0) ? 0.0 : detail::sigmoid(b0 + linear);
    probs[static_cast<std::size_t>(l)] = survive * h;
    survive *= 1.0 - h;
  }
  probs[static_cast<std::size_t>(levels - 1)] = survive;
  return probs;
}

// ---------------------------------------------------------------------------
// AUC (normalized Mann-Whitney U with half credit for ties).
// ---------------------------------------------------------------------------

inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw validation_error("auc: scores/labels size mismatch");
  std::size_t n1 = 0, n0 = 0;
  for (int l : labels) (l == 1 ? n1 : n0) += 1;
  if (n1 == 0 || n0 == 0)
    throw validation_error("auc: both labels must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // midranks over tied scores
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double u = rank_sum_pos - static_cast<double>(n1) * (static_cast<double>(n1) + 1.0) / 2.0;
  return u / (static_cast<double>(n1) * static_cast<double>(n0));
}

// ---------------------------------------------------------------------------
// Leave-one-out cross-validation.
// ---------------------------------------------------------------------------

struct LoocvResult {
  std::optional<double> auc_binary;
  std::vector<double> auc_per_level;  // one-vs-rest, ordinal models
  std::optional<double> accuracy;     // binary models, 0.5 threshold
  int skipped_folds = 0;
};

inline LoocvResult loocv_auc(const Eigen::MatrixXd& x, const std::vector<int>& y,
                             ModelKind kind) {
  const Eigen::Index n = x.rows();
  if (n < 3) throw validation_error("loocv_auc: need at least 3 subjects");
  LoocvResult result;

  int levels = 0;
  for (int v : y) levels = std::max(levels, v);

  std::vector<double> scores;
  std::vector<std::vector<double>> level_scores;
  std::vector<int> held_y;
  if (kind == ModelKind::continuation_ratio)
    level_scores.assign(static_cast<std::size_t>(levels), {});

  for (Eigen::Index hold = 0; hold < n; ++hold) {
    Eigen::MatrixXd xtrain(n - 1, x.cols());
    std::vector<int> ytrain;
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == hold) continue;
      xtrain.row(r++) = x.row(i);
      ytrain.push_back(y[static_cast<std::size_t>(i)]);
    }
    try {
      if (kind == ModelKind::logistic) {
        const auto fit = fit_logistic(xtrain, ytrain);
        scores.push_back(predict_logistic(fit, x.row(hold).transpose()));
      } else {
        const auto fit = fit_continuation_ratio(xtrain, ytrain);
        const auto probs = predict_cr_levels(fit, x.row(hold).transpose(), levels);
        for (int l = 0; l < levels; ++l)
          level_scores[static_cast<std::size_t>(l)].push_back(
              probs[static_cast<std::size_t>(l)]);
      }
      held_y.push_back(y[static_cast<std::size_t>(hold)]);
    } catch (const validation_error&) {
      ++result.skipped_folds;  // e.g. the training fold lost a class
    }
  }

  if (kind == ModelKind::logistic) {
    std::vector<int> labels01 = held_y;
    if (scores.size() >= 2) {
      bool both = false, seen0 = false, seen1 = false;
      for (int v : labels01) (v == 1 ? seen1 : seen0) = true;
      both = seen0 && seen1;
      if (both) {
        result.auc_binary = auc(scores, labels01);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < scores.size(); ++i)
          if ((scores[i] > 0.5 ? 1 : 0) == labels01[i]) ++correct;
        result.accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());
      }
    }
  } else {
    for (int l = 1; l <= levels; ++l) {
      std::vector<int> ovr;
      for (int v : held_y) ovr.push_back(v == l ? 1 : 0);
      bool seen0 = false, seen1 = false;
      for (int v : ovr) (v == 1 ? seen1 : seen0) = true;
      result.auc_per_level.push_back(
          seen0 && seen1 ? auc(level_scores[static_cast<std::size_t>(l - 1)], ovr)
                         : std::numeric_limits<double>::quiet_NaN());
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// SMOTE.
// ---------------------------------------------------------------------------

// Synthetic minority oversampling: repeatedly pick a minority point x, one
// of its k nearest minority neighbours x_R (Euclidean), U ~ Uniform[0,1],
// and emit s = x + U*(x_R - x).  k defaults to 3, or 1 when the minority has
// at most 3 members.
inline std::vector<Eigen::VectorXd> smote(const std::vector<Eigen::VectorXd>& minority,
                                          int target_n, std::uint64_t seed, int k = 0) {
  const std::size_t n = minority.size();
  if (n < 2) throw validation_error("smote: minority class needs at least 2 rows");
  if (k == 0) k = n <= 3 ? 1 : 3;
  if (k < 1 || static_cast<std::size_t>(k) >= n)
    throw validation_error("smote: k must satisfy 1 <= k < minority size");

  // k nearest neighbours per point (ties towards the lower index)
  std::vector<std::vector<std::size_t>> nn(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      d.push_back({(minority[i] - minority[j]).squaredNorm(), j});
    }
    std::sort(d.begin(), d.end());
    for (int t = 0; t < k; ++t) nn[i].push_back(d[static_cast<std::size_t>(t)].second);
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_point(0, n - 1);
  std::uniform_int_distribution<int> pick_nn(0, k - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Eigen::VectorXd> synthetic;
  synthetic.reserve(static_cast<std::size_t>(std::max(0, target_n)));
  for (int t = 0; t < target_n; ++t) {
    const std::size_t i = pick_point(rng);
    const std::size_t j = nn[i][static_cast<std::size_t>(pick_nn(rng))];
    const double u = unif(rng);
    synthetic.push_back(minority[i] + u * (minority[j] - minority[i]));
  }
  return synthetic;
}

// ---------------------------------------------------------------------------
// SMOTE-averaged LOOCV: per run, every minority class inside each training
// fold is oversampled up to the majority size before fitting; held-out
// subjects are always real.  Returns per-run AUCs plus their mean.
// ---------------------------------------------------------------------------

struct SmoteLoocv {
  std::vector<double> per_run_auc;          // binary: AUC; ordinal: min one-vs-rest AUC
  std::vector<std::vector<double>> per_run_level_auc;
  double mean_auc = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> mean_level_auc;
};

inline SmoteLoocv smote_loocv(const Eigen::MatrixXd& x, const std::vector<int>& y,
                              ModelKind kind, int runs = 100, std::uint64_t seed = 1) {
  const Eigen::Index n = x.rows();
  if (n < 3) throw validation_error("smote_loocv: need at least 3 subjects");
  int levels = 0;
  for (int v : y) levels = std::max(levels, v);

  SmoteLoocv out;
  for (int run = 0; run < runs; ++run) {
    std::vector<double> scores;
    std::vector<std::vector<double>> level_scores(
        kind == ModelKind::continuation_ratio ? static_cast<std::size_t>(levels) : 0);
    std::vector<int> held_y;
    for (Eigen::Index hold = 0; hold < n; ++hold) {
      std::map<int, std::vector<Eigen::VectorXd>> by_class;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (i == hold) continue;
        by_class[y[static_cast<std::size_t>(i)]].push_back(x.row(i).transpose());
      }
      std::size_t majority = 0;
      for (const auto& [cls, rows] : by_class) majority = std::max(majority, rows.size());
      std::vector<Eigen::VectorXd> rows;
      std::vector<int> labels;
      for (const auto& [cls, members] : by_class) {
        for (const auto& r : members) {
          rows.push_back(r);
          labels.push_back(cls);
        }
        const int deficit = static_cast<int>(majority - members.size());
        if (deficit > 0 && members.size() >= 2) {
          const auto synth = smote(members, deficit,
                                   derive_seed(seed, static_cast<std::uint64_t>(run),
                                               static_cast<std::uint64_t>(hold * 31 + cls)));
          for (const auto& s : synth) {
            rows.push_back(s);
            labels.push_back(cls);
          }
        }
      }
      Eigen::MatrixXd xtrain(static_cast<Eigen::Index>(rows.size()), x.cols());
      for (std::size_t i = 0; i < rows.size(); ++i)
        xtrain.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
      try {
        if (kind == ModelKind::logistic) {
          const auto fit = fit_logistic(xtrain, labels);
          scores.push_back(predict_logistic(fit, x.row(hold).transpose()));
        } else {
          const auto fit = fit_continuation_ratio(xtrain, labels);
          const auto probs = predict_cr_levels(fit, x.row(hold).transpose(), levels);
          for (int l = 0; l < levels; ++l)
            level_scores[static_cast<std::size_t>(l)].push_back(
                probs[static_cast<std::size_t>(l)]);
        }
        held_y.push_back(y[static_cast<std::size_t>(hold)]);
      } catch (const validation_error&) {
      }
    }
    if (kind == ModelKind::logistic) {
      bool seen0 = false, seen1 = false;
      for (int v : held_y) (v == 1 ? seen1 : seen0) = true;
      if (seen0 && seen1 && scores.size() >= 2)
        out.per_run_auc.push_back(auc(scores, held_y));
    } else {
      std::vector<double> per_level;
      double min_auc = std::numeric_limits<double>::infinity();
      for (int l = 1; l <= levels; ++l) {
        std::vector<int> ovr;
        for (int v : held_y) ovr.push_back(v == l ? 1 : 0);
        bool seen0 = false, seen1 = false;
        for (int v : ovr) (v == 1 ? seen1 : seen0) = true;
        const double a = seen0 && seen1
                             ? auc(level_scores[static_cast<std::size_t>(l - 1)], ovr)
                             : std::numeric_limits<double>::quiet_NaN();
        per_level.push_back(a);
        if (!std::isnan(a)) min_auc = std::min(min_auc, a);
      }
      out.per_run_level_auc.push_back(per_level);
      if (std::isfinite(min_auc)) out.per_run_auc.push_back(min_auc);
    }
  }
  out.mean_auc = mean(out.per_run_auc);
  if (!out.per_run_level_auc.empty()) {
    const std::size_t l = out.per_run_level_auc.front().size();
    out.mean_level_auc.assign(l, 0.0);
    std::vector<int> counts(l, 0);
    for (const auto& run : out.per_run_level_auc)
      for (std::size_t i = 0; i < l; ++i)
        if (!std::isnan(run[i])) {
          out.mean_level_auc[i] += run[i];
          ++counts[i];
        }
    for (std::size_t i = 0; i < l; ++i)
      out.mean_level_auc[i] = counts[i] ? out.mean_level_auc[i] / counts[i]
                                        : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace eventseg::outcomes
