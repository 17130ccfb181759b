#pragma once

// Multivariate Gaussian hidden Markov model: EM fitting with a scaled
// forward-backward E-step, posterior decoding, state-to-event mapping and
// exact JSON round-tripping of the parameters.
//
// Sequences with gaps are handled by splitting into contiguous segments that
// share parameters; each segment restarts from the initial distribution.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "eventseg/common.hpp"
#include "eventseg/types.hpp"
#include "json.hpp"

namespace eventseg::hmm {

using Segment = std::pair<Eigen::Index, Eigen::Index>;  // [begin, end) rows

struct GaussianHmm {
  int K = 0;
  Eigen::VectorXd initial;                 // K
  Eigen::MatrixXd transition;              // K x K, row-stochastic
  std::vector<Eigen::VectorXd> means;      // K of dim p
  std::vector<Eigen::MatrixXd> covariances;  // K of p x p, SPD
  bool converged = false;
  int iterations = 0;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  double covariance_floor = 0.0;
  std::vector<double> ll_history;  // per EM iteration of the winning restart

  int dim() const { return K ? static_cast<int>(means[0].size()) : 0; }
};

struct DecodedStates {
  std::vector<int> states;        // per decoded row, argmax posterior
  Eigen::MatrixXd posteriors;     // n x K
  double log_likelihood = 0.0;
};

struct FitOptions {
  int K = 2;
  double tol = 1e-6;
  int max_iter = 500;
  int restarts = 3;
  std::uint64_t seed = 0;
  bool diagonal = false;  // restrict covariances to their diagonal
};

namespace detail {

inline Eigen::MatrixXd floor_covariance(Eigen::MatrixXd sigma, double floor,
                                        bool diagonal) {
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  if (diagonal) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(sigma.rows(), sigma.cols());
    for (Eigen::Index i = 0; i < sigma.rows(); ++i)
      d(i, i) = std::max(sigma(i, i), floor);
    return d;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// log N(x; mu, Sigma) for every row of x, one column per state.
inline Eigen::MatrixXd log_emissions(const GaussianHmm& model, const Eigen::MatrixXd& x) {
  const auto n = x.rows();
  const int p = static_cast<int>(x.cols());
  Eigen::MatrixXd logb(n, model.K);
  for (int k = 0; k < model.K; ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(model.covariances[k]);
    if (llt.info() != Eigen::Success)
      throw degenerate_data_error("hmm: covariance not positive definite");
    const Eigen::MatrixXd L = llt.matrixL();
    double logdet = 0.0;
    for (int i = 0; i < p; ++i) logdet += 2.0 * std::log(L(i, i));
    const double c = -0.5 * (p * std::log(2.0 * M_PI) + logdet);
    for (Eigen::Index t = 0; t < n; ++t) {
      Eigen::VectorXd d = x.row(t).transpose() - model.means[k];
      llt.matrixL().solveInPlace(d);
      logb(t, k) = c - 0.5 * d.squaredNorm();
    }
  }
  return logb;
}

struct ForwardBackward {
  Eigen::MatrixXd gamma;   // n x K smoothed posteriors
  Eigen::MatrixXd xi_sum;  // K x K expected transition counts
  double log_likelihood = 0.0;
};

// Scaled forward-backward over one contiguous segment of log-emissions.
// Emissions are rescaled per time step by their max before exponentiation,
// which makes the recursion invariant to any common positive rescaling of
// the densities at a fixed time and immune to underflow.
inline ForwardBackward forward_backward(const GaussianHmm& model,
                                        const Eigen::MatrixXd& logb) {
  const auto n = logb.rows();
  const int K = model.K;
  ForwardBackward fb;
  fb.gamma.resize(n, K);
  fb.xi_sum = Eigen::MatrixXd::Zero(K, K);

  Eigen::MatrixXd bhat(n, K);
  Eigen::VectorXd shift(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    shift(t) = logb.row(t).maxCoeff();
    bhat.row(t) = (logb.row(t).array() - shift(t)).exp();
  }

  Eigen::MatrixXd alpha(n, K);
  Eigen::VectorXd scale(n);
  alpha.row(0) = model.initial.transpose().cwiseProduct(bhat.row(0));
  scale(0) = alpha.row(0).sum();
  if (!(scale(0) > 0)) throw degenerate_data_error("hmm: zero forward mass");
  alpha.row(0) /= scale(0);
  for (Eigen::Index t = 1; t < n; ++t) {
    alpha.row(t) =
        (alpha.row(t - 1) * model.transition).cwiseProduct(bhat.row(t));
    scale(t) = alpha.row(t).sum();
    if (!(scale(t) > 0)) throw degenerate_data_error("hmm: zero forward mass");
    alpha.row(t) /= scale(t);
  }

  Eigen::MatrixXd beta(n, K);
  beta.row(n - 1).setOnes();
  for (Eigen::Index t = n - 2; t >= 0; --t) {
    beta.row(t) = (model.transition *
                   bhat.row(t + 1).cwiseProduct(beta.row(t + 1)).transpose())
                      .transpose() /
                  scale(t + 1);
    if (t == 0) break;
  }

  for (Eigen::Index t = 0; t < n; ++t) {
    fb.gamma.row(t) = alpha.row(t).cwiseProduct(beta.row(t));
    const double s = fb.gamma.row(t).sum();
    fb.gamma.row(t) /= s;
  }
  for (Eigen::Index t = 0; t + 1 < n; ++t) {
    Eigen::MatrixXd xi =
        (alpha.row(t).transpose() *
         bhat.row(t + 1).cwiseProduct(beta.row(t + 1))) /
        scale(t + 1);
    fb.xi_sum += xi.cwiseProduct(model.transition);
  }

  fb.log_likelihood = scale.array().log().sum() + shift.sum();
  return fb;
}

// Multivariate Lloyd k-means for EM initialization: seeded random first
// center, then farthest-point spreading (ties to the lowest row).
inline std::vector<int> kmeans_rows(const Eigen::MatrixXd& x, int K,
                                    std::uint64_t seed) {
  const auto n = x.rows();
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> centers;
  centers.push_back(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
  while (static_cast<int>(centers.size()) < K) {
    Eigen::Index best = 0;
    double best_d = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (Eigen::Index c : centers)
        d = std::min(d, (x.row(i) - x.row(c)).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    centers.push_back(best);
  }
  Eigen::MatrixXd mu(K, x.cols());
  for (int k = 0; k < K; ++k) mu.row(k) = x.row(centers[k]);

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        const double d = (x.row(i) - mu.row(k)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(K, x.cols());
    std::vector<double> counts(K, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
      counts[assign[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (int k = 0; k < K; ++k)
      if (counts[k] > 0) mu.row(k) = sums.row(k) / counts[k];
    if (!changed && iter > 0) break;
  }
  return assign;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fitting.
// ---------------------------------------------------------------------------

inline GaussianHmm fit_em(const Eigen::MatrixXd& x, const std::vector<Segment>& segments,
                          const FitOptions& opts) {
  const int p = static_cast<int>(x.cols());
  Eigen::Index n_rows = 0;
  for (const auto& [b, e] : segments) {
    if (b < 0 || e > x.rows() || b >= e)
      throw validation_error("fit_em: invalid segment");
    n_rows += e - b;
  }
  if (opts.K < 1) throw validation_error("fit_em: K must be >= 1");
  if (n_rows <= static_cast<Eigen::Index>(opts.K) * (p + 2))
    throw validation_error("fit_em: need more than K*(p+2) observations");

  // gather fitted rows for initialization and the covariance floor
  Eigen::MatrixXd data(n_rows, p);
  Eigen::Index r = 0;
  for (const auto& [b, e] : segments)
    for (Eigen::Index i = b; i < e; ++i) data.row(r++) = x.row(i);
  Eigen::RowVectorXd grand_mean = data.colwise().mean();
  Eigen::MatrixXd centered = data.rowwise() - grand_mean;
  Eigen::MatrixXd pooled =
      centered.transpose() * centered / std::max<double>(1.0, static_cast<double>(n_rows - 1));
  double floor = 1e-6 * pooled.trace() / p;        // 1e-6 x mean feature variance
  if (!(floor > 0)) floor = 1e-6;                  // identical observations
  pooled = detail::floor_covariance(pooled, floor, opts.diagonal);

  GaussianHmm best;
  for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
    GaussianHmm model;
    model.K = opts.K;
    model.covariance_floor = floor;
    model.initial = Eigen::VectorXd::Constant(opts.K, 1.0 / opts.K);
    model.transition = Eigen::MatrixXd::Constant(
        opts.K, opts.K, opts.K > 1 ? 0.1 / (opts.K - 1) : 1.0);
    for (int k = 0; k < opts.K; ++k)
      if (opts.K > 1) model.transition(k, k) = 0.9;
    std::vector<int> assign =
        detail::kmeans_rows(data, opts.K, derive_seed(opts.seed, 0x6d6d68ULL, restart));
    model.means.assign(opts.K, Eigen::VectorXd::Zero(p));
    std::vector<double> counts(opts.K, 0.0);
    for (Eigen::Index i = 0; i < n_rows; ++i) {
      model.means[assign[static_cast<std::size_t>(i)]] += data.row(i).transpose();
      counts[assign[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (int k = 0; k < opts.K; ++k) {
      if (counts[k] > 0)
        model.means[k] /= counts[k];
      else
        model.means[k] = grand_mean.transpose();
    }
    model.covariances.assign(opts.K, pooled);

    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 1; iter <= opts.max_iter; ++iter) {
      // E-step over the segments
      Eigen::MatrixXd gamma_all(n_rows, opts.K);
      Eigen::MatrixXd xi_sum = Eigen::MatrixXd::Zero(opts.K, opts.K);
      Eigen::VectorXd start_mass = Eigen::VectorXd::Zero(opts.K);
      Eigen::VectorXd gamma_trans = Eigen::VectorXd::Zero(opts.K);
      double ll = 0.0;
      Eigen::Index row0 = 0;
      for (const auto& [b, e] : segments) {
        const Eigen::MatrixXd seg = x.middleRows(b, e - b);
        auto fb = detail::forward_backward(model, detail::log_emissions(model, seg));
        gamma_all.middleRows(row0, e - b) = fb.gamma;
        xi_sum += fb.xi_sum;
        start_mass += fb.gamma.row(0).transpose();
        for (Eigen::Index t = 0; t + 1 < e - b; ++t)
          gamma_trans += fb.gamma.row(t).transpose();
        ll += fb.log_likelihood;
        row0 += e - b;
      }
      model.log_likelihood = ll;
      model.iterations = iter;
      model.ll_history.push_back(ll);

      if (ll + 1e-8 < prev_ll)
        log_warn("fit_em: log-likelihood decreased by " + std::to_string(prev_ll - ll));

      // M-step
      model.initial = start_mass / start_mass.sum();
      for (int k = 0; k < opts.K; ++k) {
        if (gamma_trans(k) > 0)
          model.transition.row(k) = xi_sum.row(k) / gamma_trans(k);
        const double rowsum = model.transition.row(k).sum();
        if (rowsum > 0) model.transition.row(k) /= rowsum;
      }
      Eigen::VectorXd weight = gamma_all.colwise().sum();
      for (int k = 0; k < opts.K; ++k) {
        if (weight(k) <= 0) continue;
        Eigen::VectorXd mu =
            (gamma_all.col(k).transpose() * data).transpose() / weight(k);
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
        for (Eigen::Index i = 0; i < n_rows; ++i) {
          const Eigen::VectorXd d = data.row(i).transpose() - mu;
          cov.noalias() += gamma_all(i, k) * d * d.transpose();
        }
        cov /= weight(k);
        if (weight(k) < p + 1)
          log_warn("fit_em: state " + std::to_string(k) +
                   " owns fewer than p+1 points; covariance regularized");
        model.means[k] = mu;
        model.covariances[k] = detail::floor_covariance(cov, floor, opts.diagonal);
      }

      if (iter > 1 && ll - prev_ll < opts.tol * (1.0 + std::abs(prev_ll))) {
        model.converged = true;
        break;
      }
      prev_ll = ll;
    }
    if (!best.K || model.log_likelihood > best.log_likelihood) best = model;
  }
  return best;
}

inline GaussianHmm fit_em(const Eigen::MatrixXd& x, const FitOptions& opts) {
  return fit_em(x, {{0, x.rows()}}, opts);
}

// Contiguous present runs of an epoch matrix, restricted to [t_begin, t_end)
// in epoch-start time when given.
inline std::vector<Segment> present_segments(
    const EpochFeatureMatrix& epochs,
    double t_begin = -std::numeric_limits<double>::infinity(),
    double t_end = std::numeric_limits<double>::infinity()) {
  std::vector<Segment> segs;
  Eigen::Index i = 0;
  const Eigen::Index n = epochs.epoch_count();
  while (i < n) {
    const double t = epochs.epoch_start(i);
    if (!epochs.present[static_cast<std::size_t>(i)] || t < t_begin || t >= t_end) {
      ++i;
      continue;
    }
    Eigen::Index j = i;
    while (j < n && epochs.present[static_cast<std::size_t>(j)] &&
           epochs.epoch_start(j) < t_end)
      ++j;
    segs.push_back({i, j});
    i = j;
  }
  return segs;
}

// ---------------------------------------------------------------------------
// Decoding.
// ---------------------------------------------------------------------------

inline DecodedStates decode(const GaussianHmm& model, const Eigen::MatrixXd& x,
                            const std::vector<Segment>& segments) {
  if (static_cast<int>(x.cols()) != model.dim())
    throw validation_error("decode: observation dimension mismatch");
  Eigen::Index n_rows = 0;
  for (const auto& [b, e] : segments) n_rows += e - b;
  DecodedStates out;
  out.posteriors.resize(n_rows, model.K);
  out.states.resize(static_cast<std::size_t>(n_rows));
  Eigen::Index row0 = 0;
  for (const auto& [b, e] : segments) {
    const Eigen::MatrixXd seg = x.middleRows(b, e - b);
    auto fb = detail::forward_backward(model, detail::log_emissions(model, seg));
    out.posteriors.middleRows(row0, e - b) = fb.gamma;
    out.log_likelihood += fb.log_likelihood;
    row0 += e - b;
  }
  for (Eigen::Index i = 0; i < n_rows; ++i) {
    int best = 0;
    for (int k = 1; k < model.K; ++k)
      if (out.posteriors(i, k) > out.posteriors(i, best)) best = k;
    out.states[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

inline DecodedStates decode(const GaussianHmm& model, const Eigen::MatrixXd& x) {
  return decode(model, x, {{0, x.rows()}});
}

// Most likely state path (optional alternative to posterior decoding).
inline std::vector<int> viterbi(const GaussianHmm& model, const Eigen::MatrixXd& x) {
  if (static_cast<int>(x.cols()) != model.dim())
    throw validation_error("viterbi: observation dimension mismatch");
  const auto n = x.rows();
  const int K = model.K;
  const Eigen::MatrixXd logb = detail::log_emissions(model, x);
  Eigen::MatrixXd delta(n, K);
  Eigen::MatrixXi back(n, K);
  const Eigen::MatrixXd logA = model.transition.array().max(1e-300).log();
  delta.row(0) = model.initial.array().max(1e-300).log().matrix().transpose() + logb.row(0);
  for (Eigen::Index t = 1; t < n; ++t) {
    for (int k = 0; k < K; ++k) {
      int arg = 0;
      double best = delta(t - 1, 0) + logA(0, k);
      for (int j = 1; j < K; ++j) {
        const double v = delta(t - 1, j) + logA(j, k);
        if (v > best) {
          best = v;
          arg = j;
        }
      }
      delta(t, k) = best + logb(t, k);
      back(t, k) = arg;
    }
  }
  std::vector<int> path(static_cast<std::size_t>(n));
  int last = 0;
  for (int k = 1; k < K; ++k)
    if (delta(n - 1, k) > delta(n - 1, last)) last = k;
  path[static_cast<std::size_t>(n - 1)] = last;
  for (Eigen::Index t = n - 2; t >= 0; --t) {
    last = back(t + 1, last);
    path[static_cast<std::size_t>(t)] = last;
    if (t == 0) break;
  }
  return path;
}

// ---------------------------------------------------------------------------
// State-to-event mapping.
// ---------------------------------------------------------------------------

struct SleepRule {
  std::string feature;        // channel feature the rule inspects
  bool lower_is_sleep = true;
};

// For the binary pipeline (K = 2): the state whose mean is smaller (or
// larger, per the rule direction) on the rule feature is sleep.
inline int sleep_state_index(const GaussianHmm& model, int feature_index,
                             bool lower_is_sleep = true) {
  if (model.K != 2)
    throw validation_error("map_states_to_events: binary pipeline requires K = 2");
  if (feature_index < 0 || feature_index >= model.dim())
    throw validation_error("map_states_to_events: rule feature index out of range");
  const double m0 = model.means[0](feature_index);
  const double m1 = model.means[1](feature_index);
  if (m0 == m1)
    throw degenerate_data_error(
        "map_states_to_events: state means equal on the rule feature; "
        "an explicit override is required");
  const int lower = m0 < m1 ? 0 : 1;
  return lower_is_sleep ? lower : 1 - lower;
}

// ---------------------------------------------------------------------------
// JSON serialization (exact round trip at full precision).
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const GaussianHmm& model) {
  nlohmann::json j;
  j["K"] = model.K;
  j["initial"] = std::vector<double>(model.initial.data(),
                                     model.initial.data() + model.initial.size());
  std::vector<std::vector<double>> a;
  for (Eigen::Index r = 0; r < model.transition.rows(); ++r) {
    std::vector<double> row;
    for (Eigen::Index c = 0; c < model.transition.cols(); ++c)
      row.push_back(model.transition(r, c));
    a.push_back(row);
  }
  j["transition"] = a;
  std::vector<std::vector<double>> means;
  for (const auto& m : model.means)
    means.emplace_back(m.data(), m.data() + m.size());
  j["means"] = means;
  std::vector<std::vector<std::vector<double>>> covs;
  for (const auto& c : model.covariances) {
    std::vector<std::vector<double>> mat;
    for (Eigen::Index r = 0; r < c.rows(); ++r) {
      std::vector<double> row;
      for (Eigen::Index cc = 0; cc < c.cols(); ++cc) row.push_back(c(r, cc));
      mat.push_back(row);
    }
    covs.push_back(mat);
  }
  j["covariances"] = covs;
  j["converged"] = model.converged;
  j["iterations"] = model.iterations;
  j["log_likelihood"] = model.log_likelihood;
  j["covariance_floor"] = model.covariance_floor;
  return j;
}

inline GaussianHmm from_json(const nlohmann::json& j) {
  GaussianHmm model;
  model.K = j.at("K").get<int>();
  const auto init = j.at("initial").get<std::vector<double>>();
  model.initial = Eigen::Map<const Eigen::VectorXd>(init.data(),
                                                    static_cast<Eigen::Index>(init.size()));
  const auto a = j.at("transition").get<std::vector<std::vector<double>>>();
  model.transition.resize(static_cast<Eigen::Index>(a.size()),
                          static_cast<Eigen::Index>(a.empty() ? 0 : a[0].size()));
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[r].size(); ++c)
      model.transition(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = a[r][c];
  for (const auto& m : j.at("means").get<std::vector<std::vector<double>>>())
    model.means.push_back(Eigen::Map<const Eigen::VectorXd>(
        m.data(), static_cast<Eigen::Index>(m.size())));
  for (const auto& mat : j.at("covariances")
                             .get<std::vector<std::vector<std::vector<double>>>>()) {
    Eigen::MatrixXd c(static_cast<Eigen::Index>(mat.size()),
                      static_cast<Eigen::Index>(mat.empty() ? 0 : mat[0].size()));
    for (std::size_t r = 0; r < mat.size(); ++r)
      for (std::size_t cc = 0; cc < mat[r].size(); ++cc)
        c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(cc)) = mat[r][cc];
    model.covariances.push_back(c);
  }
  model.converged = j.at("converged").get<bool>();
  model.iterations = j.at("iterations").get<int>();
  model.log_likelihood = j.at("log_likelihood").get<double>();
  model.covariance_floor = j.value("covariance_floor", 0.0);
  return model;
}

}  // namespace eventseg::hmm
