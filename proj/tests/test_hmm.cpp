#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "eventseg/hmm.hpp"
#include "eventseg/simgen.hpp"
#include "oracles.hpp"

using namespace eventseg;

namespace {

// Draws a chain + Gaussian emissions from known parameters.
struct SampledHmm {
  Eigen::MatrixXd obs;
  std::vector<int> states;
};

SampledHmm sample_hmm(const Eigen::VectorXd& initial, const Eigen::MatrixXd& trans,
                      const std::vector<Eigen::VectorXd>& means,
                      const std::vector<Eigen::MatrixXd>& covs, int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int p = static_cast<int>(means[0].size());
  SampledHmm out;
  out.obs.resize(n, p);
  out.states.resize(static_cast<std::size_t>(n));
  int state = 0;
  {
    double u = unif(rng), acc = 0;
    for (int k = 0; k < initial.size(); ++k) {
      acc += initial(k);
      if (u <= acc) {
        state = k;
        break;
      }
    }
  }
  for (int t = 0; t < n; ++t) {
    if (t > 0) {
      double u = unif(rng), acc = 0;
      for (int k = 0; k < trans.cols(); ++k) {
        acc += trans(state, k);
        if (u <= acc) {
          state = k;
          break;
        }
      }
    }
    out.states[static_cast<std::size_t>(t)] = state;
    const Eigen::LLT<Eigen::MatrixXd> llt(covs[static_cast<std::size_t>(state)]);
    Eigen::VectorXd z(p);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int d = 0; d < p; ++d) z(d) = normal(rng);
    out.obs.row(t) =
        (means[static_cast<std::size_t>(state)] + llt.matrixL() * z).transpose();
  }
  return out;
}

hmm::GaussianHmm toy_model() {
  hmm::GaussianHmm m;
  m.K = 2;
  m.initial = Eigen::Vector2d(0.6, 0.4);
  m.transition.resize(2, 2);
  m.transition << 0.8, 0.2, 0.3, 0.7;
  m.means = {Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(3.0, 1.0)};
  Eigen::Matrix2d c0, c1;
  c0 << 1.0, 0.2, 0.2, 0.8;
  c1 << 0.5, -0.1, -0.1, 0.9;
  m.covariances = {c0, c1};
  return m;
}

}  // namespace

TEST_CASE("forward likelihood equals exhaustive path enumeration") {
  const auto model = toy_model();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(1.0, 1.5);
  for (int n : {1, 2, 4, 6, 8}) {
    Eigen::MatrixXd obs(n, 2);
    for (int t = 0; t < n; ++t) obs.row(t) << normal(rng), normal(rng);
    const auto dec = hmm::decode(model, obs);
    const auto oracle = oracles::enumerate_paths(model.initial, model.transition,
                                                 model.means, model.covariances, obs);
    CAPTURE(n);
    CHECK_THAT(dec.log_likelihood,
               Catch::Matchers::WithinRel(std::log(oracle.likelihood), 1e-10));
    for (int t = 0; t < n; ++t)
      for (int k = 0; k < 2; ++k)
        CHECK_THAT(dec.posteriors(t, k),
                   Catch::Matchers::WithinAbs(oracle.posteriors(t, k), 1e-10));
  }
}

TEST_CASE("three-state forward pass matches enumeration") {
  hmm::GaussianHmm m;
  m.K = 3;
  m.initial = Eigen::Vector3d(0.5, 0.3, 0.2);
  m.transition.resize(3, 3);
  m.transition << 0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.25, 0.25, 0.5;
  m.means = {Eigen::VectorXd::Constant(1, -2.0), Eigen::VectorXd::Constant(1, 0.0),
             Eigen::VectorXd::Constant(1, 2.0)};
  m.covariances = {Eigen::MatrixXd::Constant(1, 1, 0.5),
                   Eigen::MatrixXd::Constant(1, 1, 1.0),
                   Eigen::MatrixXd::Constant(1, 1, 0.7)};
  std::mt19937_64 rng(13);
  std::normal_distribution<double> normal(0.0, 2.0);
  Eigen::MatrixXd obs(7, 1);
  for (int t = 0; t < 7; ++t) obs(t, 0) = normal(rng);
  const auto dec = hmm::decode(m, obs);
  const auto oracle =
      oracles::enumerate_paths(m.initial, m.transition, m.means, m.covariances, obs);
  CHECK_THAT(dec.log_likelihood,
             Catch::Matchers::WithinRel(std::log(oracle.likelihood), 1e-10));
}

TEST_CASE("fit_em recovers a well-separated two-state model") {
  Eigen::MatrixXd trans(2, 2);
  trans << 0.9, 0.1, 0.15, 0.85;
  const std::vector<Eigen::VectorXd> means = {Eigen::Vector2d(0.0, 0.0),
                                              Eigen::Vector2d(6.0, 6.0)};
  const std::vector<Eigen::MatrixXd> covs = {Eigen::Matrix2d::Identity(),
                                             Eigen::Matrix2d::Identity()};
  const auto sample = sample_hmm(Eigen::Vector2d(0.5, 0.5), trans, means, covs, 1000, 21);

  hmm::FitOptions opts;
  opts.K = 2;
  opts.seed = 5;
  const auto model = hmm::fit_em(sample.obs, opts);
  REQUIRE(model.K == 2);
  // identify which fitted state is which by the first mean coordinate
  const int s0 = model.means[0](0) < model.means[1](0) ? 0 : 1;
  const int s1 = 1 - s0;
  CHECK((model.means[s0] - means[0]).norm() < 0.1);
  CHECK((model.means[s1] - means[1]).norm() < 0.1);
  CHECK(std::abs(model.transition(s0, s0) - 0.9) < 0.05);
  CHECK(std::abs(model.transition(s1, s1) - 0.85) < 0.05);
  CHECK(model.converged);
}

TEST_CASE("fit_em log-likelihood is monotone across iterations") {
  std::mt19937_64 seed_rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd trans(2, 2);
    trans << 0.85, 0.15, 0.2, 0.8;
    const std::vector<Eigen::VectorXd> means = {Eigen::Vector2d(0.0, 0.0),
                                                Eigen::Vector2d(1.5, 0.5)};
    const std::vector<Eigen::MatrixXd> covs = {Eigen::Matrix2d::Identity(),
                                               Eigen::Matrix2d::Identity() * 1.5};
    const auto sample = sample_hmm(Eigen::Vector2d(0.5, 0.5), trans, means, covs, 300,
                                   static_cast<unsigned>(seed_rng()));
    hmm::FitOptions opts;
    opts.K = 2;
    opts.seed = seed_rng();
    const auto model = hmm::fit_em(sample.obs, opts);
    for (std::size_t i = 1; i < model.ll_history.size(); ++i) {
      CAPTURE(trial, i);
      CHECK(model.ll_history[i] >= model.ll_history[i - 1] - 1e-8);
    }
  }
}

TEST_CASE("fit_em with K=1 collapses to the sample moments") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> normal(2.0, 1.0);
  Eigen::MatrixXd obs(200, 1);
  for (int i = 0; i < 200; ++i) obs(i, 0) = normal(rng);
  hmm::FitOptions opts;
  opts.K = 1;
  const auto model = hmm::fit_em(obs, opts);
  CHECK(model.transition.rows() == 1);
  CHECK_THAT(model.transition(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK_THAT(model.means[0](0), Catch::Matchers::WithinAbs(obs.col(0).mean(), 1e-9));
  // EM's M-step uses the maximum-likelihood (1/n) covariance
  const double var = (obs.col(0).array() - obs.col(0).mean()).square().sum() / 200.0;
  CHECK_THAT(model.covariances[0](0, 0), Catch::Matchers::WithinRel(var, 1e-6));
}

TEST_CASE("fit_em floors the covariance on constant observations") {
  Eigen::MatrixXd obs = Eigen::MatrixXd::Constant(50, 1, 3.0);
  hmm::FitOptions opts;
  opts.K = 1;
  opts.restarts = 1;
  const auto model = hmm::fit_em(obs, opts);
  CHECK(model.covariances[0](0, 0) == model.covariance_floor);
  CHECK(model.converged);
  CHECK(model.iterations <= 2);
}

TEST_CASE("fit_em validates the sample size precondition") {
  Eigen::MatrixXd obs = Eigen::MatrixXd::Random(8, 2);
  hmm::FitOptions opts;
  opts.K = 2;  // needs more than 2*(2+2) = 8 rows
  CHECK_THROWS_AS(hmm::fit_em(obs, opts), validation_error);
}

TEST_CASE("fit_em is bit-reproducible for a fixed seed") {
  const auto sample = sample_hmm(Eigen::Vector2d(0.5, 0.5),
                                 (Eigen::MatrixXd(2, 2) << 0.9, 0.1, 0.2, 0.8).finished(),
                                 {Eigen::Vector2d(0, 0), Eigen::Vector2d(4, 4)},
                                 {Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()},
                                 400, 51);
  hmm::FitOptions opts;
  opts.K = 2;
  opts.seed = 99;
  const auto a = hmm::fit_em(sample.obs, opts);
  const auto b = hmm::fit_em(sample.obs, opts);
  CHECK(a.log_likelihood == b.log_likelihood);
  CHECK(a.initial == b.initial);
  CHECK(a.transition == b.transition);
  for (int k = 0; k < 2; ++k) {
    CHECK(a.means[k] == b.means[k]);
    CHECK(a.covariances[k] == b.covariances[k]);
  }
}

TEST_CASE("decode posteriors favour the generating state") {
  auto model = toy_model();
  model.covariances = {Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()};
  model.initial = Eigen::Vector2d(0.5, 0.5);

  SECTION("single epoch at a state mean") {
    Eigen::MatrixXd obs(1, 2);
    obs.row(0) = model.means[0].transpose();
    const auto dec = hmm::decode(model, obs);
    CHECK(dec.states[0] == 0);
    CHECK(dec.posteriors(0, 0) > 0.5);
  }
  SECTION("a run of epochs far from state 1") {
    Eigen::MatrixXd obs(5, 2);
    for (int t = 0; t < 5; ++t) obs.row(t) = model.means[0].transpose();
    model.means[1] = Eigen::Vector2d(10.0, 10.0);  // 10+ sigma away
    const auto dec = hmm::decode(model, obs);
    for (int t = 0; t < 5; ++t) {
      CHECK(dec.states[static_cast<std::size_t>(t)] == 0);
      CHECK(dec.posteriors(t, 0) > 0.999);
    }
  }
}

TEST_CASE("decode validates the observation dimension") {
  const auto model = toy_model();
  CHECK_THROWS_AS(hmm::decode(model, Eigen::MatrixXd::Random(4, 3)), validation_error);
}

TEST_CASE("viterbi matches posterior decoding on unambiguous data") {
  Eigen::MatrixXd trans(2, 2);
  trans << 0.9, 0.1, 0.1, 0.9;
  const std::vector<Eigen::VectorXd> means = {Eigen::Vector2d(0, 0), Eigen::Vector2d(8, 8)};
  const std::vector<Eigen::MatrixXd> covs = {Eigen::Matrix2d::Identity(),
                                             Eigen::Matrix2d::Identity()};
  const auto sample = sample_hmm(Eigen::Vector2d(0.5, 0.5), trans, means, covs, 200, 61);
  hmm::GaussianHmm model;
  model.K = 2;
  model.initial = Eigen::Vector2d(0.5, 0.5);
  model.transition = trans;
  model.means = means;
  model.covariances = covs;
  const auto dec = hmm::decode(model, sample.obs);
  const auto path = hmm::viterbi(model, sample.obs);
  CHECK(dec.states == path);
}

TEST_CASE("map_states_to_events picks the low-mean state as sleep") {
  auto model = toy_model();
  model.means = {Eigen::Vector2d(55.0, 1.0), Eigen::Vector2d(75.0, 2.0)};
  CHECK(hmm::sleep_state_index(model, 0, true) == 0);
  model.means = {Eigen::Vector2d(75.0, 1.0), Eigen::Vector2d(55.0, 2.0)};
  CHECK(hmm::sleep_state_index(model, 0, true) == 1);
  SECTION("equal means are ambiguous") {
    model.means = {Eigen::Vector2d(60.0, 1.0), Eigen::Vector2d(60.0, 2.0)};
    CHECK_THROWS_AS(hmm::sleep_state_index(model, 0, true), degenerate_data_error);
  }
  SECTION("only binary models are mappable") {
    model.K = 3;
    CHECK_THROWS_AS(hmm::sleep_state_index(model, 0, true), validation_error);
  }
}

TEST_CASE("baseline HMM labels match generated truth on stable data") {
  auto config = simgen::default_configs().at(simgen::Scenario::stable);
  config.seed = 71;
  const auto real = simgen::generate(config);
  Eigen::Index n0 = 0;
  while (n0 < static_cast<Eigen::Index>(real.time_hours.size()) &&
         real.time_hours[static_cast<std::size_t>(n0)] < 36.0)
    ++n0;
  hmm::FitOptions opts;
  opts.K = 2;
  opts.seed = 7;
  const auto model = hmm::fit_em(real.observations.topRows(n0), opts);
  const int sleep_state = hmm::sleep_state_index(model, 0, true);
  const auto dec = hmm::decode(model, real.observations.topRows(n0));
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < n0; ++i)
    if ((dec.states[static_cast<std::size_t>(i)] == sleep_state ? 1 : 0) ==
        real.truth_labels[static_cast<std::size_t>(i)])
      ++correct;
  CHECK(static_cast<double>(correct) / static_cast<double>(n0) >= 0.99);
}

TEST_CASE("segmented fitting handles gaps in the epoch stream") {
  const auto sample = sample_hmm(Eigen::Vector2d(0.5, 0.5),
                                 (Eigen::MatrixXd(2, 2) << 0.9, 0.1, 0.2, 0.8).finished(),
                                 {Eigen::Vector2d(0, 0), Eigen::Vector2d(5, 5)},
                                 {Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()},
                                 400, 81);
  hmm::FitOptions opts;
  opts.K = 2;
  opts.seed = 3;
  const std::vector<hmm::Segment> segments = {{0, 150}, {170, 400}};
  const auto model = hmm::fit_em(sample.obs, segments, opts);
  CHECK(model.converged);
  const auto dec = hmm::decode(model, sample.obs, segments);
  CHECK(dec.states.size() == 380);
  // posteriors rows sum to one
  for (Eigen::Index i = 0; i < dec.posteriors.rows(); ++i)
    CHECK_THAT(dec.posteriors.row(i).sum(), Catch::Matchers::WithinAbs(1.0, 1e-10));
}

TEST_CASE("model JSON serialization round-trips exactly") {
  const auto sample = sample_hmm(Eigen::Vector2d(0.5, 0.5),
                                 (Eigen::MatrixXd(2, 2) << 0.9, 0.1, 0.2, 0.8).finished(),
                                 {Eigen::Vector2d(0, 0), Eigen::Vector2d(4, 4)},
                                 {Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()},
                                 300, 91);
  hmm::FitOptions opts;
  opts.K = 2;
  opts.seed = 17;
  const auto model = hmm::fit_em(sample.obs, opts);
  const auto dumped = hmm::to_json(model).dump();
  const auto parsed = hmm::from_json(nlohmann::json::parse(dumped));
  CHECK(parsed.K == model.K);
  CHECK(parsed.initial == model.initial);
  CHECK(parsed.transition == model.transition);
  for (int k = 0; k < model.K; ++k) {
    CHECK(parsed.means[k] == model.means[k]);
    CHECK(parsed.covariances[k] == model.covariances[k]);
  }
  CHECK(parsed.log_likelihood == model.log_likelihood);
}

TEST_CASE("transition rows stay stochastic and covariances stay positive") {
  const auto sample = sample_hmm(Eigen::Vector2d(0.5, 0.5),
                                 (Eigen::MatrixXd(2, 2) << 0.7, 0.3, 0.4, 0.6).finished(),
                                 {Eigen::Vector2d(0, 0), Eigen::Vector2d(2, 1)},
                                 {Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()},
                                 500, 101);
  hmm::FitOptions opts;
  opts.K = 2;
  opts.seed = 23;
  const auto model = hmm::fit_em(sample.obs, opts);
  for (int k = 0; k < 2; ++k) {
    CHECK_THAT(model.transition.row(k).sum(), Catch::Matchers::WithinAbs(1.0, 1e-10));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(model.covariances[k]);
    CHECK(es.eigenvalues().minCoeff() >= model.covariance_floor * (1 - 1e-9));
  }
}
