#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "eventseg/flda.hpp"
#include "eventseg/hmm.hpp"
#include "eventseg/simgen.hpp"
#include "oracles.hpp"

using namespace eventseg;

namespace {

// Fisher criterion (between-class over within-class variation of scores).
double fisher_criterion(const Eigen::MatrixXd& x, const std::vector<int>& y,
                        const Eigen::VectorXd& w) {
  const Eigen::VectorXd z = x * w;
  double m0 = 0, m1 = 0, n0 = 0, n1 = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (y[static_cast<std::size_t>(i)] == 1) {
      m1 += z(i);
      ++n1;
    } else {
      m0 += z(i);
      ++n0;
    }
  }
  m0 /= n0;
  m1 /= n1;
  const double grand = z.mean();
  double within = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double c = y[static_cast<std::size_t>(i)] == 1 ? m1 : m0;
    within += (z(i) - c) * (z(i) - c);
  }
  const double between = (m1 - grand) * (m1 - grand) + (m0 - grand) * (m0 - grand);
  return between / within;
}

struct TwoClassSample {
  Eigen::MatrixXd x;
  std::vector<int> y;
};

TwoClassSample gaussian_classes(const Eigen::Vector2d& mu0, const Eigen::Vector2d& mu1,
                                int per_class, unsigned seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sd);
  TwoClassSample s;
  s.x.resize(2 * per_class, 2);
  for (int i = 0; i < per_class; ++i) {
    s.x.row(i) << mu0(0) + normal(rng), mu0(1) + normal(rng);
    s.y.push_back(0);
  }
  for (int i = 0; i < per_class; ++i) {
    s.x.row(per_class + i) << mu1(0) + normal(rng), mu1(1) + normal(rng);
    s.y.push_back(1);
  }
  return s;
}

EpochFeatureMatrix stream_matrix(const Eigen::MatrixXd& values, double step = 600.0) {
  EpochFeatureMatrix m;
  m.subject_id = "t";
  m.epoch_length = step;
  m.start0 = 0.0;
  m.feature_names = {"F0", "F1"};
  m.values = values;
  m.availability.assign(static_cast<std::size_t>(values.rows()), 1.0);
  m.present.assign(static_cast<std::size_t>(values.rows()), 1);
  return m;
}

}  // namespace

TEST_CASE("fisher_weights points along the mean difference under isotropic scatter") {
  Eigen::MatrixXd x(8, 2);
  x << 1, 0, -1, 0, 0, 1, 0, -1,  // class 0 around (0,0)
      2, 0, 0, 0, 1, 1, 1, -1;    // class 1 around (1,0)
  const std::vector<int> y = {0, 0, 0, 0, 1, 1, 1, 1};
  const auto w = flda::fisher_weights(x, y, 0.0);
  CHECK(w(0) > 0.0);
  CHECK_THAT(w(1) / w(0), Catch::Matchers::WithinAbs(0.0, 1e-10));
}

TEST_CASE("fisher_weights vanishes when class means coincide") {
  auto s = gaussian_classes({0, 0}, {0, 0}, 50, 7);
  // force exactly equal class means
  Eigen::Vector2d m0 = Eigen::Vector2d::Zero(), m1 = Eigen::Vector2d::Zero();
  for (int i = 0; i < 50; ++i) m0 += s.x.row(i).transpose();
  for (int i = 50; i < 100; ++i) m1 += s.x.row(i).transpose();
  for (int i = 50; i < 100; ++i) s.x.row(i) += ((m0 - m1) / 50.0).transpose();
  const auto w = flda::fisher_weights(s.x, s.y, 0.0);
  CHECK(w.norm() < 1e-10);
}

TEST_CASE("fisher_weights throws on a starved class") {
  Eigen::MatrixXd x(4, 2);
  x << 0, 0, 1, 1, 2, 2, 3, 3;
  CHECK_THROWS_AS(flda::fisher_weights(x, std::vector<int>{0, 0, 0, 0}),
                  class_starvation_error);
  CHECK_THROWS_AS(flda::fisher_weights(x, std::vector<int>{0, 0, 0, 1}),
                  class_starvation_error);
}

TEST_CASE("fisher_weights beats random directions on the criterion") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const auto s = gaussian_classes({0, 0}, {2.0, 1.0}, 100, 100 + trial);
    const auto w = flda::fisher_weights(s.x, s.y, 0.0);
    const double best = fisher_criterion(s.x, s.y, w);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < 10000; ++i) {
      Eigen::VectorXd v(2);
      v << normal(rng), normal(rng);
      if (v.norm() < 1e-9) continue;
      v /= v.norm();
      CAPTURE(trial, i);
      REQUIRE(fisher_criterion(s.x, s.y, v) <= best + 1e-9);
    }
  }
}

TEST_CASE("fisher_weights satisfies the stationarity condition") {
  const auto s = gaussian_classes({0, 0}, {3, 2}, 80, 23);
  const auto w = flda::fisher_weights(s.x, s.y, 0.0);
  // S_W w should be proportional to (mean1 - mean0)
  Eigen::Vector2d m0 = Eigen::Vector2d::Zero(), m1 = Eigen::Vector2d::Zero();
  for (int i = 0; i < 80; ++i) m0 += s.x.row(i).transpose();
  for (int i = 80; i < 160; ++i) m1 += s.x.row(i).transpose();
  m0 /= 80;
  m1 /= 80;
  Eigen::Matrix2d sw = Eigen::Matrix2d::Zero();
  for (int i = 0; i < 160; ++i) {
    const Eigen::Vector2d d = s.x.row(i).transpose() - (i < 80 ? m0 : m1);
    sw += d * d.transpose();
  }
  const Eigen::Vector2d lhs = sw * w;
  const Eigen::Vector2d rhs = m1 - m0;
  CHECK((lhs - rhs).norm() / rhs.norm() < 1e-8);
}

TEST_CASE("project_classify reduces to the midpoint rule for equal variances") {
  flda::FldaState s;
  s.w = Eigen::VectorXd::Ones(1);
  s.z_mean0 = 0.0;
  s.z_mean1 = 4.0;
  s.z_var0 = 1.0;
  s.z_var1 = 1.0;
  s.gamma = 1.0;
  CHECK(flda::classify_score(s, 2.0 + 1e-9) == 1);
  CHECK(flda::classify_score(s, 2.0 - 1e-9) == 0);
  CHECK(flda::classify_score(s, 4.0) == 1);  // at the class-1 mean
}

TEST_CASE("project_classify agrees with symbolic evaluation of the rule") {
  SECTION("hand-worked unequal variance case") {
    flda::FldaState s;
    s.w = Eigen::VectorXd::Ones(1);
    s.z_mean0 = 0.0;
    s.z_var0 = 1.0;
    s.z_mean1 = 4.0;
    s.z_var1 = 4.0;
    s.gamma = 1.0;
    // lhs = 1.5^2/1 - (1.5-4)^2/4 = 0.6875; rhs = log(4) = 1.386: class 0
    CHECK(flda::classify_score(s, 1.5) == 0);
  }
  SECTION("random parameter draws") {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> u(-5.0, 5.0), upos(0.1, 5.0);
    for (int i = 0; i < 1000; ++i) {
      flda::FldaState s;
      s.w = Eigen::VectorXd::Ones(1);
      s.z_mean0 = u(rng);
      s.z_mean1 = u(rng);
      s.z_var0 = upos(rng);
      s.z_var1 = upos(rng);
      s.gamma = upos(rng);
      const double z = u(rng);
      const double lhs = (z - s.z_mean0) * (z - s.z_mean0) / s.z_var0 -
                         (z - s.z_mean1) * (z - s.z_mean1) / s.z_var1;
      const double rhs = std::log(s.gamma * s.z_var1 / s.z_var0);
      CAPTURE(i);
      REQUIRE(flda::classify_score(s, z) == (lhs > rhs ? 1 : 0));
    }
  }
}

TEST_CASE("classification labels are invariant to a positive feature rescale") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> scale_draw(0.1, 20.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = gaussian_classes({0, 0}, {1.5, 1.0}, 60, 300 + trial);
    const double c = scale_draw(rng);
    const auto base = flda::fit_state(s.x, s.y, 1.0, 0.0);
    const auto scaled = flda::fit_state((s.x * c).eval(), s.y, 1.0, 0.0);
    std::normal_distribution<double> normal(0.5, 2.0);
    for (int i = 0; i < 50; ++i) {
      Eigen::VectorXd v(2);
      v << normal(rng), normal(rng);
      CAPTURE(trial, i);
      REQUIRE(flda::project_classify(base, v) ==
              flda::project_classify(scaled, (v * c).eval()));
    }
  }
}

TEST_CASE("separability index on reference constructions") {
  SECTION("far separated label-pure clusters give 1.0") {
    const auto s = gaussian_classes({0, 0}, {30, 30}, 100, 37);
    const auto w = flda::fisher_weights(s.x, s.y);
    CHECK(flda::separability_index(s.x, s.y, w) == 1.0);
  }
  SECTION("identical class distributions give about one half") {
    const auto s = gaussian_classes({0, 0}, {0, 0}, 100, 41);
    const auto w = flda::fisher_weights(s.x, s.y);
    const double si = flda::separability_index(s.x, s.y, w);
    CHECK(si >= 0.37);
    CHECK(si <= 0.57);
  }
  SECTION("a single shared label is trivially separable") {
    std::mt19937_64 rng(43);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> z(50);
    for (auto& v : z) v = normal(rng);
    CHECK(flda::separability_index(z, std::vector<int>(50, 1)) == 1.0);
  }
}

TEST_CASE("separability index equals the brute-force recount") {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> unif(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 50);
    std::vector<double> z(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      z[static_cast<std::size_t>(i)] =
          trial % 4 == 0 ? std::floor(unif(rng) * 6.0) : unif(rng);
      y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
    }
    CAPTURE(trial);
    CHECK(flda::separability_index(z, y) == oracles::nn_agreement(z, y));
  }
}

namespace {

// Stationary two-class stream: truth alternates in long runs, classes well
// separated; baseline labels are the truth over [0, 36 h).
struct SelfTrainFixture {
  EpochFeatureMatrix epochs;
  LabelSequence baseline;
  std::vector<int> truth;
};

SelfTrainFixture stationary_stream(unsigned seed, int n_epochs = 1000,
                                   Eigen::Vector2d shift_per_epoch = {0, 0}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(n_epochs, 2);
  std::vector<int> truth(static_cast<std::size_t>(n_epochs));
  int state = 0;
  int run_left = 60;
  for (int i = 0; i < n_epochs; ++i) {
    if (run_left == 0) {
      state = 1 - state;
      run_left = state == 1 ? 48 : 96;  // 8 h sleep, 16 h wake
    }
    --run_left;
    truth[static_cast<std::size_t>(i)] = state;
    const Eigen::Vector2d mu = state == 1
                                   ? Eigen::Vector2d(58.0, -2.5) + shift_per_epoch * i
                                   : Eigen::Vector2d(75.0, -1.0);
    x(i, 0) = mu(0) + 5.0 * normal(rng);
    x(i, 1) = mu(1) + 0.5 * normal(rng);
  }
  SelfTrainFixture f;
  f.epochs = stream_matrix(x);
  f.truth = truth;
  f.baseline = LabelSequence::unlabeled(0.0, 600.0, static_cast<std::size_t>(n_epochs));
  for (int i = 0; i < n_epochs; ++i) {
    if (i * 600.0 < 36.0 * 3600.0) {
      f.baseline.labels[static_cast<std::size_t>(i)] = truth[static_cast<std::size_t>(i)];
      f.baseline.sources[static_cast<std::size_t>(i)] = LabelSource::hmm_baseline;
    }
  }
  return f;
}

}  // namespace

TEST_CASE("gradual self-training tracks a stationary stream") {
  const auto f = stationary_stream(53);
  const auto result =
      flda::gradual_self_train(f.epochs, f.baseline, flda::AdaptationSchedule::table_default());
  std::size_t correct = 0, post = 0;
  for (std::size_t i = 0; i < f.truth.size(); ++i) {
    if (f.epochs.epoch_start(static_cast<Eigen::Index>(i)) < 36.0 * 3600.0) continue;
    ++post;
    if (result.labels.labels[i] == f.truth[i]) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(post) >= 0.99);
}

TEST_CASE("gradual self-training never rewrites baseline labels") {
  auto f = stationary_stream(59);
  const auto result =
      flda::gradual_self_train(f.epochs, f.baseline, flda::AdaptationSchedule::table_default());
  for (std::size_t i = 0; i < f.truth.size(); ++i) {
    if (f.epochs.epoch_start(static_cast<Eigen::Index>(i)) >= 36.0 * 3600.0) break;
    CHECK(result.labels.labels[i] == f.baseline.labels[i]);
    CHECK(result.labels.sources[i] == LabelSource::hmm_baseline);
  }
}

TEST_CASE("gradual self-training is deterministic") {
  const auto f = stationary_stream(61);
  const auto schedule = flda::AdaptationSchedule::table_default();
  const auto a = flda::gradual_self_train(f.epochs, f.baseline, schedule);
  const auto b = flda::gradual_self_train(f.epochs, f.baseline, schedule);
  CHECK(a.labels.labels == b.labels.labels);
  REQUIRE(a.diagnostics.size() == b.diagnostics.size());
  for (std::size_t i = 0; i < a.diagnostics.size(); ++i) {
    CHECK(a.diagnostics[i].chosen_train_length == b.diagnostics[i].chosen_train_length);
    CHECK(a.diagnostics[i].si == b.diagnostics[i].si);
  }
}

TEST_CASE("an all-wake post-baseline stream stays all wake") {
  // baseline: 18 h of wake then 18 h of sleep; post-baseline: wake only
  const int n = 600;
  std::mt19937_64 rng(67);
  std::normal_distribution<double> normal(0.0, 0.5);
  Eigen::MatrixXd x(n, 2);
  std::vector<int> truth(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t_h = i * 600.0 / 3600.0;
    const bool sleep = t_h >= 18.0 && t_h < 36.0;
    truth[static_cast<std::size_t>(i)] = sleep ? 1 : 0;
    const double mu0 = sleep ? 10.0 : 0.0;
    x(i, 0) = mu0 + normal(rng);
    x(i, 1) = normal(rng);
  }
  const auto epochs = stream_matrix(x);
  LabelSequence baseline = LabelSequence::unlabeled(0.0, 600.0, static_cast<std::size_t>(n));
  for (int i = 0; i < 216; ++i)
    baseline.labels[static_cast<std::size_t>(i)] = truth[static_cast<std::size_t>(i)];

  const auto result =
      flda::gradual_self_train(epochs, baseline, flda::AdaptationSchedule::table_default());
  bool saw_carried = false;
  for (int i = 216; i < n; ++i) {
    REQUIRE(result.labels.labels[static_cast<std::size_t>(i)] == 0);
    if (result.labels.sources[static_cast<std::size_t>(i)] == LabelSource::carried_forward)
      saw_carried = true;
  }
  // once every candidate window is pure wake the state must carry forward
  CHECK(saw_carried);
}

TEST_CASE("gradual self-training rejects a baseline shorter than the smallest window") {
  const auto f = stationary_stream(71, 300);
  flda::AdaptationSchedule schedule = flda::AdaptationSchedule::table_default();
  schedule.baseline_end = 6.0 * 3600.0;  // 6 h < 12 h minimum training window
  CHECK_THROWS_AS(flda::gradual_self_train(f.epochs, f.baseline, schedule),
                  validation_error);
}

TEST_CASE("adaptive training beats a static baseline rule under drift") {
  // the sleep-class mean on feature 0 drifts upward through the wake mean,
  // which breaks any frozen projection learned on the baseline
  int adaptive_wins = 0;
  const int trials = 10;
  for (int trial = 0; trial < trials; ++trial) {
    const auto f = stationary_stream(800 + trial, 1000, {0.02, 0.0});
    const auto result = flda::gradual_self_train(f.epochs, f.baseline,
                                                 flda::AdaptationSchedule::table_default());
    // static rule: naive-Bayes state frozen from the labelled baseline
    Eigen::MatrixXd xb(216, 2);
    std::vector<int> yb;
    for (int i = 0; i < 216; ++i) {
      xb.row(i) = f.epochs.values.row(i);
      yb.push_back(f.truth[static_cast<std::size_t>(i)]);
    }
    const auto frozen = flda::fit_state(xb, yb);
    std::size_t adaptive_ok = 0, frozen_ok = 0, post = 0;
    for (int i = 216; i < 1000; ++i) {
      ++post;
      if (result.labels.labels[static_cast<std::size_t>(i)] ==
          f.truth[static_cast<std::size_t>(i)])
        ++adaptive_ok;
      if (flda::project_classify(frozen, f.epochs.values.row(i).transpose()) ==
          f.truth[static_cast<std::size_t>(i)])
        ++frozen_ok;
    }
    if (adaptive_ok >= frozen_ok) ++adaptive_wins;
  }
  CHECK(adaptive_wins >= 9);
}
