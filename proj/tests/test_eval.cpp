#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "eventseg/eval.hpp"

using namespace eventseg;

namespace {

std::vector<int> runs(std::initializer_list<std::pair<int, int>> parts) {
  std::vector<int> out;
  for (const auto& [label, count] : parts)
    out.insert(out.end(), static_cast<std::size_t>(count), label);
  return out;
}

}  // namespace

TEST_CASE("score of a perfect prediction") {
  const auto truth = runs({{0, 60}, {1, 48}, {0, 60}, {1, 48}});
  const auto m = eval::score(truth, truth, 1.0 / 6.0);
  CHECK(m.accuracy == 1.0);
  CHECK(m.f1.value() == 1.0);
  CHECK_THAT(m.cosine.value(), Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK(m.onset_diff.value() == 0.0);
  CHECK(m.duration_diff.value() == 0.0);
}

TEST_CASE("score(x, x) is perfect for random two-class streams") {
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> x(100);
    for (auto& v : x) v = static_cast<int>(rng() % 2);
    x[0] = 0;
    x[1] = 1;  // both classes present
    const auto m = eval::score(x, x, 0.25);
    CHECK(m.accuracy == 1.0);
    CHECK(m.f1.value() == 1.0);
  }
}

TEST_CASE("onset error uses the nearest true onset") {
  // true sleep onsets at 23 h and 47 h; predicted onset at 23.5 h
  const double eh = 1.0 / 6.0;
  std::vector<int> truth(400, 0), pred(400, 0);
  for (int i = 138; i < 186; ++i) truth[static_cast<std::size_t>(i)] = 1;  // 23h-31h
  for (int i = 282; i < 330; ++i) truth[static_cast<std::size_t>(i)] = 1;  // 47h-55h
  for (int i = 141; i < 186; ++i) pred[static_cast<std::size_t>(i)] = 1;   // 23.5h on
  const auto m = eval::score(pred, truth, eh);
  CHECK_THAT(m.onset_diff.value(), Catch::Matchers::WithinAbs(0.5, 1e-9));
}

TEST_CASE("non-overlapping predictions are charged their full length") {
  const double eh = 1.0 / 6.0;
  std::vector<int> truth(300, 0), pred(300, 0);
  for (int i = 0; i < 30; ++i) truth[static_cast<std::size_t>(i)] = 1;  // 0-5 h
  for (int i = 200; i < 212; ++i) pred[static_cast<std::size_t>(i)] = 1;  // 2 h, no overlap
  const auto m = eval::score(pred, truth, eh);
  CHECK_THAT(m.duration_diff.value(), Catch::Matchers::WithinAbs(2.0, 1e-9));
}

TEST_CASE("F1 is reported absent when the truth has one class") {
  std::vector<int> truth(50, 0);
  std::vector<int> pred(50, 0);
  pred[10] = 1;
  const auto m = eval::score(pred, truth, 0.25);
  CHECK_FALSE(m.f1.has_value());
  CHECK_FALSE(m.f1_reason.empty());
}

TEST_CASE("cosine ignores appended trailing wake epochs") {
  auto truth = runs({{0, 30}, {1, 20}});
  auto pred = runs({{0, 28}, {1, 22}});
  const auto before = eval::score(pred, truth, 0.25).cosine.value();
  for (int i = 0; i < 40; ++i) {
    truth.push_back(0);
    pred.push_back(0);
  }
  const auto after = eval::score(pred, truth, 0.25).cosine.value();
  CHECK_THAT(after, Catch::Matchers::WithinAbs(before, 1e-12));
}

TEST_CASE("loess detrending reference behaviours") {
  SECTION("constant input is unchanged") {
    const std::vector<double> x(40, 3.5);
    const auto out = eval::loess_detrend(x, 0.5);
    for (double v : out) CHECK_THAT(v, Catch::Matchers::WithinAbs(3.5, 1e-12));
  }
  SECTION("an exact line detrends to its mean") {
    std::vector<double> x;
    for (int i = 0; i < 60; ++i) x.push_back(2.0 + 0.3 * i);
    const auto out = eval::loess_detrend(x, 0.4);
    const double m = mean(x);
    for (double v : out) CHECK_THAT(v, Catch::Matchers::WithinAbs(m, 1e-6));
  }
  SECTION("a quadratic trend is mostly removed") {
    std::vector<double> x;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
      const double t = static_cast<double>(i);
      x.push_back(0.01 * t * t);
    }
    const auto out = eval::loess_detrend(x, 0.3);
    // compare the residual's fitted slope to the input's peak slope
    std::vector<double> idx(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) idx[i] = static_cast<double>(i);
    const double out_slope = std::abs(polyfit(idx, out, 1)[1]);
    const double peak_slope = 0.01 * 2.0 * (n - 1);
    CHECK(out_slope <= 0.01 * peak_slope);
  }
  SECTION("detrending commutes with adding a constant") {
    std::mt19937_64 rng(97);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> x;
    for (int i = 0; i < 50; ++i) x.push_back(normal(rng) + 0.05 * i);
    auto shifted = x;
    for (auto& v : shifted) v += 11.0;
    const auto a = eval::loess_detrend(x, 0.6);
    const auto b = eval::loess_detrend(shifted, 0.6);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK_THAT(b[i] - a[i], Catch::Matchers::WithinAbs(11.0, 1e-9));
  }
  SECTION("too few points or too small a span fail") {
    CHECK_THROWS_AS(eval::loess_detrend({1, 2, 3, 4}, 0.5), insufficient_data_error);
    CHECK_THROWS_AS(eval::loess_detrend(std::vector<double>(100, 1.0), 0.01),
                    validation_error);
  }
}

TEST_CASE("student t CDF matches closed forms") {
  // df = 1: F(t) = 1/2 + atan(t)/pi; df = 2: F(t) = 1/2 + t / (2 sqrt(2 + t^2))
  for (double t : {-3.0, -1.0, -0.2, 0.0, 0.5, 1.0, 2.5, 7.0}) {
    CHECK_THAT(eval::student_t_cdf(t, 1.0),
               Catch::Matchers::WithinAbs(0.5 + std::atan(t) / M_PI, 1e-10));
    CHECK_THAT(eval::student_t_cdf(t, 2.0),
               Catch::Matchers::WithinAbs(0.5 + t / (2.0 * std::sqrt(2.0 + t * t)), 1e-10));
  }
  // tabulated quantile: P(T_29 <= 2.04523) = 0.975
  CHECK_THAT(eval::student_t_cdf(2.045229642132703, 29.0),
             Catch::Matchers::WithinAbs(0.975, 1e-6));
}

TEST_CASE("paired t-test basics") {
  SECTION("identical samples are degenerate") {
    const std::vector<double> a = {1, 2, 3, 4, 5};
    const auto r = eval::paired_ttest(a, a, eval::Alternative::two_sided);
    CHECK(r.degenerate);
    CHECK(r.t == 0.0);
  }
  SECTION("a constant positive shift is degenerate") {
    const std::vector<double> a = {1, 2, 3, 4};
    const std::vector<double> b = {0, 1, 2, 3};
    const auto r = eval::paired_ttest(a, b, eval::Alternative::greater);
    CHECK(r.degenerate);
    CHECK(std::isinf(r.t));
  }
  SECTION("shifted noisy samples give a small one-sided p") {
    std::mt19937_64 rng(101);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> a, b;
    for (int i = 0; i < 30; ++i) {
      const double base = normal(rng);
      b.push_back(base);
      a.push_back(base + 1.0 + 0.3 * normal(rng));
    }
    const auto r = eval::paired_ttest(a, b, eval::Alternative::greater);
    CHECK(r.p < 1e-6);
    const auto r2 = eval::paired_ttest(b, a, eval::Alternative::greater);
    CHECK(r2.p > 0.999);
    // two-sided equals twice the smaller tail
    const auto r3 = eval::paired_ttest(a, b, eval::Alternative::two_sided);
    CHECK_THAT(r3.p, Catch::Matchers::WithinRel(2.0 * r.p, 1e-9));
  }
}

TEST_CASE("benchmark runs are reproducible and ordered sensibly") {
  auto scenario = simgen::default_configs().at(simgen::Scenario::stable);
  eval::BenchmarkOptions opts;
  opts.methods = {eval::Method::hmm, eval::Method::proposed};
  opts.n_realizations = 2;
  opts.n_repeats = 1;
  opts.seed = 7;
  opts.jobs = 2;
  const auto a = eval::run_benchmark(scenario, opts);
  const auto b = eval::run_benchmark(scenario, opts);
  REQUIRE(a.reports.at(eval::Method::hmm).n_trials == 2);
  CHECK(a.reports.at(eval::Method::hmm).accuracy ==
        b.reports.at(eval::Method::hmm).accuracy);
  CHECK(a.reports.at(eval::Method::proposed).accuracy ==
        b.reports.at(eval::Method::proposed).accuracy);
  for (double acc : a.reports.at(eval::Method::hmm).accuracy) CHECK(acc > 0.95);
  for (double acc : a.reports.at(eval::Method::proposed).accuracy) CHECK(acc > 0.95);
}

TEST_CASE("dhmm pipeline runs end to end on a small benchmark") {
  auto scenario = simgen::default_configs().at(simgen::Scenario::unstable_pp);
  eval::BenchmarkOptions opts;
  opts.methods = {eval::Method::dhmm};
  opts.n_realizations = 1;
  opts.n_repeats = 1;
  opts.seed = 3;
  const auto report = eval::run_benchmark(scenario, opts);
  const auto& rep = report.reports.at(eval::Method::dhmm);
  REQUIRE(rep.n_failed == 0);
  CHECK(rep.accuracy.size() == 1);
  CHECK(rep.accuracy[0] > 0.5);
}

TEST_CASE("benchmark validates its inputs") {
  const auto scenario = simgen::default_configs().at(simgen::Scenario::stable);
  eval::BenchmarkOptions opts;
  opts.methods = {};
  CHECK_THROWS_AS(eval::run_benchmark(scenario, opts), validation_error);
  opts.methods = {eval::Method::hmm};
  opts.n_realizations = 0;
  CHECK_THROWS_AS(eval::run_benchmark(scenario, opts), validation_error);
}
