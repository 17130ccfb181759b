#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "eventseg/csv.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(EVENTSEG_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

const char* kSimSegmentConfig = R"({
  "channels": ["X1", "X2"],
  "features": ["X1_MEAN", "X2_MEAN"],
  "sleep_rule": {"feature": "X1_MEAN"},
  "anomaly": {"enabled": false},
  "seed": 5
})";

}  // namespace

TEST_CASE("simulate writes a realization and is seed-reproducible") {
  const auto dir_a = fresh_dir("evseg_sim_a");
  const auto dir_b = fresh_dir("evseg_sim_b");
  REQUIRE(run_cli("simulate --scenario stable --seed 42 --output " + dir_a.string())
              .exit_code == 0);
  REQUIRE(run_cli("simulate --scenario stable --seed 42 --output " + dir_b.string())
              .exit_code == 0);
  const auto table = eventseg::read_csv((dir_a / "realization.csv").string());
  CHECK(table.header == std::vector<std::string>{"time_hours", "y_true", "x1", "x2"});
  // 11 sessions of about a day at 10-minute steps
  CHECK(table.rows.size() > 1200);
  CHECK(slurp(dir_a / "realization.csv") == slurp(dir_b / "realization.csv"));
  CHECK(fs::exists(dir_a / "samples.csv"));
  CHECK(fs::exists(dir_a / "config.json"));
}

TEST_CASE("simulate rejects an unknown scenario") {
  const auto dir = fresh_dir("evseg_sim_bad");
  CHECK(run_cli("simulate --scenario wobbly --output " + dir.string()).exit_code == 2);
}

TEST_CASE("segment labels a generated stable stream accurately") {
  const auto sim_dir = fresh_dir("evseg_seg_sim");
  REQUIRE(run_cli("simulate --scenario stable --seed 11 --output " + sim_dir.string())
              .exit_code == 0);
  const auto out_dir = fresh_dir("evseg_seg_out");
  write_file(sim_dir / "config.json5", kSimSegmentConfig);
  REQUIRE(run_cli("segment " + (sim_dir / "samples.csv").string() + " --config " +
                  (sim_dir / "config.json5").string() + " --output " + out_dir.string())
              .exit_code == 0);

  const auto manifest = nlohmann::json::parse(slurp(out_dir / "manifest.json"));
  REQUIRE(manifest.at("gates").size() == 1);
  CHECK(manifest.at("gates")[0].at("admitted").get<bool>());

  // compare labels against the generated truth
  const auto truth = eventseg::read_csv((sim_dir / "realization.csv").string());
  const auto labels = eventseg::read_csv((out_dir / "samples" / "labels.csv").string());
  std::map<long, int> truth_by_time;
  for (const auto& row : truth.rows)
    truth_by_time[std::lround(std::stod(row[0]) * 3600.0)] = std::stoi(row[1]);
  std::size_t correct = 0, total = 0;
  for (const auto& row : labels.rows) {
    const long t = std::lround(std::stod(row[0]));
    auto it = truth_by_time.find(t);
    if (it == truth_by_time.end()) continue;
    ++total;
    if (std::stoi(row[1]) == it->second) ++correct;
  }
  REQUIRE(total > 1000);
  CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.99);
  CHECK(fs::exists(out_dir / "samples" / "sessions.csv"));
  CHECK(fs::exists(out_dir / "samples" / "session_features.csv"));
  CHECK(fs::exists(out_dir / "samples" / "diagnostics.csv"));
  CHECK(fs::exists(out_dir / "samples" / "model.json"));
}

TEST_CASE("segment records a rejection for an excessively missing subject") {
  const auto sim_dir = fresh_dir("evseg_gate_sim");
  REQUIRE(run_cli("simulate --scenario stable --seed 13 --output " + sim_dir.string())
              .exit_code == 0);
  // drop 45% of the sample rows
  const auto table = eventseg::read_csv((sim_dir / "samples.csv").string());
  std::ostringstream trimmed;
  trimmed << "timestamp,X1,X2\n";
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (i % 20 < 9) continue;
    trimmed << table.rows[i][0] << ',' << table.rows[i][1] << ',' << table.rows[i][2]
            << '\n';
  }
  write_file(sim_dir / "missing.csv", trimmed.str());
  write_file(sim_dir / "config.json5", kSimSegmentConfig);
  const auto out_dir = fresh_dir("evseg_gate_out");
  REQUIRE(run_cli("segment " + (sim_dir / "missing.csv").string() + " --config " +
                  (sim_dir / "config.json5").string() + " --output " + out_dir.string())
              .exit_code == 0);
  const auto manifest = nlohmann::json::parse(slurp(out_dir / "manifest.json"));
  REQUIRE(manifest.at("gates").size() == 1);
  CHECK_FALSE(manifest.at("gates")[0].at("admitted").get<bool>());
  CHECK(manifest.at("gates")[0].at("missing_proportion").get<double>() > 0.4);
  CHECK_FALSE(fs::exists(out_dir / "missing" / "labels.csv"));
}

TEST_CASE("segment fails on a record shorter than the baseline") {
  const auto dir = fresh_dir("evseg_short");
  std::ostringstream csv;
  csv << "timestamp,X1,X2\n";
  for (int i = 0; i < 60; ++i)  // 10 hours < 36 h baseline
    csv << i * 600.0 << ",70,0.3\n";
  write_file(dir / "short.csv", csv.str());
  write_file(dir / "config.json5", kSimSegmentConfig);
  CHECK(run_cli("segment " + (dir / "short.csv").string() + " --config " +
                (dir / "config.json5").string() + " --output " + (dir / "out").string())
            .exit_code == 2);
}

TEST_CASE("evaluate writes a report for a single trial") {
  const auto dir = fresh_dir("evseg_eval");
  REQUIRE(run_cli("evaluate --scenario stable --methods hmm --trials 1 --repeats 1 "
                  "--seed 3 --output " +
                  dir.string())
              .exit_code == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report.at("n_trials").get<int>() == 1);
  CHECK(report.at("methods").contains("hmm"));
  CHECK_FALSE(report.contains("pairwise_p"));
  CHECK(fs::exists(dir / "trials.csv"));
}

TEST_CASE("evaluate rejects an empty method list") {
  const auto dir = fresh_dir("evseg_eval_bad");
  CHECK(run_cli("evaluate --scenario stable --methods ,, --trials 1 --output " +
                dir.string())
            .exit_code == 2);
}

TEST_CASE("predict ranks a near-oracle feature first") {
  const auto dir = fresh_dir("evseg_predict");
  std::ostringstream feats, outs;
  feats << "subject,day,oracle_feature,noise_feature\n";
  outs << "subject,outcome\n";
  std::mt19937_64 rng(7);
  std::normal_distribution<double> tiny(0.0, 0.05), noise(0.0, 1.0);
  for (int i = 0; i < 14; ++i) {
    const int label = i % 2;
    feats << "s" << i << ",2," << label + tiny(rng) << ',' << noise(rng) << "\n";
    outs << "s" << i << ',' << label << "\n";
  }
  write_file(dir / "features.csv", feats.str());
  write_file(dir / "outcomes.csv", outs.str());
  REQUIRE(run_cli("predict --features " + (dir / "features.csv").string() +
                  " --outcomes " + (dir / "outcomes.csv").string() +
                  " --model lr --output " + dir.string())
              .exit_code == 0);
  const auto ranking = eventseg::read_csv((dir / "ranking_lr.csv").string());
  REQUIRE_FALSE(ranking.rows.empty());
  CHECK(ranking.rows[0][0] == "oracle_feature");
  CHECK(ranking.header ==
        std::vector<std::string>{"feature", "model", "coef", "accuracy", "auc"});
}

TEST_CASE("predict with SMOTE reports averaged ordinal AUCs") {
  const auto dir = fresh_dir("evseg_predict_cr");
  std::ostringstream feats, outs;
  feats << "subject,day,f\n";
  outs << "subject,outcome\n";
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 0.3);
  // imbalanced levels: 3 early, 5 late, 8 none
  for (int i = 0; i < 16; ++i) {
    const int level = i < 3 ? 1 : (i < 8 ? 2 : 3);
    feats << "s" << i << ",2," << level + noise(rng) << "\n";
    outs << "s" << i << ',' << (level == 1 ? "early" : level == 2 ? "late" : "none")
         << "\n";
  }
  write_file(dir / "features.csv", feats.str());
  write_file(dir / "outcomes.csv", outs.str());
  REQUIRE(run_cli("predict --features " + (dir / "features.csv").string() +
                  " --outcomes " + (dir / "outcomes.csv").string() +
                  " --model cr --smote --output " + dir.string())
              .exit_code == 0);
  const auto ranking = eventseg::read_csv((dir / "ranking_cr.csv").string());
  CHECK(ranking.header == std::vector<std::string>{"feature", "model", "coef",
                                                   "auc_early", "auc_late", "auc_none"});
  REQUIRE(ranking.rows.size() == 1);
  for (int c = 3; c <= 5; ++c) {
    const double auc = std::stod(ranking.rows[0][static_cast<std::size_t>(c)]);
    CHECK(auc >= 0.0);
    CHECK(auc <= 1.0);
  }
}

TEST_CASE("predict needs at least three joined subjects") {
  const auto dir = fresh_dir("evseg_predict_few");
  write_file(dir / "features.csv", "subject,day,f\ns0,2,1\ns1,2,2\nzz,2,3\n");
  write_file(dir / "outcomes.csv", "subject,outcome\ns0,1\ns1,0\n");
  CHECK(run_cli("predict --features " + (dir / "features.csv").string() + " --outcomes " +
                (dir / "outcomes.csv").string() + " --model lr --output " + dir.string())
            .exit_code == 2);
}
