// eventseg command-line tool: simulate | segment | evaluate | predict.
// Exit codes: 0 success, 2 validation/configuration error, 1 runtime error.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "eventseg/common.hpp"
#include "eventseg/csv.hpp"
#include "eventseg/eval.hpp"
#include "eventseg/ingest.hpp"
#include "eventseg/outcomes.hpp"
#include "eventseg/pipeline.hpp"
#include "eventseg/simgen.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw eventseg::validation_error("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw eventseg::validation_error("config parse error in " + path + ": " + e.what());
  }
  return j;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw eventseg::error("cannot write " + path.string());
  out << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw eventseg::error("cannot create output directory " + dir.string());
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(const std::string& config_path, const std::string& scenario_name,
                 const std::string& output_dir, std::uint64_t seed, bool seed_set) {
  eventseg::simgen::SimConfig config;
  if (!config_path.empty()) {
    config = eventseg::simgen::config_from_json(read_json_file(config_path));
  } else {
    config = eventseg::simgen::default_configs().at(
        eventseg::simgen::scenario_from_string(scenario_name));
  }
  if (seed_set) config.seed = seed;
  config.validate();

  const fs::path dir(output_dir);
  ensure_dir(dir);
  const auto real = eventseg::simgen::generate(config);
  eventseg::simgen::write_realization_csv(real, (dir / "realization.csv").string());
  eventseg::simgen::write_samples_csv(real, (dir / "samples.csv").string());
  write_text_file(dir / "config.json", eventseg::simgen::to_json(config).dump(2) + "\n");
  std::cout << "wrote " << real.time_hours.size() << " samples over "
            << real.transition_times.back() << " hours to " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------------

int cmd_segment(const std::string& input, const std::string& config_path,
                const std::string& output_dir, std::uint64_t seed, bool seed_set) {
  eventseg::pipeline::PipelineConfig config;
  if (!config_path.empty())
    config = eventseg::pipeline::config_from_json(read_json_file(config_path));
  if (seed_set) config.seed = seed;

  std::vector<fs::path> inputs;
  if (fs::is_directory(input)) {
    for (const auto& entry : fs::directory_iterator(input))
      if (entry.path().extension() == ".csv") inputs.push_back(entry.path());
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.push_back(input);
  }
  if (inputs.empty())
    throw eventseg::validation_error("no input CSV files under " + input);

  const fs::path dir(output_dir);
  ensure_dir(dir);

  json manifest;
  manifest["version"] = eventseg::kVersion;
  manifest["config_hash"] = eventseg::pipeline::config_hash(config);
  manifest["config"] = eventseg::pipeline::to_json(config);

  struct Loaded {
    std::string subject;
    eventseg::MultiChannelSeries series;
    eventseg::EpochFeatureMatrix epochs;   // abnormal epochs masked out
    eventseg::SubjectGate gate;
  };
  std::vector<Loaded> admitted;

  for (const auto& path : inputs) {
    Loaded item;
    item.subject = path.stem().string();
    item.series = eventseg::ingest::load_series(path.string(), config.channels,
                                                config.sample_rates_hz, item.subject);
    auto epochs = eventseg::ingest::epochize(item.series, config.epoch_length,
                                             config.availability_threshold);
    std::vector<char> mask(static_cast<std::size_t>(epochs.epoch_count()), 0);
    if (config.anomaly_enabled) {
      const auto region = eventseg::anomaly::fit_normal_region(
          epochs, config.filtering_features, config.anomaly_k, config.anomaly_quantile);
      mask = eventseg::anomaly::filter_abnormal(epochs, region);
    }
    item.gate = eventseg::ingest::gate_subject(epochs, mask, config.missing_gate,
                                               config.abnormal_gate);
    json gate_entry = {{"subject", item.subject},
                       {"missing_proportion", item.gate.missing_proportion},
                       {"abnormal_proportion", item.gate.abnormal_proportion},
                       {"admitted", item.gate.admitted}};
    manifest["gates"].push_back(gate_entry);
    if (!item.gate.admitted) {
      eventseg::log_warn("subject " + item.subject + " rejected by the admission gate");
      continue;
    }
    // mask abnormal epochs before SWSI selection
    for (Eigen::Index i = 0; i < epochs.epoch_count(); ++i)
      if (mask[static_cast<std::size_t>(i)]) epochs.present[static_cast<std::size_t>(i)] = 0;
    item.epochs = std::move(epochs);
    admitted.push_back(std::move(item));
  }

  if (admitted.empty()) {
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "no subjects admitted; manifest written\n";
    return 0;
  }

  std::vector<std::string> selected = config.features;
  if (selected.empty()) {
    std::vector<eventseg::EpochFeatureMatrix> mats;
    for (const auto& item : admitted) mats.push_back(item.epochs);
    const auto sel = eventseg::ingest::select_features(
        mats, config.sleep_window(), config.wake_window(), config.swsi_threshold,
        config.swsi_subject_fraction, config.correlation_dedup, config.clock_offset_hours);
    selected = sel.selected;
  }
  manifest["selected_features"] = selected;

  for (const auto& item : admitted) {
    const auto result = eventseg::pipeline::segment_subject(item.series, config, selected);
    const fs::path subj_dir = dir / item.subject;
    ensure_dir(subj_dir);
    eventseg::ingest::write_epochs_csv(result.epochs, (subj_dir / "epochs.csv").string());
    eventseg::anomaly::write_abnormality_csv(result.epochs, result.abnormal_mask,
                                             result.verdicts,
                                             (subj_dir / "abnormality.csv").string());
    eventseg::flda::write_labels_csv(result.labels, (subj_dir / "labels.csv").string());
    eventseg::flda::write_diagnostics_csv(result.diagnostics,
                                          (subj_dir / "diagnostics.csv").string());
    eventseg::sessions::write_sessions_csv(result.session_list, item.subject,
                                           (subj_dir / "sessions.csv").string());
    eventseg::sessions::write_feature_table_csv(result.feature_table,
                                                (subj_dir / "session_features.csv").string());
    write_text_file(subj_dir / "model.json", eventseg::hmm::to_json(result.model).dump(2) + "\n");
    std::cout << "segmented " << item.subject << ": " << result.session_list.size()
              << " sessions\n";
  }
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

int cmd_evaluate(const std::string& scenario_name, const std::string& methods_arg,
                 int realizations, int repeats, const std::string& protocol,
                 std::uint64_t seed, int jobs, const std::string& output_dir) {
  eventseg::simgen::SimConfig scenario = eventseg::simgen::default_configs().at(
      eventseg::simgen::scenario_from_string(scenario_name));

  eventseg::eval::BenchmarkOptions opts;
  opts.methods.clear();
  std::stringstream ss(methods_arg);
  std::string token;
  while (std::getline(ss, token, ','))
    if (!token.empty()) opts.methods.push_back(eventseg::eval::method_from_string(token));
  if (opts.methods.empty())
    throw eventseg::validation_error("empty method list (valid: hmm, dhmm, proposed)");
  opts.n_realizations = realizations;
  opts.n_repeats = repeats;
  opts.protocol = protocol == "in-sample" ? eventseg::eval::Protocol::in_sample
                                          : eventseg::eval::Protocol::out_of_sample;
  opts.seed = seed;
  opts.jobs = jobs;

  const auto report = eventseg::eval::run_benchmark(scenario, opts);

  const fs::path dir(output_dir);
  ensure_dir(dir);
  write_text_file(dir / "report.json", eventseg::eval::to_json(report).dump(2) + "\n");
  eventseg::eval::write_trials_csv(report, (dir / "trials.csv").string());

  for (const auto& [method, rep] : report.reports) {
    std::cout << to_string(method) << ": accuracy " << rep.mean_accuracy() << ", f1 "
              << rep.mean_f1() << ", cosine " << rep.mean_cosine() << ", onset_diff "
              << rep.mean_onset_diff() << " h, duration_diff " << rep.mean_duration_diff()
              << " h (" << rep.n_trials - rep.n_failed << "/" << rep.n_trials
              << " trials)\n";
  }
  if (report.n_trials > 1) {
    for (const auto& [pair, ps] : report.pairwise_p) {
      if (ps.count("accuracy"))
        std::cout << "p[" << to_string(pair.first) << " beats " << to_string(pair.second)
                  << ", accuracy] = " << ps.at("accuracy") << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

int parse_outcome(const std::string& raw, bool ordinal) {
  std::string s = raw;
  std::transform(s.begin(), s.end(), s.begin(), ::tolower);
  if (!ordinal) {
    if (s == "1" || s == "infected" || s == "shedder" || s == "yes") return 1;
    if (s == "0" || s == "not" || s == "non-infected" || s == "no") return 0;
    throw eventseg::validation_error("cannot parse binary outcome '" + raw + "'");
  }
  if (s == "1" || s == "early") return 1;
  if (s == "2" || s == "late") return 2;
  if (s == "3" || s == "none" || s == "no-onset") return 3;
  throw eventseg::validation_error("cannot parse ordinal outcome '" + raw + "'");
}

int cmd_predict(const std::string& features_path, const std::string& outcomes_path,
                const std::string& model, bool use_smote, int day, bool day_set,
                std::uint64_t seed, const std::string& output_dir) {
  const bool ordinal = model == "cr";
  if (model != "lr" && model != "cr")
    throw eventseg::validation_error("model must be 'lr' or 'cr'");

  const auto feat_table = eventseg::read_csv(features_path);
  const int subj_col = feat_table.column("subject");
  const int day_col = feat_table.column("day");
  if (subj_col < 0)
    throw eventseg::validation_error("features CSV needs a 'subject' column");

  const auto out_table = eventseg::read_csv(outcomes_path);
  const int out_subj = out_table.column("subject");
  const int out_col = out_table.column("outcome");
  if (out_subj < 0 || out_col < 0)
    throw eventseg::validation_error("outcomes CSV needs 'subject' and 'outcome' columns");
  std::map<std::string, int> outcome_by_subject;
  for (std::size_t r = 0; r < out_table.rows.size(); ++r)
    outcome_by_subject[out_table.rows[r][static_cast<std::size_t>(out_subj)]] =
        parse_outcome(out_table.rows[r][static_cast<std::size_t>(out_col)], ordinal);

  std::vector<std::string> feature_names;
  std::vector<int> feature_cols;
  for (std::size_t c = 0; c < feat_table.header.size(); ++c) {
    if (static_cast<int>(c) == subj_col || static_cast<int>(c) == day_col) continue;
    feature_names.push_back(feat_table.header[c]);
    feature_cols.push_back(static_cast<int>(c));
  }

  // join rows on subject (optionally filtered to one day)
  std::vector<std::string> subjects;
  std::vector<std::vector<double>> rows;
  std::vector<int> y;
  std::set<std::string> unmatched;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < feat_table.rows.size(); ++r) {
    const auto& row = feat_table.rows[r];
    if (day_set) {
      if (day_col < 0)
        throw eventseg::validation_error("--day given but features CSV has no 'day' column");
      if (row[static_cast<std::size_t>(day_col)] != std::to_string(day)) continue;
    }
    const std::string& subject = row[static_cast<std::size_t>(subj_col)];
    auto it = outcome_by_subject.find(subject);
    if (it == outcome_by_subject.end()) {
      unmatched.insert(subject);
      continue;
    }
    if (seen.count(subject))
      throw eventseg::validation_error(
          "subject '" + subject + "' has multiple feature rows; select one day with --day");
    seen.insert(subject);
    std::vector<double> vals;
    for (int c : feature_cols)
      vals.push_back(eventseg::parse_cell(row[static_cast<std::size_t>(c)], r + 2));
    subjects.push_back(subject);
    rows.push_back(std::move(vals));
    y.push_back(it->second);
  }
  if (subjects.size() < 3) {
    std::string msg = "join produced fewer than 3 subjects";
    if (!unmatched.empty()) {
      msg += "; unmatched:";
      for (const auto& s : unmatched) msg += " " + s;
    }
    throw eventseg::validation_error(msg);
  }

  const fs::path dir(output_dir);
  ensure_dir(dir);

  struct Ranked {
    std::string feature;
    double coef = std::numeric_limits<double>::quiet_NaN();
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> aucs;  // binary: {auc}; ordinal: per level
    double rank_key = -1.0;
    int n_used = 0;
  };
  std::vector<Ranked> ranking;

  for (std::size_t f = 0; f < feature_names.size(); ++f) {
    // drop rows with a missing value in this feature
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), 1);
    std::vector<int> yy;
    Eigen::Index n = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (std::isnan(rows[r][f])) continue;
      x(n, 0) = rows[r][f];
      yy.push_back(y[r]);
      ++n;
    }
    if (n < 3) continue;
    const Eigen::MatrixXd xf = x.topRows(n);

    Ranked entry;
    entry.feature = feature_names[f];
    entry.n_used = static_cast<int>(n);
    try {
      if (!ordinal) {
        const auto fit = eventseg::outcomes::fit_logistic(xf, yy);
        entry.coef = fit.coefficients[1];
        if (use_smote) {
          const auto sm = eventseg::outcomes::smote_loocv(
              xf, yy, eventseg::outcomes::ModelKind::logistic, 100, seed);
          entry.aucs = {sm.mean_auc};
        } else {
          const auto cv =
              eventseg::outcomes::loocv_auc(xf, yy, eventseg::outcomes::ModelKind::logistic);
          entry.aucs = {cv.auc_binary.value_or(std::numeric_limits<double>::quiet_NaN())};
          entry.accuracy = cv.accuracy.value_or(std::numeric_limits<double>::quiet_NaN());
        }
        entry.rank_key = entry.aucs[0];
      } else {
        const auto fit = eventseg::outcomes::fit_continuation_ratio(xf, yy);
        entry.coef = fit.coefficients.back();
        if (use_smote) {
          const auto sm = eventseg::outcomes::smote_loocv(
              xf, yy, eventseg::outcomes::ModelKind::continuation_ratio, 100, seed);
          entry.aucs = sm.mean_level_auc;
        } else {
          const auto cv = eventseg::outcomes::loocv_auc(
              xf, yy, eventseg::outcomes::ModelKind::continuation_ratio);
          entry.aucs = cv.auc_per_level;
        }
        double min_auc = std::numeric_limits<double>::infinity();
        for (double a : entry.aucs)
          if (!std::isnan(a)) min_auc = std::min(min_auc, a);
        entry.rank_key = std::isfinite(min_auc) ? min_auc : -1.0;
      }
    } catch (const std::exception& e) {
      eventseg::log_info("feature " + entry.feature + " skipped: " + e.what());
      continue;
    }
    if (std::isnan(entry.rank_key)) continue;
    ranking.push_back(std::move(entry));
  }

  std::stable_sort(ranking.begin(), ranking.end(),
                   [](const Ranked& a, const Ranked& b) { return a.rank_key > b.rank_key; });

  const fs::path out_path = dir / (ordinal ? "ranking_cr.csv" : "ranking_lr.csv");
  eventseg::CsvWriter w(out_path.string());
  if (!ordinal) {
    w.header({"feature", "model", "coef", "accuracy", "auc"});
    for (const auto& e : ranking)
      w.line({e.feature, "LR", eventseg::format_double(e.coef),
              eventseg::format_double(e.accuracy), eventseg::format_double(e.aucs[0])});
  } else {
    w.header({"feature", "model", "coef", "auc_early", "auc_late", "auc_none"});
    for (const auto& e : ranking) {
      std::vector<std::string> cells = {e.feature, "CR", eventseg::format_double(e.coef)};
      for (int l = 0; l < 3; ++l)
        cells.push_back(eventseg::format_double(
            l < static_cast<int>(e.aucs.size()) ? e.aucs[static_cast<std::size_t>(l)]
                                                : std::numeric_limits<double>::quiet_NaN()));
      w.line(cells);
    }
  }
  std::cout << "ranked " << ranking.size() << " features over " << subjects.size()
            << " subjects -> " << out_path.string() << "\n";
  if (!ranking.empty())
    std::cout << "top feature: " << ranking.front().feature << " (rank key "
              << ranking.front().rank_key << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive multi-channel event segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, output_dir = "out", scenario = "stable";
  std::uint64_t seed = 1;
  bool seed_set = false;
  int jobs = 1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON configuration file");
    cmd->add_option("--output", output_dir, "output directory");
    cmd->add_option("--seed", seed, "random seed")->each([&](const std::string&) {
      seed_set = true;
    });
  };

  auto* sim = app.add_subcommand("simulate", "generate a ground-truth realization");
  sim->add_option("--scenario", scenario, "stable | unstable++ | unstable+-");
  add_common(sim);

  auto* seg = app.add_subcommand("segment", "run the segmentation pipeline");
  std::string input;
  seg->add_option("input", input, "subject CSV file or directory of them")->required();
  add_common(seg);
  seg->add_option("--jobs", jobs, "worker threads");

  auto* eva = app.add_subcommand("evaluate", "run the simulation benchmark");
  std::string methods = "hmm,dhmm,proposed", protocol = "out-of-sample";
  int realizations = 100, repeats = 1;
  eva->add_option("--scenario", scenario, "stable | unstable++ | unstable+-");
  eva->add_option("--methods", methods, "comma list of hmm,dhmm,proposed");
  eva->add_option("--trials,--realizations", realizations, "number of training realizations");
  eva->add_option("--repeats", repeats, "held-out repeats per realization");
  eva->add_option("--protocol", protocol, "out-of-sample | in-sample");
  eva->add_option("--jobs", jobs, "worker threads");
  add_common(eva);

  auto* pre = app.add_subcommand("predict", "rank session features against outcomes");
  std::string features_path, outcomes_path, model = "lr";
  bool use_smote = false;
  int day = 0;
  bool day_set = false;
  pre->add_option("--features", features_path, "session feature CSV")->required();
  pre->add_option("--outcomes", outcomes_path, "subject outcome CSV")->required();
  pre->add_option("--model", model, "lr | cr");
  pre->add_flag("--smote", use_smote, "average AUC over 100 SMOTE runs");
  pre->add_option("--day", day, "restrict to one day index")->each([&](const std::string&) {
    day_set = true;
  });
  add_common(pre);

  try {
    app.parse(argc, argv);
    if (sim->parsed()) return cmd_simulate(config_path, scenario, output_dir, seed, seed_set);
    if (seg->parsed()) return cmd_segment(input, config_path, output_dir, seed, seed_set);
    if (eva->parsed())
      return cmd_evaluate(scenario, methods, realizations, repeats, protocol, seed, jobs,
                          output_dir);
    if (pre->parsed())
      return cmd_predict(features_path, outcomes_path, model, use_smote, day, day_set, seed,
                         output_dir);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const eventseg::validation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
