#pragma once

// The `mpcs` command line: evaluate, compare and train.
//
// Exit codes: 0 success, 1 I/O failure, 2 validation or usage error,
// 3 numeric failure during training.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpcs/analysis.hpp"
#include "mpcs/baselines.hpp"
#include "mpcs/core.hpp"
#include "mpcs/data_io.hpp"
#include "mpcs/trainer.hpp"

namespace mpcs::cli {

enum ExitCode : int { kOk = 0, kIo = 1, kValidation = 2, kNumeric = 3 };

namespace detail {

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Writes to the file when a path is given, else to out.
inline void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << text;
}

inline nlohmann::json report_json(const MetricReport& r) {
  nlohmann::json j;
  for (const auto& name : metric_names()) {
    if (name == "dangerous_count") {
      j[name] = r.dangerous_count;
    } else {
      j[name] = metric_value(r, name);
    }
  }
  j["samples"] = r.total;
  j["errors"] = r.errors;
  return j;
}

inline std::string report_csv(const MetricReport& r) {
  std::string s = "metric,value\n";
  for (const auto& name : metric_names()) {
    s += name + ",";
    s += name == "dangerous_count" ? std::to_string(r.dangerous_count) : fmt(metric_value(r, name));
    s += "\n";
  }
  s += "samples," + std::to_string(r.total) + "\n";
  s += "errors," + std::to_string(r.errors) + "\n";
  return s;
}

inline void check_format(const std::string& format) {
  if (format != "json" && format != "csv") throw ValidationError("unknown format: " + format);
}

inline PredictionDump load_checked_dump(const std::string& path, const Settings& settings) {
  auto dump = read_dump(path, settings.input_mode);
  if (dump.rows.empty()) throw ValidationError(path + ": dump has no rows");
  try {
    validate_config(settings.mpcs, LabelSpace(dump.classes));
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": config does not fit the dump: " + e.what());
  }
  return dump;
}

inline TrainConfig parse_train_config(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    const auto opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") {
      c.optimizer = Optimizer::Adam;
    } else if (opt == "sgd") {
      c.optimizer = Optimizer::Sgd;
    } else {
      throw ValidationError("unknown optimizer: " + opt);
    }
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.seed = j.value("seed", c.seed);
    c.floor_ratio = j.value("floor_ratio", c.floor_ratio);
    c.cap_ratio = j.value("cap_ratio", c.cap_ratio);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed train config: ") + e.what());
  }
  return c;
}

inline SyntheticSpec parse_synthetic_spec(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.seed = j.value("seed", s.seed);
    s.classes = j.value("classes", s.classes);
    s.per_class = j.value("per_class", s.per_class);
    s.dims = j.value("dims", s.dims);
    s.spread = j.value("spread", s.spread);
    s.noise = j.value("noise", s.noise);
    s.pair_separation = j.value("pair_separation", s.pair_separation);
    if (j.contains("confusable_pairs")) {
      for (const auto& p : j.at("confusable_pairs")) {
        s.confusable_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed synthetic spec: ") + e.what());
  }
  return s;
}

inline std::string similarity_json(const SimilarityTable& table) {
  nlohmann::json j;
  j["target"] = "mpcs";
  nlohmann::json rho = nlohmann::json::object();
  for (const auto& [name, value] : table) {
    rho[name] = value ? nlohmann::json(*value) : nlohmann::json(nullptr);
  }
  j["spearman"] = rho;
  return j.dump(2) + "\n";
}

}  // namespace detail

struct EvaluateOptions {
  std::string dump;
  std::string config;
  std::string format = "json";
  std::string output;
  unsigned threads = default_thread_count();
};

inline int cmd_evaluate(const EvaluateOptions& o, std::ostream& out) {
  detail::check_format(o.format);
  const auto settings = load_settings(detail::read_text(o.config));
  const auto dump = detail::load_checked_dump(o.dump, settings);
  const auto report = evaluate(dump.rows, settings, o.threads);
  detail::emit(o.format == "json" ? detail::report_json(report).dump(2) + "\n"
                                  : detail::report_csv(report),
               o.output, out);
  return kOk;
}

struct CompareOptions {
  std::string dump_dir;
  std::string config;
  std::vector<std::string> select_by{"mpcs", "accuracy", "f1", "mcc", "ms", "ce"};
  std::string format = "json";
  std::string output;
  unsigned threads = default_thread_count();
};

inline int cmd_compare(const CompareOptions& o, std::ostream& out) {
  detail::check_format(o.format);
  for (const auto& m : o.select_by) {
    if (!is_metric(m)) throw ValidationError("unknown metric: " + m);
  }
  const auto settings = load_settings(detail::read_text(o.config));

  namespace fs = std::filesystem;
  if (!fs::is_directory(o.dump_dir)) throw IoError("not a directory: " + o.dump_dir);
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(o.dump_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());

  std::vector<CheckpointRecord> records;
  for (const auto& p : paths) {
    auto dump = detail::load_checked_dump(p.string(), settings);
    CheckpointRecord r;
    r.epoch = dump.epoch;
    r.report = evaluate(dump.rows, settings, o.threads);
    r.predictions = std::move(dump.rows);
    r.dump_path = p.filename().string();
    records.push_back(std::move(r));
  }
  if (records.size() < 2) throw ValidationError("compare needs at least two dumps");
  std::stable_sort(records.begin(), records.end(),
                   [](const auto& a, const auto& b) { return a.epoch < b.epoch; });

  const auto& chosen = select_checkpoint(records, "mpcs");
  const auto& release = settings.mpcs.release_list;

  nlohmann::json selection = nlohmann::json::object();
  nlohmann::json tradeoffs = nlohmann::json::object();
  std::string csv =
      "metric,selected_epoch,dump,accuracy_delta,error_delta,dangerous_delta,"
      "destructive_rate_selected,destructive_rate_mpcs\n";
  for (const auto& metric : o.select_by) {
    const auto& pick = select_checkpoint(records, metric);
    selection[metric] = {{"epoch", pick.epoch}, {"dump", pick.dump_path}};
    const auto t = tradeoff_report(pick, chosen, release);
    if (metric != "mpcs") {
      tradeoffs[metric] = {{"selected_epoch", pick.epoch},
                           {"mpcs_epoch", chosen.epoch},
                           {"accuracy_delta", t.accuracy_delta},
                           {"error_delta", t.error_delta},
                           {"dangerous_delta", t.dangerous_delta},
                           {"destructive_rate_selected", t.a.destructive_rate()},
                           {"destructive_rate_mpcs", t.b.destructive_rate()}};
    }
    csv += metric + "," + std::to_string(pick.epoch) + "," + pick.dump_path + "," +
           detail::fmt(t.accuracy_delta) + "," + std::to_string(t.error_delta) + "," +
           std::to_string(t.dangerous_delta) + "," + detail::fmt(t.a.destructive_rate()) + "," +
           detail::fmt(t.b.destructive_rate()) + "\n";
  }
  nlohmann::json j;
  j["selection"] = selection;
  j["tradeoffs"] = tradeoffs;
  detail::emit(o.format == "json" ? j.dump(2) + "\n" : csv, o.output, out);
  return kOk;
}

struct TrainOptions {
  std::string dataset;
  int label_column = -1;
  bool csv_header = false;
  bool normalize = false;
  std::string idx_images;
  std::string idx_labels;
  std::string synthetic;
  std::string train_config;
  std::string config;
  std::string modulate = "off";
  std::string output_dir;
  std::vector<int> hidden{16};
  std::optional<int> epochs;
  unsigned threads = default_thread_count();
};

inline int cmd_train(const TrainOptions& o, std::ostream& out) {
  if (o.modulate != "on" && o.modulate != "off") {
    throw ValidationError("--modulate must be on or off");
  }
  const int sources = !o.dataset.empty() + !o.idx_images.empty() + !o.synthetic.empty();
  if (sources != 1) {
    throw ValidationError("give exactly one of --dataset, --idx-images or --synthetic");
  }
  if (!o.idx_images.empty() && o.idx_labels.empty()) {
    throw ValidationError("--idx-images needs --idx-labels");
  }

  auto tc = detail::parse_train_config(detail::read_json(o.train_config));
  if (o.epochs) tc.epochs = *o.epochs;
  tc.modulation = o.modulate == "on" ? LrModulation::Mpcs : LrModulation::Off;
  tc.threads = o.threads;
  tc.keep_predictions = false;
  validate_train_config(tc);
  const auto settings = load_settings(detail::read_text(o.config));

  TabularDataset data;
  if (!o.dataset.empty()) {
    CsvSchema schema;
    schema.label_column = o.label_column;
    schema.has_header = o.csv_header;
    schema.normalize = o.normalize;
    data = load_csv_dataset(o.dataset, schema);
  } else if (!o.idx_images.empty()) {
    data = load_idx(o.idx_images, o.idx_labels);
  } else {
    data = generate_synthetic(detail::parse_synthetic_spec(detail::read_json(o.synthetic))).data;
  }

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(o.output_dir, ec);
  if (ec) throw IoError("cannot create " + o.output_dir + ": " + ec.message());
  const fs::path dir(o.output_dir);
  // Dumps get their own directory so it can be passed straight to compare.
  const fs::path dump_dir = dir / "dumps";
  fs::create_directories(dump_dir, ec);
  if (ec) throw IoError("cannot create " + dump_dir.string() + ": " + ec.message());

  std::ofstream log(dir / "train_log.csv", std::ios::binary);
  if (!log) throw IoError("cannot write training log");
  log << "epoch,lr,ce,mpcs,accuracy,dangerous_count\n";

  ModelConfig mc;
  mc.hidden = o.hidden;
  auto on_checkpoint = [&](const CheckpointRecord& rec, const TrainLogRow& row) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04d.csv", rec.epoch);
    write_dump((dump_dir / name).string(), {data.classes, "train", rec.epoch, rec.predictions});
    log << row.epoch << ',' << detail::fmt(row.lr) << ',' << detail::fmt(row.ce) << ','
        << detail::fmt(row.mpcs) << ',' << detail::fmt(row.accuracy) << ','
        << row.dangerous_count << '\n';
    log.flush();
  };
  const auto result = train(data, mc, tc, settings, on_checkpoint);

  std::vector<MetricTrajectory> trajectories;
  for (const auto& name : metric_names()) trajectories.push_back(trajectory(result.records, name));
  SimilarityTable table;
  if (result.records.size() >= 2) table = similarity_table(trajectories, "mpcs");

  detail::emit(detail::similarity_json(table), (dir / "similarity.json").string(), out);
  std::string csv = "metric,spearman\n";
  for (const auto& [name, value] : table) {
    csv += name + "," + (value ? detail::fmt(*value) : std::string("undefined")) + "\n";
  }
  detail::emit(csv, (dir / "similarity.csv").string(), out);
  out << detail::similarity_json(table);
  return kOk;
}

// Parses argv, dispatches, and maps exceptions to exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Meta Pattern Concern Score toolkit"};
  app.require_subcommand(1);

  EvaluateOptions ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a prediction dump");
  evaluate_cmd->add_option("dump", ev.dump, "Prediction dump CSV")->required();
  evaluate_cmd->add_option("--config", ev.config, "Config document")->required();
  evaluate_cmd->add_option("--format", ev.format, "json or csv");
  evaluate_cmd->add_option("--output", ev.output, "Write the report here instead of stdout");
  evaluate_cmd->add_option("--threads", ev.threads, "Worker threads for scoring");

  CompareOptions cmp;
  auto* compare_cmd = app.add_subcommand("compare", "Select checkpoints per metric");
  compare_cmd->add_option("dump_dir", cmp.dump_dir, "Directory of per-epoch dumps")->required();
  compare_cmd->add_option("--config", cmp.config, "Config document")->required();
  compare_cmd->add_option("--select-by", cmp.select_by, "Metrics to select by")->delimiter(',');
  compare_cmd->add_option("--format", cmp.format, "json or csv");
  compare_cmd->add_option("--output", cmp.output, "Write the report here instead of stdout");
  compare_cmd->add_option("--threads", cmp.threads, "Worker threads for scoring");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train the MLP and record checkpoints");
  train_cmd->add_option("--dataset", tr.dataset, "CSV dataset");
  train_cmd->add_option("--label-column", tr.label_column, "Label column (negative from end)");
  train_cmd->add_flag("--header", tr.csv_header, "CSV has a header row");
  train_cmd->add_flag("--normalize", tr.normalize, "Z-score the features");
  train_cmd->add_option("--idx-images", tr.idx_images, "IDX image file");
  train_cmd->add_option("--idx-labels", tr.idx_labels, "IDX label file");
  train_cmd->add_option("--synthetic", tr.synthetic, "Synthetic dataset spec (JSON)");
  train_cmd->add_option("--train-config", tr.train_config, "Training config (JSON)")->required();
  train_cmd->add_option("--config", tr.config, "MPCS config document")->required();
  train_cmd->add_option("--modulate", tr.modulate, "on or off");
  train_cmd->add_option("--output-dir", tr.output_dir, "Output directory")->required();
  train_cmd->add_option("--hidden", tr.hidden, "Hidden layer sizes")->delimiter(',');
  train_cmd->add_option("--epochs", tr.epochs, "Override the epoch count");
  train_cmd->add_option("--threads", tr.threads, "Worker threads for scoring");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kValidation;
  }

  try {
    if (*evaluate_cmd) return cmd_evaluate(ev, out);
    if (*compare_cmd) return cmd_compare(cmp, out);
    return cmd_train(tr, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  }
}

}  // namespace mpcs::cli
