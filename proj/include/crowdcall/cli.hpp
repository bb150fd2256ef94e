#ifndef CROWDCALL_CLI_HPP
#define CROWDCALL_CLI_HPP

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "crowdcall/crowdcall.hpp"

namespace crowdcall::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitInternal = 3 };

inline constexpr std::uint64_t kDefaultSeed = 2021;

namespace detail {

namespace fs = std::filesystem;

inline std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

/// Flags spelled by a key = value file. Keys are long flag names without
/// the dashes; underscores are accepted in place of hyphens.
inline std::vector<std::string> config_flags(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw UsageError("cannot read config file '" + path + "'");
  }
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::ParseError& e) {
    throw UsageError(path + ": " + e.what());
  }
  std::vector<std::string> flags;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") {
      continue;
    }
    if (!item.parents.empty()) {
      throw UsageError(path + ": sections are not supported (key '" + item.fullname() + "')");
    }
    const std::string name = normalize_key(item.name);
    if (name == "config") {
      throw UsageError(path + ": config files cannot include other config files");
    }
    if (item.inputs.size() == 1) {
      flags.push_back("--" + name + "=" + item.inputs.front());
    } else {
      flags.push_back("--" + name);
      flags.insert(flags.end(), item.inputs.begin(), item.inputs.end());
    }
  }
  return flags;
}

/// Replaces each `--config FILE` with the flags it holds, placed ahead of
/// the command-line flags so that explicit flags take precedence.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) {
    return args;
  }
  std::vector<std::string> from_files;
  std::vector<std::string> rest;
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) {
        throw UsageError("--config needs a file name");
      }
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
      continue;
    }
    auto flags = config_flags(path);
    from_files.insert(from_files.end(), flags.begin(), flags.end());
  }
  std::vector<std::string> out{args.front()};
  out.insert(out.end(), from_files.begin(), from_files.end());
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw DataError("cannot create directory '" + dir + "': " + ec.message());
  }
}

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

inline nlohmann::ordered_json to_json(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["validation_loss"] = e.validation_loss;
  j["validation_accuracy"] = e.validation_accuracy;
  j["improved"] = e.improved;
  return j;
}

template <class Range>
std::string jsonl(const Range& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline std::string fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  return buf;
}

// ---------------------------------------------------------------------------
// Flag groups shared by several subcommands

struct WindowFlags {
  std::string mode = "active";
  int active_span = 10;
  std::string anchor = "including-call-day";
  CLI::Option* mode_opt = nullptr;
  CLI::Option* span_opt = nullptr;
  CLI::Option* anchor_opt = nullptr;

  void add(CLI::App& app) {
    mode_opt = app.add_option("--mode", mode, "Window mode")
                   ->check(CLI::IsMember({"daily", "active"}))
                   ->capture_default_str();
    span_opt = app.add_option("--active-span", active_span, "Days in the active window")
                   ->check(CLI::PositiveNumber)
                   ->capture_default_str();
    anchor_opt = app.add_option("--active-span-anchor", anchor, "Where the active span ends")
                     ->check(CLI::IsMember({"including-call-day", "previous-days"}))
                     ->capture_default_str();
  }

  bool given() const { return mode_opt->count() + span_opt->count() + anchor_opt->count() > 0; }

  WindowMode resolve() const {
    if (mode == "daily") {
      if (span_opt->count() > 0) {
        throw UsageError("--active-span conflicts with --mode daily");
      }
      if (anchor_opt->count() > 0) {
        throw UsageError("--active-span-anchor conflicts with --mode daily");
      }
      return WindowMode::daily();
    }
    return WindowMode::active(active_span, anchor == "previous-days" ? SpanAnchor::previous_days
                                                                     : SpanAnchor::including_call_day);
  }
};

struct EncoderFlags {
  std::string kind = "hashing";
  std::size_t dim = 4096;
  std::uint64_t hash_seed = EncoderConfig{}.hash_seed;
  bool no_normalize = false;
  std::string embeddings;

  void add(CLI::App& app) {
    app.add_option("--encoder", kind, "Text encoder")
        ->check(CLI::IsMember({"hashing", "external"}))
        ->capture_default_str();
    app.add_option("--dim", dim, "Hashing encoder dimension")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--hash-seed", hash_seed, "Hashing encoder seed")->capture_default_str();
    app.add_flag("--no-normalize", no_normalize, "Skip L2 normalization of hashed vectors");
    app.add_option("--embeddings", embeddings, "FCEMB1 or JSONL embedding file for --encoder external");
  }

  TextEncoder make() const {
    EncoderConfig config;
    config.dim = dim;
    config.hash_seed = hash_seed;
    config.normalize = !no_normalize;
    if (kind == "external") {
      if (embeddings.empty()) {
        throw UsageError("--encoder external needs --embeddings");
      }
      return TextEncoder(config, std::make_shared<const EmbeddingTable>(load_embeddings(embeddings)));
    }
    if (!embeddings.empty()) {
      throw UsageError("--embeddings needs --encoder external");
    }
    return TextEncoder(config);
  }
};

struct TrainFlags {
  TrainConfig config;
  std::string ablation = "pqj";

  void add(CLI::App& app) {
    app.add_option("--ablation", ablation, "Representations fed to the model")
        ->check(CLI::IsMember({"p", "pq", "pj", "pqj"}))
        ->capture_default_str();
    app.add_option("--learning-rate", config.learning_rate, "Adam learning rate")->capture_default_str();
    app.add_option("--batch-size", config.batch_size, "Instances per batch")->capture_default_str();
    app.add_option("--patience", config.patience, "Epochs without validation improvement before stopping")
        ->capture_default_str();
    app.add_option("--dropout", config.dropout, "Dropout rate on projections")->capture_default_str();
    app.add_option("--max-epochs", config.max_epochs, "Upper bound on epochs")->capture_default_str();
    app.add_option("--proj-dim", config.proj_dim, "Projection width")->capture_default_str();
    app.add_option("--hidden-dim", config.hidden_dim, "Recurrent state width")->capture_default_str();
    app.add_flag("--newest-first", config.newest_first, "Feed each window newest forecast first");
  }
};

/// Either a vote baseline or a trained model.
struct AggregatorFlags {
  std::string baseline;
  std::string model;
  std::string weighted_rule = "paper-literal";

  void add(CLI::App& app) {
    auto* b = app.add_option("--baseline", baseline, "Vote baseline")->check(CLI::IsMember({"majority", "weighted"}));
    auto* m = app.add_option("--model", model, "Trained model file");
    b->excludes(m);
    app.add_option("--weighted-rule", weighted_rule, "Weighted baseline semantics")
        ->check(CLI::IsMember({"paper-literal", "mean-threshold"}))
        ->capture_default_str();
  }

  WeightedRule rule() const {
    return weighted_rule == "mean-threshold" ? WeightedRule::mean_threshold : WeightedRule::paper_literal;
  }

  std::string system() const { return model.empty() ? baseline : "model"; }

  void check() const {
    if (baseline.empty() && model.empty()) {
      throw UsageError("one of --baseline or --model is required");
    }
  }
};

/// A loaded model together with the encodings it needs.
struct LoadedModel {
  TrainedModel model;
  std::unique_ptr<EncodedDataset> encoded;
};

inline LoadedModel load_for_calling(const std::string& path, const std::string& embeddings, const Dataset& dataset) {
  LoadedModel out;
  out.model = load_model(path);
  std::optional<TextEncoder> encoder;
  if (out.model.encoder.kind == EncoderKind::external) {
    if (embeddings.empty()) {
      throw UsageError("model '" + path + "' uses an external encoder; pass --embeddings");
    }
    encoder.emplace(out.model.encoder, std::make_shared<const EmbeddingTable>(load_embeddings(embeddings)));
  } else {
    encoder.emplace(out.model.encoder);
  }
  out.encoded = std::make_unique<EncodedDataset>(dataset, *encoder);
  return out;
}

inline nlohmann::ordered_json to_json(const WindowMode& mode) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(mode.kind);
  if (mode.kind == WindowKind::active) {
    j["active_span"] = mode.active_span;
    j["anchor"] = to_string(mode.anchor);
  }
  return j;
}

inline std::vector<std::string> resolved_ids(const Dataset& dataset, std::size_t& unresolved) {
  std::vector<std::string> ids;
  unresolved = 0;
  for (const auto& q : dataset.questions) {
    if (q.answer) {
      ids.push_back(q.id);
    } else {
      ++unresolved;
    }
  }
  return ids;
}

inline std::vector<std::string> subset_ids(const Split& split, const std::string& subset) {
  if (subset == "train") return split.train;
  if (subset == "validation") return split.validation;
  return split.test;
}

inline Split load_split(const std::string& path, const Dataset& dataset) {
  Split split;
  try {
    split = split_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  check_split(dataset, split);
  return split;
}

/// Records file of an evaluate run, given the file itself or its directory.
inline std::string records_path(const std::string& path) {
  return fs::is_directory(path) ? join_path(path, "records.jsonl") : path;
}

// ---------------------------------------------------------------------------
// Subcommands

struct Context {
  std::ostream& out;
  std::ostream& err;
};

/// Writes the resolved flags of `app` as a config file that re-runs it.
inline void write_echo(const CLI::App& app, const std::string& dir, bool daily_mode = false) {
  std::istringstream in(app.config_to_str(true, false));
  std::string text;
  std::string line;
  while (std::getline(in, line)) {
    const bool unset = line.ends_with("=\"\"") || line.ends_with("=''");
    const bool span = line.rfind("active-span=", 0) == 0 || line.rfind("active-span-anchor=", 0) == 0;
    if (unset || line.rfind("config=", 0) == 0 || (daily_mode && span)) {
      continue;
    }
    text += line;
    text += '\n';
  }
  write_file(join_path(dir, app.get_name() + ".conf"), text);
}

inline std::string describe(const Violation& v) {
  std::string s;
  if (v.line) {
    s += "line " + std::to_string(v.line) + ": ";
  }
  s += v.is_error() ? "error: " : "warning: ";
  s += v.entity + ": " + v.rule + ": " + v.message;
  return s;
}

inline int cmd_validate(const Context& ctx, const CLI::App& app, const std::string& data, const std::string& out_dir) {
  const Dataset dataset = read_records(data);
  const auto report = validate(dataset);
  std::size_t errors = 0;
  for (const auto& v : report) {
    ctx.out << describe(v) << '\n';
    errors += v.is_error() ? 1 : 0;
  }
  ctx.out << data << ": " << dataset.questions.size() << " questions, " << dataset.forecasts.size()
          << " forecasts, " << errors << " errors, " << report.size() - errors << " warnings\n";
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    std::string lines;
    for (const auto& v : report) {
      nlohmann::ordered_json j;
      j["severity"] = v.is_error() ? "error" : "warning";
      j["entity"] = v.entity;
      j["rule"] = v.rule;
      j["message"] = v.message;
      j["line"] = v.line;
      lines += j.dump() + '\n';
    }
    write_file(join_path(out_dir, "violations.jsonl"), lines);
    write_echo(app, out_dir);
  }
  return errors ? kExitData : kExitOk;
}

inline std::array<double, 3> ratio_array(const std::vector<double>& ratios) {
  if (ratios.size() != 3) {
    throw UsageError("--ratios needs three values");
  }
  for (const double r : ratios) {
    if (!(r >= 0.0)) {
      throw UsageError("--ratios must be non-negative");
    }
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw UsageError("--ratios must sum to 1");
  }
  return {ratios[0], ratios[1], ratios[2]};
}

inline int cmd_split(const Context& ctx, const CLI::App& app, const std::string& data, const std::string& out_dir,
                     const std::vector<double>& ratios, std::uint64_t seed) {
  const Dataset dataset = parse_dataset(data);
  const Split split = split_by_question(dataset, ratio_array(ratios), seed);
  ensure_dir(out_dir);
  write_file(join_path(out_dir, "split.json"), to_json(split).dump(2) + '\n');
  write_echo(app, out_dir);
  ctx.out << "train " << split.train.size() << ", validation " << split.validation.size() << ", test "
          << split.test.size() << " questions\n";
  return kExitOk;
}

inline nlohmann::ordered_json to_json(const BayesBounds& b) {
  nlohmann::ordered_json j;
  j["acc_prediction_only"] = b.acc_prediction_only;
  j["acc_with_markers"] = b.acc_with_markers;
  j["micro_prediction_only"] = b.micro_prediction_only;
  j["micro_with_markers"] = b.micro_with_markers;
  j["prediction_only_by_quartile"] = b.prediction_only_by_quartile;
  j["with_markers_by_quartile"] = b.with_markers_by_quartile;
  j["day0_prediction_only"] = b.day0_prediction_only;
  j["day0_with_markers"] = b.day0_with_markers;
  j["samples"] = b.samples;
  return j;
}

inline int cmd_synth(const Context& ctx, const CLI::App& app, SynthConfig config, const std::string& out_dir,
                     std::size_t bound_samples) {
  config.check();
  const SynthData data = generate(config);
  ensure_dir(out_dir);
  {
    std::ostringstream s;
    serialize(data.dataset, s);
    write_file(join_path(out_dir, "data.jsonl"), s.str());
  }
  {
    std::ostringstream s;
    write_manifest(config, data, s);
    write_file(join_path(out_dir, "truth.jsonl"), s.str());
  }
  ctx.out << "wrote " << data.dataset.questions.size() << " questions and " << data.dataset.forecasts.size()
          << " forecasts to " << join_path(out_dir, "data.jsonl") << '\n';
  if (bound_samples > 0) {
    const BayesBounds b = bayes_bounds(config, WindowMode::active(10), bound_samples);
    write_file(join_path(out_dir, "bounds.json"), to_json(b).dump(2) + '\n');
    ctx.out << "attainable accuracy: prediction only " << fixed(100 * b.acc_prediction_only, 2)
            << ", with markers " << fixed(100 * b.acc_with_markers, 2) << '\n';
  }
  write_echo(app, out_dir);
  return kExitOk;
}

inline int cmd_analyze(const Context& ctx, const CLI::App& app, const std::string& data, const std::string& out_dir,
                       const std::string& easy, const std::string& negation, const std::string& sentiment) {
  const Dataset dataset = parse_dataset(data);
  AnalyticsResources res;
  if (!easy.empty()) res.easy_words = load_easy_words(easy);
  if (!negation.empty()) res.negation = load_negation_cues(negation);
  if (!sentiment.empty()) res.sentiment = load_sentiment(sentiment);
  const CorpusReport report = corpus_report(dataset, res);
  ensure_dir(out_dir);
  write_file(join_path(out_dir, "analysis.json"), to_json(report).dump(2) + '\n');
  const std::string text = to_text(report);
  write_file(join_path(out_dir, "analysis.txt"), text);
  std::string curves = "day\tforecasts_per_day\tactive_per_day\n";
  for (std::size_t t = 0; t < report.forecasts_per_day.size(); ++t) {
    curves += std::to_string(t) + '\t' + fixed(report.forecasts_per_day[t], 6) + '\t' +
              fixed(t < report.active_per_day.size() ? report.active_per_day[t] : 0.0, 6) + '\n';
  }
  write_file(join_path(out_dir, "curves.tsv"), curves);
  write_echo(app, out_dir);
  ctx.out << text;
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string split;
  std::string out_dir;
  std::vector<double> ratios;
  std::uint64_t seed = kDefaultSeed;
};

inline int cmd_train(const Context& ctx, const CLI::App& app, const TrainArgs& args, const WindowFlags& window,
                     const EncoderFlags& encoder_flags, TrainFlags train_flags) {
  TrainConfig config = train_flags.config;
  config.seed = args.seed;
  config.ablation = RepresentationAblation::parse(train_flags.ablation);
  config.mode = window.resolve();
  config.check();
  const TextEncoder encoder = encoder_flags.make();
  const Dataset dataset = parse_dataset(args.data);
  ensure_dir(args.out_dir);
  Split split;
  if (args.split.empty()) {
    split = split_by_question(dataset, ratio_array(args.ratios), args.seed);
    write_file(join_path(args.out_dir, "split.json"), to_json(split).dump(2) + '\n');
  } else {
    split = load_split(args.split, dataset);
  }

  const TrainResult result = train(dataset, split, encoder, config, [&](const EpochLog& e) {
    ctx.out << "epoch " << e.epoch << "  train_loss " << fixed(e.train_loss, 4) << "  validation_loss "
            << fixed(e.validation_loss, 4) << "  validation_accuracy " << fixed(e.validation_accuracy, 2)
            << (e.improved ? "  *" : "") << '\n'
            << std::flush;
  });
  save_model(result.model, join_path(args.out_dir, "model.bin"));
  write_file(join_path(args.out_dir, "train_log.jsonl"), jsonl(result.log));
  write_echo(app, args.out_dir, config.mode.kind == WindowKind::daily);
  ctx.out << "best epoch " << result.model.best_epoch << "; model written to "
          << join_path(args.out_dir, "model.bin") << '\n';
  return kExitOk;
}

/// Runs `body` with the aggregator selected by `flags`.
inline void with_aggregator(const AggregatorFlags& flags, const Dataset& dataset, const std::string& embeddings,
                            const WindowFlags& window, WindowMode& mode,
                            const std::function<void(const std::function<Call(const Question&, const ForecastWindow&)>&)>& body) {
  flags.check();
  if (flags.model.empty()) {
    mode = window.resolve();
    if (flags.baseline == "majority") {
      body(majority_aggregator());
    } else {
      body(weighted_aggregator(flags.rule()));
    }
    return;
  }
  const LoadedModel loaded = load_for_calling(flags.model, embeddings, dataset);
  mode = window.given() ? window.resolve() : loaded.model.config.mode;
  const ModelAggregator aggregator(loaded.model, *loaded.encoded);
  body(std::cref(aggregator));
}

struct CallArgs {
  std::string data;
  std::string question;
  std::optional<int> day;
  std::string date;
  std::string out_dir;
  std::string embeddings;
};

inline int cmd_call(const Context& ctx, const CLI::App& app, const CallArgs& args, const AggregatorFlags& agg,
                    const WindowFlags& window) {
  const Dataset dataset = parse_dataset(args.data);
  const ForecastIndex index(dataset);
  const Question& q = index.question(args.question);
  int first = 0;
  int last = q.life() - 1;
  if (args.day) {
    first = last = *args.day;
  } else if (!args.date.empty()) {
    first = last = days_between(q.open_date, parse_date(args.date));
  }
  if (first < 0 || last >= q.life()) {
    throw UsageError("day " + std::to_string(first) + " is outside the life of question '" + q.id + "' (0.." +
                     std::to_string(q.life() - 1) + ")");
  }

  std::string lines;
  WindowMode mode;
  with_aggregator(agg, dataset, args.embeddings, window, mode, [&](const auto& aggregator) {
    for (int day = first; day <= last; ++day) {
      const ForecastWindow w = select_window(index, q.id, day, mode);
      nlohmann::ordered_json j;
      j["question_id"] = q.id;
      j["day"] = day;
      j["date"] = format_date(q.open_date + std::chrono::days(day));
      j["window_size"] = w.entries.size();
      if (w.empty()) {
        j["answer"] = nullptr;
      } else {
        const Call call = aggregator(q, w);
        j["answer"] = call.answer ? "yes" : "no";
        j["score"] = call.score;
        j["source"] = to_string(call.source);
      }
      lines += j.dump() + '\n';
    }
  });
  ctx.out << lines;
  if (!args.out_dir.empty()) {
    ensure_dir(args.out_dir);
    write_file(join_path(args.out_dir, "calls.jsonl"), lines);
    write_echo(app, args.out_dir, mode.kind == WindowKind::daily);
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string data;
  std::string split;
  std::string subset;
  std::string out_dir;
  std::string name;
  std::string embeddings;
  unsigned jobs = 1;
};

inline int cmd_evaluate(const Context& ctx, const CLI::App& app, const EvaluateArgs& args,
                        const AggregatorFlags& agg, const WindowFlags& window) {
  const Dataset dataset = parse_dataset(args.data);
  const ForecastIndex index(dataset);
  std::vector<std::string> ids;
  std::string subset = args.subset;
  if (args.split.empty()) {
    if (!subset.empty() && subset != "all") {
      throw UsageError("--subset " + subset + " needs --split");
    }
    subset = "all";
    std::size_t unresolved = 0;
    ids = resolved_ids(dataset, unresolved);
    if (unresolved) {
      ctx.err << "note: " << unresolved << " unresolved questions are not scored\n";
    }
  } else {
    if (subset.empty()) {
      subset = "test";
    }
    if (subset == "all") {
      throw UsageError("--subset all cannot be combined with --split");
    }
    ids = subset_ids(load_split(args.split, dataset), subset);
  }
  if (ids.empty()) {
    throw DataError("no questions to evaluate in subset '" + subset + "'");
  }

  std::vector<DayRecord> records;
  WindowMode mode;
  with_aggregator(agg, dataset, args.embeddings, window, mode, [&](const auto& aggregator) {
    records = call_all_days(index, ids, mode, aggregator, args.jobs);
  });
  const EvalReport report = accuracy(records);

  const auto majority = call_all_days(index, ids, mode, majority_aggregator(), args.jobs);
  const auto weighted = call_all_days(index, ids, mode, weighted_aggregator(agg.rule()), args.jobs);
  const auto difficulty = difficulty_quartiles(majority, weighted);
  const auto by_difficulty = difficulty_accuracy(records, difficulty);
  std::array<std::size_t, 4> difficulty_counts{};
  for (const auto& [id, k] : difficulty) {
    ++difficulty_counts[static_cast<std::size_t>(k - 1)];
  }

  const std::string name = args.name.empty() ? agg.system() : args.name;
  nlohmann::ordered_json j;
  j["name"] = name;
  j["system"] = agg.system();
  if (agg.model.empty() && agg.baseline == "weighted") {
    j["weighted_rule"] = agg.weighted_rule;
  }
  if (!agg.model.empty()) {
    j["model"] = agg.model;
  }
  j["mode"] = to_json(mode);
  j["subset"] = subset;
  j["question_count"] = ids.size();
  j["accuracy"] = crowdcall::to_json(report);
  j["difficulty"] = {{"accuracy", by_difficulty}, {"questions", difficulty_counts}};

  std::string table = accuracy_table({{name, table_row(report)}}, "Life quartile");
  table += '\n';
  table += accuracy_table({{name, {report.overall_macro, by_difficulty[0], by_difficulty[1], by_difficulty[2],
                                   by_difficulty[3]}}},
                          "Difficulty");
  table += "\nmicro accuracy " + fixed(report.overall_micro, 2) + " over " + std::to_string(report.scored_days) +
           " scored days; " + std::to_string(report.skipped_days) + " days skipped (empty window)\n";

  ensure_dir(args.out_dir);
  write_file(join_path(args.out_dir, "records.jsonl"), jsonl(records));
  write_file(join_path(args.out_dir, "report.json"), j.dump(2) + '\n');
  write_file(join_path(args.out_dir, "report.txt"), table);
  write_echo(app, args.out_dir, mode.kind == WindowKind::daily);
  ctx.out << table;
  return kExitOk;
}

inline std::string significance_header() { return "pair\tb\tc\tchi2\tp\tsignificant_0.05\n"; }

inline std::string significance_line(const std::string& a, const std::string& b, const McNemarResult& r) {
  return a + " vs " + b + '\t' + std::to_string(r.only_a) + '\t' + std::to_string(r.only_b) + '\t' +
         fixed(r.chi2, 4) + '\t' + fixed(r.p, 4) + '\t' + (r.significant() ? "yes" : "no") + '\n';
}

inline int cmd_compare(const Context& ctx, const CLI::App& app, const std::string& a, const std::string& b,
                       bool no_continuity, const std::string& out_dir) {
  const auto records_a = read_day_records(records_path(a));
  const auto records_b = read_day_records(records_path(b));
  const McNemarResult r = mcnemar(records_a, records_b, !no_continuity);
  ctx.out << "b " << r.only_a << "  c " << r.only_b << "  chi2 " << fixed(r.chi2, 4) << "  p " << fixed(r.p, 4)
          << "  " << (r.significant() ? "significant" : "not significant") << " at 0.05\n";
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    auto j = crowdcall::to_json(r);
    j["continuity_correction"] = !no_continuity;
    write_file(join_path(out_dir, "compare.json"), j.dump(2) + '\n');
    write_echo(app, out_dir);
  }
  return kExitOk;
}

inline int cmd_report(const Context& ctx, const CLI::App& app, const std::vector<std::string>& runs,
                      bool no_continuity, const std::string& out_dir) {
  struct Run {
    std::string name;
    nlohmann::json report;
    std::vector<DayRecord> records;
  };
  std::vector<Run> loaded;
  for (const auto& dir : runs) {
    const std::string path = join_path(dir, "report.json");
    Run run;
    try {
      run.report = nlohmann::json::parse(read_file(path));
      run.name = run.report.at("name").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": " + e.what());
    }
    run.records = read_day_records(join_path(dir, "records.jsonl"));
    loaded.push_back(std::move(run));
  }

  std::vector<std::pair<std::string, std::array<double, 5>>> life_rows, micro_rows, difficulty_rows;
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  try {
    for (const auto& run : loaded) {
      const auto& acc = run.report.at("accuracy");
      const auto lq = acc.at("life_quartiles").get<std::array<double, 4>>();
      const auto lqm = acc.at("life_quartiles_micro").get<std::array<double, 4>>();
      const auto dq = run.report.at("difficulty").at("accuracy").get<std::array<double, 4>>();
      const double macro = acc.at("overall_macro").get<double>();
      const double micro = acc.at("overall_micro").get<double>();
      life_rows.push_back({run.name, {macro, lq[0], lq[1], lq[2], lq[3]}});
      micro_rows.push_back({run.name, {micro, lqm[0], lqm[1], lqm[2], lqm[3]}});
      difficulty_rows.push_back({run.name, {macro, dq[0], dq[1], dq[2], dq[3]}});
      nlohmann::ordered_json row;
      row["name"] = run.name;
      row["macro"] = {macro, lq[0], lq[1], lq[2], lq[3]};
      row["micro"] = {micro, lqm[0], lqm[1], lqm[2], lqm[3]};
      row["difficulty"] = {macro, dq[0], dq[1], dq[2], dq[3]};
      summary.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report.json: ") + e.what());
  }

  std::string text = "Accuracy by life quartile (macro)\n" + accuracy_table(life_rows) +
                     "\nAccuracy by life quartile (micro)\n" + accuracy_table(micro_rows) +
                     "\nAccuracy by difficulty quartile (macro)\n" + accuracy_table(difficulty_rows);
  std::string tsv = significance_header();
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    for (std::size_t k = i + 1; k < loaded.size(); ++k) {
      const McNemarResult r = mcnemar(loaded[i].records, loaded[k].records, !no_continuity);
      tsv += significance_line(loaded[i].name, loaded[k].name, r);
      auto j = crowdcall::to_json(r);
      j["pair"] = {loaded[i].name, loaded[k].name};
      pairs.push_back(std::move(j));
    }
  }
  if (loaded.size() > 1) {
    text += "\nSignificance (McNemar)\n" + tsv;
  }

  ensure_dir(out_dir);
  nlohmann::ordered_json j;
  j["systems"] = summary;
  j["significance"] = pairs;
  write_file(join_path(out_dir, "summary.json"), j.dump(2) + '\n');
  write_file(join_path(out_dir, "summary.txt"), text);
  write_file(join_path(out_dir, "significance.tsv"), tsv);
  write_echo(app, out_dir);
  ctx.out << text;
  return kExitOk;
}

}  // namespace detail

/// Runs one subcommand. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  const Context ctx{out, err};

  CLI::App app{"Aggregate crowdsourced forecasts into daily yes/no calls.", "crowdcall"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  auto add_seed = [](CLI::App& sub, std::uint64_t& seed) {
    sub.add_option("--seed", seed, "Seed for all randomness")->envname("CROWDCALL_SEED")->capture_default_str();
  };
  auto add_config = [](CLI::App& sub) {
    // Consumed before parsing; registered for the help text only.
    static std::string unused;
    sub.add_option("--config", unused, "File of key = value lines expanded into flags");
  };

  // validate
  std::string v_data, v_out;
  auto* validate_cmd = app.add_subcommand("validate", "Check a dataset against the corpus rules");
  validate_cmd->add_option("--data", v_data, "Dataset (JSONL)")->required();
  validate_cmd->add_option("--out", v_out, "Directory for violations.jsonl");
  add_config(*validate_cmd);

  // split
  std::string s_data, s_out = ".";
  std::vector<double> s_ratios{0.7, 0.15, 0.15};
  std::uint64_t s_seed = kDefaultSeed;
  auto* split_cmd = app.add_subcommand("split", "Split question ids into train, validation and test");
  split_cmd->add_option("--data", s_data, "Dataset (JSONL)")->required();
  split_cmd->add_option("--out", s_out, "Output directory")->capture_default_str();
  split_cmd->add_option("--ratios", s_ratios, "Train, validation and test fractions")
      ->expected(3)
      ->capture_default_str();
  add_seed(*split_cmd, s_seed);
  add_config(*split_cmd);

  // synth
  SynthConfig synth_config;
  std::string y_out = ".";
  std::size_t y_bound_samples = 100000;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with planted reliability markers");
  synth_cmd->add_option("--out", y_out, "Output directory")->capture_default_str();
  synth_cmd->add_option("--n-questions", synth_config.n_questions)->capture_default_str();
  synth_cmd->add_option("--life-min", synth_config.life_min, "Shortest question life in days")
      ->capture_default_str();
  synth_cmd->add_option("--life-max", synth_config.life_max, "Longest question life in days")
      ->capture_default_str();
  synth_cmd->add_option("--n-forecasters", synth_config.n_forecasters)->capture_default_str();
  synth_cmd->add_option("--forecasts-per-day", synth_config.forecasts_per_day)->capture_default_str();
  synth_cmd->add_option("--base-noise", synth_config.base_noise, "Noise scale on day 0")->capture_default_str();
  synth_cmd->add_option("--noise-decay", synth_config.noise_decay, "Per-day noise multiplier")
      ->capture_default_str();
  synth_cmd->add_option("--reliable-fraction", synth_config.reliable_fraction)->capture_default_str();
  synth_cmd->add_option("--reliable-marker", synth_config.reliable_marker)->capture_default_str();
  synth_cmd->add_option("--unreliable-marker", synth_config.unreliable_marker)->capture_default_str();
  synth_cmd->add_option("--start-date", synth_config.start_date)->capture_default_str();
  synth_cmd->add_option("--bound-samples", y_bound_samples,
                        "Minimum scored days for the attainable-accuracy estimate (0 skips it)")
      ->capture_default_str();
  add_seed(*synth_cmd, synth_config.seed);
  add_config(*synth_cmd);

  // analyze
  std::string a_data, a_out = ".", a_easy, a_negation, a_sentiment;
  auto* analyze_cmd = app.add_subcommand("analyze", "Corpus statistics and justification analytics");
  analyze_cmd->add_option("--data", a_data, "Dataset (JSONL)")->required();
  analyze_cmd->add_option("--out", a_out, "Output directory")->capture_default_str();
  analyze_cmd->add_option("--easy-words", a_easy, "Easy-word list for Dale-Chall");
  analyze_cmd->add_option("--negation-cues", a_negation, "Negation cue lexicon");
  analyze_cmd->add_option("--sentiment", a_sentiment, "Sentiment lexicon (word<TAB>score)");
  add_config(*analyze_cmd);

  // train
  TrainArgs t_args;
  t_args.out_dir = ".";
  t_args.ratios = s_ratios;
  WindowFlags t_window;
  EncoderFlags t_encoder;
  TrainFlags t_train;
  auto* train_cmd = app.add_subcommand("train", "Train the recurrent aggregator");
  train_cmd->add_option("--data", t_args.data, "Dataset (JSONL)")->required();
  auto* t_split_opt = train_cmd->add_option("--split", t_args.split, "split.json from the split command");
  train_cmd->add_option("--ratios", t_args.ratios, "Split fractions when --split is absent")
      ->expected(3)
      ->capture_default_str()
      ->excludes(t_split_opt);
  train_cmd->add_option("--out", t_args.out_dir, "Output directory")->capture_default_str();
  t_window.add(*train_cmd);
  t_encoder.add(*train_cmd);
  t_train.add(*train_cmd);
  add_seed(*train_cmd, t_args.seed);
  add_config(*train_cmd);

  // call
  CallArgs c_args;
  AggregatorFlags c_agg;
  WindowFlags c_window;
  int c_day = 0;
  auto* call_cmd = app.add_subcommand("call", "Call one question on one day or on every day of its life");
  call_cmd->add_option("--data", c_args.data, "Dataset (JSONL)")->required();
  call_cmd->add_option("--question", c_args.question, "Question id")->required();
  auto* c_day_opt = call_cmd->add_option("--day", c_day, "Day index from the open date");
  call_cmd->add_option("--date", c_args.date, "Calendar date (YYYY-MM-DD)")->excludes(c_day_opt);
  call_cmd->add_option("--out", c_args.out_dir, "Directory for calls.jsonl");
  call_cmd->add_option("--embeddings", c_args.embeddings, "Embeddings for a model with an external encoder");
  c_agg.add(*call_cmd);
  c_window.add(*call_cmd);
  add_config(*call_cmd);

  // evaluate
  EvaluateArgs e_args;
  e_args.out_dir = ".";
  AggregatorFlags e_agg;
  WindowFlags e_window;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Call every day of every question and score the calls");
  evaluate_cmd->add_option("--data", e_args.data, "Dataset (JSONL)")->required();
  evaluate_cmd->add_option("--split", e_args.split, "split.json; restricts scoring to --subset");
  evaluate_cmd->add_option("--subset", e_args.subset, "Questions to score (default test with --split, else all)")
      ->check(CLI::IsMember({"all", "train", "validation", "test"}));
  evaluate_cmd->add_option("--out", e_args.out_dir, "Output directory")->capture_default_str();
  evaluate_cmd->add_option("--name", e_args.name, "Row label in reports");
  evaluate_cmd->add_option("--embeddings", e_args.embeddings, "Embeddings for a model with an external encoder");
  evaluate_cmd->add_option("--jobs", e_args.jobs, "Questions called concurrently")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  e_agg.add(*evaluate_cmd);
  e_window.add(*evaluate_cmd);
  add_config(*evaluate_cmd);

  // compare
  std::string m_a, m_b, m_out;
  bool m_no_continuity = false;
  auto* compare_cmd = app.add_subcommand("compare", "McNemar test between two evaluate runs");
  compare_cmd->add_option("--a", m_a, "records.jsonl or evaluate output directory")->required();
  compare_cmd->add_option("--b", m_b, "records.jsonl or evaluate output directory")->required();
  compare_cmd->add_flag("--no-continuity", m_no_continuity, "Uncorrected chi-square statistic");
  compare_cmd->add_option("--out", m_out, "Directory for compare.json");
  add_config(*compare_cmd);

  // report
  std::vector<std::string> r_runs;
  std::string r_out = ".";
  bool r_no_continuity = false;
  auto* report_cmd = app.add_subcommand("report", "Tables and pairwise significance over evaluate runs");
  report_cmd->add_option("--runs", r_runs, "evaluate output directories")->required()->expected(1, -1);
  report_cmd->add_flag("--no-continuity", r_no_continuity, "Uncorrected chi-square statistic");
  report_cmd->add_option("--out", r_out, "Output directory")->capture_default_str();
  add_config(*report_cmd);

  if (!args.empty() && !args.front().starts_with("-")) {
    const auto subs = app.get_subcommands([](const CLI::App*) { return true; });
    const bool known = std::any_of(subs.begin(), subs.end(), [&](const CLI::App* a) { return a->get_name() == args.front(); });
    if (!known) {
      err << "crowdcall: unknown subcommand '" << args.front()
          << "' (expected validate, split, synth, analyze, train, call, evaluate, compare or report)\n";
      return kExitUsage;
    }
  }

  try {
    try {
      std::vector<std::string> argv = expand_config(args);
      std::reverse(argv.begin(), argv.end());
      app.parse(argv);
    } catch (const CLI::ParseError& e) {
      return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }

    if (validate_cmd->parsed()) return cmd_validate(ctx, *validate_cmd, v_data, v_out);
    if (split_cmd->parsed()) return cmd_split(ctx, *split_cmd, s_data, s_out, s_ratios, s_seed);
    if (synth_cmd->parsed()) return cmd_synth(ctx, *synth_cmd, synth_config, y_out, y_bound_samples);
    if (analyze_cmd->parsed()) return cmd_analyze(ctx, *analyze_cmd, a_data, a_out, a_easy, a_negation, a_sentiment);
    if (train_cmd->parsed()) return cmd_train(ctx, *train_cmd, t_args, t_window, t_encoder, t_train);
    if (call_cmd->parsed()) {
      if (c_day_opt->count()) c_args.day = c_day;
      return cmd_call(ctx, *call_cmd, c_args, c_agg, c_window);
    }
    if (evaluate_cmd->parsed()) return cmd_evaluate(ctx, *evaluate_cmd, e_args, e_agg, e_window);
    if (compare_cmd->parsed()) return cmd_compare(ctx, *compare_cmd, m_a, m_b, m_no_continuity, m_out);
    if (report_cmd->parsed()) return cmd_report(ctx, *report_cmd, r_runs, r_no_continuity, r_out);
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "crowdcall: usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "crowdcall: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "crowdcall: numeric error: " << e.what() << '\n';
    return kExitInternal;
  } catch (const std::exception& e) {
    err << "crowdcall: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace crowdcall::cli

#endif  // CROWDCALL_CLI_HPP
