#ifndef CROWDCALL_EVAL_HPP
#define CROWDCALL_EVAL_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdcall/aggregate.hpp"
#include "crowdcall/windowing.hpp"

namespace crowdcall {

/// Outcome of calling one question on one day. Skipped days (empty window)
/// carry no answer and no correctness.
struct DayRecord {
  std::string question_id;
  int day = 0;
  int life = 1;
  std::optional<bool> answer;
  std::optional<bool> correct;
  double score = 0.5;

  bool skipped() const { return !answer.has_value(); }
};

/// Life quartile of day `day` in a question open `life` days.
inline int life_quartile(int day, int life) { return std::min(4 * day / life, 3); }

/// Calls every listed question on every day of its life. `aggregator` is any
/// callable (const Question&, const ForecastWindow&) -> Call. With jobs > 1,
/// questions are processed concurrently and merged back in input order.
template <class Aggregator>
std::vector<DayRecord> call_all_days(const ForecastIndex& index, std::span<const std::string> question_ids,
                                     const WindowMode& mode, const Aggregator& aggregator, unsigned jobs = 1) {
  for (const auto& id : question_ids) {
    if (!index.question(id).answer) {
      throw DataError("question '" + id + "' is unresolved and cannot be scored");
    }
  }

  auto call_question = [&](const std::string& id) {
    const Question& q = index.question(id);
    std::vector<DayRecord> out;
    out.reserve(static_cast<std::size_t>(q.life()));
    for (int day = 0; day < q.life(); ++day) {
      DayRecord record{q.id, day, q.life(), std::nullopt, std::nullopt, 0.5};
      const ForecastWindow window = select_window(index, id, day, mode);
      if (!window.empty()) {
        const Call call = aggregator(q, window);
        record.answer = call.answer;
        record.correct = call.answer == *q.answer;
        record.score = call.score;
      }
      out.push_back(std::move(record));
    }
    return out;
  };

  std::vector<std::vector<DayRecord>> per_question(question_ids.size());
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(question_ids.size())));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < question_ids.size(); ++i) {
      per_question[i] = call_question(question_ids[i]);
    }
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(jobs);
    for (unsigned w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < question_ids.size(); i += jobs) {
            per_question[i] = call_question(question_ids[i]);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) {
      t.join();
    }
    for (const auto& e : errors) {
      if (e) {
        std::rethrow_exception(e);
      }
    }
  }

  std::vector<DayRecord> records;
  for (auto& chunk : per_question) {
    records.insert(records.end(), std::make_move_iterator(chunk.begin()), std::make_move_iterator(chunk.end()));
  }
  return records;
}

inline auto majority_aggregator() {
  return [](const Question&, const ForecastWindow& window) { return majority_vote(window); };
}

inline auto weighted_aggregator(WeightedRule rule = WeightedRule::paper_literal) {
  return [rule](const Question&, const ForecastWindow& window) { return weighted_vote(window, rule); };
}

// ---------------------------------------------------------------------------
// Accuracy

struct QuestionScore {
  std::string question_id;
  int life = 0;
  std::size_t scored = 0;
  std::size_t correct = 0;
  std::size_t skipped = 0;
  std::array<std::size_t, 4> quartile_scored{};
  std::array<std::size_t, 4> quartile_correct{};

  double accuracy() const { return scored ? 100.0 * static_cast<double>(correct) / static_cast<double>(scored) : 0.0; }
};

struct EvalReport {
  double overall_macro = 0.0;  // mean of per-question accuracies, percent
  double overall_micro = 0.0;  // pooled over scored days, percent
  std::array<double, 4> life_quartiles{};        // macro
  std::array<double, 4> life_quartiles_micro{};
  std::array<std::size_t, 4> quartile_questions{};  // questions contributing to each macro quartile
  std::size_t scored_days = 0;
  std::size_t correct_days = 0;
  std::size_t skipped_days = 0;
  std::vector<std::string> unscored_questions;  // zero scored days, excluded from macro means
  std::vector<QuestionScore> questions;         // ascending by id
};

/// Scores records per question, overall and per life quartile. Questions
/// without scored days are excluded from macro means and listed.
inline EvalReport accuracy(std::span<const DayRecord> records) {
  std::map<std::string, QuestionScore> by_question;
  for (const auto& r : records) {
    auto& qs = by_question[r.question_id];
    qs.question_id = r.question_id;
    qs.life = r.life;
    if (r.day < 0 || r.day >= r.life) {
      throw DataError("record day " + std::to_string(r.day) + " outside life of question '" + r.question_id + "'");
    }
    if (r.skipped()) {
      ++qs.skipped;
      continue;
    }
    const int quartile = life_quartile(r.day, r.life);
    ++qs.scored;
    ++qs.quartile_scored[quartile];
    if (r.correct.value_or(false)) {
      ++qs.correct;
      ++qs.quartile_correct[quartile];
    }
  }

  EvalReport report;
  double macro_total = 0.0;
  std::size_t macro_count = 0;
  std::array<double, 4> quartile_total{};
  std::array<std::size_t, 4> pooled_scored{};
  std::array<std::size_t, 4> pooled_correct{};
  for (auto& [id, qs] : by_question) {
    report.skipped_days += qs.skipped;
    report.scored_days += qs.scored;
    report.correct_days += qs.correct;
    if (qs.scored == 0) {
      report.unscored_questions.push_back(id);
    } else {
      macro_total += qs.accuracy();
      ++macro_count;
    }
    for (int k = 0; k < 4; ++k) {
      if (qs.quartile_scored[k] > 0) {
        quartile_total[k] += 100.0 * static_cast<double>(qs.quartile_correct[k]) /
                             static_cast<double>(qs.quartile_scored[k]);
        ++report.quartile_questions[k];
      }
      pooled_scored[k] += qs.quartile_scored[k];
      pooled_correct[k] += qs.quartile_correct[k];
    }
    report.questions.push_back(std::move(qs));
  }
  report.overall_macro = macro_count ? macro_total / static_cast<double>(macro_count) : 0.0;
  report.overall_micro = report.scored_days ? 100.0 * static_cast<double>(report.correct_days) /
                                                  static_cast<double>(report.scored_days)
                                            : 0.0;
  for (int k = 0; k < 4; ++k) {
    report.life_quartiles[k] =
        report.quartile_questions[k] ? quartile_total[k] / static_cast<double>(report.quartile_questions[k]) : 0.0;
    report.life_quartiles_micro[k] =
        pooled_scored[k] ? 100.0 * static_cast<double>(pooled_correct[k]) / static_cast<double>(pooled_scored[k])
                         : 0.0;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Difficulty quartiles

namespace detail {

inline std::map<std::string, std::size_t> wrong_days(std::span<const DayRecord> records) {
  std::map<std::string, std::size_t> out;
  for (const auto& r : records) {
    auto& count = out[r.question_id];
    if (r.correct.has_value() && !*r.correct) {
      ++count;
    }
  }
  return out;
}

}  // namespace detail

/// Sizes of `n` items split into four contiguous groups, remainders to the
/// earlier groups.
inline std::array<std::size_t, 4> quartile_sizes(std::size_t n) {
  std::array<std::size_t, 4> sizes{};
  for (std::size_t k = 0; k < 4; ++k) {
    sizes[k] = n / 4 + (k < n % 4 ? 1 : 0);
  }
  return sizes;
}

/// Assigns each question a difficulty quartile 1..4 from the wrong-day
/// counts of whichever baseline makes fewer mistakes overall (majority on a
/// tie). Questions sort by (wrong days, id); quartile 1 is the easiest.
inline std::map<std::string, int> difficulty_quartiles(std::span<const DayRecord> majority_records,
                                                       std::span<const DayRecord> weighted_records) {
  const auto majority = detail::wrong_days(majority_records);
  const auto weighted = detail::wrong_days(weighted_records);
  std::size_t majority_total = 0;
  std::size_t weighted_total = 0;
  for (const auto& [id, n] : majority) majority_total += n;
  for (const auto& [id, n] : weighted) weighted_total += n;
  for (const auto& [id, n] : majority) {
    if (!weighted.contains(id)) {
      throw DataError("weighted records do not cover question '" + id + "'");
    }
  }
  for (const auto& [id, n] : weighted) {
    if (!majority.contains(id)) {
      throw DataError("majority records do not cover question '" + id + "'");
    }
  }
  const auto& reference = weighted_total < majority_total ? weighted : majority;

  std::vector<std::pair<std::size_t, std::string>> order;
  order.reserve(reference.size());
  for (const auto& [id, n] : reference) {
    order.emplace_back(n, id);
  }
  std::sort(order.begin(), order.end());

  std::map<std::string, int> out;
  const auto sizes = quartile_sizes(order.size());
  std::size_t pos = 0;
  for (int k = 0; k < 4; ++k) {
    for (std::size_t i = 0; i < sizes[k]; ++i, ++pos) {
      out[order[pos].second] = k + 1;
    }
  }
  return out;
}

/// Macro accuracy within each difficulty quartile (0 for an empty quartile).
inline std::array<double, 4> difficulty_accuracy(std::span<const DayRecord> records,
                                                 const std::map<std::string, int>& quartiles) {
  const EvalReport report = accuracy(records);
  std::array<double, 4> total{};
  std::array<std::size_t, 4> count{};
  for (const auto& qs : report.questions) {
    const auto it = quartiles.find(qs.question_id);
    if (it == quartiles.end() || qs.scored == 0) {
      continue;
    }
    total[it->second - 1] += qs.accuracy();
    ++count[it->second - 1];
  }
  std::array<double, 4> out{};
  for (int k = 0; k < 4; ++k) {
    out[k] = count[k] ? total[k] / static_cast<double>(count[k]) : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// McNemar's paired test

struct McNemarResult {
  std::size_t both_correct = 0;  // a
  std::size_t only_a = 0;        // b
  std::size_t only_b = 0;        // c
  std::size_t both_wrong = 0;    // d
  std::size_t unpaired = 0;      // keys scored by only one system
  double chi2 = 0.0;
  double p = 1.0;

  bool significant(double alpha = 0.05) const { return p < alpha; }
};

/// Chi-square statistic and p-value from the discordant counts. The
/// continuity-corrected form uses (max(|b - c| - 1, 0))^2 / (b + c).
inline McNemarResult mcnemar(std::size_t b, std::size_t c, bool continuity_correction = true) {
  McNemarResult r;
  r.only_a = b;
  r.only_b = c;
  if (b + c == 0) {
    return r;
  }
  const double diff = std::abs(static_cast<double>(b) - static_cast<double>(c));
  const double numer = continuity_correction ? std::max(diff - 1.0, 0.0) : diff;
  r.chi2 = numer * numer / static_cast<double>(b + c);
  // Survival of chi-square with one degree of freedom.
  r.p = r.chi2 == 0.0 ? 1.0 : std::erfc(std::sqrt(r.chi2 / 2.0));
  return r;
}

/// Pairs records on (question, day), keeping days both systems scored.
inline McNemarResult mcnemar(std::span<const DayRecord> a, std::span<const DayRecord> b,
                             bool continuity_correction = true) {
  std::map<std::pair<std::string, int>, bool> scored_a;
  for (const auto& r : a) {
    if (r.correct) {
      scored_a[{r.question_id, r.day}] = *r.correct;
    }
  }
  std::size_t both = 0, only_a = 0, only_b = 0, neither = 0, paired = 0, scored_b = 0;
  for (const auto& r : b) {
    if (!r.correct) {
      continue;
    }
    ++scored_b;
    const auto it = scored_a.find({r.question_id, r.day});
    if (it == scored_a.end()) {
      continue;
    }
    ++paired;
    const bool ca = it->second;
    const bool cb = *r.correct;
    if (ca && cb) ++both;
    else if (ca) ++only_a;
    else if (cb) ++only_b;
    else ++neither;
  }
  McNemarResult result = mcnemar(only_a, only_b, continuity_correction);
  result.both_correct = both;
  result.both_wrong = neither;
  result.unpaired = (scored_a.size() - paired) + (scored_b - paired);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json to_json(const DayRecord& r) {
  nlohmann::ordered_json j;
  j["question_id"] = r.question_id;
  j["day"] = r.day;
  j["life"] = r.life;
  j["skipped"] = r.skipped();
  if (!r.skipped()) {
    j["answer"] = *r.answer ? "yes" : "no";
    j["correct"] = r.correct.value_or(false);
    j["score"] = r.score;
  }
  return j;
}

inline DayRecord day_record_from_json(const nlohmann::json& j) {
  DayRecord r;
  r.question_id = j.at("question_id").get<std::string>();
  r.day = j.at("day").get<int>();
  r.life = j.at("life").get<int>();
  if (!j.at("skipped").get<bool>()) {
    r.answer = j.at("answer").get<std::string>() == "yes";
    r.correct = j.at("correct").get<bool>();
    r.score = j.at("score").get<double>();
  }
  return r;
}

inline std::vector<DayRecord> read_day_records(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<DayRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      out.push_back(day_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["overall_macro"] = report.overall_macro;
  j["overall_micro"] = report.overall_micro;
  j["life_quartiles"] = report.life_quartiles;
  j["life_quartiles_micro"] = report.life_quartiles_micro;
  j["quartile_questions"] = report.quartile_questions;
  j["scored_days"] = report.scored_days;
  j["correct_days"] = report.correct_days;
  j["skipped_days"] = report.skipped_days;
  j["unscored_questions"] = report.unscored_questions;
  auto& per = j["questions"] = nlohmann::ordered_json::array();
  for (const auto& qs : report.questions) {
    nlohmann::ordered_json q;
    q["question_id"] = qs.question_id;
    q["life"] = qs.life;
    q["scored"] = qs.scored;
    q["correct"] = qs.correct;
    q["skipped"] = qs.skipped;
    q["accuracy"] = qs.accuracy();
    q["quartile_scored"] = qs.quartile_scored;
    q["quartile_correct"] = qs.quartile_correct;
    per.push_back(std::move(q));
  }
  return j;
}

inline nlohmann::ordered_json to_json(const McNemarResult& r) {
  nlohmann::ordered_json j;
  j["a"] = r.both_correct;
  j["b"] = r.only_a;
  j["c"] = r.only_b;
  j["d"] = r.both_wrong;
  j["unpaired"] = r.unpaired;
  j["chi2"] = r.chi2;
  j["p"] = r.p;
  j["significant_0.05"] = r.significant();
  return j;
}

/// Fixed-width table with All and Q1-Q4 columns, one row per system.
inline std::string accuracy_table(const std::vector<std::pair<std::string, std::array<double, 5>>>& rows,
                                  const std::string& first_header = "System") {
  std::size_t width = first_header.size();
  for (const auto& [name, values] : rows) {
    width = std::max(width, name.size());
  }
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s %8s %8s\n", static_cast<int>(width), first_header.c_str(),
                "All", "Q1", "Q2", "Q3", "Q4");
  out += buf;
  for (const auto& [name, v] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %8.2f %8.2f %8.2f %8.2f %8.2f\n", static_cast<int>(width), name.c_str(),
                  v[0], v[1], v[2], v[3], v[4]);
    out += buf;
  }
  return out;
}

inline std::array<double, 5> table_row(const EvalReport& r) {
  return {r.overall_macro, r.life_quartiles[0], r.life_quartiles[1], r.life_quartiles[2], r.life_quartiles[3]};
}

}  // namespace crowdcall

#endif  // CROWDCALL_EVAL_HPP
