#ifndef CROWDCALL_CORPUS_HPP
#define CROWDCALL_CORPUS_HPP

#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdcall/util.hpp"

namespace crowdcall {

struct Question {
  std::string id;
  std::string text;
  Date open_date{};
  Date close_date{};
  std::optional<bool> answer;  // nullopt while unresolved
  std::size_t line = 0;        // source line, 0 when not read from a file

  /// Inclusive number of days the question is open.
  int life() const { return days_between(open_date, close_date) + 1; }
};

struct Forecast {
  std::string question_id;
  std::string forecaster_id;
  Date date{};
  double prediction = 0.0;
  std::string justification;
  std::size_t line = 0;
};

/// Questions and forecasts in record order. Record order is significant: it
/// breaks ties when one forecaster submits twice on the same day.
struct Dataset {
  std::vector<Question> questions;
  std::vector<Forecast> forecasts;

  const Question* find_question(std::string_view id) const {
    for (const auto& q : questions) {
      if (q.id == id) {
        return &q;
      }
    }
    return nullptr;
  }
};

struct Violation {
  enum class Severity { error, warning };
  Severity severity = Severity::error;
  std::string entity;  // "question <id>" or "forecast #<ordinal>"
  std::string rule;
  std::string message;
  std::size_t line = 0;

  bool is_error() const { return severity == Severity::error; }
};

inline bool has_errors(const std::vector<Violation>& report) {
  for (const auto& v : report) {
    if (v.is_error()) {
      return true;
    }
  }
  return false;
}

/// Checks every dataset invariant. Empty justifications are warnings; all
/// other entries are errors.
inline std::vector<Violation> validate(const Dataset& dataset) {
  std::vector<Violation> report;
  auto add = [&](Violation::Severity sev, std::string entity, std::string rule, std::string msg,
                 std::size_t line) {
    report.push_back({sev, std::move(entity), std::move(rule), std::move(msg), line});
  };
  using enum Violation::Severity;

  std::unordered_map<std::string_view, const Question*> by_id;
  for (const auto& q : dataset.questions) {
    const std::string entity = "question " + q.id;
    if (q.id.empty()) {
      add(error, entity, "id-nonempty", "question id is empty", q.line);
    }
    if (!by_id.emplace(q.id, &q).second) {
      add(error, entity, "id-unique", "duplicate question id '" + q.id + "'", q.line);
    }
    if (q.text.empty()) {
      add(error, entity, "text-nonempty", "question text is empty", q.line);
    }
    if (q.open_date > q.close_date) {
      add(error, entity, "open-before-close",
          "open date " + format_date(q.open_date) + " is after close date " + format_date(q.close_date),
          q.line);
    }
  }

  for (std::size_t i = 0; i < dataset.forecasts.size(); ++i) {
    const auto& f = dataset.forecasts[i];
    const std::string entity = "forecast #" + std::to_string(i);
    if (!std::isfinite(f.prediction) || f.prediction < 0.0 || f.prediction > 1.0) {
      std::ostringstream msg;
      msg << "prediction " << f.prediction << " outside [0,1]";
      add(error, entity, "prediction-range", msg.str(), f.line);
    }
    const auto it = by_id.find(f.question_id);
    if (it == by_id.end()) {
      add(error, entity, "question-exists", "unknown question id '" + f.question_id + "'", f.line);
    } else if (f.date < it->second->open_date || f.date > it->second->close_date) {
      add(error, entity, "date-within-life",
          "date " + format_date(f.date) + " outside life of question '" + f.question_id + "' (" +
              format_date(it->second->open_date) + " to " + format_date(it->second->close_date) + ")",
          f.line);
    }
    if (f.justification.empty()) {
      add(warning, entity, "justification-nonempty", "empty justification", f.line);
    }
  }
  return report;
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    throw DataError("line " + std::to_string(line) + ": missing field '" + key + "'");
  }
  return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* key, std::size_t line) {
  const auto& value = require(obj, key, line);
  if (!value.is_string()) {
    throw DataError("line " + std::to_string(line) + ": field '" + key + "' must be a string");
  }
  return value.get<std::string>();
}

inline Date require_date(const nlohmann::json& obj, const char* key, std::size_t line) {
  try {
    return parse_date(require_string(obj, key, line));
  } catch (const DataError& e) {
    const std::string prefix = "line " + std::to_string(line);
    if (std::string_view(e.what()).starts_with(prefix)) {
      throw;
    }
    throw DataError(prefix + ": " + e.what());
  }
}

}  // namespace detail

/// Reads the line-delimited records without checking cross-record invariants.
/// Only structural problems (bad JSON, missing or mistyped fields) throw.
inline Dataset read_records(std::istream& in) {
  Dataset dataset;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') {
      text.pop_back();
    }
    if (text.find_first_not_of(" \t") == std::string::npos) {
      continue;
    }
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("line " + std::to_string(line) + ": malformed record: " + e.what());
    }
    if (!record.is_object()) {
      throw DataError("line " + std::to_string(line) + ": record is not an object");
    }
    const std::string type = detail::require_string(record, "type", line);
    if (type == "question") {
      Question q;
      q.id = detail::require_string(record, "id", line);
      q.text = detail::require_string(record, "text", line);
      q.open_date = detail::require_date(record, "open", line);
      q.close_date = detail::require_date(record, "close", line);
      const auto it = record.find("answer");
      if (it != record.end() && !it->is_null()) {
        if (*it == "yes") {
          q.answer = true;
        } else if (*it == "no") {
          q.answer = false;
        } else {
          throw DataError("line " + std::to_string(line) + ": answer must be \"yes\", \"no\" or null");
        }
      }
      q.line = line;
      dataset.questions.push_back(std::move(q));
    } else if (type == "forecast") {
      Forecast f;
      f.question_id = detail::require_string(record, "question_id", line);
      f.forecaster_id = detail::require_string(record, "forecaster_id", line);
      f.date = detail::require_date(record, "date", line);
      const auto& p = detail::require(record, "prediction", line);
      if (!p.is_number()) {
        throw DataError("line " + std::to_string(line) + ": prediction must be a number");
      }
      f.prediction = p.get<double>();
      const auto it = record.find("justification");
      if (it != record.end() && !it->is_null()) {
        if (!it->is_string()) {
          throw DataError("line " + std::to_string(line) + ": justification must be a string");
        }
        f.justification = it->get<std::string>();
      }
      f.line = line;
      dataset.forecasts.push_back(std::move(f));
    } else {
      throw DataError("line " + std::to_string(line) + ": unknown record type '" + type + "'");
    }
  }
  return dataset;
}

inline Dataset read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open dataset '" + path + "'");
  }
  return read_records(in);
}

namespace detail {

inline Dataset checked(Dataset dataset) {
  for (const auto& v : validate(dataset)) {
    if (v.is_error()) {
      throw DataError((v.line ? "line " + std::to_string(v.line) + ": " : std::string()) + v.entity +
                      ": " + v.message);
    }
  }
  return dataset;
}

}  // namespace detail

/// Reads and validates a dataset; the first invariant violation throws,
/// naming its source line.
inline Dataset parse_dataset(std::istream& in) { return detail::checked(read_records(in)); }

inline Dataset parse_dataset(const std::string& path) { return detail::checked(read_records(path)); }

inline nlohmann::ordered_json to_json(const Question& q) {
  nlohmann::ordered_json j;
  j["type"] = "question";
  j["id"] = q.id;
  j["text"] = q.text;
  j["open"] = format_date(q.open_date);
  j["close"] = format_date(q.close_date);
  j["answer"] = q.answer ? nlohmann::ordered_json(*q.answer ? "yes" : "no") : nlohmann::ordered_json();
  return j;
}

inline nlohmann::ordered_json to_json(const Forecast& f) {
  nlohmann::ordered_json j;
  j["type"] = "forecast";
  j["question_id"] = f.question_id;
  j["forecaster_id"] = f.forecaster_id;
  j["date"] = format_date(f.date);
  j["prediction"] = f.prediction;
  j["justification"] = f.justification;
  return j;
}

/// Questions first, then forecasts, each in record order.
inline void serialize(const Dataset& dataset, std::ostream& out) {
  for (const auto& q : dataset.questions) {
    out << to_json(q).dump() << '\n';
  }
  for (const auto& f : dataset.forecasts) {
    out << to_json(f).dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Question-level splitting.

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

inline Split split_by_question(const Dataset& dataset, std::array<double, 3> ratios, std::uint64_t seed) {
  double total = 0.0;
  int nonzero = 0;
  for (const double r : ratios) {
    if (!(r >= 0.0)) {
      throw DataError("split ratios must be non-negative");
    }
    total += r;
    nonzero += r > 0.0 ? 1 : 0;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw DataError("split ratios must sum to 1");
  }
  const std::size_t n = dataset.questions.size();
  if (n < static_cast<std::size_t>(nonzero)) {
    throw DataError("cannot split " + std::to_string(n) + " questions into " + std::to_string(nonzero) +
                    " non-empty subsets");
  }

  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& q : dataset.questions) {
    ids.push_back(q.id);
  }
  Rng rng(seed);
  shuffle(ids, rng);

  // Floor each held-out subset; flooring remainders stay in train.
  auto count = [&](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
  };
  const std::size_t n_val = count(ratios[1]);
  const std::size_t n_test = count(ratios[2]);
  const std::size_t n_train = n - n_val - n_test;

  Split split;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                          ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return split;
}

inline nlohmann::ordered_json to_json(const Split& split) {
  nlohmann::ordered_json j;
  j["train"] = split.train;
  j["validation"] = split.validation;
  j["test"] = split.test;
  return j;
}

inline Split split_from_json(const nlohmann::json& j) {
  Split split;
  try {
    split.train = j.at("train").get<std::vector<std::string>>();
    split.validation = j.at("validation").get<std::vector<std::string>>();
    split.test = j.at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed split file: ") + e.what());
  }
  return split;
}

/// Checks a split against a dataset: disjoint subsets covering every question.
inline void check_split(const Dataset& dataset, const Split& split) {
  std::unordered_set<std::string> seen;
  for (const auto* subset : {&split.train, &split.validation, &split.test}) {
    for (const auto& id : *subset) {
      if (!dataset.find_question(id)) {
        throw DataError("split names unknown question '" + id + "'");
      }
      if (!seen.insert(id).second) {
        throw DataError("question '" + id + "' appears in more than one split subset");
      }
    }
  }
  if (seen.size() != dataset.questions.size()) {
    throw DataError("split does not cover every question");
  }
}

}  // namespace crowdcall

#endif  // CROWDCALL_CORPUS_HPP
