#ifndef CROWDCALL_WINDOWING_HPP
#define CROWDCALL_WINDOWING_HPP

#include <algorithm>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "crowdcall/corpus.hpp"

namespace crowdcall {

enum class WindowKind { daily, active };

/// How the trailing span is anchored. `including_call_day` covers
/// [day - span + 1, day]; `previous_days` covers the span days before the
/// call day plus the call day itself, [day - span, day].
enum class SpanAnchor { including_call_day, previous_days };

struct WindowMode {
  WindowKind kind = WindowKind::active;
  int active_span = 10;
  SpanAnchor anchor = SpanAnchor::including_call_day;

  static WindowMode daily() { return {WindowKind::daily, 10, SpanAnchor::including_call_day}; }
  static WindowMode active(int span = 10, SpanAnchor anchor = SpanAnchor::including_call_day) {
    if (span < 1) {
      throw UsageError("active span must be at least 1 day");
    }
    return {WindowKind::active, span, anchor};
  }

  /// First day index inside the window when calling on `day`.
  int first_day(int day) const {
    if (kind == WindowKind::daily) {
      return day;
    }
    return anchor == SpanAnchor::including_call_day ? day - active_span + 1 : day - active_span;
  }
};

struct WindowEntry {
  const Forecast* forecast = nullptr;
  std::size_t ordinal = 0;  // position in Dataset::forecasts
  int day = 0;              // day index relative to the question's open date
  bool current = false;     // submitted on the call day
};

/// Forecasts visible when calling a question on one day, ordered by
/// (day index, forecaster id, record order).
struct ForecastWindow {
  std::string question_id;
  int day = 0;
  std::vector<WindowEntry> entries;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }

  std::vector<double> predictions() const {
    std::vector<double> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
      out.push_back(e.forecast->prediction);
    }
    return out;
  }
};

/// Per-question forecast lists sorted by (day index, record order). Holds a
/// reference to the dataset, which must outlive it.
class ForecastIndex {
public:
  struct Item {
    std::size_t ordinal;
    int day;
  };

  explicit ForecastIndex(const Dataset& dataset) : dataset_(&dataset) {
    for (std::size_t i = 0; i < dataset.questions.size(); ++i) {
      by_question_.emplace(dataset.questions[i].id, Entry{i, {}});
    }
    for (std::size_t i = 0; i < dataset.forecasts.size(); ++i) {
      const auto& f = dataset.forecasts[i];
      const auto it = by_question_.find(f.question_id);
      if (it == by_question_.end()) {
        throw DataError("forecast #" + std::to_string(i) + " references unknown question '" +
                        f.question_id + "'");
      }
      const auto& q = dataset.questions[it->second.question];
      it->second.items.push_back({i, days_between(q.open_date, f.date)});
    }
    for (auto& [id, entry] : by_question_) {
      std::stable_sort(entry.items.begin(), entry.items.end(),
                       [](const Item& a, const Item& b) { return a.day < b.day; });
    }
  }

  const Dataset& dataset() const { return *dataset_; }

  const Question& question(std::string_view id) const {
    return dataset_->questions[entry(id).question];
  }

  const std::vector<Item>& items(std::string_view id) const { return entry(id).items; }

  bool contains(std::string_view id) const { return by_question_.contains(std::string(id)); }

private:
  struct Entry {
    std::size_t question;
    std::vector<Item> items;
  };

  const Entry& entry(std::string_view id) const {
    const auto it = by_question_.find(std::string(id));
    if (it == by_question_.end()) {
      throw DataError("unknown question '" + std::string(id) + "'");
    }
    return it->second;
  }

  const Dataset* dataset_;
  std::unordered_map<std::string, Entry> by_question_;
};

inline ForecastWindow select_window(const ForecastIndex& index, std::string_view question_id, int day,
                                    const WindowMode& mode) {
  const Question& question = index.question(question_id);
  if (day < 0 || day >= question.life()) {
    throw DataError("day " + std::to_string(day) + " outside life of question '" + question.id +
                    "' (0.." + std::to_string(question.life() - 1) + ")");
  }
  if (mode.kind == WindowKind::active && mode.active_span < 1) {
    throw UsageError("active span must be at least 1 day");
  }
  const auto& items = index.items(question_id);
  const auto& forecasts = index.dataset().forecasts;
  const int first = mode.first_day(day);

  auto lo = std::lower_bound(items.begin(), items.end(), first,
                             [](const ForecastIndex::Item& item, int d) { return item.day < d; });
  auto hi = std::upper_bound(items.begin(), items.end(), day,
                             [](int d, const ForecastIndex::Item& item) { return d < item.day; });

  ForecastWindow window;
  window.question_id = question.id;
  window.day = day;
  auto make_entry = [&](const ForecastIndex::Item& item) {
    return WindowEntry{&forecasts[item.ordinal], item.ordinal, item.day, item.day == day};
  };

  if (mode.kind == WindowKind::daily) {
    for (auto it = lo; it != hi; ++it) {
      window.entries.push_back(make_entry(*it));
    }
  } else {
    // Items are ascending by (day, ordinal), so the last one seen per
    // forecaster is their latest.
    std::unordered_map<std::string_view, const ForecastIndex::Item*> latest;
    for (auto it = lo; it != hi; ++it) {
      latest[forecasts[it->ordinal].forecaster_id] = &*it;
    }
    window.entries.reserve(latest.size());
    for (const auto& [forecaster, item] : latest) {
      window.entries.push_back(make_entry(*item));
    }
  }

  std::sort(window.entries.begin(), window.entries.end(), [](const WindowEntry& a, const WindowEntry& b) {
    if (a.day != b.day) {
      return a.day < b.day;
    }
    if (a.forecast->forecaster_id != b.forecast->forecaster_id) {
      return a.forecast->forecaster_id < b.forecast->forecaster_id;
    }
    return a.ordinal < b.ordinal;
  });
  return window;
}

/// Convenience overload that indexes the dataset on every call.
inline ForecastWindow select_window(const Dataset& dataset, std::string_view question_id, int day,
                                    const WindowMode& mode) {
  return select_window(ForecastIndex(dataset), question_id, day, mode);
}

}  // namespace crowdcall

#endif  // CROWDCALL_WINDOWING_HPP
