#ifndef CROWDCALL_AGGREGATE_HPP
#define CROWDCALL_AGGREGATE_HPP

#include <span>
#include <string>
#include <vector>

#include "crowdcall/windowing.hpp"

namespace crowdcall {

enum class CallSource { majority, weighted, model };

inline const char* to_string(CallSource source) {
  switch (source) {
    case CallSource::majority:
      return "majority";
    case CallSource::weighted:
      return "weighted";
    case CallSource::model:
      return "model";
  }
  return "?";
}

/// The answer an aggregator gives for a question on one day. `score` is the
/// aggregator's support for yes; ties record 0.5 with the tie-broken answer.
struct Call {
  std::string question_id;
  int day = 0;
  bool answer = false;
  double score = 0.5;
  CallSource source = CallSource::majority;
};

/// A prediction strictly above 0.5 is a yes vote; 0.5 itself votes no.
inline bool votes_yes(double prediction) { return prediction > 0.5; }

struct VoteTally {
  double yes_weight = 0.0;
  double no_weight = 0.0;
  std::size_t n_yes_votes = 0;
  std::size_t n_no_votes = 0;
};

/// Each side's weight is the sum of the predictions cast on that side.
inline VoteTally tally(std::span<const double> predictions) {
  VoteTally t;
  for (const double p : predictions) {
    if (votes_yes(p)) {
      t.yes_weight += p;
      ++t.n_yes_votes;
    } else {
      t.no_weight += p;
      ++t.n_no_votes;
    }
  }
  return t;
}

enum class WeightedRule { paper_literal, mean_threshold };

namespace detail {

inline void require_votes(std::span<const double> predictions) {
  if (predictions.empty()) {
    throw DataError("cannot call a question from an empty window");
  }
}

}  // namespace detail

inline Call weighted_vote(std::span<const double> predictions, WeightedRule rule = WeightedRule::paper_literal) {
  detail::require_votes(predictions);
  Call call;
  call.source = CallSource::weighted;
  if (rule == WeightedRule::mean_threshold) {
    double total = 0.0;
    for (const double p : predictions) {
      total += p;
    }
    call.score = total / static_cast<double>(predictions.size());
    call.answer = call.score > 0.5;
    return call;
  }
  const VoteTally t = tally(predictions);
  const double denom = t.yes_weight + t.no_weight;
  call.answer = t.yes_weight > t.no_weight;
  call.score = denom > 0.0 ? t.yes_weight / denom : 0.5;
  return call;
}

/// Vote count ties fall back to the weighted comparison, then to no.
inline Call majority_vote(std::span<const double> predictions) {
  detail::require_votes(predictions);
  const VoteTally t = tally(predictions);
  Call call;
  call.source = CallSource::majority;
  call.score = static_cast<double>(t.n_yes_votes) / static_cast<double>(t.n_yes_votes + t.n_no_votes);
  if (t.n_yes_votes != t.n_no_votes) {
    call.answer = t.n_yes_votes > t.n_no_votes;
  } else {
    call.answer = t.yes_weight > t.no_weight;
  }
  return call;
}

inline Call majority_vote(const ForecastWindow& window) {
  Call call = majority_vote(window.predictions());
  call.question_id = window.question_id;
  call.day = window.day;
  return call;
}

inline Call weighted_vote(const ForecastWindow& window, WeightedRule rule = WeightedRule::paper_literal) {
  Call call = weighted_vote(window.predictions(), rule);
  call.question_id = window.question_id;
  call.day = window.day;
  return call;
}

}  // namespace crowdcall

#endif  // CROWDCALL_AGGREGATE_HPP
