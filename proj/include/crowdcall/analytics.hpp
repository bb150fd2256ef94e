#ifndef CROWDCALL_ANALYTICS_HPP
#define CROWDCALL_ANALYTICS_HPP

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdcall/encode.hpp"
#include "crowdcall/windowing.hpp"

namespace crowdcall {

// ---------------------------------------------------------------------------
// Sentences and syllables

/// Segments delimited by '.', '!' or '?' that contain at least one word.
inline std::vector<std::string_view> split_sentences(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  auto flush = [&](std::size_t end) {
    const auto piece = text.substr(start, end - start);
    if (!tokenize(piece).empty()) {
      out.push_back(piece);
    }
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '.' || text[i] == '!' || text[i] == '?') {
      flush(i);
      start = i + 1;
    }
  }
  flush(text.size());
  return out;
}

/// Vowel groups (a e i o u y), minus a silent final "e" unless the word ends
/// in consonant + "le"; at least one.
inline int count_syllables(std::string_view word) {
  auto is_vowel = [](char ch) {
    ch = detail::ascii_lower(ch);
    return ch == 'a' || ch == 'e' || ch == 'i' || ch == 'o' || ch == 'u' || ch == 'y';
  };
  int groups = 0;
  bool in_group = false;
  for (const char ch : word) {
    const bool v = is_vowel(ch);
    if (v && !in_group) {
      ++groups;
    }
    in_group = v;
  }
  const std::size_t n = word.size();
  if (n >= 1 && detail::ascii_lower(word[n - 1]) == 'e') {
    const bool consonant_le =
        n >= 3 && detail::ascii_lower(word[n - 2]) == 'l' && std::isalpha(static_cast<unsigned char>(word[n - 3])) &&
        !is_vowel(word[n - 3]);
    if (!consonant_le) {
      --groups;
    }
  }
  return std::max(groups, 1);
}

struct TextStats {
  std::size_t words = 0;
  std::size_t sentences = 0;
  std::size_t syllables = 0;
};

inline TextStats text_stats(std::string_view text) {
  TextStats s;
  const auto tokens = tokenize(text);
  s.words = tokens.size();
  s.sentences = split_sentences(text).size();
  for (const auto& t : tokens) {
    s.syllables += static_cast<std::size_t>(count_syllables(t));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Readability

inline double flesch_from_counts(double words, double sentences, double syllables) {
  return 206.835 - 1.015 * (words / sentences) - 84.6 * (syllables / words);
}

inline double flesch(std::string_view text) {
  const TextStats s = text_stats(text);
  if (s.words == 0 || s.sentences == 0) {
    throw DataError("Flesch score needs at least one word and one sentence");
  }
  return flesch_from_counts(static_cast<double>(s.words), static_cast<double>(s.sentences),
                            static_cast<double>(s.syllables));
}

/// `difficult_percent` is the percentage of words outside the easy list.
inline double dale_chall_from_stats(double difficult_percent, double words_per_sentence) {
  double score = 0.1579 * difficult_percent + 0.0496 * words_per_sentence;
  if (difficult_percent > 5.0) {
    score += 3.6365;
  }
  return score;
}

struct EasyWordList {
  std::unordered_set<std::string> words;  // lowercased

  bool contains(const std::string& lowercase_word) const { return words.contains(lowercase_word); }
};

namespace detail {

inline std::vector<std::string> lexicon_lines(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) {
    throw DataError(std::string("cannot open ") + what + " '" + path + "'");
  }
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
      line.pop_back();
    }
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') {
      continue;
    }
    out.push_back(line.substr(first));
  }
  return out;
}

inline std::string lowercase(std::string_view text) {
  std::string out(text);
  for (auto& ch : out) {
    ch = ascii_lower(ch);
  }
  return out;
}

}  // namespace detail

inline EasyWordList load_easy_words(const std::string& path) {
  EasyWordList list;
  for (const auto& line : detail::lexicon_lines(path, "easy word list")) {
    list.words.insert(detail::lowercase(line));
  }
  return list;
}

inline double dale_chall(std::string_view text, const EasyWordList& easy) {
  if (easy.words.empty()) {
    throw DataError("Dale-Chall score needs a non-empty easy word list");
  }
  const auto tokens = tokenize(text);
  const std::size_t sentences = split_sentences(text).size();
  if (tokens.empty() || sentences == 0) {
    throw DataError("Dale-Chall score needs at least one word and one sentence");
  }
  std::size_t difficult = 0;
  for (const auto& t : tokens) {
    difficult += easy.contains(t) ? 0 : 1;
  }
  const double words = static_cast<double>(tokens.size());
  return dale_chall_from_stats(100.0 * static_cast<double>(difficult) / words,
                               words / static_cast<double>(sentences));
}

// ---------------------------------------------------------------------------
// Negation cues

/// Word tokens that keep internal apostrophes ("isn't"), so affixal cues can
/// be matched as suffixes. Curly apostrophes are folded to '\''.
inline std::vector<std::string> word_tokens(std::string_view text) {
  std::string folded;
  folded.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    // U+2019 RIGHT SINGLE QUOTATION MARK
    if (i + 2 < text.size() && static_cast<unsigned char>(text[i]) == 0xE2 &&
        static_cast<unsigned char>(text[i + 1]) == 0x80 && static_cast<unsigned char>(text[i + 2]) == 0x99) {
      folded.push_back('\'');
      i += 2;
    } else {
      folded.push_back(text[i]);
    }
  }
  std::vector<std::string> tokens;
  std::string current;
  for (std::size_t i = 0; i < folded.size(); ++i) {
    const auto ch = static_cast<unsigned char>(folded[i]);
    const bool inner_apostrophe = ch == '\'' && !current.empty() && i + 1 < folded.size() &&
                                  detail::is_word_byte(static_cast<unsigned char>(folded[i + 1]));
    if (detail::is_word_byte(ch) || inner_apostrophe) {
      current.push_back(detail::ascii_lower(folded[i]));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) {
    tokens.push_back(std::move(current));
  }
  return tokens;
}

/// Cue entries: single words, multiword phrases (matched as consecutive
/// tokens within a sentence) and affixal cues containing an apostrophe, such
/// as "n't" (matched as token suffixes).
struct NegationLexicon {
  std::unordered_set<std::string> words;
  std::vector<std::vector<std::string>> phrases;
  std::vector<std::string> suffixes;

  void add(std::string_view entry) {
    std::string cue = detail::lowercase(entry);
    const auto tokens = word_tokens(cue);
    if (cue.find('\'') != std::string::npos && tokens.size() <= 1) {
      const auto first = cue.find_first_not_of(" \t");
      suffixes.push_back(cue.substr(first, cue.find_last_not_of(" \t") - first + 1));
    } else if (tokens.size() == 1) {
      words.insert(tokens[0]);
    } else if (tokens.size() > 1) {
      phrases.push_back(tokens);
    }
  }
};

inline NegationLexicon load_negation_cues(const std::string& path) {
  NegationLexicon lexicon;
  for (const auto& line : detail::lexicon_lines(path, "negation cue lexicon")) {
    lexicon.add(line);
  }
  return lexicon;
}

inline std::size_t negation_count(std::string_view text, const NegationLexicon& lexicon) {
  std::size_t count = 0;
  for (const auto sentence : split_sentences(text)) {
    const auto tokens = word_tokens(sentence);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto& tok = tokens[i];
      if (lexicon.words.contains(tok)) {
        ++count;
      } else {
        for (const auto& suffix : lexicon.suffixes) {
          if (tok.size() > suffix.size() && tok.ends_with(suffix)) {
            ++count;
            break;
          }
        }
      }
      for (const auto& phrase : lexicon.phrases) {
        if (i + phrase.size() <= tokens.size() && std::equal(phrase.begin(), phrase.end(), tokens.begin() + i)) {
          ++count;
        }
      }
    }
  }
  return count;
}

// ---------------------------------------------------------------------------
// Polarity

struct SentimentLexicon {
  std::unordered_map<std::string, double> scores;
};

/// "word<TAB>score" per line, scores in [-1, 1].
inline SentimentLexicon load_sentiment(const std::string& path) {
  SentimentLexicon lexicon;
  for (const auto& line : detail::lexicon_lines(path, "sentiment lexicon")) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path + ": expected 'word<TAB>score', got '" + line + "'");
    }
    double score = 0.0;
    try {
      score = std::stod(line.substr(tab + 1));
    } catch (const std::logic_error&) {
      throw DataError(path + ": bad score in '" + line + "'");
    }
    if (!(score >= -1.0 && score <= 1.0)) {
      throw DataError(path + ": score outside [-1, 1] in '" + line + "'");
    }
    lexicon.scores[detail::lowercase(line.substr(0, tab))] = score;
  }
  return lexicon;
}

/// Mean lexicon score over matched tokens; 0 when nothing matches.
inline double polarity(std::string_view text, const SentimentLexicon& lexicon) {
  double total = 0.0;
  std::size_t matched = 0;
  for (const auto& tok : tokenize(text)) {
    const auto it = lexicon.scores.find(tok);
    if (it != lexicon.scores.end()) {
      total += it->second;
      ++matched;
    }
  }
  return matched ? total / static_cast<double>(matched) : 0.0;
}

// ---------------------------------------------------------------------------
// Credibility signals

inline constexpr std::size_t kShortJustificationTokens = 20;

inline std::vector<std::string> default_reference_phrases() {
  return {"initial forecast", "previous forecast", "consensus", "other forecasters", "@"};
}

struct CredibilitySignals {
  std::size_t token_count = 0;
  bool is_short = true;
  bool refers_previous = false;
  std::size_t negation_cues = 0;
  double polarity = 0.0;
};

/// Optional resources for the lexicon-based signals.
struct AnalyticsResources {
  std::optional<NegationLexicon> negation;
  std::optional<SentimentLexicon> sentiment;
  std::optional<EasyWordList> easy_words;
  std::vector<std::string> reference_phrases = default_reference_phrases();
};

inline CredibilitySignals credibility_signals(std::string_view justification, const AnalyticsResources& res = {}) {
  CredibilitySignals s;
  s.token_count = tokenize(justification).size();
  s.is_short = s.token_count < kShortJustificationTokens;
  const std::string lower = detail::lowercase(justification);
  for (const auto& phrase : res.reference_phrases) {
    if (!phrase.empty() && lower.find(detail::lowercase(phrase)) != std::string::npos) {
      s.refers_previous = true;
      break;
    }
  }
  if (res.negation) {
    s.negation_cues = negation_count(justification, *res.negation);
  }
  if (res.sentiment) {
    s.polarity = polarity(justification, *res.sentiment);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Corpus report

struct CorpusReport {
  std::size_t questions = 0;
  std::size_t forecasts = 0;
  std::size_t question_days = 0;  // sum of question lives
  Summary question_tokens;
  Summary question_life;
  Summary justification_tokens;
  Summary justification_sentences;
  double percent_short = 0.0;
  double percent_refers_previous = 0.0;
  std::optional<double> percent_with_negation;
  std::optional<Summary> negation_cues;
  std::optional<Summary> polarity;
  Summary flesch;  // over justifications with a word and a sentence
  std::optional<Summary> dale_chall;
  /// Mean forecasts submitted on each day index, over questions open that day.
  std::vector<double> forecasts_per_day;
  /// Mean active-window size (10-day span) on each day index.
  std::vector<double> active_per_day;
};

inline CorpusReport corpus_report(const Dataset& dataset, const AnalyticsResources& res = {}) {
  CorpusReport r;
  r.questions = dataset.questions.size();
  r.forecasts = dataset.forecasts.size();

  std::vector<double> q_tokens, q_life;
  int max_life = 0;
  for (const auto& q : dataset.questions) {
    q_tokens.push_back(static_cast<double>(tokenize(q.text).size()));
    q_life.push_back(static_cast<double>(q.life()));
    r.question_days += static_cast<std::size_t>(q.life());
    max_life = std::max(max_life, q.life());
  }
  r.question_tokens = summarize(q_tokens);
  r.question_life = summarize(q_life);

  std::vector<double> j_tokens, j_sentences, negations, polarities, flesch_scores, dale_scores;
  std::size_t n_short = 0, n_refers = 0, n_negated = 0;
  for (const auto& f : dataset.forecasts) {
    const auto signals = credibility_signals(f.justification, res);
    j_tokens.push_back(static_cast<double>(signals.token_count));
    j_sentences.push_back(static_cast<double>(split_sentences(f.justification).size()));
    n_short += signals.is_short ? 1 : 0;
    n_refers += signals.refers_previous ? 1 : 0;
    if (res.negation) {
      negations.push_back(static_cast<double>(signals.negation_cues));
      n_negated += signals.negation_cues > 0 ? 1 : 0;
    }
    if (res.sentiment) {
      polarities.push_back(signals.polarity);
    }
    if (signals.token_count > 0) {
      flesch_scores.push_back(flesch(f.justification));
      if (res.easy_words) {
        dale_scores.push_back(dale_chall(f.justification, *res.easy_words));
      }
    }
  }
  r.justification_tokens = summarize(j_tokens);
  r.justification_sentences = summarize(j_sentences);
  r.flesch = summarize(flesch_scores);
  const double n = static_cast<double>(std::max<std::size_t>(r.forecasts, 1));
  r.percent_short = r.forecasts ? 100.0 * static_cast<double>(n_short) / n : 0.0;
  r.percent_refers_previous = r.forecasts ? 100.0 * static_cast<double>(n_refers) / n : 0.0;
  if (res.negation) {
    r.percent_with_negation = r.forecasts ? 100.0 * static_cast<double>(n_negated) / n : 0.0;
    r.negation_cues = summarize(negations);
  }
  if (res.sentiment) {
    r.polarity = summarize(polarities);
  }
  if (res.easy_words) {
    r.dale_chall = summarize(dale_scores);
  }

  if (max_life > 0) {
    const ForecastIndex index(dataset);
    std::vector<double> submitted(static_cast<std::size_t>(max_life), 0.0);
    std::vector<double> active(static_cast<std::size_t>(max_life), 0.0);
    std::vector<double> open(static_cast<std::size_t>(max_life), 0.0);
    const WindowMode active_mode = WindowMode::active(10);
    for (const auto& q : dataset.questions) {
      for (int day = 0; day < q.life(); ++day) {
        open[static_cast<std::size_t>(day)] += 1.0;
        active[static_cast<std::size_t>(day)] += static_cast<double>(select_window(index, q.id, day, active_mode).size());
      }
      for (const auto& item : index.items(q.id)) {
        submitted[static_cast<std::size_t>(item.day)] += 1.0;
      }
    }
    for (std::size_t d = 0; d < open.size(); ++d) {
      submitted[d] /= open[d];
      active[d] /= open[d];
    }
    r.forecasts_per_day = std::move(submitted);
    r.active_per_day = std::move(active);
  }
  return r;
}

inline nlohmann::ordered_json to_json(const Summary& s) {
  nlohmann::ordered_json j;
  j["count"] = s.count;
  j["min"] = s.min;
  j["q1"] = s.q1;
  j["median"] = s.median;
  j["q3"] = s.q3;
  j["max"] = s.max;
  j["mean"] = s.mean;
  return j;
}

inline nlohmann::ordered_json to_json(const CorpusReport& r) {
  nlohmann::ordered_json j;
  j["questions"] = r.questions;
  j["forecasts"] = r.forecasts;
  j["question_days"] = r.question_days;
  j["question_tokens"] = to_json(r.question_tokens);
  j["question_life"] = to_json(r.question_life);
  j["justification_tokens"] = to_json(r.justification_tokens);
  j["justification_sentences"] = to_json(r.justification_sentences);
  j["percent_short"] = r.percent_short;
  j["percent_refers_previous"] = r.percent_refers_previous;
  if (r.percent_with_negation) j["percent_with_negation"] = *r.percent_with_negation;
  if (r.negation_cues) j["negation_cues"] = to_json(*r.negation_cues);
  if (r.polarity) j["polarity"] = to_json(*r.polarity);
  j["flesch"] = to_json(r.flesch);
  if (r.dale_chall) j["dale_chall"] = to_json(*r.dale_chall);
  j["forecasts_per_day"] = r.forecasts_per_day;
  j["active_per_day"] = r.active_per_day;
  return j;
}

inline std::string to_text(const CorpusReport& r) {
  std::ostringstream out;
  char buf[256];
  out << "questions " << r.questions << ", forecasts " << r.forecasts << ", question-days " << r.question_days
      << "\n\n";
  std::snprintf(buf, sizeof buf, "%-26s %8s %8s %8s %8s %8s %8s\n", "", "min", "q1", "median", "q3", "max", "mean");
  out << buf;
  auto row = [&](const char* name, const Summary& s) {
    std::snprintf(buf, sizeof buf, "%-26s %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f\n", name, s.min, s.q1, s.median, s.q3,
                  s.max, s.mean);
    out << buf;
  };
  row("question tokens", r.question_tokens);
  row("question life (days)", r.question_life);
  row("justification tokens", r.justification_tokens);
  row("justification sentences", r.justification_sentences);
  row("flesch", r.flesch);
  if (r.dale_chall) row("dale-chall", *r.dale_chall);
  if (r.negation_cues) row("negation cues", *r.negation_cues);
  if (r.polarity) row("polarity", *r.polarity);
  out << '\n';
  std::snprintf(buf, sizeof buf, "short justifications (<%zu tokens): %.2f%%\n", kShortJustificationTokens,
                r.percent_short);
  out << buf;
  std::snprintf(buf, sizeof buf, "refer to previous forecasts: %.2f%%\n", r.percent_refers_previous);
  out << buf;
  if (r.percent_with_negation) {
    std::snprintf(buf, sizeof buf, "with at least one negation cue: %.2f%%\n", *r.percent_with_negation);
    out << buf;
  }
  return out.str();
}

}  // namespace crowdcall

#endif  // CROWDCALL_ANALYTICS_HPP
