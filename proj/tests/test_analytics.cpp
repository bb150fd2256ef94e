#include <gtest/gtest.h>

#include "support.hpp"

using namespace crowdcall;
using namespace testing_support;

namespace {

std::string lexicon(const char* name) { return std::string(CROWDCALL_SOURCE_DIR) + "/data/lexicons/" + name; }

std::string words(std::size_t n, const char* word = "word") {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += (i ? " " : "") + std::string(word);
  return out;
}

}  // namespace

TEST(Syllables, Rules) {
  EXPECT_EQ(count_syllables("cat"), 1);
  EXPECT_EQ(count_syllables("the"), 1);
  EXPECT_EQ(count_syllables("make"), 1);
  EXPECT_EQ(count_syllables("table"), 2);
  EXPECT_EQ(count_syllables("forecast"), 3);
  EXPECT_EQ(count_syllables("rhythm"), 1);
  EXPECT_EQ(count_syllables("xyz"), 1);
  EXPECT_EQ(count_syllables("ZZZ"), 1);
}

TEST(Sentences, SplitOnTerminators) {
  EXPECT_EQ(split_sentences("One. Two! Three?").size(), 3u);
  EXPECT_EQ(split_sentences("No terminator").size(), 1u);
  EXPECT_EQ(split_sentences("...").size(), 0u);
  EXPECT_EQ(split_sentences("Wait... what?").size(), 2u);
}

TEST(Flesch, Examples) {
  EXPECT_NEAR(flesch("The cat sat on the mat."), 116.145, 1e-9);
  EXPECT_NEAR(flesch_from_counts(100, 4, 131), 70.634, 1e-9);
  EXPECT_THROW(flesch(""), DataError);
  EXPECT_THROW(flesch("?!"), DataError);
}

TEST(DaleChall, Examples) {
  EasyWordList easy;
  easy.words = {"word", "the"};
  EXPECT_NEAR(dale_chall_from_stats(0, 10), 0.496, 1e-12);
  EXPECT_NEAR(dale_chall_from_stats(10, 15), 5.9595, 1e-12);
  EXPECT_NEAR(dale_chall(words(10) + ".", easy), 0.496, 1e-12);
  // 30 words in 2 sentences, 3 of them hard.
  const std::string text = words(13) + " hard. " + words(14) + " tricky unusual.";
  EXPECT_NEAR(dale_chall(text, easy), 5.9595, 1e-9);
  EXPECT_THROW(dale_chall("", easy), DataError);
  EXPECT_THROW(dale_chall("word.", EasyWordList{}), DataError);
}

TEST(DaleChall, BundledEasyWordsLoad) {
  const auto easy = load_easy_words(lexicon("easy_words.txt"));
  EXPECT_TRUE(easy.contains("the"));
  EXPECT_FALSE(easy.contains("starter"));  // comment lines are skipped
  EXPECT_GT(easy.words.size(), 500u);
  EXPECT_THROW(load_easy_words(lexicon("absent.txt")), DataError);
}

TEST(WordTokens, KeepInnerApostrophes) {
  EXPECT_EQ(word_tokens("Software isn't good"), (std::vector<std::string>{"software", "isn't", "good"}));
  EXPECT_EQ(word_tokens("It\xE2\x80\x99s 'quoted'"), (std::vector<std::string>{"it's", "quoted"}));
}

TEST(Negation, Examples) {
  NegationLexicon lex;
  lex.add("n't");
  lex.add("not");
  lex.add("never");
  lex.add("no");
  lex.add("no longer");
  EXPECT_EQ(negation_count("Software isn't good enough yet", lex), 1u);
  EXPECT_EQ(negation_count("", lex), 0u);
  EXPECT_EQ(negation_count("not never no", lex), 3u);
  EXPECT_EQ(negation_count("It is no longer likely", lex), 2u);  // "no" and the phrase
  EXPECT_EQ(negation_count("Notable nothing", lex), 0u);
}

TEST(Negation, AdditiveOverSentencesAndCaseBlind) {
  const auto lex = load_negation_cues(lexicon("negation_cues.txt"));
  const std::vector<std::string> sentences{"This won't pass.", "It is not at all clear.", "Nobody expects it.",
                                           "Prices rise."};
  std::size_t sum = 0;
  std::string joined;
  for (const auto& s : sentences) {
    sum += negation_count(s, lex);
    joined += s + " ";
  }
  EXPECT_EQ(negation_count(joined, lex), sum);
  EXPECT_GE(sum, 4u);
  std::string upper = joined;
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  EXPECT_EQ(negation_count(upper, lex), sum);
  EXPECT_EQ(negation_count("  This   won't\tpass.  ", lex), negation_count("This won't pass.", lex));
}

TEST(Polarity, MeanOfMatchedScores) {
  SentimentLexicon lex;
  lex.scores = {{"good", 1.0}, {"bad", -0.5}};
  EXPECT_EQ(polarity("nothing here", lex), 0.0);
  EXPECT_EQ(polarity("Good.", lex), 1.0);
  EXPECT_DOUBLE_EQ(polarity("good and bad", lex), 0.25);
  EXPECT_EQ(polarity("", lex), 0.0);
}

TEST(Polarity, BundledLexiconStaysInRange) {
  const auto lex = load_sentiment(lexicon("sentiment.tsv"));
  EXPECT_GE(lex.scores.size(), 40u);
  for (const auto& [w, s] : lex.scores) {
    EXPECT_GE(s, -1.0) << w;
    EXPECT_LE(s, 1.0) << w;
  }
  TempDir dir("lex");
  write_text(dir.path("bad.tsv"), "word\t2\n");
  EXPECT_THROW(load_sentiment(dir.path("bad.tsv")), DataError);
  write_text(dir.path("notab.tsv"), "word 0.5\n");
  EXPECT_THROW(load_sentiment(dir.path("notab.tsv")), DataError);
}

TEST(Credibility, Signals) {
  EXPECT_TRUE(credibility_signals("Returning to initial forecast.").refers_previous);
  EXPECT_FALSE(credibility_signals("Prices are rising.").refers_previous);
  EXPECT_TRUE(credibility_signals(words(19)).is_short);
  EXPECT_FALSE(credibility_signals(words(20)).is_short);
  const auto empty = credibility_signals("");
  EXPECT_EQ(empty.token_count, 0u);
  EXPECT_TRUE(empty.is_short);
  EXPECT_FALSE(empty.refers_previous);
}

TEST(CorpusReportTest, MedianTokens) {
  Dataset d;
  d.questions.push_back(with_life("q", 3));
  d.forecasts.push_back(on_day("q", "a", 0, 0.5, words(10) + "."));
  d.forecasts.push_back(on_day("q", "b", 1, 0.5, words(23) + "."));
  d.forecasts.push_back(on_day("q", "c", 1, 0.5, words(40) + "."));
  const auto r = corpus_report(d);
  EXPECT_EQ(r.justification_tokens.median, 23.0);
  EXPECT_EQ(r.justification_tokens.min, 10.0);
  EXPECT_EQ(r.forecasts_per_day, (std::vector<double>{1, 2, 0}));
  EXPECT_EQ(r.active_per_day, (std::vector<double>{1, 3, 3}));
  EXPECT_NEAR(r.percent_short, 100.0 / 3.0, 1e-12);
  EXPECT_FALSE(r.negation_cues.has_value());
}

TEST(CorpusReportTest, EmptyDataset) {
  const auto r = corpus_report(Dataset{});
  EXPECT_EQ(r.questions, 0u);
  EXPECT_EQ(r.forecasts, 0u);
  EXPECT_EQ(r.justification_tokens.count, 0u);
  EXPECT_TRUE(r.forecasts_per_day.empty());
  EXPECT_NO_THROW(to_text(r));
}

TEST(CorpusReportTest, SyntheticRateIsRecovered) {
  SynthConfig c;
  c.n_questions = 20;
  c.forecasts_per_day = 3;
  const auto data = generate(c);
  AnalyticsResources res;
  res.negation = load_negation_cues(lexicon("negation_cues.txt"));
  res.sentiment = load_sentiment(lexicon("sentiment.tsv"));
  res.easy_words = load_easy_words(lexicon("easy_words.txt"));
  const auto r = corpus_report(data.dataset, res);
  for (double rate : r.forecasts_per_day) EXPECT_DOUBLE_EQ(rate, 3.0);
  EXPECT_TRUE(r.dale_chall.has_value());
  EXPECT_EQ(r.polarity->count, r.forecasts);
  const auto j = to_json(r);
  EXPECT_EQ(j.at("forecasts").get<std::size_t>(), data.dataset.forecasts.size());
}
