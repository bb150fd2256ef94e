#include <gtest/gtest.h>

#include "support.hpp"

using namespace crowdcall;
using namespace testing_support;

namespace {

SynthConfig tiny() {
  SynthConfig c;
  c.n_questions = 4;
  c.life_min = 8;
  c.life_max = 8;
  c.seed = 11;
  return c;
}

EvalReport majority_report(const Dataset& d, const WindowMode& mode = WindowMode::active(10)) {
  const ForecastIndex index(d);
  std::vector<std::string> ids;
  for (const auto& q : d.questions) ids.push_back(q.id);
  const auto records = call_all_days(index, ids, mode, majority_aggregator());
  return accuracy(records);
}

}  // namespace

TEST(Synth, DeterministicBytes) {
  const auto a = generate(tiny()), b = generate(tiny());
  EXPECT_EQ(to_jsonl(a.dataset), to_jsonl(b.dataset));
  std::ostringstream ma, mb;
  write_manifest(tiny(), a, ma);
  write_manifest(tiny(), b, mb);
  EXPECT_EQ(ma.str(), mb.str());
  SynthConfig other = tiny();
  other.seed = 12;
  EXPECT_NE(to_jsonl(generate(other).dataset), to_jsonl(a.dataset));
}

TEST(Synth, ShapeAndValidity) {
  const auto data = generate(tiny());
  const auto& d = data.dataset;
  EXPECT_EQ(d.questions.size(), 4u);
  EXPECT_EQ(d.forecasts.size(), 4u * 8 * tiny().forecasts_per_day);
  EXPECT_TRUE(validate(d).empty());
  for (std::size_t i = 0; i < d.questions.size(); ++i) {
    EXPECT_EQ(d.questions[i].life(), 8);
    EXPECT_EQ(data.truth.answers[i].first, d.questions[i].id);
    EXPECT_EQ(data.truth.answers[i].second, *d.questions[i].answer);
  }
  // Round trip through the on-disk format.
  std::istringstream in(to_jsonl(d));
  EXPECT_EQ(to_jsonl(parse_dataset(in)), to_jsonl(d));
}

TEST(Synth, MarkersRevealReliability) {
  const auto data = generate(SynthConfig{});
  const auto& c = SynthConfig{};
  std::size_t reliable_right = 0, reliable_total = 0, unreliable_right = 0, unreliable_total = 0;
  std::map<std::string, bool> answers(data.truth.answers.begin(), data.truth.answers.end());
  for (const auto& lf : data.truth.forecasts) {
    const auto& f = data.dataset.forecasts[lf.ordinal];
    const auto tokens = tokenize(f.justification);
    const bool has_reliable = std::find(tokens.begin(), tokens.end(), c.reliable_marker) != tokens.end();
    const bool has_unreliable = std::find(tokens.begin(), tokens.end(), c.unreliable_marker) != tokens.end();
    ASSERT_NE(has_reliable, has_unreliable);
    ASSERT_EQ(has_reliable, lf.reliable);
    const bool leans_right = (f.prediction > 0.5) == answers.at(f.question_id);
    if (lf.magnitude >= 0.5) continue;  // noise may cross the midpoint
    (lf.reliable ? reliable_total : unreliable_total) += 1;
    (lf.reliable ? reliable_right : unreliable_right) += leans_right ? 1 : 0;
  }
  EXPECT_EQ(reliable_right, reliable_total);
  EXPECT_EQ(unreliable_right, 0u);
}

TEST(Synth, NoiselessReliableCrowdIsAlwaysRight) {
  SynthConfig c;
  c.n_questions = 30;
  c.reliable_fraction = 1.0;
  c.base_noise = 1e-6;
  const auto data = generate(c);
  const auto r = majority_report(data.dataset);
  EXPECT_EQ(r.overall_macro, 100.0);
  EXPECT_EQ(r.overall_micro, 100.0);
}

TEST(Synth, ConfigErrors) {
  SynthConfig c;
  c.forecasts_per_day = c.n_forecasters + 1;
  EXPECT_THROW(generate(c), UsageError);
  c = SynthConfig{};
  c.reliable_marker = c.unreliable_marker;
  EXPECT_THROW(generate(c), UsageError);
  c = SynthConfig{};
  c.reliable_marker = "Two words";
  EXPECT_THROW(generate(c), UsageError);
  c = SynthConfig{};
  c.life_min = 5;
  c.life_max = 4;
  EXPECT_THROW(generate(c), UsageError);
  c = SynthConfig{};
  c.noise_decay = 1.5;
  EXPECT_THROW(generate(c), UsageError);
}

TEST(Synth, MajorityImprovesOverLife) {
  const auto r = majority_report(generate(SynthConfig{}).dataset);
  EXPECT_GE(r.life_quartiles[3], r.life_quartiles[0]);
  EXPECT_GE(r.life_quartiles_micro[3], r.life_quartiles_micro[0]);
}

TEST(Bounds, UninformativePredictionsAtDayZero) {
  SynthConfig c;
  c.reliable_fraction = 0.5;
  c.life_min = c.life_max = 1;
  c.n_questions = 200;
  const auto b = bayes_bounds(c, WindowMode::active(10), 20000);
  EXPECT_NEAR(b.acc_prediction_only, 0.5, 0.03);
  EXPECT_GT(b.acc_with_markers, b.acc_prediction_only + 0.2);
}

TEST(Bounds, MarkersAddNothingWhenAllAreReliable) {
  SynthConfig c;
  c.reliable_fraction = 1.0;
  c.n_questions = 50;
  const auto b = bayes_bounds(c, WindowMode::active(10), 5000);
  EXPECT_EQ(b.acc_prediction_only, b.acc_with_markers);
  EXPECT_EQ(b.micro_prediction_only, b.micro_with_markers);
}

TEST(Bounds, DefaultGapIsAtLeastTwentyPoints) {
  const auto b = bayes_bounds(SynthConfig{});
  EXPECT_GE(b.samples, 100000u);
  EXPECT_GE(b.acc_with_markers - b.acc_prediction_only, 0.2);
  EXPECT_LE(b.acc_with_markers, 1.0);
  // The bound dominates the majority baseline on the same distribution.
  const auto r = majority_report(generate(SynthConfig{}).dataset);
  EXPECT_LE(r.overall_macro / 100.0, b.acc_prediction_only + 0.03);
}
