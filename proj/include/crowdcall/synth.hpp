#ifndef CROWDCALL_SYNTH_HPP
#define CROWDCALL_SYNTH_HPP

#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdcall/corpus.hpp"
#include "crowdcall/encode.hpp"
#include "crowdcall/eval.hpp"
#include "crowdcall/windowing.hpp"

namespace crowdcall {

/// Floor of the per-day noise scale.
inline constexpr double kMinNoise = 0.05;

/// Generator settings. Forecasters are reliable (predictions pushed toward
/// the answer) or unreliable (the mirror image); only their justifications'
/// marker token tells the two apart.
struct SynthConfig {
  std::size_t n_questions = 400;
  int life_min = 6;
  int life_max = 16;
  std::size_t n_forecasters = 20;
  std::size_t forecasts_per_day = 2;
  double base_noise = 0.6;
  double noise_decay = 0.9;
  double reliable_fraction = 0.6;
  std::string reliable_marker = "evidence";
  std::string unreliable_marker = "hunch";
  std::uint64_t seed = 2021;
  std::string start_date = "2020-01-01";

  /// Noise scale on day index `day`.
  double sigma(int day) const { return std::max(kMinNoise, base_noise * std::pow(noise_decay, day)); }

  void check() const;
};

namespace detail {

// Justification templates; '#' marks the marker position. None of the words
// here may be used as a marker.
inline const std::array<const char*, 6>& justification_templates() {
  static const std::array<const char*, 6> templates = {
      "# I looked at the latest reports and the trend seems clear.",
      "Based on recent news, # this looks settled for now.",
      "The situation keeps changing but # my estimate holds.",
      "# Polls and official statements point one way.",
      "Checked again today. # Nothing major moved since last week.",
      "Reading the room here, # I expect the same direction to continue.",
  };
  return templates;
}

inline const std::array<const char*, 8>& question_topics() {
  static const std::array<const char*, 8> topics = {
      "the central bank raise interest rates", "the incumbent win the election",
      "the treaty be ratified",                "the company announce a merger",
      "the ceasefire hold",                    "unemployment fall below five percent",
      "the summit take place",                 "the bill pass the senate"};
  return topics;
}

}  // namespace detail

inline void SynthConfig::check() const {
  if (n_questions < 1 || n_forecasters < 1 || forecasts_per_day < 1) {
    throw UsageError("synthetic counts must be positive");
  }
  if (life_min < 1 || life_max < life_min) {
    throw UsageError("synthetic life range must satisfy 1 <= life_min <= life_max");
  }
  if (forecasts_per_day > n_forecasters) {
    throw UsageError("forecasts_per_day cannot exceed n_forecasters");
  }
  if (!(base_noise > 0.0)) {
    throw UsageError("base_noise must be positive");
  }
  if (!(noise_decay >= 0.0 && noise_decay <= 1.0)) {
    throw UsageError("noise_decay must be in [0, 1]");
  }
  if (!(reliable_fraction >= 0.0 && reliable_fraction <= 1.0)) {
    throw UsageError("reliable_fraction must be in [0, 1]");
  }
  const auto rm = tokenize(reliable_marker);
  const auto um = tokenize(unreliable_marker);
  if (rm.size() != 1 || um.size() != 1 || rm[0] != reliable_marker || um[0] != unreliable_marker) {
    throw UsageError("markers must be single lowercase tokens");
  }
  if (rm == um) {
    throw UsageError("markers must differ");
  }
  for (const char* t : detail::justification_templates()) {
    for (const auto& tok : tokenize(t)) {
      if (tok == rm[0] || tok == um[0]) {
        throw UsageError("marker '" + tok + "' collides with template text");
      }
    }
  }
  parse_date(start_date);
}

struct LatentForecast {
  std::size_t ordinal = 0;
  int day = 0;
  double sigma = 0.0;
  double magnitude = 0.0;
  bool reliable = false;
};

/// Every latent variable behind a generated dataset.
struct GroundTruth {
  std::vector<bool> forecaster_reliable;     // by forecaster number
  std::vector<std::string> forecaster_ids;
  std::vector<std::pair<std::string, bool>> answers;  // question id, answer
  std::vector<LatentForecast> forecasts;     // by forecast ordinal
};

struct SynthData {
  Dataset dataset;
  GroundTruth truth;
};

/// Deterministic given config.seed. Each day of each question gets exactly
/// `forecasts_per_day` forecasts from distinct forecasters.
inline SynthData generate(const SynthConfig& config) {
  config.check();
  Rng rng(config.seed);
  SynthData out;
  auto& truth = out.truth;

  char id[32];
  for (std::size_t f = 0; f < config.n_forecasters; ++f) {
    std::snprintf(id, sizeof id, "f%04zu", f + 1);
    truth.forecaster_ids.emplace_back(id);
    truth.forecaster_reliable.push_back(uniform01(rng) < config.reliable_fraction);
  }

  const Date start = parse_date(config.start_date);
  const auto& templates = detail::justification_templates();
  const auto& topics = detail::question_topics();
  std::vector<std::size_t> pool(config.n_forecasters);

  for (std::size_t qn = 0; qn < config.n_questions; ++qn) {
    Question q;
    std::snprintf(id, sizeof id, "q%04zu", qn + 1);
    q.id = id;
    const bool answer = uniform01(rng) < 0.5;
    const int life = config.life_min + static_cast<int>(uniform_index(
                                           rng, static_cast<std::size_t>(config.life_max - config.life_min + 1)));
    q.open_date = start + std::chrono::days(static_cast<int>(uniform_index(rng, 60)));
    q.close_date = q.open_date + std::chrono::days(life - 1);
    q.text = std::string("Will ") + topics[uniform_index(rng, topics.size())] + "?";
    q.answer = answer;
    truth.answers.emplace_back(q.id, answer);

    for (int day = 0; day < life; ++day) {
      const double sigma = config.sigma(day);
      for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i] = i;
      }
      // Partial Fisher-Yates: the first forecasts_per_day slots are the draw.
      for (std::size_t i = 0; i < config.forecasts_per_day; ++i) {
        std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
      }
      std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(config.forecasts_per_day));
      std::sort(chosen.begin(), chosen.end());
      for (const std::size_t fn : chosen) {
        const bool reliable = truth.forecaster_reliable[fn];
        const double magnitude = std::abs(standard_normal(rng) * sigma);
        const bool target = reliable ? answer : !answer;
        const double distance = std::min(magnitude, 1.0);
        Forecast f;
        f.question_id = q.id;
        f.forecaster_id = truth.forecaster_ids[fn];
        f.date = q.open_date + std::chrono::days(day);
        f.prediction = target ? 1.0 - distance : distance;
        std::string text = templates[uniform_index(rng, templates.size())];
        text.replace(text.find('#'), 1, reliable ? config.reliable_marker : config.unreliable_marker);
        f.justification = std::move(text);
        truth.forecasts.push_back({out.dataset.forecasts.size(), day, sigma, magnitude, reliable});
        out.dataset.forecasts.push_back(std::move(f));
      }
    }
    out.dataset.questions.push_back(std::move(q));
  }
  return out;
}

inline nlohmann::ordered_json to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["n_questions"] = c.n_questions;
  j["life_min"] = c.life_min;
  j["life_max"] = c.life_max;
  j["n_forecasters"] = c.n_forecasters;
  j["forecasts_per_day"] = c.forecasts_per_day;
  j["base_noise"] = c.base_noise;
  j["noise_decay"] = c.noise_decay;
  j["min_noise"] = kMinNoise;
  j["reliable_fraction"] = c.reliable_fraction;
  j["reliable_marker"] = c.reliable_marker;
  j["unreliable_marker"] = c.unreliable_marker;
  j["seed"] = c.seed;
  j["start_date"] = c.start_date;
  return j;
}

/// Manifest lines: one config record, then forecasters, questions and
/// forecasts with their latent variables.
inline void write_manifest(const SynthConfig& config, const SynthData& data, std::ostream& out) {
  auto cfg = to_json(config);
  cfg["type"] = "config";
  out << cfg.dump() << '\n';
  for (std::size_t f = 0; f < data.truth.forecaster_ids.size(); ++f) {
    nlohmann::ordered_json j;
    j["type"] = "forecaster";
    j["id"] = data.truth.forecaster_ids[f];
    j["reliable"] = static_cast<bool>(data.truth.forecaster_reliable[f]);
    out << j.dump() << '\n';
  }
  for (std::size_t i = 0; i < data.dataset.questions.size(); ++i) {
    const auto& q = data.dataset.questions[i];
    nlohmann::ordered_json j;
    j["type"] = "question";
    j["id"] = q.id;
    j["answer"] = data.truth.answers[i].second ? "yes" : "no";
    j["life"] = q.life();
    out << j.dump() << '\n';
  }
  for (const auto& lf : data.truth.forecasts) {
    const auto& f = data.dataset.forecasts[lf.ordinal];
    nlohmann::ordered_json j;
    j["type"] = "forecast";
    j["ordinal"] = lf.ordinal;
    j["question_id"] = f.question_id;
    j["forecaster_id"] = f.forecaster_id;
    j["day"] = lf.day;
    j["sigma"] = lf.sigma;
    j["magnitude"] = lf.magnitude;
    j["reliable"] = lf.reliable;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Attainable accuracy

struct BayesBounds {
  double acc_prediction_only = 0.0;  // macro over questions, fraction
  double acc_with_markers = 0.0;
  double micro_prediction_only = 0.0;
  double micro_with_markers = 0.0;
  std::array<double, 4> prediction_only_by_quartile{};  // micro, fraction
  std::array<double, 4> with_markers_by_quartile{};
  double day0_prediction_only = 0.0;  // micro over day-0 calls
  double day0_with_markers = 0.0;
  std::size_t samples = 0;            // scored (question, day) units
};

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

/// Log-likelihoods of a prediction given the forecaster targets 1 or 0,
/// up to a shared constant. Predictions of exactly 0 or 1 only arise from
/// clamped overshoot, i.e. from the opposite target.
inline std::pair<double, double> target_loglik(double prediction, double sigma) {
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  if (prediction <= 0.0) return {0.0, ninf};
  if (prediction >= 1.0) return {ninf, 0.0};
  const double s2 = 2.0 * sigma * sigma;
  const double to_one = 1.0 - prediction;
  return {-to_one * to_one / s2, -prediction * prediction / s2};
}

}  // namespace detail

/// Bayes-optimal calling accuracy under the generator's own distributions,
/// for an aggregator that sees only predictions and for one that also sees
/// each forecaster's marker. Estimated by Monte Carlo over freshly generated
/// datasets (same config, derived seeds) until `min_samples` calls are made.
inline BayesBounds bayes_bounds(const SynthConfig& config, const WindowMode& mode = WindowMode::active(10),
                                std::size_t min_samples = 100000) {
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  const double log_r = config.reliable_fraction > 0.0 ? std::log(config.reliable_fraction) : ninf;
  const double log_u = config.reliable_fraction < 1.0 ? std::log(1.0 - config.reliable_fraction) : ninf;

  BayesBounds b;
  double macro_p = 0.0, macro_m = 0.0;
  std::size_t n_questions = 0, correct_p = 0, correct_m = 0;
  std::array<std::size_t, 4> q_total{}, q_p{}, q_m{};
  std::size_t d0_total = 0, d0_p = 0, d0_m = 0;

  for (std::uint64_t round = 0; b.samples < min_samples; ++round) {
    SynthConfig cfg = config;
    cfg.seed = config.seed ^ (0x9e3779b97f4a7c15ULL * (round + 1));
    const SynthData data = generate(cfg);
    const ForecastIndex index(data.dataset);
    for (std::size_t qi = 0; qi < data.dataset.questions.size(); ++qi) {
      const auto& q = data.dataset.questions[qi];
      const bool answer = *q.answer;
      std::size_t scored = 0, ok_p = 0, ok_m = 0;
      for (int day = 0; day < q.life(); ++day) {
        const auto window = select_window(index, q.id, day, mode);
        if (window.empty()) {
          continue;
        }
        double odds_p = 0.0, odds_m = 0.0;
        for (const auto& e : window.entries) {
          const auto& latent = data.truth.forecasts[e.ordinal];
          const auto [l1, l0] = detail::target_loglik(e.forecast->prediction, latent.sigma);
          // answer yes: reliable targets 1, unreliable targets 0
          odds_p += detail::log_add(log_r + l1, log_u + l0) - detail::log_add(log_r + l0, log_u + l1);
          odds_m += latent.reliable ? l1 - l0 : l0 - l1;
        }
        const bool hit_p = (odds_p > 0.0) == answer;
        const bool hit_m = (odds_m > 0.0) == answer;
        ++scored;
        ok_p += hit_p;
        ok_m += hit_m;
        const int quartile = life_quartile(day, q.life());
        ++q_total[quartile];
        q_p[quartile] += hit_p;
        q_m[quartile] += hit_m;
        if (day == 0) {
          ++d0_total;
          d0_p += hit_p;
          d0_m += hit_m;
        }
      }
      if (scored > 0) {
        macro_p += static_cast<double>(ok_p) / static_cast<double>(scored);
        macro_m += static_cast<double>(ok_m) / static_cast<double>(scored);
        ++n_questions;
      }
      b.samples += scored;
      correct_p += ok_p;
      correct_m += ok_m;
    }
  }

  auto frac = [](std::size_t num, std::size_t den) {
    return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
  };
  b.acc_prediction_only = n_questions ? macro_p / static_cast<double>(n_questions) : 0.0;
  b.acc_with_markers = n_questions ? macro_m / static_cast<double>(n_questions) : 0.0;
  b.micro_prediction_only = frac(correct_p, b.samples);
  b.micro_with_markers = frac(correct_m, b.samples);
  for (int k = 0; k < 4; ++k) {
    b.prediction_only_by_quartile[k] = frac(q_p[k], q_total[k]);
    b.with_markers_by_quartile[k] = frac(q_m[k], q_total[k]);
  }
  b.day0_prediction_only = frac(d0_p, d0_total);
  b.day0_with_markers = frac(d0_m, d0_total);
  return b;
}

}  // namespace crowdcall

#endif  // CROWDCALL_SYNTH_HPP
