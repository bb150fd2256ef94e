#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "support.hpp"

using namespace crowdcall;
using namespace testing_support;

namespace {

using ParamsD = ModelParams<double>;
using namespace gradcheck;

// Scalar reference for the forward pass, written from the equations with
// explicit loops and no shared code.
double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> relu_projection(const ParamsD::Matrix& w, const ParamsD::Matrix& b, const SparseVector& x) {
  const auto dense = x.to_dense();
  std::vector<double> out(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    double s = b(r, 0);
    for (Eigen::Index c = 0; c < w.cols(); ++c) s += w(r, c) * dense[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = std::max(0.0, s);
  }
  return out;
}

double reference_forward(const ParamsD& p, const SequenceInput& input) {
  const std::size_t h = p.arch.hidden_dim;
  std::vector<double> q;
  if (p.arch.ablation.use_question) q = relu_projection(p.question_weight, p.question_bias, *input.question);
  std::vector<double> hid(h, 0.0), cell(h, 0.0);
  for (const auto& step : input.steps) {
    std::vector<double> j;
    if (p.arch.ablation.use_justification) {
      j = relu_projection(p.justification_weight, p.justification_bias, *step.justification);
    }
    std::vector<double> z(4 * h);
    for (std::size_t r = 0; r < 4 * h; ++r) {
      const auto R = static_cast<Eigen::Index>(r);
      double s = p.cell_bias(R, 0) + p.cell_scalar_weight(R, 0) * step.flag + p.cell_scalar_weight(R, 1) * step.prediction;
      for (std::size_t c = 0; c < j.size(); ++c) s += p.cell_justification_weight(R, static_cast<Eigen::Index>(c)) * j[c];
      for (std::size_t c = 0; c < q.size(); ++c) s += p.cell_question_weight(R, static_cast<Eigen::Index>(c)) * q[c];
      for (std::size_t c = 0; c < h; ++c) s += p.cell_recurrent_weight(R, static_cast<Eigen::Index>(c)) * hid[c];
      z[r] = s;
    }
    for (std::size_t u = 0; u < h; ++u) {
      const double i = sig(z[u]), f = sig(z[h + u]), o = sig(z[2 * h + u]), g = std::tanh(z[3 * h + u]);
      cell[u] = f * cell[u] + i * g;
      hid[u] = o * std::tanh(cell[u]);
    }
  }
  double logit = p.out_bias(0, 0);
  for (std::size_t u = 0; u < h; ++u) logit += p.out_weight(0, static_cast<Eigen::Index>(u)) * hid[u];
  return sig(logit);
}

}  // namespace

TEST(Ablation, ParseAndShapes) {
  EXPECT_EQ(RepresentationAblation::parse("pq").name(), "pq");
  EXPECT_THROW(RepresentationAblation::parse("qj"), UsageError);
  EXPECT_EQ(arch(10, 3, 2, "p").cell_input_dim(), 2u);
  EXPECT_EQ(arch(10, 3, 2, "pj").cell_input_dim(), 5u);
  EXPECT_EQ(arch(10, 3, 2, "pqj").cell_input_dim(), 8u);

  const auto p = ParamsD::zeros(arch(10, 3, 2, "p"));
  EXPECT_EQ(p.question_weight.size(), 0);
  EXPECT_EQ(p.justification_weight.size(), 0);
  EXPECT_EQ(p.cell_scalar_weight.rows(), 8);
  EXPECT_EQ(p.parameter_count(), 8u * 2 + 8 * 2 + 8 + 2 + 1);
}

TEST(Forward, ZeroParametersGiveOneHalf) {
  Rng rng(1);
  const Batch b = random_batch(rng, 8, 4, 5);
  for (const char* ab : {"p", "pq", "pj", "pqj"}) {
    const ParamsD p = ParamsD::zeros(arch(8, 3, 2, ab));
    for (const auto& inst : b.instances) EXPECT_EQ(predict(p, inst.input), 0.5);
  }
}

TEST(Forward, MatchesScalarReference) {
  for (const char* ab : {"p", "pq", "pj", "pqj"}) {
    Rng rng(42);
    const Architecture a = arch(6, 3, 2, ab);
    const ParamsD p = random_params(a, rng, 0.8);
    const Batch b = random_batch(rng, 6, 6, 5);
    for (const auto& inst : b.instances) {
      EXPECT_NEAR(predict(p, inst.input), reference_forward(p, inst.input), 1e-12) << ab;
    }
  }
}

TEST(Forward, HiddenTwoByHand) {
  // One step, p ablation, hidden 2: every gate pre-activation is set directly
  // through the bias so the result can be written out.
  ParamsD p = ParamsD::zeros(arch(4, 1, 2, "p"));
  p.cell_bias << 0.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.5, -0.5;  // i i f f o o g g
  p.cell_scalar_weight(0, 1) = 1.0;                        // i0 += prediction
  p.out_weight << 1.5, -2.0;
  p.out_bias << 0.25;
  SequenceInput in;
  in.steps.push_back({0.0f, 0.5f, nullptr});
  const double i0 = sig(0.5), i1 = sig(1.0), o = 0.5;
  const double c0 = i0 * std::tanh(0.5), c1 = i1 * std::tanh(-0.5);
  const double expected = sig(0.25 + 1.5 * o * std::tanh(c0) - 2.0 * o * std::tanh(c1));
  EXPECT_NEAR(predict(p, in), expected, 1e-12);
}

TEST(Forward, ErrorsOnBadInput) {
  const ParamsD p = ParamsD::zeros(arch(8, 2, 2, "pqj"));
  SequenceInput empty;
  EXPECT_THROW(predict(p, empty), DataError);
  SparseVector wrong;
  wrong.dim = 256;
  SequenceInput in;
  in.question = &wrong;
  in.steps.push_back({1, 0.5f, &wrong});
  EXPECT_THROW(predict(p, in), DataError);
}

TEST(Loss, Values) {
  EXPECT_NEAR(bce_loss(0.5, 1.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_loss(1.0 - 1e-7, 1.0), 1e-7, 1e-9);
  EXPECT_NEAR(bce_loss(1.0, 1.0), 1e-7, 1e-9);  // clamped
  EXPECT_NEAR(bce_loss(0.9, 0.0), 2.302585, 1e-6);
  EXPECT_TRUE(std::isfinite(bce_loss(0.0, 1.0)));
}

TEST(Gradients, FiniteDifferenceAllAblations) {
  for (const char* ab : {"p", "pq", "pj", "pqj"}) {
    for (std::uint64_t seed : {3u, 17u}) {
      EXPECT_LE(max_relative_gradient_error(ab, seed), 1e-5) << ab << " seed " << seed;
    }
  }
}

TEST(Gradients, OutputBiasVanishesForBalancedConstantPrediction) {
  // With zero weights every probability is 0.5, so the bias gradient is the
  // mean of (0.5 - y), zero for balanced labels.
  Rng rng(5);
  Batch b = random_batch(rng, 8, 4, 3);
  const auto a = arch(8, 2, 3, "pqj");
  ParamsD p = ParamsD::zeros(a), g;
  batch_gradients<double>(p, pointers(b), g);
  EXPECT_NEAR(g.out_bias(0, 0), 0.0, 1e-15);
  b.instances.pop_back();  // 2 positives, 1 negative
  batch_gradients<double>(p, pointers(b), g);
  EXPECT_NEAR(g.out_bias(0, 0), (0.5 - 1.0 + 0.5 - 1.0 + 0.5) / 3.0, 1e-15);
}

TEST(Gradients, DuplicatingTheBatchChangesNothing) {
  Rng rng(8);
  const auto a = arch(8, 3, 2, "pqj");
  const ParamsD p = random_params(a, rng);
  const Batch b = random_batch(rng, 8, 3, 4);
  auto once = pointers(b);
  auto twice = once;
  twice.insert(twice.end(), once.begin(), once.end());
  ParamsD g1, g2;
  const double l1 = batch_gradients<double>(p, once, g1);
  const double l2 = batch_gradients<double>(p, twice, g2);
  EXPECT_NEAR(l1, l2, 1e-12);
  for (std::size_t k = 0; k < ParamsD::kTensorCount; ++k) {
    EXPECT_TRUE(g1.tensors()[k]->isApprox(*g2.tensors()[k], 1e-12) || g1.tensors()[k]->size() == 0);
  }
}

TEST(Gradients, EmptyBatchIsZero) {
  const auto a = arch(8, 3, 2, "pqj");
  Rng rng(1);
  const ParamsD p = random_params(a, rng);
  ParamsD g;
  EXPECT_EQ(batch_gradients<double>(p, std::vector<const Instance*>{}, g), 0.0);
  for (const auto* t : g.tensors()) EXPECT_EQ(t->squaredNorm(), 0.0);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  const auto a = arch(4, 2, 2, "p");
  Rng rng(2);
  ParamsD p = random_params(a, rng);
  const ParamsD before = p;
  ParamsD g = random_params(a, rng);
  AdamState<double> state(a);
  adam_step(p, g, state, AdamConfig{0.01});
  for (std::size_t k = 0; k < ParamsD::kTensorCount; ++k) {
    for (Eigen::Index i = 0; i < g.tensors()[k]->size(); ++i) {
      const double gi = g.tensors()[k]->data()[i];
      const double delta = p.tensors()[k]->data()[i] - before.tensors()[k]->data()[i];
      EXPECT_NEAR(delta, -0.01 * (gi > 0 ? 1 : -1), 1e-6);
    }
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  const auto a = arch(4, 2, 2, "pqj");
  Rng rng(2);
  ParamsD p = random_params(a, rng);
  const ParamsD before = p;
  AdamState<double> state(a);
  for (int i = 0; i < 3; ++i) adam_step(p, ParamsD::zeros(a), state, AdamConfig{});
  for (std::size_t k = 0; k < ParamsD::kTensorCount; ++k) EXPECT_EQ(*p.tensors()[k], *before.tensors()[k]);
}

TEST(Adam, RejectsNonFiniteGradient) {
  const auto a = arch(4, 2, 2, "pq");
  ParamsD p = ParamsD::zeros(a), g = ParamsD::zeros(a);
  g.cell_bias(3, 0) = std::nan("");
  AdamState<double> state(a);
  try {
    adam_step(p, g, state, AdamConfig{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("cell_bias"), std::string::npos);
  }
}

TEST(EarlyStoppingRule, StopsAfterPatienceEpochsWithoutImprovement) {
  EarlyStopping s(3);
  const double losses[] = {1.0, 0.9, 0.8, 0.7, 0.6, 0.65, 0.7, 0.75};
  int stopped_after = 0;
  for (double l : losses) {
    s.observe(l);
    if (s.should_stop()) {
      stopped_after = s.epochs();
      break;
    }
  }
  EXPECT_EQ(stopped_after, 8);
  EXPECT_EQ(s.best_epoch(), 5);
  EXPECT_DOUBLE_EQ(s.best_loss(), 0.6);
}

TEST(EarlyStoppingRule, EqualLossIsNotAnImprovement) {
  EarlyStopping s(1);
  EXPECT_TRUE(s.observe(0.5));
  EXPECT_FALSE(s.observe(0.5));
  EXPECT_TRUE(s.should_stop());
  EXPECT_THROW(EarlyStopping(0), UsageError);
}

TEST(Forward, OrderMatters) {
  Rng rng(9);
  const auto a = arch(8, 3, 3, "pqj");
  const ParamsD p = random_params(a, rng, 1.0);
  const Batch b = random_batch(rng, 8, 1, 1);
  SequenceInput in = b.instances[0].input;
  in.steps = {{1, 0.9f, in.steps[0].justification}, {0, 0.1f, in.steps[0].justification}};
  SequenceInput reversed = in;
  std::reverse(reversed.steps.begin(), reversed.steps.end());
  EXPECT_GT(std::abs(predict(p, in) - predict(p, reversed)), 1e-6);
}

namespace {

Dataset separable_data() {
  // Questions answer yes when forecasters say "rise", no when they say "fall";
  // predictions are uninformative.
  Dataset d;
  for (int k = 0; k < 24; ++k) {
    const bool yes = k % 2 == 0;
    const std::string id = "q" + std::to_string(k);
    d.questions.push_back(with_life(id, 4, yes));
    for (int day = 0; day < 4; ++day) {
      d.forecasts.push_back(on_day(id, "f" + std::to_string(day % 2), day, 0.5 + 0.01 * (day - 2),
                                   yes ? "prices rise" : "prices fall"));
    }
  }
  return d;
}

TrainConfig small_config(const char* ablation) {
  TrainConfig c;
  c.ablation = RepresentationAblation::parse(ablation);
  c.proj_dim = 4;
  c.hidden_dim = 4;
  c.dropout = 0.0;
  c.learning_rate = 0.05;
  c.batch_size = 8;
  c.max_epochs = 12;
  c.patience = 12;
  c.seed = 4;
  return c;
}

Split first_split(const Dataset& d) {
  Split s;
  for (std::size_t i = 0; i < d.questions.size(); ++i) (i % 4 == 3 ? s.validation : s.train).push_back(d.questions[i].id);
  return s;
}

}  // namespace

TEST(Training, LearnsTextSignalAndIsDeterministic) {
  const Dataset d = separable_data();
  EncoderConfig ec;
  ec.dim = 64;
  const TextEncoder enc(ec);
  const auto r1 = train(d, first_split(d), enc, small_config("pj"));
  const auto r2 = train(d, first_split(d), enc, small_config("pj"));
  ASSERT_FALSE(r1.log.empty());
  EXPECT_LT(r1.log.back().train_loss, r1.log.front().train_loss);
  EXPECT_EQ(r1.log.back().validation_accuracy, 100.0);
  EXPECT_EQ(encode_model(r1.model), encode_model(r2.model));

  // Without text the model cannot separate the classes.
  const auto p_only = train(d, first_split(d), enc, small_config("p"));
  EXPECT_LT(p_only.log.back().validation_accuracy, 100.0);
  EXPECT_EQ(p_only.model.params.arch.cell_input_dim(), 2u);
}

TEST(Training, BestEpochParametersAreReturned) {
  const Dataset d = separable_data();
  EncoderConfig ec;
  ec.dim = 64;
  const TextEncoder enc(ec);
  const auto r = train(d, first_split(d), enc, small_config("pqj"));
  int best = 0;
  double best_loss = 1e300;
  for (const auto& e : r.log) {
    if (e.validation_loss < best_loss) best_loss = e.validation_loss, best = e.epoch;
  }
  EXPECT_EQ(r.model.best_epoch, best);

  const ForecastIndex index(d);
  const EncodedDataset encoded(d, enc);
  const auto split = first_split(d);
  const auto val = build_instances(index, encoded, split.validation, r.model.config.mode);
  EXPECT_NEAR(evaluate_instances(r.model.params, std::span<const Instance>(val)).loss, best_loss, 1e-9);
}

TEST(Training, RejectsBadConfigAndEmptySets) {
  const Dataset d = separable_data();
  const TextEncoder enc(EncoderConfig{EncoderKind::hashing, 16});
  TrainConfig c = small_config("p");
  c.dropout = 1.0;
  EXPECT_THROW(train(d, first_split(d), enc, c), UsageError);
  Split s = first_split(d);
  s.validation.clear();
  EXPECT_THROW(train(d, s, enc, small_config("p")), DataError);
}

TEST(ModelFile, RoundTripWithManifest) {
  const Dataset d = separable_data();
  const TextEncoder enc(EncoderConfig{EncoderKind::hashing, 32});
  TrainConfig c = small_config("pqj");
  c.max_epochs = 2;
  c.mode = WindowMode::active(3, SpanAnchor::previous_days);
  c.newest_first = true;
  const auto model = train(d, first_split(d), enc, c).model;

  TempDir dir("model");
  save_model(model, dir.path("m.bin"));
  const std::string bytes = read_file(dir.path("m.bin"));
  const std::string manifest = read_file(dir.path("m.bin.manifest"));
  EXPECT_NE(manifest.find("checksum fnv1a64 " + hex64(fnv1a64(bytes))), std::string::npos);
  EXPECT_NE(manifest.find("tensor cell_recurrent_weight 16 4"), std::string::npos);

  const TrainedModel back = load_model(dir.path("m.bin"));
  EXPECT_EQ(encode_model(back), bytes);
  EXPECT_EQ(back.config.mode.active_span, 3);
  EXPECT_EQ(back.config.mode.anchor, SpanAnchor::previous_days);
  EXPECT_TRUE(back.config.newest_first);
  EXPECT_EQ(back.encoder.dim, 32u);

  EXPECT_THROW(decode_model(bytes.substr(0, bytes.size() - 2)), DataError);
  EXPECT_THROW(decode_model("not a model"), DataError);
  EXPECT_THROW(load_model(dir.path("absent.bin")), DataError);
}

TEST(ModelAggregatorCalls, ScoreMatchesPredict) {
  const Dataset d = separable_data();
  const TextEncoder enc(EncoderConfig{EncoderKind::hashing, 32});
  TrainConfig c = small_config("pqj");
  c.max_epochs = 1;
  const auto model = train(d, first_split(d), enc, c).model;
  const EncodedDataset encoded(d, enc);
  const ForecastIndex index(d);
  const ModelAggregator agg(model, encoded);
  const auto window = select_window(index, "q1", 2, model.config.mode);
  const Call call = agg(*d.find_question("q1"), window);
  EXPECT_EQ(call.source, CallSource::model);
  EXPECT_DOUBLE_EQ(call.score, predict(model.params, make_sequence(window, encoded)));
  EXPECT_EQ(call.answer, call.score > 0.5);

  const EncodedDataset other(d, TextEncoder(EncoderConfig{EncoderKind::hashing, 16}));
  EXPECT_THROW(ModelAggregator(model, other), DataError);
}
