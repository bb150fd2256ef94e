#ifndef CROWDCALL_NEURAL_HPP
#define CROWDCALL_NEURAL_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "crowdcall/aggregate.hpp"
#include "crowdcall/encode.hpp"
#include "crowdcall/windowing.hpp"

namespace crowdcall {

/// Raised when training produces a non-finite gradient.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Which text representations accompany the prediction and flag.
struct RepresentationAblation {
  bool use_question = true;
  bool use_justification = true;

  /// "p", "pq", "pj" or "pqj".
  static RepresentationAblation parse(std::string_view name) {
    if (name == "p") return {false, false};
    if (name == "pq") return {true, false};
    if (name == "pj") return {false, true};
    if (name == "pqj") return {true, true};
    throw UsageError("unknown ablation '" + std::string(name) + "' (expected p, pq, pj or pqj)");
  }

  std::string name() const {
    return std::string("p") + (use_question ? "q" : "") + (use_justification ? "j" : "");
  }

  bool operator==(const RepresentationAblation&) const = default;
};

struct Architecture {
  std::size_t input_dim = 0;  // text vector dimension D
  std::size_t proj_dim = 256;
  std::size_t hidden_dim = 256;
  RepresentationAblation ablation;

  /// flag + prediction + enabled projections
  std::size_t cell_input_dim() const {
    return 2 + (ablation.use_justification ? proj_dim : 0) + (ablation.use_question ? proj_dim : 0);
  }
};

/// Every learned tensor. Biases are column vectors. Recurrent-cell rows are
/// laid out in gate blocks of `hidden_dim`: input, forget, output, candidate.
/// The cell's input weights are split by the part of the input they read.
/// Tensors of a disabled representation are empty.
template <class S>
struct ModelParams {
  using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  static constexpr std::size_t kTensorCount = 11;

  Architecture arch;
  Matrix question_weight;           // P x D
  Matrix question_bias;             // P x 1
  Matrix justification_weight;      // P x D
  Matrix justification_bias;        // P x 1
  Matrix cell_scalar_weight;        // 4H x 2 (flag, prediction)
  Matrix cell_justification_weight; // 4H x P
  Matrix cell_question_weight;      // 4H x P
  Matrix cell_recurrent_weight;     // 4H x H
  Matrix cell_bias;                 // 4H x 1
  Matrix out_weight;                // 1 x H
  Matrix out_bias;                  // 1 x 1

  static constexpr std::array<const char*, kTensorCount> names() {
    return {"question_weight",       "question_bias",        "justification_weight",
            "justification_bias",    "cell_scalar_weight",   "cell_justification_weight",
            "cell_question_weight",  "cell_recurrent_weight", "cell_bias",
            "out_weight",            "out_bias"};
  }

  std::array<Matrix*, kTensorCount> tensors() {
    return {&question_weight,       &question_bias,        &justification_weight,
            &justification_bias,    &cell_scalar_weight,   &cell_justification_weight,
            &cell_question_weight,  &cell_recurrent_weight, &cell_bias,
            &out_weight,            &out_bias};
  }

  std::array<const Matrix*, kTensorCount> tensors() const {
    return {&question_weight,       &question_bias,        &justification_weight,
            &justification_bias,    &cell_scalar_weight,   &cell_justification_weight,
            &cell_question_weight,  &cell_recurrent_weight, &cell_bias,
            &out_weight,            &out_bias};
  }

  static ModelParams zeros(const Architecture& arch) {
    if (arch.hidden_dim == 0 || arch.proj_dim == 0) {
      throw UsageError("hidden and projection sizes must be positive");
    }
    const auto d = static_cast<Eigen::Index>(arch.input_dim);
    const auto p = static_cast<Eigen::Index>(arch.proj_dim);
    const auto h = static_cast<Eigen::Index>(arch.hidden_dim);
    const bool uq = arch.ablation.use_question;
    const bool uj = arch.ablation.use_justification;
    ModelParams m;
    m.arch = arch;
    m.question_weight = Matrix::Zero(uq ? p : 0, uq ? d : 0);
    m.question_bias = Matrix::Zero(uq ? p : 0, uq ? 1 : 0);
    m.justification_weight = Matrix::Zero(uj ? p : 0, uj ? d : 0);
    m.justification_bias = Matrix::Zero(uj ? p : 0, uj ? 1 : 0);
    m.cell_scalar_weight = Matrix::Zero(4 * h, 2);
    m.cell_justification_weight = Matrix::Zero(uj ? 4 * h : 0, uj ? p : 0);
    m.cell_question_weight = Matrix::Zero(uq ? 4 * h : 0, uq ? p : 0);
    m.cell_recurrent_weight = Matrix::Zero(4 * h, h);
    m.cell_bias = Matrix::Zero(4 * h, 1);
    m.out_weight = Matrix::Zero(1, h);
    m.out_bias = Matrix::Zero(1, 1);
    return m;
  }

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)); forget-gate bias 1,
  /// all other biases 0. Tensors are filled in declaration order.
  static ModelParams initialized(const Architecture& arch, Rng& rng) {
    ModelParams m = zeros(arch);
    auto fill = [&](Matrix& w, double fan_in, double fan_out) {
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
          w(r, c) = static_cast<S>((2.0 * uniform01(rng) - 1.0) * bound);
        }
      }
    };
    const auto d = static_cast<double>(arch.input_dim);
    const auto p = static_cast<double>(arch.proj_dim);
    const auto h = static_cast<double>(arch.hidden_dim);
    const auto in = static_cast<double>(arch.cell_input_dim());
    fill(m.question_weight, d, p);
    fill(m.justification_weight, d, p);
    fill(m.cell_scalar_weight, in, h);
    fill(m.cell_justification_weight, in, h);
    fill(m.cell_question_weight, in, h);
    fill(m.cell_recurrent_weight, h, h);
    fill(m.out_weight, h, 1.0);
    m.cell_bias.block(arch.hidden_dim, 0, arch.hidden_dim, 1).setOnes();
    return m;
  }

  template <class T>
  ModelParams<T> cast() const {
    ModelParams<T> out;
    out.arch = arch;
    auto dst = out.tensors();
    const auto src = tensors();
    for (std::size_t i = 0; i < kTensorCount; ++i) {
      *dst[i] = src[i]->template cast<T>();
    }
    return out;
  }

  void set_zero() {
    for (auto* t : tensors()) {
      t->setZero();
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) {
      n += static_cast<std::size_t>(t->size());
    }
    return n;
  }
};

// ---------------------------------------------------------------------------
// Inputs

struct SequenceStep {
  float flag = 0.0f;  // 1 when submitted on the call day
  float prediction = 0.0f;
  const SparseVector* justification = nullptr;
};

struct SequenceInput {
  const SparseVector* question = nullptr;
  std::vector<SequenceStep> steps;
};

/// Window entries in window order, or reversed when `newest_first`.
inline SequenceInput make_sequence(const ForecastWindow& window, const EncodedDataset& encoded,
                                   bool newest_first = false) {
  SequenceInput input;
  input.question = &encoded.question(window.question_id);
  input.steps.reserve(window.size());
  for (const auto& e : window.entries) {
    input.steps.push_back({e.current ? 1.0f : 0.0f, static_cast<float>(e.forecast->prediction),
                           &encoded.forecasts.at(e.ordinal)});
  }
  if (newest_first) {
    std::reverse(input.steps.begin(), input.steps.end());
  }
  return input;
}

// ---------------------------------------------------------------------------
// Forward and backward passes

template <class S>
struct ForwardCache {
  using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  struct Step {
    Vector justification_pre;
    Vector justification_mask;
    Vector justification;
    Vector gates;  // activated i, f, o, g
    Vector cell;
    Vector hidden;
  };

  Vector question_pre;
  Vector question_mask;
  Vector question;
  Vector question_drive;  // cell_question_weight * question
  std::vector<Step> steps;
  S logit = 0;
  S probability = 0;
};

namespace detail {

template <class S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

template <class S>
void check_text_dim(const SparseVector* v, std::size_t expected, const char* what) {
  if (v == nullptr) {
    throw DataError(std::string("missing ") + what + " vector");
  }
  if (v->dim != expected) {
    throw DataError(std::string(what) + " vector has dimension " + std::to_string(v->dim) +
                    ", model expects " + std::to_string(expected));
  }
}

/// ReLU(W x + b) followed by inverted dropout when `rng` is set.
template <class S, class Vector, class Matrix>
void project(const Matrix& weight, const Matrix& bias, const SparseVector& x, double dropout, Rng* rng,
             Vector& pre, Vector& mask, Vector& out) {
  pre = bias.col(0);
  for (std::size_t k = 0; k < x.index.size(); ++k) {
    pre.noalias() += static_cast<S>(x.value[k]) * weight.col(x.index[k]);
  }
  mask.setOnes(pre.size());
  if (rng != nullptr && dropout > 0.0) {
    const S keep_scale = static_cast<S>(1.0 / (1.0 - dropout));
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask(i) = uniform01(*rng) < dropout ? S(0) : keep_scale;
    }
  }
  out = pre.cwiseMax(S(0)).cwiseProduct(mask);
}

/// Backpropagates d(out) through dropout, ReLU and the sparse projection.
template <class S, class Vector, class Matrix>
void project_backward(const SparseVector& x, const Vector& pre, const Vector& mask, const Vector& d_out,
                      Matrix& d_weight, Matrix& d_bias) {
  const Vector d_pre = ((pre.array() > S(0)).template cast<S>() * d_out.array() * mask.array()).matrix();
  d_bias.col(0) += d_pre;
  for (std::size_t k = 0; k < x.index.size(); ++k) {
    d_weight.col(x.index[k]).noalias() += static_cast<S>(x.value[k]) * d_pre;
  }
}

}  // namespace detail

/// Runs the network on one sequence. Dropout is applied only when `rng` is
/// non-null; masks are drawn for the question first, then per step.
template <class S>
ForwardCache<S> forward(const ModelParams<S>& params, const SequenceInput& input, double dropout = 0.0,
                        Rng* rng = nullptr) {
  using Vector = typename ForwardCache<S>::Vector;
  const Architecture& arch = params.arch;
  const auto h = static_cast<Eigen::Index>(arch.hidden_dim);
  if (input.steps.empty()) {
    throw DataError("cannot run the model on an empty window");
  }

  ForwardCache<S> cache;
  if (arch.ablation.use_question) {
    detail::check_text_dim<S>(input.question, arch.input_dim, "question");
    detail::project<S>(params.question_weight, params.question_bias, *input.question, dropout, rng,
                       cache.question_pre, cache.question_mask, cache.question);
    cache.question_drive.noalias() = params.cell_question_weight * cache.question;
  }

  cache.steps.resize(input.steps.size());
  Vector z(4 * h);
  for (std::size_t t = 0; t < input.steps.size(); ++t) {
    const auto& in = input.steps[t];
    auto& st = cache.steps[t];
    z = params.cell_bias.col(0);
    z.noalias() += static_cast<S>(in.flag) * params.cell_scalar_weight.col(0);
    z.noalias() += static_cast<S>(in.prediction) * params.cell_scalar_weight.col(1);
    if (arch.ablation.use_question) {
      z += cache.question_drive;
    }
    if (arch.ablation.use_justification) {
      detail::check_text_dim<S>(in.justification, arch.input_dim, "justification");
      detail::project<S>(params.justification_weight, params.justification_bias, *in.justification, dropout,
                         rng, st.justification_pre, st.justification_mask, st.justification);
      z.noalias() += params.cell_justification_weight * st.justification;
    }
    if (t > 0) {
      z.noalias() += params.cell_recurrent_weight * cache.steps[t - 1].hidden;
    }

    st.gates.resize(4 * h);
    st.gates.head(3 * h) = z.head(3 * h).unaryExpr([](S v) { return detail::sigmoid(v); });
    st.gates.tail(h) = z.tail(h).array().tanh();
    const auto i = st.gates.segment(0, h);
    const auto f = st.gates.segment(h, h);
    const auto o = st.gates.segment(2 * h, h);
    const auto g = st.gates.segment(3 * h, h);
    if (t > 0) {
      st.cell = f.cwiseProduct(cache.steps[t - 1].cell) + i.cwiseProduct(g);
    } else {
      st.cell = i.cwiseProduct(g);
    }
    st.hidden = o.cwiseProduct(st.cell.array().tanh().matrix());
  }

  cache.logit = (params.out_weight * cache.steps.back().hidden)(0, 0) + params.out_bias(0, 0);
  cache.probability = detail::sigmoid(cache.logit);
  return cache;
}

/// Probability of "yes" with dropout disabled.
template <class S>
S predict(const ModelParams<S>& params, const SequenceInput& input) {
  return forward(params, input).probability;
}

inline constexpr double kLossEpsilon = 1e-7;

/// Binary cross-entropy with the probability clamped to [eps, 1 - eps].
template <class S>
S bce_loss(S probability, S label) {
  const S eps = static_cast<S>(kLossEpsilon);
  const S p = std::clamp(probability, eps, S(1) - eps);
  return -(label * std::log(p) + (S(1) - label) * std::log(S(1) - p));
}

/// Adds `weight` times the gradient of the loss for one sequence to `grads`.
/// The loss is taken on the sigmoid's logit, so d(loss)/d(logit) = p - y.
template <class S>
void accumulate_gradients(const ModelParams<S>& params, const SequenceInput& input, const ForwardCache<S>& cache,
                          S label, S weight, ModelParams<S>& grads) {
  using Vector = typename ForwardCache<S>::Vector;
  const Architecture& arch = params.arch;
  const auto h = static_cast<Eigen::Index>(arch.hidden_dim);
  const std::size_t n = cache.steps.size();

  const S d_logit = (cache.probability - label) * weight;
  grads.out_weight.noalias() += d_logit * cache.steps.back().hidden.transpose();
  grads.out_bias(0, 0) += d_logit;

  Vector dh = params.out_weight.row(0).transpose() * d_logit;
  Vector dc = Vector::Zero(h);
  Vector dz(4 * h);
  Vector dz_sum = Vector::Zero(arch.ablation.use_question ? 4 * h : 0);

  for (std::size_t t = n; t-- > 0;) {
    const auto& st = cache.steps[t];
    const auto& in = input.steps[t];
    const auto i = st.gates.segment(0, h).array();
    const auto f = st.gates.segment(h, h).array();
    const auto o = st.gates.segment(2 * h, h).array();
    const auto g = st.gates.segment(3 * h, h).array();
    const Eigen::Array<S, Eigen::Dynamic, 1> tc = st.cell.array().tanh();

    dc.array() += dh.array() * o * (S(1) - tc.square());
    dz.segment(0, h) = (dc.array() * g * i * (S(1) - i)).matrix();
    if (t > 0) {
      dz.segment(h, h) = (dc.array() * cache.steps[t - 1].cell.array() * f * (S(1) - f)).matrix();
    } else {
      dz.segment(h, h).setZero();
    }
    dz.segment(2 * h, h) = (dh.array() * tc * o * (S(1) - o)).matrix();
    dz.segment(3 * h, h) = (dc.array() * i * (S(1) - g.square())).matrix();

    grads.cell_bias.col(0) += dz;
    grads.cell_scalar_weight.col(0).noalias() += static_cast<S>(in.flag) * dz;
    grads.cell_scalar_weight.col(1).noalias() += static_cast<S>(in.prediction) * dz;
    if (arch.ablation.use_justification) {
      grads.cell_justification_weight.noalias() += dz * st.justification.transpose();
      const Vector dj = params.cell_justification_weight.transpose() * dz;
      detail::project_backward<S>(*in.justification, st.justification_pre, st.justification_mask, dj,
                                  grads.justification_weight, grads.justification_bias);
    }
    if (arch.ablation.use_question) {
      dz_sum += dz;
    }
    if (t > 0) {
      grads.cell_recurrent_weight.noalias() += dz * cache.steps[t - 1].hidden.transpose();
      dh.noalias() = params.cell_recurrent_weight.transpose() * dz;
      dc.array() *= f;
    }
  }

  if (arch.ablation.use_question) {
    grads.cell_question_weight.noalias() += dz_sum * cache.question.transpose();
    const Vector dq = params.cell_question_weight.transpose() * dz_sum;
    detail::project_backward<S>(*input.question, cache.question_pre, cache.question_mask, dq,
                                grads.question_weight, grads.question_bias);
  }
}

/// A labelled (question, day) sequence.
struct Instance {
  std::string question_id;
  int day = 0;
  float label = 0.0f;
  SequenceInput input;
};

/// Mean loss over the batch; `grads` is overwritten with its gradient.
/// Dropout masks are drawn once per forward pass and reused by backward.
template <class S>
S batch_gradients(const ModelParams<S>& params, std::span<const Instance* const> batch, ModelParams<S>& grads,
                  double dropout = 0.0, Rng* rng = nullptr) {
  if (grads.parameter_count() != params.parameter_count()) {
    grads = ModelParams<S>::zeros(params.arch);
  } else {
    grads.set_zero();
  }
  if (batch.empty()) {
    return S(0);
  }
  const S weight = S(1) / static_cast<S>(batch.size());
  S total = 0;
  for (const Instance* instance : batch) {
    const auto cache = forward(params, instance->input, dropout, rng);
    const S label = static_cast<S>(instance->label);
    total += bce_loss(cache.probability, label);
    accumulate_gradients(params, instance->input, cache, label, weight, grads);
  }
  return total * weight;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class S>
struct AdamState {
  ModelParams<S> first_moment;
  ModelParams<S> second_moment;
  std::uint64_t step = 0;

  explicit AdamState(const Architecture& arch)
      : first_moment(ModelParams<S>::zeros(arch)), second_moment(ModelParams<S>::zeros(arch)) {}
};

template <class S>
void adam_step(ModelParams<S>& params, const ModelParams<S>& grads, AdamState<S>& state, const AdamConfig& config) {
  const auto names = ModelParams<S>::names();
  const auto g_tensors = grads.tensors();
  for (std::size_t k = 0; k < ModelParams<S>::kTensorCount; ++k) {
    const auto& g = *g_tensors[k];
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      if (!std::isfinite(static_cast<double>(g.data()[i]))) {
        std::ostringstream msg;
        msg << "non-finite gradient in " << names[k] << "[" << i << "] at optimizer step " << state.step + 1;
        throw NumericError(msg.str());
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const S b1 = static_cast<S>(config.beta1);
  const S b2 = static_cast<S>(config.beta2);
  const S correction1 = static_cast<S>(1.0 - std::pow(config.beta1, t));
  const S correction2 = static_cast<S>(1.0 - std::pow(config.beta2, t));
  const S lr = static_cast<S>(config.learning_rate);
  const S eps = static_cast<S>(config.epsilon);
  const S tiny = std::numeric_limits<S>::min();

  auto p_tensors = params.tensors();
  auto m_tensors = state.first_moment.tensors();
  auto v_tensors = state.second_moment.tensors();
  for (std::size_t k = 0; k < ModelParams<S>::kTensorCount; ++k) {
    S* p = p_tensors[k]->data();
    S* m = m_tensors[k]->data();
    S* v = v_tensors[k]->data();
    const S* g = g_tensors[k]->data();
    const Eigen::Index size = p_tensors[k]->size();
    for (Eigen::Index i = 0; i < size; ++i) {
      m[i] = b1 * m[i] + (S(1) - b1) * g[i];
      v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
      // Moments of rarely touched hash buckets decay into subnormals, which
      // are very slow on x86; flush them.
      if (std::abs(m[i]) < tiny) m[i] = S(0);
      if (v[i] < tiny) v[i] = S(0);
      const S m_hat = m[i] / correction1;
      const S v_hat = v[i] / correction2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training

/// Tracks validation loss; stops after `patience` epochs without a strict
/// improvement on the best value seen.
class EarlyStopping {
public:
  explicit EarlyStopping(int patience) : patience_(patience) {
    if (patience < 1) {
      throw UsageError("patience must be at least 1");
    }
  }

  /// Records one epoch; returns true when it is the new best.
  bool observe(double loss) {
    ++epoch_;
    if (epoch_ == 1 || loss < best_loss_) {
      best_loss_ = loss;
      best_epoch_ = epoch_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  int epochs() const { return epoch_; }

private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int stale_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  int patience = 3;
  double dropout = 0.5;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  RepresentationAblation ablation;
  WindowMode mode;
  std::size_t proj_dim = 256;
  std::size_t hidden_dim = 256;
  bool newest_first = false;

  void check() const {
    if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("dropout must be in [0, 1)");
    if (patience < 1) throw UsageError("patience must be at least 1");
    if (batch_size < 1) throw UsageError("batch size must be at least 1");
    if (max_epochs < 1) throw UsageError("max epochs must be at least 1");
  }
};

/// Parameters plus everything needed to rebuild inputs for them.
struct TrainedModel {
  EncoderConfig encoder;
  TrainConfig config;
  ModelParams<float> params;
  int best_epoch = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double validation_accuracy = 0.0;  // pooled over validation instances, percent
  bool improved = false;
};

struct TrainResult {
  TrainedModel model;
  std::vector<EpochLog> log;
};

/// One instance per (question, day) with a non-empty window.
inline std::vector<Instance> build_instances(const ForecastIndex& index, const EncodedDataset& encoded,
                                             std::span<const std::string> question_ids, const WindowMode& mode,
                                             bool newest_first = false) {
  std::vector<Instance> out;
  for (const auto& id : question_ids) {
    const Question& q = index.question(id);
    if (!q.answer) {
      throw DataError("question '" + id + "' is unresolved");
    }
    for (int day = 0; day < q.life(); ++day) {
      const ForecastWindow window = select_window(index, id, day, mode);
      if (window.empty()) {
        continue;
      }
      out.push_back({id, day, *q.answer ? 1.0f : 0.0f, make_sequence(window, encoded, newest_first)});
    }
  }
  return out;
}

struct LossAndAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

template <class S>
LossAndAccuracy evaluate_instances(const ModelParams<S>& params, std::span<const Instance> instances) {
  LossAndAccuracy out;
  if (instances.empty()) {
    return out;
  }
  std::size_t correct = 0;
  for (const auto& instance : instances) {
    const S p = predict(params, instance.input);
    out.loss += static_cast<double>(bce_loss(p, static_cast<S>(instance.label)));
    correct += ((p > S(0.5)) == (instance.label > 0.5f)) ? 1 : 0;
  }
  out.loss /= static_cast<double>(instances.size());
  out.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(instances.size());
  return out;
}

/// Mini-batch Adam over shuffled training instances with early stopping on
/// validation loss; returns the best-validation parameters. Initialization,
/// shuffling and dropout all draw from one generator seeded by config.seed.
inline TrainResult train(const Dataset& dataset, const Split& split, const TextEncoder& encoder,
                         const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  config.check();
  const ForecastIndex index(dataset);
  const EncodedDataset encoded(dataset, encoder);
  const auto train_set = build_instances(index, encoded, split.train, config.mode, config.newest_first);
  const auto validation_set = build_instances(index, encoded, split.validation, config.mode, config.newest_first);
  if (train_set.empty()) {
    throw DataError("no trainable instances: every training day has an empty window");
  }
  if (validation_set.empty()) {
    throw DataError("no validation instances: every validation day has an empty window");
  }

  Architecture arch;
  arch.input_dim = encoder.dim();
  arch.proj_dim = config.proj_dim;
  arch.hidden_dim = config.hidden_dim;
  arch.ablation = config.ablation;

  Rng rng(config.seed);
  auto params = ModelParams<float>::initialized(arch, rng);
  auto best = params;
  auto grads = ModelParams<float>::zeros(arch);
  AdamState<float> adam(arch);
  const AdamConfig adam_config{config.learning_rate};
  EarlyStopping stopping(config.patience);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }

  TrainResult result;
  std::vector<const Instance*> batch;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(order, rng);
    double train_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&train_set[order[i]]);
      }
      const float loss = batch_gradients<float>(params, batch, grads, config.dropout, &rng);
      train_loss += static_cast<double>(loss) * static_cast<double>(batch.size());
      adam_step(params, grads, adam, adam_config);
    }

    const auto validation = evaluate_instances(params, std::span<const Instance>(validation_set));
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = train_loss / static_cast<double>(train_set.size());
    entry.validation_loss = validation.loss;
    entry.validation_accuracy = validation.accuracy;
    entry.improved = stopping.observe(validation.loss);
    if (entry.improved) {
      best = params;
    }
    result.log.push_back(entry);
    if (on_epoch) {
      on_epoch(entry);
    }
    if (stopping.should_stop()) {
      break;
    }
  }

  result.model.encoder = encoder.config();
  result.model.config = config;
  result.model.params = std::move(best);
  result.model.best_epoch = stopping.best_epoch();
  return result;
}

// ---------------------------------------------------------------------------
// Calling with a trained model

/// Calls questions with a frozen model. Thread-safe for concurrent calls.
class ModelAggregator {
public:
  ModelAggregator(const TrainedModel& model, const EncodedDataset& encoded) : model_(&model), encoded_(&encoded) {
    if (encoded.dim != model.params.arch.input_dim) {
      throw DataError("encoder dimension " + std::to_string(encoded.dim) + " does not match model input " +
                      std::to_string(model.params.arch.input_dim));
    }
  }

  Call operator()(const Question& question, const ForecastWindow& window) const {
    const auto input = make_sequence(window, *encoded_, model_->config.newest_first);
    Call call;
    call.question_id = question.id;
    call.day = window.day;
    call.score = static_cast<double>(predict(model_->params, input));
    call.answer = call.score > 0.5;
    call.source = CallSource::model;
    return call;
  }

private:
  const TrainedModel* model_;
  const EncodedDataset* encoded_;
};

// ---------------------------------------------------------------------------
// Model files
//
// Binary layout, little-endian:
//   "FCMODEL1" | u32 version | u32 config_len | config text (key=value lines)
//   | u32 tensor_count | tensor_count x (u16 name_len | name | u32 rows | u32 cols
//   | rows*cols f32 in row-major order)
// The manifest beside it lists tensor names and shapes and the FNV-1a 64
// checksum of the binary file.

inline constexpr char kModelMagic[8] = {'F', 'C', 'M', 'O', 'D', 'E', 'L', '1'};
inline constexpr std::uint32_t kModelVersion = 1;

inline const char* to_string(WindowKind kind) { return kind == WindowKind::daily ? "daily" : "active"; }

inline const char* to_string(SpanAnchor anchor) {
  return anchor == SpanAnchor::including_call_day ? "including-call-day" : "previous-days";
}

namespace detail {

inline std::string format_real(double value) {
  std::ostringstream out;
  out.precision(17);
  out << value;
  return out.str();
}

}  // namespace detail

inline std::string model_config_text(const TrainedModel& model) {
  const auto& a = model.params.arch;
  const auto& c = model.config;
  const auto& e = model.encoder;
  std::ostringstream out;
  out << "input_dim=" << a.input_dim << '\n'
      << "proj_dim=" << a.proj_dim << '\n'
      << "hidden_dim=" << a.hidden_dim << '\n'
      << "ablation=" << a.ablation.name() << '\n'
      << "encoder=" << (e.kind == EncoderKind::hashing ? "hashing" : "external") << '\n'
      << "encoder_dim=" << e.dim << '\n'
      << "normalize=" << (e.normalize ? 1 : 0) << '\n'
      << "hash_seed=" << e.hash_seed << '\n'
      << "mode=" << to_string(c.mode.kind) << '\n'
      << "active_span=" << c.mode.active_span << '\n'
      << "span_anchor=" << to_string(c.mode.anchor) << '\n'
      << "newest_first=" << (c.newest_first ? 1 : 0) << '\n'
      << "seed=" << c.seed << '\n'
      << "learning_rate=" << detail::format_real(c.learning_rate) << '\n'
      << "batch_size=" << c.batch_size << '\n'
      << "patience=" << c.patience << '\n'
      << "dropout=" << detail::format_real(c.dropout) << '\n'
      << "max_epochs=" << c.max_epochs << '\n'
      << "best_epoch=" << model.best_epoch << '\n';
  return out.str();
}

inline std::string encode_model(const TrainedModel& model) {
  std::string out(kModelMagic, sizeof kModelMagic);
  detail::put_le<std::uint32_t>(out, kModelVersion);
  const std::string config = model_config_text(model);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(config.size()));
  out += config;
  const auto names = ModelParams<float>::names();
  const auto tensors = model.params.tensors();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const std::string_view name = names[k];
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    const auto& t = *tensors[k];
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        detail::put_le<float>(out, t(r, c));
      }
    }
  }
  return out;
}

inline std::string model_manifest(const TrainedModel& model, std::string_view encoded_bytes) {
  std::ostringstream out;
  out << "format FCMODEL1 version " << kModelVersion << '\n';
  const auto names = ModelParams<float>::names();
  const auto tensors = model.params.tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    out << "tensor " << names[k] << ' ' << tensors[k]->rows() << ' ' << tensors[k]->cols() << '\n';
  }
  out << "checksum fnv1a64 " << hex64(fnv1a64(encoded_bytes)) << '\n';
  return out.str();
}

/// Writes `path` and `path`.manifest.
inline void save_model(const TrainedModel& model, const std::string& path) {
  const std::string bytes = encode_model(model);
  write_file(path, bytes);
  write_file(path + ".manifest", model_manifest(model, bytes));
}

inline TrainedModel decode_model(std::string_view bytes, const std::string& what = "model file") {
  if (bytes.size() < sizeof kModelMagic ||
      bytes.substr(0, sizeof kModelMagic) != std::string_view(kModelMagic, sizeof kModelMagic)) {
    throw DataError(what + ": not a model file");
  }
  detail::ByteReader reader(bytes.substr(sizeof kModelMagic), what);
  const auto version = reader.get<std::uint32_t>();
  if (version != kModelVersion) {
    throw DataError(what + ": unsupported version " + std::to_string(version));
  }
  const auto config_len = reader.get<std::uint32_t>();
  std::map<std::string, std::string> kv;
  {
    std::istringstream in{std::string(reader.take(config_len))};
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) {
        kv[line.substr(0, eq)] = line.substr(eq + 1);
      }
    }
  }
  auto get = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) {
      throw DataError(what + ": missing config key '" + key + "'");
    }
    return it->second;
  };

  TrainedModel model;
  try {
    Architecture arch;
    arch.input_dim = std::stoull(get("input_dim"));
    arch.proj_dim = std::stoull(get("proj_dim"));
    arch.hidden_dim = std::stoull(get("hidden_dim"));
    arch.ablation = RepresentationAblation::parse(get("ablation"));
    model.encoder.kind = get("encoder") == "external" ? EncoderKind::external : EncoderKind::hashing;
    model.encoder.dim = std::stoull(get("encoder_dim"));
    model.encoder.normalize = get("normalize") == "1";
    model.encoder.hash_seed = std::stoull(get("hash_seed"));
    auto& c = model.config;
    c.ablation = arch.ablation;
    c.proj_dim = arch.proj_dim;
    c.hidden_dim = arch.hidden_dim;
    c.mode.kind = get("mode") == "daily" ? WindowKind::daily : WindowKind::active;
    c.mode.active_span = std::stoi(get("active_span"));
    c.mode.anchor = get("span_anchor") == "previous-days" ? SpanAnchor::previous_days : SpanAnchor::including_call_day;
    c.newest_first = get("newest_first") == "1";
    c.seed = std::stoull(get("seed"));
    c.learning_rate = std::stod(get("learning_rate"));
    c.batch_size = std::stoull(get("batch_size"));
    c.patience = std::stoi(get("patience"));
    c.dropout = std::stod(get("dropout"));
    c.max_epochs = std::stoi(get("max_epochs"));
    model.best_epoch = std::stoi(get("best_epoch"));
    model.params = ModelParams<float>::zeros(arch);
  } catch (const std::logic_error& e) {
    throw DataError(what + ": bad config value: " + e.what());
  }

  const auto names = ModelParams<float>::names();
  auto tensors = model.params.tensors();
  const auto count = reader.get<std::uint32_t>();
  if (count != tensors.size()) {
    throw DataError(what + ": expected " + std::to_string(tensors.size()) + " tensors, found " +
                    std::to_string(count));
  }
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto len = reader.get<std::uint16_t>();
    const auto name = reader.take(len);
    if (name != names[k]) {
      throw DataError(what + ": expected tensor '" + names[k] + "', found '" + std::string(name) + "'");
    }
    const auto rows = reader.get<std::uint32_t>();
    const auto cols = reader.get<std::uint32_t>();
    auto& t = *tensors[k];
    if (rows != t.rows() || cols != t.cols()) {
      throw DataError(what + ": tensor '" + names[k] + "' has shape " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", config implies " + std::to_string(t.rows()) + "x" +
                      std::to_string(t.cols()));
    }
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        t(r, c) = reader.get<float>();
      }
    }
  }
  if (!reader.done()) {
    throw DataError(what + ": trailing bytes");
  }
  return model;
}

inline TrainedModel load_model(const std::string& path) { return decode_model(read_file(path), path); }

}  // namespace crowdcall

#endif  // CROWDCALL_NEURAL_HPP
