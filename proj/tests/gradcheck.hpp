#ifndef CROWDCALL_TESTS_GRADCHECK_HPP
#define CROWDCALL_TESTS_GRADCHECK_HPP

// Random toy batches and a central-difference gradient check, shared by the
// unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <deque>

#include "crowdcall/crowdcall.hpp"

namespace gradcheck {

using namespace crowdcall;

using ParamsD = ModelParams<double>;

/// Owns the text vectors a batch of instances points into.
struct Batch {
  std::deque<SparseVector> vectors;
  std::vector<Instance> instances;

  const SparseVector* add(SparseVector v) {
    vectors.push_back(std::move(v));
    return &vectors.back();
  }
};

inline SparseVector random_vector(Rng& rng, std::size_t dim) {
  std::vector<float> dense(dim);
  for (auto& x : dense) x = uniform01(rng) < 0.6 ? static_cast<float>(standard_normal(rng)) : 0.0f;
  dense[0] = 1.0f;  // never all zero
  return SparseVector::from_dense(dense);
}

inline Batch random_batch(Rng& rng, std::size_t dim, std::size_t n_instances, std::size_t max_steps) {
  Batch b;
  for (std::size_t k = 0; k < n_instances; ++k) {
    Instance inst;
    inst.label = k % 2 == 0 ? 1.0f : 0.0f;
    inst.input.question = b.add(random_vector(rng, dim));
    const std::size_t steps = 1 + uniform_index(rng, max_steps);
    for (std::size_t t = 0; t < steps; ++t) {
      inst.input.steps.push_back({uniform01(rng) < 0.5 ? 1.0f : 0.0f, static_cast<float>(uniform01(rng)),
                                  b.add(random_vector(rng, dim))});
    }
    b.instances.push_back(std::move(inst));
  }
  return b;
}

inline Architecture arch(std::size_t dim, std::size_t proj, std::size_t hidden, const char* ablation) {
  Architecture a;
  a.input_dim = dim;
  a.proj_dim = proj;
  a.hidden_dim = hidden;
  a.ablation = RepresentationAblation::parse(ablation);
  return a;
}

/// Biases get random values too so that the check also covers them.
inline ParamsD random_params(const Architecture& a, Rng& rng, double scale = 0.5) {
  ParamsD p = ParamsD::zeros(a);
  for (auto* t : p.tensors()) {
    for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] = scale * standard_normal(rng);
  }
  return p;
}

inline std::vector<const Instance*> pointers(const Batch& b) {
  std::vector<const Instance*> out;
  for (const auto& i : b.instances) out.push_back(&i);
  return out;
}

inline double mean_loss(const ParamsD& p, const std::vector<const Instance*>& batch) {
  double total = 0;
  for (const auto* inst : batch) total += bce_loss(predict(p, inst->input), static_cast<double>(inst->label));
  return total / static_cast<double>(batch.size());
}

/// Largest |numeric - analytic| / max(|numeric|, |analytic|, 1e-6) over
/// every parameter of a random model with text dimension 8 and hidden size 4.
inline double max_relative_gradient_error(const char* ablation, std::uint64_t seed, double step = 1e-4) {
  Rng rng(seed);
  const Architecture a = arch(8, 5, 4, ablation);
  ParamsD params = random_params(a, rng);
  const Batch batch = random_batch(rng, 8, 3, 4);
  const auto ptrs = pointers(batch);
  ParamsD grads = ParamsD::zeros(a);
  batch_gradients<double>(params, ptrs, grads);

  double worst = 0;
  auto p_tensors = params.tensors();
  const auto g_tensors = grads.tensors();
  for (std::size_t k = 0; k < ParamsD::kTensorCount; ++k) {
    for (Eigen::Index i = 0; i < p_tensors[k]->size(); ++i) {
      double& w = p_tensors[k]->data()[i];
      const double saved = w;
      w = saved + step;
      const double up = mean_loss(params, ptrs);
      w = saved - step;
      const double down = mean_loss(params, ptrs);
      w = saved;
      const double numeric = (up - down) / (2 * step);
      const double analytic = g_tensors[k]->data()[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}


}  // namespace gradcheck

#endif  // CROWDCALL_TESTS_GRADCHECK_HPP
