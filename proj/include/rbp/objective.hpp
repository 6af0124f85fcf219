#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rbp/gate.hpp"
#include "rbp/model.hpp"

namespace rbp {

struct ObjectiveOptions {
  std::size_t dataset_size = 0;  // |D|
  std::uint64_t epoch = 0;       // noise key
  std::uint64_t batch = 0;       // noise key
  // Monte-Carlo samples of the gates averaged into L_D. Training uses one.
  std::size_t noise_samples = 1;
  // Several active gates at once (residual two-phase schedule only).
  bool allow_multiple_gates = false;
};

// L = L_D - kl with L_D = |D|/|B| sum_B log P(y | x, theta). Gradients are
// d L (ascent direction); callers that minimize must negate them.
template <typename T>
struct BatchObjective {
  double data_term = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double accuracy = 0.0;  // under the sampled gates
  GradStore<T> weight_grads;
  std::map<std::string, Tensor<double>> rate_grads;  // active gates only
};

// Frozen gates enter the forward pass at their expectation, folded gates not
// at all, active gates through a reparameterized sample.
template <typename T>
BatchObjective<T> evaluate_batch(const Model<T>& model, const std::vector<GateState>& gates, const Tensor<T>& inputs,
                                 std::span<const int> labels, const ObjectiveOptions& options,
                                 const NoiseStream& noise);

// Plain supervised step used for pretraining and finetuning.
template <typename T>
struct SupervisedBatch {
  double loss = 0.0;  // mean negative log-likelihood
  double accuracy = 0.0;
  GradStore<T> grads;  // d loss (descent direction)
};

template <typename T>
SupervisedBatch<T> supervised_batch(const Model<T>& model, const Tensor<T>& inputs, std::span<const int> labels);

// Fraction of rows whose arg-max matches the label.
template <typename T>
double accuracy(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace rbp
