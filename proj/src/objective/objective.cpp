#include "rbp/objective.hpp"

#include <algorithm>

namespace rbp {

template <typename T>
double accuracy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("accuracy: logits " + to_string(logits.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.raw() + i * k;
    const auto best = static_cast<int>(std::max_element(row, row + k) - row);
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

template <typename T>
BatchObjective<T> evaluate_batch(const Model<T>& model, const std::vector<GateState>& gates, const Tensor<T>& inputs,
                                 std::span<const int> labels, const ObjectiveOptions& options,
                                 const NoiseStream& noise) {
  if (options.dataset_size == 0) throw ValidationError("evaluate_batch: dataset size must be positive");
  if (options.noise_samples == 0) throw ValidationError("evaluate_batch: need at least one noise sample");
  if (inputs.empty() || labels.empty()) throw ValidationError("evaluate_batch: empty batch");
  const std::size_t active = std::count_if(gates.begin(), gates.end(),
                                           [](const GateState& g) { return g.status == GateStatus::active; });
  if (active == 0) throw StateError("evaluate_batch: no active gate");
  if (active > 1 && !options.allow_multiple_gates) {
    throw StateError("evaluate_batch: " + std::to_string(active) +
                     " active gates; only the residual two-phase schedule trains several at once");
  }

  const double factor = static_cast<double>(options.dataset_size) / static_cast<double>(labels.size());
  const auto samples = static_cast<double>(options.noise_samples);
  BatchObjective<T> out;
  std::string active_ids;
  for (const GateState& g : gates) {
    if (g.status != GateStatus::active) continue;
    out.kl += kl_term(g);
    out.rate_grads.emplace(g.layer_id, Tensor<double>({g.channels()}));
    active_ids += (active_ids.empty() ? "" : ",") + g.layer_id;
  }

  try {
    for (std::size_t s = 0; s < options.noise_samples; ++s) {
      Tape<T> tape;
      const auto params = model.bind(tape, true);
      GateBindings bound;
      std::map<std::string, Var> rate_vars;
      Var kl_total{};
      bool have_kl = false;
      for (const GateState& g : gates) {
        if (g.status == GateStatus::folded) continue;
        if (g.status == GateStatus::frozen) {
          const auto e = expected_gate(g);
          bound.emplace(g.layer_id, tape.constant(Tensor<T>({e.size()}, std::vector<T>(e.begin(), e.end()))));
          continue;
        }
        const Var r = tape.leaf(g.rates.value.template cast<T>(), true);
        rate_vars.emplace(g.layer_id, r);
        const auto z = noise.normals(g.layer_id, options.epoch, options.batch * options.noise_samples + s,
                                     g.channels());
        bound.emplace(g.layer_id, gate_sample(tape, r, z));
        // Each sample carries 1/S of the KL so the summed gradient is exact.
        const Var kl = rbp::scale(tape, kl_divergence(tape, r, g.prior_variance), static_cast<T>(1.0 / samples));
        kl_total = have_kl ? add(tape, kl_total, kl) : kl;
        have_kl = true;
      }
      const Var logits = model.forward(tape, params, tape.constant(inputs), bound);
      const Var nll = softmax_cross_entropy(tape, logits, labels);
      const double mean_nll = static_cast<double>(tape.value(nll)[0]);
      out.data_term += -factor * static_cast<double>(labels.size()) * mean_nll / samples;
      out.accuracy += accuracy(tape.value(logits), labels) / samples;

      // -L for this sample: |D| * mean NLL / S + KL / S.
      const Var neg = add(tape, rbp::scale(tape, nll, static_cast<T>(options.dataset_size / samples)), kl_total);
      tape.backward(neg);
      for (const auto& [name, v] : params) {
        Tensor<T> g = tape.grad(v);
        for (auto& x : g.data()) x = -x;
        auto [it, inserted] = out.weight_grads.try_emplace(name, std::move(g));
        if (!inserted)
          for (std::size_t i = 0; i < it->second.size(); ++i) it->second[i] += g[i];
      }
      for (const auto& [id, v] : rate_vars) {
        const Tensor<T>& g = tape.grad(v);
        Tensor<double>& acc = out.rate_grads.at(id);
        for (std::size_t c = 0; c < g.size(); ++c) acc[c] -= static_cast<double>(g[c]);
      }
    }
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " (gate " + active_ids + ", epoch " + std::to_string(options.epoch) +
                       ", batch " + std::to_string(options.batch) + ")");
  }
  out.total = out.data_term - out.kl;
  return out;
}

template <typename T>
SupervisedBatch<T> supervised_batch(const Model<T>& model, const Tensor<T>& inputs, std::span<const int> labels) {
  Tape<T> tape;
  const auto params = model.bind(tape, true);
  const Var logits = model.forward(tape, params, tape.constant(inputs));
  const Var nll = softmax_cross_entropy(tape, logits, labels);
  SupervisedBatch<T> out;
  out.loss = static_cast<double>(tape.value(nll)[0]);
  out.accuracy = accuracy(tape.value(logits), labels);
  tape.backward(nll);
  for (const auto& [name, v] : params) out.grads.emplace(name, tape.grad(v));
  return out;
}

#define RBP_INSTANTIATE_OBJECTIVE(T)                                                                              \
  template double accuracy<T>(const Tensor<T>&, std::span<const int>);                                            \
  template BatchObjective<T> evaluate_batch<T>(const Model<T>&, const std::vector<GateState>&, const Tensor<T>&,  \
                                               std::span<const int>, const ObjectiveOptions&, const NoiseStream&); \
  template SupervisedBatch<T> supervised_batch<T>(const Model<T>&, const Tensor<T>&, std::span<const int>);

RBP_INSTANTIATE_OBJECTIVE(float)
RBP_INSTANTIATE_OBJECTIVE(double)

}  // namespace rbp
