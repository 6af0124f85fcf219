#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rbp/tensor.hpp"

namespace rbp {

// A trainable tensor together with its optimizer slots. The moments are
// allocated lazily on the first step and dropped by reset_state().
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> first_moment;   // Adam m, or SGD velocity
  Tensor<T> second_moment;  // Adam v
  std::int64_t steps = 0;

  void reset_state() {
    first_moment = Tensor<T>();
    second_moment = Tensor<T>();
    steps = 0;
  }
};

// Parameters keyed by "<layer>.weight" / "<layer>.bias". std::map keeps the
// iteration order fixed, which the optimizers and checkpoints rely on.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Parameter<T>>;

  Parameter<T>& set(const std::string& name, Tensor<T> value) {
    Parameter<T>& p = params_[name];
    p.value = std::move(value);
    p.reset_state();
    return p;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Parameter<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ShapeError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ShapeError("unknown parameter '" + name + "'");
    return it->second;
  }

  void erase(const std::string& name) { params_.erase(name); }
  void reset_state() {
    for (auto& [_, p] : params_) p.reset_state();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  Map params_;
};

template <typename T>
using GradStore = std::map<std::string, Tensor<T>>;

struct AdamSettings {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct SgdSettings {
  double lr = 1e-4;
  double momentum = 0.9;
};

// Descent steps: value <- value - lr * update(grad).
template <typename T>
void adam_step(Parameter<T>& param, const Tensor<T>& grad, const AdamSettings& s);
template <typename T>
void sgd_step(Parameter<T>& param, const Tensor<T>& grad, const SgdSettings& s);

// Steps every parameter that has an entry in `grads`; parameters without a
// gradient are left untouched.
template <typename T>
void adam_step(ParamStore<T>& params, const GradStore<T>& grads, const AdamSettings& s);
template <typename T>
void sgd_step(ParamStore<T>& params, const GradStore<T>& grads, const SgdSettings& s);

}  // namespace rbp
