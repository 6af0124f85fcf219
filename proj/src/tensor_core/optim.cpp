#include "rbp/optim.hpp"

#include <cmath>

namespace rbp {
namespace {

template <typename T>
void check_grad(const Parameter<T>& param, const Tensor<T>& grad) {
  if (grad.shape() != param.value.shape()) {
    throw ShapeError("gradient shape " + to_string(grad.shape()) + " does not match parameter " +
                     to_string(param.value.shape()));
  }
}

template <typename T>
void ensure_slot(Tensor<T>& slot, const Shape& shape) {
  if (slot.empty()) slot = Tensor<T>(shape);
  if (slot.shape() != shape) {
    throw ShapeError("optimizer state " + to_string(slot.shape()) + " does not match parameter " + to_string(shape));
  }
}

}  // namespace

template <typename T>
void adam_step(Parameter<T>& param, const Tensor<T>& grad, const AdamSettings& s) {
  check_grad(param, grad);
  ensure_slot(param.first_moment, param.value.shape());
  ensure_slot(param.second_moment, param.value.shape());
  ++param.steps;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(param.steps));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(param.steps));
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
  const T step = static_cast<T>(s.lr / bc1), inv_bc2 = static_cast<T>(1.0 / std::sqrt(bc2)), eps = static_cast<T>(s.eps);
  T* m = param.first_moment.raw();
  T* v = param.second_moment.raw();
  T* w = param.value.raw();
  const T* g = grad.raw();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    m[i] = b1 * m[i] + (T{1} - b1) * g[i];
    v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
    w[i] -= step * m[i] / (std::sqrt(v[i]) * inv_bc2 + eps);
  }
}

template <typename T>
void sgd_step(Parameter<T>& param, const Tensor<T>& grad, const SgdSettings& s) {
  check_grad(param, grad);
  const T lr = static_cast<T>(s.lr);
  if (s.momentum == 0.0) {
    for (std::size_t i = 0; i < grad.size(); ++i) param.value[i] -= lr * grad[i];
    ++param.steps;
    return;
  }
  ensure_slot(param.first_moment, param.value.shape());
  const T mu = static_cast<T>(s.momentum);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    T& v = param.first_moment[i];
    v = mu * v + grad[i];
    param.value[i] -= lr * v;
  }
  ++param.steps;
}

template <typename T>
void adam_step(ParamStore<T>& params, const GradStore<T>& grads, const AdamSettings& s) {
  for (auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it != grads.end()) adam_step(p, it->second, s);
  }
}

template <typename T>
void sgd_step(ParamStore<T>& params, const GradStore<T>& grads, const SgdSettings& s) {
  for (auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it != grads.end()) sgd_step(p, it->second, s);
  }
}

template void adam_step<float>(Parameter<float>&, const Tensor<float>&, const AdamSettings&);
template void adam_step<double>(Parameter<double>&, const Tensor<double>&, const AdamSettings&);
template void sgd_step<float>(Parameter<float>&, const Tensor<float>&, const SgdSettings&);
template void sgd_step<double>(Parameter<double>&, const Tensor<double>&, const SgdSettings&);
template void adam_step<float>(ParamStore<float>&, const GradStore<float>&, const AdamSettings&);
template void adam_step<double>(ParamStore<double>&, const GradStore<double>&, const AdamSettings&);
template void sgd_step<float>(ParamStore<float>&, const GradStore<float>&, const SgdSettings&);
template void sgd_step<double>(ParamStore<double>&, const GradStore<double>&, const SgdSettings&);

}  // namespace rbp
