#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rbp/tensor.hpp"

namespace rbp {

// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Linear record of the forward computation. backward() replays it in reverse,
// accumulating gradients into every node that requires them.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Var leaf(Tensor<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
    return Var{nodes_.size() - 1};
  }

  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Records an op output. The node requires grad iff any input does; the
  // backward closure is dropped otherwise.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    if (!value.all_finite()) throw NumericError("non-finite value produced in forward pass");
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() output w.r.t. v; zeros if v did not
  // influence it.
  const Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  // Accumulation target used by backward closures.
  Tensor<T>& grad_accumulator(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Var output) {
    if (value(output).size() != 1) {
      throw ShapeError("backward() needs a scalar output, got " + to_string(value(output).shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor<T>();
    grad_accumulator(output)[0] = T{1};
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      // Closures accumulate into their inputs only, never into their own node.
      Tensor<T> g = std::move(n.grad);
      if (!g.all_finite()) throw NumericError("non-finite gradient in backward pass");
      n.backward(*this, g);
      n.grad = std::move(g);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

struct Conv2dGeometry {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

struct Pool2dGeometry {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t padding = 0;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel) {
    throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

// ---- raw kernels (no tape) -------------------------------------------------

// input (N, C, H, W), weight (O, C, kH, kW), optional bias (O).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                         const Conv2dGeometry& geom);

// ---- differentiable ops ------------------------------------------------------

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, std::optional<Var> bias, const Conv2dGeometry& geom);

// input (N, F_in), weight (F_out, F_in), optional bias (F_out).
template <typename T>
Var linear(Tape<T>& tape, Var input, Var weight, std::optional<Var> bias);

// output[n, c, ...] = input[n, c, ...] * scale[c]. The trailing extents are
// flattened, so a (N, C*G) matrix is scaled in contiguous groups of G.
template <typename T>
Var channel_scale(Tape<T>& tape, Var input, Var scale);

template <typename T>
Var relu(Tape<T>& tape, Var input);

template <typename T>
Var max_pool2d(Tape<T>& tape, Var input, const Pool2dGeometry& geom);

// Zero padding is excluded from the average.
template <typename T>
Var avg_pool2d(Tape<T>& tape, Var input, const Pool2dGeometry& geom);

// (N, C, H, W) -> (N, C, 1, 1)
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var input);

// (N, ...) -> (N, prod(...))
template <typename T>
Var flatten(Tape<T>& tape, Var input);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var input, T factor);

// Elementwise product of equally shaped tensors.
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

// Sum of all elements, shape (1).
template <typename T>
Var sum(Tape<T>& tape, Var input);

// Mean negative log-likelihood of integer labels under softmax(logits).
// Returns shape (1).
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels);

}  // namespace rbp
