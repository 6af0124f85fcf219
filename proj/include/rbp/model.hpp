#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "rbp/autograd.hpp"
#include "rbp/optim.hpp"

namespace rbp {

enum class LayerKind { conv, linear, relu, max_pool, avg_pool, global_avg_pool, flatten, residual };

std::string_view to_string(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string id;
  std::size_t in = 0;   // conv: input channels, linear: input features
  std::size_t out = 0;  // conv: filters, linear: output features
  std::size_t kernel = 1, stride = 1, padding = 0;  // conv and pooling
  bool bias = false;
  // Residual block: out = relu(body(x) + shortcut(x)). An empty shortcut is
  // the identity path.
  std::vector<LayerSpec> body;
  std::vector<LayerSpec> shortcut;

  bool has_params() const { return kind == LayerKind::conv || kind == LayerKind::linear; }
  bool operator==(const LayerSpec&) const = default;
};

// Ordered layer list with the input geometry it expects.
struct Architecture {
  std::string name;
  std::size_t channels = 1, height = 1, width = 1;
  std::size_t classes = 0;
  std::vector<LayerSpec> layers;

  bool operator==(const Architecture&) const = default;
};

// Layer constructors.
LayerSpec conv_layer(std::string id, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                     std::size_t padding = 0, bool bias = false);
LayerSpec linear_layer(std::string id, std::size_t in, std::size_t out, bool bias = false);
LayerSpec relu_layer();
LayerSpec max_pool_layer(std::size_t kernel, std::size_t stride, std::size_t padding = 0);
LayerSpec avg_pool_layer(std::size_t kernel, std::size_t stride, std::size_t padding = 0);
LayerSpec global_avg_pool_layer();
LayerSpec flatten_layer();
LayerSpec residual_block(std::string id, std::vector<LayerSpec> body, std::vector<LayerSpec> shortcut = {});

LayerSpec& find_layer(Architecture& arch, const std::string& id);
const LayerSpec& find_layer(const Architecture& arch, const std::string& id);

// conv/linear ids in topological order (residual body before its shortcut).
std::vector<std::string> param_layer_ids(const Architecture& arch);

struct LayerShape {
  std::size_t in_c, in_h, in_w;
  std::size_t out_c, out_h, out_w;
};

// Propagates the input geometry through every layer, validating channel
// wiring and residual sums. Keys are conv/linear ids.
std::map<std::string, LayerShape> trace_shapes(const Architecture& arch);
std::map<std::string, LayerShape> trace_shapes(const Architecture& arch, std::size_t height, std::size_t width);

std::size_t parameter_count(const Architecture& arch);

// Where a channel gate sits: on the input of `consumer`, whose channels are
// produced by the filters of `producer` (reached through activation, pooling
// and flatten only).
struct GateSite {
  std::string consumer;
  std::string producer;
  std::size_t channels = 0;
  std::size_t group = 1;  // features per channel when the consumer is linear
};

// Throws ShapeError when the consumer's input does not come from a single
// prunable layer (network input, residual-block output, shortcut path).
GateSite locate_gate_site(const Architecture& arch, const std::string& consumer);
std::vector<std::string> gateable_layers(const Architecture& arch);

nlohmann::json to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

// ---- parameterized model ---------------------------------------------------------

using GateBindings = std::map<std::string, Var>;                // consumer id -> (C) scale
using FixedGates = std::map<std::string, std::vector<double>>;  // consumer id -> constant scale

template <typename T>
class Model {
 public:
  Model() = default;
  Model(Architecture arch, ParamStore<T> params);

  // He-normal weights from a counter-based stream, zero biases.
  static Model initialize(Architecture arch, std::uint64_t seed);

  const Architecture& architecture() const { return arch_; }
  Architecture& architecture() { return arch_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  std::map<std::string, Var> bind(Tape<T>& tape, bool requires_grad) const;
  Var forward(Tape<T>& tape, const std::map<std::string, Var>& params, Var input,
              const GateBindings& gates = {}) const;

  // Inference without gradients; processes the batch in chunks.
  Tensor<T> logits(const Tensor<T>& input, const FixedGates& gates = {}) const;

  template <typename U>
  Model<U> cast() const {
    ParamStore<U> p;
    for (const auto& [name, param] : params_) p.set(name, param.value.template cast<U>());
    return Model<U>(arch_, std::move(p));
  }

  // Checks that every conv/linear has correctly shaped parameters.
  void validate() const;

 private:
  Var run_sequence(Tape<T>& tape, const std::map<std::string, Var>& params, Var x, const std::vector<LayerSpec>& seq,
                   const GateBindings& gates) const;

  Architecture arch_;
  ParamStore<T> params_;
};

std::string weight_name(const std::string& layer_id);
std::string bias_name(const std::string& layer_id);

}  // namespace rbp
