#include "rbp/model.hpp"

#include <cmath>
#include <functional>

#include "rbp/gate.hpp"

namespace rbp {

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::avg_pool: return "avg_pool";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::residual: return "residual";
  }
  return "unknown";
}

namespace {

LayerKind layer_kind_from_string(const std::string& s) {
  for (LayerKind k : {LayerKind::conv, LayerKind::linear, LayerKind::relu, LayerKind::max_pool, LayerKind::avg_pool,
                      LayerKind::global_avg_pool, LayerKind::flatten, LayerKind::residual}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown layer kind '" + s + "'");
}

const LayerSpec* find_in(const std::vector<LayerSpec>& seq, const std::string& id) {
  for (const LayerSpec& l : seq) {
    if (l.id == id && l.kind != LayerKind::residual) return &l;
    if (l.kind == LayerKind::residual) {
      if (l.id == id) return &l;
      if (const LayerSpec* hit = find_in(l.body, id)) return hit;
      if (const LayerSpec* hit = find_in(l.shortcut, id)) return hit;
    }
  }
  return nullptr;
}

void collect_param_ids(const std::vector<LayerSpec>& seq, std::vector<std::string>& out) {
  for (const LayerSpec& l : seq) {
    if (l.has_params()) out.push_back(l.id);
    if (l.kind == LayerKind::residual) {
      collect_param_ids(l.body, out);
      collect_param_ids(l.shortcut, out);
    }
  }
}

struct FlowState {
  std::size_t c, h, w;
  bool flat = false;
  std::size_t features() const { return c * h * w; }
};

FlowState trace_sequence(const std::vector<LayerSpec>& seq, FlowState s, std::map<std::string, LayerShape>& out) {
  for (const LayerSpec& l : seq) {
    switch (l.kind) {
      case LayerKind::conv: {
        if (s.flat) throw ShapeError("conv '" + l.id + "' follows a flatten");
        if (l.in != s.c) {
          throw ShapeError("conv '" + l.id + "' expects " + std::to_string(l.in) + " input channels, receives " +
                           std::to_string(s.c));
        }
        const std::size_t oh = conv_out_extent(s.h, l.kernel, l.stride, l.padding);
        const std::size_t ow = conv_out_extent(s.w, l.kernel, l.stride, l.padding);
        out[l.id] = {s.c, s.h, s.w, l.out, oh, ow};
        s = {l.out, oh, ow, false};
        break;
      }
      case LayerKind::linear: {
        if (!s.flat) throw ShapeError("linear '" + l.id + "' needs a flatten before it");
        if (l.in != s.features()) {
          throw ShapeError("linear '" + l.id + "' expects " + std::to_string(l.in) + " input features, receives " +
                           std::to_string(s.features()));
        }
        out[l.id] = {s.features(), 1, 1, l.out, 1, 1};
        s = {l.out, 1, 1, true};
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::max_pool:
      case LayerKind::avg_pool:
        if (s.flat) throw ShapeError("pooling follows a flatten");
        s.h = conv_out_extent(s.h, l.kernel, l.stride, l.padding);
        s.w = conv_out_extent(s.w, l.kernel, l.stride, l.padding);
        break;
      case LayerKind::global_avg_pool:
        if (s.flat) throw ShapeError("global pooling follows a flatten");
        s.h = s.w = 1;
        break;
      case LayerKind::flatten:
        s = {s.features(), 1, 1, true};
        break;
      case LayerKind::residual: {
        if (s.flat) throw ShapeError("residual block '" + l.id + "' follows a flatten");
        if (l.body.empty()) throw ShapeError("residual block '" + l.id + "' has an empty body");
        const FlowState main = trace_sequence(l.body, s, out);
        const FlowState skip = l.shortcut.empty() ? s : trace_sequence(l.shortcut, s, out);
        if (main.c != skip.c || main.h != skip.h || main.w != skip.w || main.flat || skip.flat) {
          throw ShapeError("residual block '" + l.id + "' sums (" + std::to_string(main.c) + "," +
                           std::to_string(main.h) + "," + std::to_string(main.w) + ") with (" +
                           std::to_string(skip.c) + "," + std::to_string(skip.h) + "," + std::to_string(skip.w) + ")");
        }
        s = main;
        break;
      }
    }
  }
  return s;
}

// Locates the sequence that directly contains `id`; shortcut paths are
// reported through `in_shortcut`.
const std::vector<LayerSpec>* containing_sequence(const std::vector<LayerSpec>& seq, const std::string& id,
                                                  std::size_t& index, bool& in_shortcut) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i].id == id && seq[i].has_params()) {
      index = i;
      return &seq;
    }
    if (seq[i].kind == LayerKind::residual) {
      if (auto* hit = containing_sequence(seq[i].body, id, index, in_shortcut)) return hit;
      if (auto* hit = containing_sequence(seq[i].shortcut, id, index, in_shortcut)) {
        in_shortcut = true;
        return hit;
      }
    }
  }
  return nullptr;
}

nlohmann::json layer_to_json(const LayerSpec& l) {
  nlohmann::json j{{"kind", std::string(to_string(l.kind))}};
  if (!l.id.empty()) j["id"] = l.id;
  switch (l.kind) {
    case LayerKind::conv:
      j["in"] = l.in;
      j["out"] = l.out;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      j["bias"] = l.bias;
      break;
    case LayerKind::linear:
      j["in"] = l.in;
      j["out"] = l.out;
      j["bias"] = l.bias;
      break;
    case LayerKind::max_pool:
    case LayerKind::avg_pool:
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::residual: {
      nlohmann::json body = nlohmann::json::array(), shortcut = nlohmann::json::array();
      for (const LayerSpec& b : l.body) body.push_back(layer_to_json(b));
      for (const LayerSpec& s : l.shortcut) shortcut.push_back(layer_to_json(s));
      j["body"] = body;
      j["shortcut"] = shortcut;
      break;
    }
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.id = j.value("id", std::string{});
  l.in = j.value("in", std::size_t{0});
  l.out = j.value("out", std::size_t{0});
  l.kernel = j.value("kernel", std::size_t{1});
  l.stride = j.value("stride", std::size_t{1});
  l.padding = j.value("padding", std::size_t{0});
  l.bias = j.value("bias", false);
  if (j.contains("body"))
    for (const auto& b : j.at("body")) l.body.push_back(layer_from_json(b));
  if (j.contains("shortcut"))
    for (const auto& s : j.at("shortcut")) l.shortcut.push_back(layer_from_json(s));
  if (l.has_params() && (l.id.empty() || l.in == 0 || l.out == 0)) {
    throw ValidationError("layer of kind " + std::string(to_string(l.kind)) + " needs id, in and out");
  }
  return l;
}

}  // namespace

LayerSpec conv_layer(std::string id, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                     std::size_t padding, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.id = std::move(id);
  l.in = in;
  l.out = out;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.bias = bias;
  return l;
}

LayerSpec linear_layer(std::string id, std::size_t in, std::size_t out, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::linear;
  l.id = std::move(id);
  l.in = in;
  l.out = out;
  l.bias = bias;
  return l;
}

LayerSpec relu_layer() { return LayerSpec{}; }

LayerSpec max_pool_layer(std::size_t kernel, std::size_t stride, std::size_t padding) {
  LayerSpec l;
  l.kind = LayerKind::max_pool;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec avg_pool_layer(std::size_t kernel, std::size_t stride, std::size_t padding) {
  LayerSpec l = max_pool_layer(kernel, stride, padding);
  l.kind = LayerKind::avg_pool;
  return l;
}

LayerSpec global_avg_pool_layer() {
  LayerSpec l;
  l.kind = LayerKind::global_avg_pool;
  return l;
}

LayerSpec flatten_layer() {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  return l;
}

LayerSpec residual_block(std::string id, std::vector<LayerSpec> body, std::vector<LayerSpec> shortcut) {
  LayerSpec l;
  l.kind = LayerKind::residual;
  l.id = std::move(id);
  l.body = std::move(body);
  l.shortcut = std::move(shortcut);
  return l;
}

const LayerSpec& find_layer(const Architecture& arch, const std::string& id) {
  if (const LayerSpec* l = find_in(arch.layers, id)) return *l;
  throw ShapeError("no layer named '" + id + "' in architecture '" + arch.name + "'");
}

LayerSpec& find_layer(Architecture& arch, const std::string& id) {
  return const_cast<LayerSpec&>(find_layer(static_cast<const Architecture&>(arch), id));
}

std::vector<std::string> param_layer_ids(const Architecture& arch) {
  std::vector<std::string> ids;
  collect_param_ids(arch.layers, ids);
  return ids;
}

std::map<std::string, LayerShape> trace_shapes(const Architecture& arch, std::size_t height, std::size_t width) {
  std::map<std::string, LayerShape> out;
  const FlowState end = trace_sequence(arch.layers, {arch.channels, height, width, false}, out);
  if (arch.classes != 0 && (!end.flat || end.c != arch.classes)) {
    throw ShapeError("architecture '" + arch.name + "' does not end in " + std::to_string(arch.classes) + " logits");
  }
  return out;
}

std::map<std::string, LayerShape> trace_shapes(const Architecture& arch) {
  return trace_shapes(arch, arch.height, arch.width);
}

std::size_t parameter_count(const Architecture& arch) {
  std::size_t total = 0;
  std::function<void(const std::vector<LayerSpec>&)> walk = [&](const std::vector<LayerSpec>& seq) {
    for (const LayerSpec& l : seq) {
      if (l.kind == LayerKind::conv) total += l.out * l.in * l.kernel * l.kernel + (l.bias ? l.out : 0);
      if (l.kind == LayerKind::linear) total += l.out * l.in + (l.bias ? l.out : 0);
      if (l.kind == LayerKind::residual) {
        walk(l.body);
        walk(l.shortcut);
      }
    }
  };
  walk(arch.layers);
  return total;
}

GateSite locate_gate_site(const Architecture& arch, const std::string& consumer) {
  std::size_t index = 0;
  bool in_shortcut = false;
  const std::vector<LayerSpec>* seq = containing_sequence(arch.layers, consumer, index, in_shortcut);
  if (!seq) throw ShapeError("no conv/linear layer named '" + consumer + "'");
  if (in_shortcut) throw ShapeError("cannot gate '" + consumer + "': it lies on a residual shortcut");
  for (std::size_t i = index; i-- > 0;) {
    const LayerSpec& l = (*seq)[i];
    if (l.kind == LayerKind::residual) {
      throw ShapeError("cannot gate '" + consumer + "': its input is the output of residual block '" + l.id + "'");
    }
    if (!l.has_params()) continue;
    const LayerSpec& c = (*seq)[index];
    GateSite site{consumer, l.id, l.out, 1};
    if (c.kind == LayerKind::conv && c.in != l.out) {
      throw ShapeError("gate site '" + consumer + "' channel count disagrees with producer '" + l.id + "'");
    }
    if (c.kind == LayerKind::linear) {
      if (c.in % l.out != 0) {
        throw ShapeError("gate site '" + consumer + "' features are not a multiple of producer '" + l.id + "' channels");
      }
      site.group = c.in / l.out;
    }
    return site;
  }
  throw ShapeError("cannot gate '" + consumer + "': its input is not produced by a prunable layer");
}

std::vector<std::string> gateable_layers(const Architecture& arch) {
  std::vector<std::string> out;
  for (const std::string& id : param_layer_ids(arch)) {
    try {
      locate_gate_site(arch, id);
      out.push_back(id);
    } catch (const ShapeError&) {
    }
  }
  return out;
}

nlohmann::json to_json(const Architecture& arch) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& l : arch.layers) layers.push_back(layer_to_json(l));
  return {{"name", arch.name},
          {"input", {arch.channels, arch.height, arch.width}},
          {"classes", arch.classes},
          {"layers", layers}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture a;
  a.name = j.value("name", std::string{"custom"});
  const auto& input = j.at("input");
  a.channels = input.at(0).get<std::size_t>();
  a.height = input.at(1).get<std::size_t>();
  a.width = input.at(2).get<std::size_t>();
  a.classes = j.at("classes").get<std::size_t>();
  for (const auto& l : j.at("layers")) a.layers.push_back(layer_from_json(l));
  trace_shapes(a);
  return a;
}

std::string weight_name(const std::string& layer_id) { return layer_id + ".weight"; }
std::string bias_name(const std::string& layer_id) { return layer_id + ".bias"; }

// ---- Model -------------------------------------------------------------------

template <typename T>
Model<T>::Model(Architecture arch, ParamStore<T> params) : arch_(std::move(arch)), params_(std::move(params)) {
  validate();
}

template <typename T>
Model<T> Model<T>::initialize(Architecture arch, std::uint64_t seed) {
  trace_shapes(arch);
  const NoiseStream stream(seed);
  ParamStore<T> params;
  std::function<void(const std::vector<LayerSpec>&)> walk = [&](const std::vector<LayerSpec>& seq) {
    for (const LayerSpec& l : seq) {
      if (l.kind == LayerKind::residual) {
        walk(l.body);
        walk(l.shortcut);
      }
      if (!l.has_params()) continue;
      Shape shape = l.kind == LayerKind::conv ? Shape{l.out, l.in, l.kernel, l.kernel} : Shape{l.out, l.in};
      const std::size_t fan_in = numel(shape) / l.out;
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      Tensor<T> w(shape);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(sd * stream.normal(l.id, 0, 0, i));
      params.set(weight_name(l.id), std::move(w));
      if (l.bias) params.set(bias_name(l.id), Tensor<T>({l.out}));
    }
  };
  walk(arch.layers);
  return Model(std::move(arch), std::move(params));
}

template <typename T>
void Model<T>::validate() const {
  trace_shapes(arch_);
  std::size_t expected = 0;
  for (const std::string& id : param_layer_ids(arch_)) {
    const LayerSpec& l = find_layer(arch_, id);
    const Shape shape = l.kind == LayerKind::conv ? Shape{l.out, l.in, l.kernel, l.kernel} : Shape{l.out, l.in};
    if (!params_.contains(weight_name(id)) || params_.at(weight_name(id)).value.shape() != shape) {
      throw ShapeError("parameter '" + weight_name(id) + "' missing or not shaped " + to_string(shape));
    }
    ++expected;
    if (l.bias) {
      if (!params_.contains(bias_name(id)) || params_.at(bias_name(id)).value.shape() != Shape{l.out}) {
        throw ShapeError("parameter '" + bias_name(id) + "' missing or not shaped (" + std::to_string(l.out) + ")");
      }
      ++expected;
    }
  }
  if (expected != params_.size()) throw ShapeError("parameter store holds entries not described by the architecture");
}

template <typename T>
std::map<std::string, Var> Model<T>::bind(Tape<T>& tape, bool requires_grad) const {
  std::map<std::string, Var> vars;
  for (const auto& [name, p] : params_) vars.emplace(name, tape.leaf(p.value, requires_grad));
  return vars;
}

template <typename T>
Var Model<T>::run_sequence(Tape<T>& tape, const std::map<std::string, Var>& params, Var x,
                           const std::vector<LayerSpec>& seq, const GateBindings& gates) const {
  for (const LayerSpec& l : seq) {
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::linear: {
        if (auto g = gates.find(l.id); g != gates.end()) x = channel_scale(tape, x, g->second);
        std::optional<Var> b;
        if (l.bias) b = params.at(bias_name(l.id));
        const Var w = params.at(weight_name(l.id));
        if (l.kind == LayerKind::conv) {
          x = conv2d(tape, x, w, b, Conv2dGeometry{l.stride, l.stride, l.padding, l.padding});
        } else {
          x = linear(tape, x, w, b);
        }
        break;
      }
      case LayerKind::relu: x = relu(tape, x); break;
      case LayerKind::max_pool: x = max_pool2d(tape, x, Pool2dGeometry{l.kernel, l.stride, l.padding}); break;
      case LayerKind::avg_pool: x = avg_pool2d(tape, x, Pool2dGeometry{l.kernel, l.stride, l.padding}); break;
      case LayerKind::global_avg_pool: x = global_avg_pool(tape, x); break;
      case LayerKind::flatten: x = flatten(tape, x); break;
      case LayerKind::residual: {
        const Var main = run_sequence(tape, params, x, l.body, gates);
        const Var skip = l.shortcut.empty() ? x : run_sequence(tape, params, x, l.shortcut, gates);
        x = relu(tape, add(tape, main, skip));
        break;
      }
    }
  }
  return x;
}

template <typename T>
Var Model<T>::forward(Tape<T>& tape, const std::map<std::string, Var>& params, Var input,
                      const GateBindings& gates) const {
  return run_sequence(tape, params, input, arch_.layers, gates);
}

template <typename T>
Tensor<T> Model<T>::logits(const Tensor<T>& input, const FixedGates& gates) const {
  constexpr std::size_t kChunk = 256;
  const std::size_t n = input.dim(0), per = input.size() / n;
  std::vector<T> out;
  std::size_t classes = 0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t m = std::min(kChunk, n - start);
    Shape shape = input.shape();
    shape[0] = m;
    Tensor<T> chunk(shape, std::vector<T>(input.raw() + start * per, input.raw() + (start + m) * per));
    Tape<T> tape;
    const auto vars = bind(tape, false);
    GateBindings bound;
    for (const auto& [id, scale] : gates) {
      std::vector<T> s(scale.begin(), scale.end());
      const std::size_t len = s.size();
      bound.emplace(id, tape.constant(Tensor<T>({len}, std::move(s))));
    }
    const Var y = forward(tape, vars, tape.constant(std::move(chunk)), bound);
    const Tensor<T>& v = tape.value(y);
    classes = v.size() / m;
    out.insert(out.end(), v.data().begin(), v.data().end());
  }
  return Tensor<T>({n, classes}, std::move(out));
}

template class Model<float>;
template class Model<double>;

}  // namespace rbp
