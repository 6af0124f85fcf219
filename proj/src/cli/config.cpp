#include "rbp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "rbp/error.hpp"
#include "rbp/hash.hpp"
#include "rbp/resnet.hpp"

namespace rbp {
namespace {

// Reads one JSON object, recording every problem instead of stopping at the first.
class Section {
 public:
  Section(const nlohmann::json& root, std::string name, std::vector<std::string>& errors)
      : name_(std::move(name)), errors_(errors) {
    if (!root.contains(name_)) return;
    const nlohmann::json& j = root.at(name_);
    if (!j.is_object()) {
      errors_.push_back(name_ + ": expected an object");
      return;
    }
    obj_ = &j;
  }

  template <typename T>
  void read(const char* key, T& out) {
    known_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    try {
      out = obj_->at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      errors_.push_back(name_ + "." + key + ": expected " + type_name<T>() + ", got " + obj_->at(key).dump());
    }
  }

  void read_json(const char* key, nlohmann::json& out) {
    known_.insert(key);
    if (obj_ && obj_->contains(key)) out = obj_->at(key);
  }

  template <typename F>
  void read_string_as(const char* key, F parse) {
    std::string s;
    known_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    read(key, s);
    try {
      parse(s);
    } catch (const Error& e) {
      errors_.push_back(name_ + "." + key + ": " + e.what());
    }
  }

  void check(bool ok, const std::string& key, const std::string& what) {
    if (!ok) errors_.push_back(name_ + "." + key + ": " + what);
  }

  void reject_unknown() {
    if (!obj_) return;
    for (const auto& [key, value] : obj_->items())
      if (!known_.count(key)) errors_.push_back(name_ + "." + key + ": unknown key");
  }

 private:
  template <typename T>
  static std::string type_name() {
    if constexpr (std::is_same_v<T, std::string>) return "a string";
    else if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_integral_v<T>) return "a non-negative integer";
    else return "a list";
  }

  std::string name_;
  std::vector<std::string>& errors_;
  const nlohmann::json* obj_ = nullptr;
  std::set<std::string> known_;
};

struct Geometry {
  std::size_t channels, size, classes;
};

Geometry dataset_geometry(const DatasetConfig& d) {
  if (d.name == "mnist") return {1, 28, 10};
  if (d.name == "cifar10") return {3, 32, 10};
  return {d.planted_channels, d.planted_size, d.planted_channels};
}

std::vector<zoo::BasicBlockPlan> basic_from_json(const nlohmann::json& j) {
  std::vector<zoo::BasicBlockPlan> out;
  for (const auto& b : j) out.push_back({b.at("width").get<std::size_t>(), b.value("downsample", false)});
  return out;
}

std::vector<zoo::BottleneckPlan> bottleneck_from_json(const nlohmann::json& j) {
  std::vector<zoo::BottleneckPlan> out;
  for (const auto& b : j)
    out.push_back({b.at("mid").get<std::size_t>(), b.at("out").get<std::size_t>(), b.value("downsample", false)});
  return out;
}

Dataset take(Dataset d, std::size_t limit) {
  if (limit == 0 || limit >= d.size()) return d;
  d.labels.resize(limit);
  d.images.resize(limit * d.image_size());
  return d;
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  std::vector<std::string> errors;
  if (!j.is_object()) throw ValidationError("invalid config:\n  - top level must be an object");
  for (const auto& [key, value] : j.items()) {
    static const std::set<std::string> sections = {"dataset", "model", "pretrain", "rbp", "finetune", "metrics"};
    if (!sections.count(key)) errors.push_back(key + ": unknown section");
  }

  Section ds(j, "dataset", errors);
  DatasetConfig& d = c.dataset;
  ds.read("name", d.name);
  ds.read("root", d.root);
  ds.read("batch_size", d.batch_size);
  ds.read("seed", d.seed);
  ds.read_string_as("augmentation", [&](const std::string& s) { d.augmentation = augment_policy_from_string(s); });
  ds.read("train_limit", d.train_limit);
  ds.read("test_limit", d.test_limit);
  ds.read("planted_train", d.planted_train);
  ds.read("planted_test", d.planted_test);
  ds.read("planted_channels", d.planted_channels);
  ds.read("planted_size", d.planted_size);
  ds.check(d.name == "mnist" || d.name == "cifar10" || d.name == "planted", "name",
           "'" + d.name + "' is not one of mnist, cifar10, planted");
  ds.check(d.batch_size > 0, "batch_size", "must be at least 1");
  ds.check(d.name != "planted" || (d.planted_channels > 0 && d.planted_size > 0 && d.planted_train > 0),
           "planted_channels", "planted data needs channels, size and a training count");
  ds.reject_unknown();

  Section ms(j, "model", errors);
  ModelConfig& m = c.model;
  nlohmann::json basic, bottleneck;
  ms.read("architecture", m.architecture);
  ms.read("widths", m.widths);
  ms.read("blocks_per_stage", m.blocks_per_stage);
  ms.read_json("basic_blocks", basic);
  ms.read_json("bottleneck_blocks", bottleneck);
  ms.read_json("custom", m.custom);
  ms.read("init_seed", m.init_seed);
  try {
    if (!basic.is_null()) m.basic_blocks = basic_from_json(basic);
    if (!bottleneck.is_null()) m.bottleneck_blocks = bottleneck_from_json(bottleneck);
  } catch (const nlohmann::json::exception& e) {
    errors.push_back(std::string("model blocks: ") + e.what());
  }
  ms.reject_unknown();

  Section ps(j, "pretrain", errors);
  PretrainConfig& p = c.pretrain;
  ps.read("epochs", p.epochs);
  ps.read("optimizer", p.optimizer);
  ps.read("lr", p.lr);
  ps.read("momentum", p.momentum);
  ps.check(p.optimizer == "adam" || p.optimizer == "sgd", "optimizer", "expected adam or sgd");
  ps.check(p.lr > 0.0, "lr", "must be positive");
  ps.check(p.momentum >= 0.0 && p.momentum < 1.0, "momentum", "must lie in [0, 1)");
  ps.reject_unknown();

  Section rs(j, "rbp", errors);
  RbpConfig& r = c.rbp;
  rs.read("mode", r.mode);
  rs.read("scope", r.scope);
  rs.read("trigger_epochs", r.trigger_epochs);
  rs.read("threshold", r.threshold);
  rs.read("prior_variance", r.prior_variance);
  rs.read("init_rate", r.init_rate);
  rs.read("lr", r.lr);
  rs.read("batch_size", r.batch_size);
  rs.read("min_rate_movement", r.min_rate_movement);
  rs.check(r.mode == "layerwise" || r.mode == "rrbp", "mode", "expected layerwise or rrbp");
  rs.check(r.trigger_epochs >= 1, "trigger_epochs", "must be at least 1");
  rs.check(r.threshold >= 0.1 && r.threshold <= 0.9, "threshold", "must lie in [0.1, 0.9]");
  rs.check(r.prior_variance > 0.0 && r.prior_variance < 0.25, "prior_variance", "must lie in (0, 0.25)");
  rs.check(r.init_rate > 0.0 && r.init_rate < 1.0, "init_rate", "must lie in (0, 1)");
  rs.check(r.lr > 0.0, "lr", "must be positive");
  rs.check(r.min_rate_movement >= 0.0, "min_rate_movement", "must not be negative");
  rs.reject_unknown();

  Section fs(j, "finetune", errors);
  FinetuneConfig& f = c.finetune;
  fs.read("epochs", f.epochs);
  fs.read("lr", f.lr);
  fs.read("momentum", f.momentum);
  fs.read("decay", f.decay);
  fs.read("decay_every", f.decay_every);
  fs.check(f.lr > 0.0, "lr", "must be positive");
  fs.check(f.momentum >= 0.0 && f.momentum < 1.0, "momentum", "must lie in [0, 1)");
  fs.check(f.decay > 0.0 && f.decay <= 1.0, "decay", "must lie in (0, 1]");
  fs.reject_unknown();

  Section xs(j, "metrics", errors);
  xs.read_string_as("flop_convention",
                    [&](const std::string& s) { c.flop_convention = flop_convention_from_string(s); });
  xs.reject_unknown();

  if (errors.empty()) {
    try {
      const Architecture arch = build_architecture(c);
      build_schedule(c, arch);
    } catch (const Error& e) {
      errors.push_back(e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" + (errors.size() > 1 ? "s" : "") +
                      "):";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ValidationError(msg);
  }
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  const DatasetConfig& d = c.dataset;
  const ModelConfig& m = c.model;
  nlohmann::json basic = nlohmann::json::array(), bottleneck = nlohmann::json::array();
  for (const auto& b : m.basic_blocks) basic.push_back({{"width", b.width}, {"downsample", b.downsample}});
  for (const auto& b : m.bottleneck_blocks)
    bottleneck.push_back({{"mid", b.mid}, {"out", b.out}, {"downsample", b.downsample}});
  return {
      {"dataset",
       {{"name", d.name},
        {"root", d.root},
        {"batch_size", d.batch_size},
        {"seed", d.seed},
        {"augmentation", to_string(d.augmentation)},
        {"train_limit", d.train_limit},
        {"test_limit", d.test_limit},
        {"planted_train", d.planted_train},
        {"planted_test", d.planted_test},
        {"planted_channels", d.planted_channels},
        {"planted_size", d.planted_size}}},
      {"model",
       {{"architecture", m.architecture},
        {"widths", m.widths},
        {"blocks_per_stage", m.blocks_per_stage},
        {"basic_blocks", basic},
        {"bottleneck_blocks", bottleneck},
        {"custom", m.custom},
        {"init_seed", m.init_seed}}},
      {"pretrain",
       {{"epochs", c.pretrain.epochs},
        {"optimizer", c.pretrain.optimizer},
        {"lr", c.pretrain.lr},
        {"momentum", c.pretrain.momentum}}},
      {"rbp",
       {{"mode", c.rbp.mode},
        {"scope", c.rbp.scope},
        {"trigger_epochs", c.rbp.trigger_epochs},
        {"threshold", c.rbp.threshold},
        {"prior_variance", c.rbp.prior_variance},
        {"init_rate", c.rbp.init_rate},
        {"lr", c.rbp.lr},
        {"batch_size", c.rbp.batch_size},
        {"min_rate_movement", c.rbp.min_rate_movement}}},
      {"finetune",
       {{"epochs", c.finetune.epochs},
        {"lr", c.finetune.lr},
        {"momentum", c.finetune.momentum},
        {"decay", c.finetune.decay},
        {"decay_every", c.finetune.decay_every}}},
      {"metrics", {{"flop_convention", to_string(c.flop_convention)}}},
  };
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string resolved_config_text(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

std::uint64_t config_hash(const RunConfig& c) { return fnv1a(to_json(c).dump()); }

Architecture build_architecture(const RunConfig& c) {
  const ModelConfig& m = c.model;
  const Geometry g = dataset_geometry(c.dataset);
  auto width = [&](std::size_t i, std::size_t fallback) { return i < m.widths.size() ? m.widths[i] : fallback; };
  Architecture a;
  if (m.architecture == "mnist_convnet") {
    a = zoo::mnist_convnet(width(0, 16), width(1, 32), width(2, 128));
  } else if (m.architecture == "planted_net") {
    a = zoo::planted_net(g.channels, width(0, 8), g.classes, g.size);
  } else if (m.architecture == "two_conv_net") {
    a = zoo::two_conv_net(g.channels, width(0, 4), width(1, 8), g.classes, g.size);
  } else if (m.architecture == "vgg16_cifar") {
    a = zoo::vgg16_cifar(g.classes);
  } else if (m.architecture == "resnet_toy") {
    a = zoo::resnet_toy(width(0, 8), m.blocks_per_stage, g.classes, g.channels, g.size);
  } else if (m.architecture == "resnet_basic") {
    if (m.basic_blocks.empty()) throw ValidationError("model.basic_blocks: resnet_basic needs at least one block");
    a = zoo::resnet_basic(g.channels, g.size, width(0, 16), m.basic_blocks, g.classes);
  } else if (m.architecture == "resnet_bottleneck") {
    if (m.bottleneck_blocks.empty()) {
      throw ValidationError("model.bottleneck_blocks: resnet_bottleneck needs at least one block");
    }
    a = zoo::resnet_bottleneck(g.channels, g.size, width(0, 16), m.bottleneck_blocks, g.classes);
  } else if (m.architecture == "resnet_bottleneck_toy") {
    a = zoo::resnet_bottleneck_toy(g.classes);
  } else if (m.architecture == "custom") {
    try {
      a = architecture_from_json(m.custom);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("model.custom: ") + e.what());
    }
  } else {
    throw ValidationError("model.architecture: unknown architecture '" + m.architecture + "'");
  }
  if (a.channels != g.channels || a.height != g.size || a.width != g.size || a.classes != g.classes) {
    throw ValidationError("model.architecture: '" + m.architecture + "' expects " + std::to_string(a.channels) + "x" +
                          std::to_string(a.height) + "x" + std::to_string(a.width) + " inputs and " +
                          std::to_string(a.classes) + " classes; dataset '" + c.dataset.name + "' provides " +
                          std::to_string(g.channels) + "x" + std::to_string(g.size) + "x" + std::to_string(g.size) +
                          " and " + std::to_string(g.classes));
  }
  return a;
}

PruneSchedule build_schedule(const RunConfig& c, const Architecture& arch) {
  PruneSchedule s;
  if (c.rbp.mode == "rrbp") {
    s = rrbp_schedule(arch, c.rbp.trigger_epochs);
    if (!c.rbp.scope.empty()) throw ValidationError("rbp.scope: not used by the rrbp schedule");
  } else {
    s = layerwise_schedule(arch, c.rbp.trigger_epochs, c.rbp.scope);
  }
  s.threshold = c.rbp.threshold;
  s.init_rate = c.rbp.init_rate;
  s.prior_variance = c.rbp.prior_variance;
  s.weight_optimizer.lr = c.rbp.lr;
  s.rate_optimizer.lr = c.rbp.lr;
  s.min_rate_movement = c.rbp.min_rate_movement;
  s.finetune = build_finetune(c);
  s.validate(arch);
  return s;
}

FinetuneSettings build_finetune(const RunConfig& c) {
  FinetuneSettings f;
  f.epochs = c.finetune.epochs;
  f.optimizer = {c.finetune.lr, c.finetune.momentum};
  f.decay = c.finetune.decay;
  f.decay_every = c.finetune.decay_every;
  return f;
}

DataSplits load_splits(const RunConfig& c) {
  const DatasetConfig& d = c.dataset;
  if (d.name == "planted") {
    return {take(planted_dataset(d.planted_train, d.planted_channels, d.planted_channels, d.planted_size, d.seed),
                 d.train_limit),
            take(planted_dataset(d.planted_test, d.planted_channels, d.planted_channels, d.planted_size, d.seed,
                                 "test"),
                 d.test_limit)};
  }
  return {take(load_dataset(d.name, d.root, "train"), d.train_limit),
          take(load_dataset(d.name, d.root, "test"), d.test_limit)};
}

}  // namespace rbp
