#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "rbp/data.hpp"
#include "rbp/metrics.hpp"
#include "rbp/model.hpp"
#include "rbp/pruner.hpp"
#include "rbp/zoo.hpp"

namespace rbp {

struct DatasetConfig {
  std::string name = "mnist";  // mnist | cifar10 | planted
  std::string root = "data/mnist-subset";
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  AugmentPolicy augmentation = AugmentPolicy::none;
  std::size_t train_limit = 0;  // use the first N training images; 0 keeps all
  std::size_t test_limit = 0;
  // planted only
  std::size_t planted_train = 2000, planted_test = 1000, planted_channels = 4, planted_size = 8;
};

struct ModelConfig {
  // mnist_convnet | planted_net | two_conv_net | vgg16_cifar | resnet_toy | resnet_basic |
  // resnet_bottleneck | resnet_bottleneck_toy | custom
  std::string architecture = "mnist_convnet";
  std::vector<std::size_t> widths;  // empty: the architecture's defaults
  std::size_t blocks_per_stage = 2;  // resnet_toy
  std::vector<zoo::BasicBlockPlan> basic_blocks;
  std::vector<zoo::BottleneckPlan> bottleneck_blocks;
  nlohmann::json custom;  // full layer list for "custom"
  std::uint64_t init_seed = 1;
};

struct PretrainConfig {
  std::size_t epochs = 10;
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-3;
  double momentum = 0.9;
};

struct RbpConfig {
  std::string mode = "layerwise";  // layerwise | rrbp
  std::vector<std::string> scope;  // gate ids; empty means every gateable layer
  std::size_t trigger_epochs = 3;
  double threshold = 0.5;
  double prior_variance = 0.025;
  double init_rate = 0.01;
  double lr = 1e-4;
  std::size_t batch_size = 0;  // 0 uses dataset.batch_size
  double min_rate_movement = 0.0;
};

struct FinetuneConfig {
  std::size_t epochs = 10;
  double lr = 1e-4;
  double momentum = 0.9;
  double decay = 0.5;
  std::size_t decay_every = 3;
};

struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  PretrainConfig pretrain;
  RbpConfig rbp;
  FinetuneConfig finetune;
  FlopConvention flop_convention = FlopConvention::flop;
};

// Missing keys take their defaults. Unknown keys, wrong types and out-of-range
// values are all collected into one ValidationError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

// Every field written out, defaults included.
std::string resolved_config_text(const RunConfig& c);
std::uint64_t config_hash(const RunConfig& c);

Architecture build_architecture(const RunConfig& c);
PruneSchedule build_schedule(const RunConfig& c, const Architecture& arch);
FinetuneSettings build_finetune(const RunConfig& c);

struct DataSplits {
  Dataset train, test;
};
DataSplits load_splits(const RunConfig& c);

}  // namespace rbp
