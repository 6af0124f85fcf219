#pragma once

#include "rbp/pruner.hpp"
#include "rbp/zoo.hpp"

namespace rbp::testing {

// Planted-redundancy task: `live` informative input channels, `width` hidden
// channels of which the last width - live have all-zero filters. ReLU keeps
// those channels at exactly zero through any amount of training.
struct PlantedTask {
  std::size_t live = 4, width = 8, size = 8;
  std::size_t train_count = 2000, test_count = 1000;
  std::uint64_t seed = 1;

  Dataset train() const { return planted_dataset(train_count, live, live, size, seed); }
  Dataset test() const { return planted_dataset(test_count, live, live, size, seed, "test"); }

  Model<float> model() const {
    Model<float> m = Model<float>::initialize(zoo::planted_net(live, width, live, size), seed + 2);
    Tensor<float>& w1 = m.params().at("conv1.weight").value;
    Tensor<float>& w2 = m.params().at("conv2.weight").value;
    Tensor<float>& fc = m.params().at("fc.weight").value;
    w1.fill(0.0f);
    w2.fill(0.0f);
    for (std::size_t c = 0; c < live; ++c) {
      w1[c * live + c] = 1.0f;
      w2[c * width + c] = 1.0f;
    }
    for (std::size_t o = 0; o < live; ++o)
      for (std::size_t c = live; c < width; ++c) fc[o * width + c] = 0.0f;
    return m;
  }

  // Adam with a step decay; converges the linear read-out on the live channels.
  Model<float> pretrained(const Dataset& data, std::size_t epochs = 100) const {
    Model<float> m = model();
    SupervisedSettings s;
    s.epochs = epochs;
    s.optimizer = SupervisedSettings::Optimizer::adam;
    s.lr = [epochs](std::size_t e) { return e < epochs / 2 ? 1e-2 : (e < 3 * epochs / 4 ? 1e-3 : 1e-4); };
    s.phase = "pretrain";
    train_supervised(m, TrainData{&data, 8, {}, seed + 10}, s);
    return m;
  }

  bool is_dead(std::size_t channel) const { return channel >= live; }
};

}  // namespace rbp::testing
