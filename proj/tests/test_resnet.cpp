#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rbp/resnet.hpp"
#include "rbp/zoo.hpp"
#include "support/reference.hpp"

using namespace rbp;
using rbp::testing::random_tensor;

TEST_CASE("block specs for bottleneck and basic blocks") {
  const auto bottleneck = residual_blocks(zoo::resnet_bottleneck_toy());
  REQUIRE(bottleneck.size() == 4);
  CHECK(bottleneck[0].convs == std::vector<std::string>{"block1.conv1", "block1.conv2", "block1.conv3"});
  CHECK(bottleneck[0].gate_sites == std::vector<std::string>{"block1.conv2", "block1.conv3"});
  CHECK(!bottleneck[0].has_downsample);
  CHECK(bottleneck[2].has_downsample);

  const auto basic = residual_blocks(zoo::resnet_toy());
  REQUIRE(basic.size() == 6);
  CHECK(basic[0].gate_sites == std::vector<std::string>{"block1.conv2"});
  CHECK(basic[2].has_downsample);

  const auto r50 = residual_blocks(zoo::resnet50());
  CHECK(r50.size() == 16);
  CHECK(r50[0].has_downsample);  // projection shortcut at unchanged resolution
  CHECK(!r50[1].has_downsample);

  CHECK(residual_blocks(zoo::mnist_convnet()).empty());
}

TEST_CASE("malformed blocks are rejected") {
  Architecture a = zoo::resnet_toy();
  auto& body = a.layers[2].body;
  body.erase(body.begin() + 1, body.end());
  CHECK_THROWS_AS(residual_blocks(a), ShapeError);
}

TEST_CASE("gates attach only inside blocks") {
  const Architecture a = zoo::resnet_bottleneck_toy();
  const auto all = attach_residual_gates(a);
  CHECK(all.size() == 8);
  CHECK(all[0].layer_id == "block1.conv2");
  CHECK(all[0].channels() == 4);
  CHECK(all[1].layer_id == "block1.conv3");
  CHECK(all[1].channels() == 4);

  CHECK(attach_residual_gates(a, {"block4.conv3"}).at(0).channels() == 8);
  CHECK_THROWS_AS(attach_residual_gates(a, {"block2.conv1"}), ValidationError);  // block input
  CHECK_THROWS_AS(attach_residual_gates(a, {"fc"}), ValidationError);            // block output
  CHECK_THROWS_AS(attach_residual_gates(a, {"block3.proj"}), ValidationError);
  CHECK_THROWS_AS(attach_residual_gates(zoo::mnist_convnet()), ValidationError);
}

TEST_CASE("two-phase schedule skips down-sampling blocks") {
  const PruneSchedule s = rrbp_schedule(zoo::resnet_bottleneck_toy());
  REQUIRE(s.stages.size() == 2);
  CHECK(s.allow_multiple_gates);
  CHECK(s.stages[0].gates == std::vector<std::string>{"block1.conv2", "block2.conv2", "block4.conv2"});
  CHECK(s.stages[1].gates == std::vector<std::string>{"block1.conv3", "block2.conv3", "block4.conv3"});
  CHECK(s.stages[0].trigger_epochs == 7);
  CHECK_NOTHROW(s.validate(zoo::resnet_bottleneck_toy()));

  const PruneSchedule basic = rrbp_schedule(zoo::resnet_toy());
  REQUIRE(basic.stages.size() == 1);
  CHECK(basic.stages[0].gates == std::vector<std::string>{"block1.conv2", "block2.conv2", "block4.conv2",
                                                         "block6.conv2"});

  CHECK_THROWS_AS(rrbp_schedule(zoo::mnist_convnet()), ValidationError);
  const Architecture down = zoo::resnet_bottleneck(3, 16, 8, {{4, 16, true}, {8, 32, true}}, 10);
  CHECK(rrbp_schedule(down).stages.empty());
}

TEST_CASE("residual sums stay valid after pruning inside blocks") {
  Model<float> m = Model<float>::initialize(zoo::resnet_bottleneck_toy(), 3);
  auto gates = attach_residual_gates(m.architecture());
  std::vector<ChannelMask> masks;
  for (GateState& g : gates) {
    for (std::size_t c = 0; c < g.channels(); c += 2) g.rates.value[c] = 0.97;
    masks.push_back(threshold_and_fold(g, m, 0.5));
  }
  const Model<float> folded = m;
  compact(m, masks);
  CHECK_NOTHROW(trace_shapes(m.architecture()));
  CHECK(find_layer(m.architecture(), "block1.conv1").out == 2);
  CHECK(find_layer(m.architecture(), "block1.conv2").out == 2);
  CHECK(find_layer(m.architecture(), "block1.conv3").out == 16);
  CHECK(find_layer(m.architecture(), "block4.conv2").out == 4);
  CHECK(parameter_count(m.architecture()) < parameter_count(folded.architecture()));
  const Tensor<float> x = random_tensor<float>({10, 3, 16, 16}, 4);
  const Tensor<float> a = m.logits(x), b = folded.logits(x);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-5f);
}

TEST_CASE("a two-phase run trains several gates per stage") {
  const Dataset data = planted_dataset(48, 3, 3, 16, 9);
  const Model<float> start = Model<float>::initialize(zoo::resnet_bottleneck_toy(3), 5);
  PruneSchedule s = rrbp_schedule(start.architecture(), 1);
  s.finetune.epochs = 0;
  std::vector<std::size_t> gates_per_stage;
  PipelineHooks hooks;
  hooks.on_stage_end = [&](const Model<float>& m, const PipelineProgress& p) {
    gates_per_stage.push_back(p.gates.size());
    CHECK_NOTHROW(trace_shapes(m.architecture()));
  };
  const PipelineResult r = rbp_pipeline(start, TrainData{&data, 16, {}, 2}, nullptr, s, FlopConvention::mac, hooks);
  CHECK(gates_per_stage == std::vector<std::size_t>{3, 6});
  CHECK(r.report.stages.size() == 2);
  CHECK(r.report.fold_rates.size() == 6);
  CHECK(find_layer(r.model.architecture(), "block3.conv2").out == 8);

  PruneSchedule single = s;
  single.allow_multiple_gates = false;
  CHECK_THROWS_AS(single.validate(start.architecture()), ValidationError);
}
