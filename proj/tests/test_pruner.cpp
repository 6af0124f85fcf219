#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rbp/objective.hpp"
#include "rbp/pruner.hpp"
#include "rbp/zoo.hpp"
#include "support/planted.hpp"
#include "support/reference.hpp"

using namespace rbp;
using rbp::testing::random_tensor;

namespace {

GateState gate_with(const std::string& id, std::vector<double> rates) {
  GateState g = GateState::create(id, rates.size());
  const std::size_t n = rates.size();
  g.rates.value = Tensor<double>({n}, std::move(rates));
  return g;
}

float max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  REQUIRE(a.shape() == b.shape());
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool same_params(const Model<float>& a, const Model<float>& b) {
  for (const auto& [name, p] : a.params()) {
    if (!(p.value == b.params().at(name).value)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("schedule validation lists every problem") {
  const Architecture arch = zoo::mnist_convnet();
  PruneSchedule s = layerwise_schedule(arch, 3);
  CHECK_NOTHROW(s.validate(arch));
  REQUIRE(s.stages.size() == 3);
  CHECK(s.stages[0].gates == std::vector<std::string>{"conv2"});
  CHECK(s.stages[1].gates == std::vector<std::string>{"fc1"});
  CHECK(s.stages[2].gates == std::vector<std::string>{"fc2"});

  s.threshold = 0.95;
  s.stages[0].trigger_epochs = 0;
  s.stages.push_back({{"conv2", "fc1"}, 3});
  s.stages.push_back({{"conv1"}, 3});
  try {
    s.validate(arch);
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("threshold") != std::string::npos);
    CHECK(msg.find("trigger epochs") != std::string::npos);
    CHECK(msg.find("already scheduled") != std::string::npos);
    CHECK(msg.find("gates trained together") != std::string::npos);
    CHECK(msg.find("conv1") != std::string::npos);
  }
  CHECK(layerwise_schedule(arch, 2, {"fc1"}).stages.size() == 1);
  CHECK_THROWS_AS(layerwise_schedule(arch, 2, {"conv1"}), ValidationError);
}

TEST_CASE("finetune learning rate halves every three epochs") {
  const FinetuneSettings f;
  const std::vector<double> expect = {1e-4, 1e-4, 1e-4, 5e-5, 5e-5, 5e-5, 2.5e-5, 2.5e-5, 2.5e-5, 1.25e-5};
  const auto trace = f.lr_trace();
  REQUIRE(trace.size() == expect.size());
  for (std::size_t e = 0; e < expect.size(); ++e) CHECK(trace[e] == doctest::Approx(expect[e]).epsilon(1e-12));
}

TEST_CASE("threshold and fold on a two-channel gate") {
  Model<float> m = Model<float>::initialize(zoo::planted_net(2, 2, 2, 4), 3);
  const Tensor<float> w = m.params().at("conv2.weight").value;  // (2, 2, 1, 1)
  GateState g = gate_with("conv2", {0.99, 0.01});
  const ChannelMask mask = threshold_and_fold(g, m, 0.5);
  CHECK(mask.producer == "conv1");
  CHECK(mask.keep == std::vector<bool>{false, true});
  CHECK(mask.fold_scale[0] == 0.0);
  CHECK(mask.fold_scale[1] == doctest::Approx(0.99));
  CHECK(g.status == GateStatus::folded);
  CHECK(g.rate(0) == 1.0);
  const Tensor<float>& folded = m.params().at("conv2.weight").value;
  for (std::size_t o = 0; o < 2; ++o) {
    CHECK(folded[o * 2] == 0.0f);
    CHECK(folded[o * 2 + 1] == static_cast<float>(0.99) * w[o * 2 + 1]);
  }
  CHECK_THROWS_AS(threshold_and_fold(g, m, 0.5), StateError);
}

TEST_CASE("fold matches the gate-at-expectation forward pass") {
  Model<float> m = Model<float>::initialize(zoo::two_conv_net(3, 4, 8, 5, 6), 7);
  const Model<float> original = m;
  GateState g = gate_with("conv2", {0.2, 0.7, 0.05, 0.95});
  threshold_and_fold(g, m, 0.5);
  const FixedGates expectation{{"conv2", expected_gate(g)}};
  CHECK(expected_gate(g) == std::vector<double>{0.8, 0.0, 0.95, 0.0});
  const Tensor<float> x = random_tensor<float>({100, 3, 6, 6}, 8);
  CHECK(max_abs_diff(m.logits(x), original.logits(x, expectation)) <= 1e-6f);
}

TEST_CASE("compaction preserves logits and shrinks the model") {
  Model<float> m = Model<float>::initialize(zoo::two_conv_net(3, 8, 6, 4, 6), 9);
  GateState g = gate_with("conv2", {0.01, 0.97, 0.02, 0.6, 0.3, 0.88, 0.04, 0.01});
  const ChannelMask mask = threshold_and_fold(g, m, 0.5);
  CHECK(mask.kept() == 5);
  const Model<float> folded = m;
  compact(m, {mask});
  CHECK(find_layer(m.architecture(), "conv1").out == 5);
  CHECK(find_layer(m.architecture(), "conv2").in == 5);
  CHECK(m.params().at("conv1.weight").value.shape() == Shape{5, 3, 3, 3});
  CHECK(m.params().at("conv2.weight").value.shape() == Shape{6, 5, 3, 3});
  CHECK(parameter_count(m.architecture()) < parameter_count(folded.architecture()));
  const Tensor<float> x = random_tensor<float>({100, 3, 6, 6}, 10);
  CHECK(max_abs_diff(m.logits(x), folded.logits(x)) <= 1e-6f);
}

TEST_CASE("a gate with nothing above threshold leaves the model unchanged") {
  Model<float> m = Model<float>::initialize(zoo::two_conv_net(3, 4, 4, 3, 5), 11);
  GateState g = gate_with("conv2", {0.01, 0.02, 0.3, 0.49});
  const ChannelMask mask = threshold_and_fold(g, m, 0.5);
  CHECK(mask.kept() == 4);
  const Model<float> folded = m;
  compact(m, {mask});
  CHECK(m.architecture().layers == folded.architecture().layers);
  CHECK(same_params(m, folded));
}

TEST_CASE("every rate above threshold keeps the lowest-rate channel") {
  Model<float> m = Model<float>::initialize(zoo::two_conv_net(3, 4, 4, 3, 5), 12);
  GateState g = gate_with("conv2", {0.97, 0.93, 0.99, 0.95});
  const ChannelMask mask = threshold_and_fold(g, m, 0.5);
  CHECK(mask.keep == std::vector<bool>{false, true, false, false});
  CHECK(mask.fold_scale[1] == doctest::Approx(0.07));
  compact(m, {mask});
  CHECK(find_layer(m.architecture(), "conv1").out == 1);
}

TEST_CASE("masks compact in any order") {
  Model<float> m = Model<float>::initialize(zoo::two_conv_net(3, 6, 6, 3, 5), 13);
  GateState a = gate_with("conv2", {0.9, 0.1, 0.1, 0.9, 0.1, 0.1});
  GateState b = gate_with("fc", {0.1, 0.9, 0.9, 0.1, 0.1, 0.1});
  const ChannelMask ma = threshold_and_fold(a, m, 0.5), mb = threshold_and_fold(b, m, 0.5);
  Model<float> ab = m, ba = m;
  compact(ab, {ma, mb});
  compact(ba, {mb, ma});
  CHECK(ab.architecture().layers == ba.architecture().layers);
  CHECK(same_params(ab, ba));
  const Tensor<float> x = random_tensor<float>({20, 3, 5, 5}, 14);
  CHECK(max_abs_diff(ab.logits(x), m.logits(x)) <= 1e-6f);

  ChannelMask wrong = ma;
  wrong.keep.pop_back();
  CHECK_THROWS_AS(compact(m, {wrong}), ShapeError);
  ChannelMask empty = ma;
  empty.keep.assign(6, false);
  CHECK_THROWS_AS(compact(m, {empty}), ShapeError);
}

TEST_CASE("stage training is deterministic and needs a single active gate") {
  const Dataset data = planted_dataset(64, 3, 3, 5, 4);
  const Model<float> start = Model<float>::initialize(zoo::two_conv_net(3, 4, 4, 3, 5), 15);
  const TrainData td{&data, 8, {}, 16};
  PruneSchedule s = layerwise_schedule(start.architecture(), 1);

  auto run = [&] {
    Model<float> m = start;
    std::vector<GateState> gates = {GateState::create("conv2", 4)};
    run_stage(m, gates, td, s.stages[0], s, 1);
    return std::pair{m, gates[0]};
  };
  const auto [m1, g1] = run();
  const auto [m2, g2] = run();
  CHECK(same_params(m1, m2));
  CHECK(g1.rates.value == g2.rates.value);
  CHECK(!same_params(m1, start));

  Model<float> m = start;
  std::vector<GateState> two = {GateState::create("conv2", 4), GateState::create("fc", 4)};
  CHECK_THROWS_AS(run_stage(m, two, td, s.stages[0], s, 1), StateError);
  std::vector<GateState> none;
  CHECK_THROWS_AS(run_stage(m, none, td, s.stages[0], s, 1), StateError);
}

TEST_CASE("a schedule without stages is the identity") {
  const Dataset data = planted_dataset(32, 3, 3, 5, 4);
  const Model<float> start = Model<float>::initialize(zoo::two_conv_net(3, 4, 4, 3, 5), 17);
  PruneSchedule s;
  s.finetune.epochs = 0;
  const PipelineResult r = rbp_pipeline(start, TrainData{&data, 8, {}, 1}, nullptr, s);
  CHECK(same_params(r.model, start));
  CHECK(r.report.flops_ratio == 1.0);
  CHECK(r.report.compression_rate == 1.0);
  CHECK(r.report.stages.empty());
  CHECK(r.progress.gates.empty());
}

TEST_CASE("planted dead channels are pruned and live ones kept") {
  const rbp::testing::PlantedTask task;
  const Dataset train = task.train();
  const Model<float> base = task.pretrained(train, 40);
  PruneSchedule s = layerwise_schedule(base.architecture(), 40);
  s.finetune.epochs = 1;
  std::size_t stages_seen = 0;
  PipelineHooks hooks;
  std::optional<std::pair<Model<float>, PipelineProgress>> after_first;
  hooks.on_stage_end = [&](const Model<float>& m, const PipelineProgress& p) {
    CHECK(p.completed == ++stages_seen);
    for (const GateState& g : p.gates) CHECK(g.status == GateStatus::folded);
    if (p.completed == 1) after_first.emplace(m, p);
  };
  const TrainData td{&train, 8, {}, 5};
  const PipelineResult r = rbp_pipeline(base, td, nullptr, s, FlopConvention::flop, hooks);
  CHECK(stages_seen == 2);

  REQUIRE(after_first);
  const PipelineResult resumed =
      rbp_pipeline(after_first->first, td, nullptr, s, FlopConvention::flop, {}, &after_first->second);
  CHECK(resumed.report == r.report);
  CHECK(same_params(resumed.model, r.model));

  for (const auto& [id, rates] : r.report.fold_rates) {
    for (std::size_t c = 0; c < rates.size(); ++c) {
      CAPTURE(id);
      CAPTURE(c);
      if (task.is_dead(c)) {
        CHECK(rates[c] > 0.9);
      } else {
        CHECK(rates[c] < 0.1);
      }
    }
  }
  CHECK(find_layer(r.model.architecture(), "conv1").out == task.live);
  CHECK(find_layer(r.model.architecture(), "conv2").out == task.live);
  CHECK(r.report.flops_ratio > 2.0);
  REQUIRE(r.report.stages.size() == 2);
  CHECK(r.report.stages[0].flops_after > r.report.stages[1].flops_after);
  CHECK(r.report.finetune_lr == std::vector<double>{1e-4});
}
