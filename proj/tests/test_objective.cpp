#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rbp/objective.hpp"
#include "rbp/zoo.hpp"
#include "support/reference.hpp"

using namespace rbp;
using rbp::testing::random_tensor;
using rbp::testing::relative_error;

namespace {

struct Fixture {
  Model<double> model = Model<double>::initialize(zoo::two_conv_net(3, 4, 8, 3, 5), 21);
  Tensor<double> inputs = random_tensor<double>({4, 3, 5, 5}, 22);
  std::vector<int> labels = {0, 2, 1, 2};
  NoiseStream noise{5};

  GateState gate(double rate) const {
    GateState g = GateState::create("conv2", 4, rate);
    g.rates.value = Tensor<double>({4}, {rate, rate * 1.5, rate * 0.7, rate * 1.2});
    return g;
  }
};

double summed_log_likelihood(const Model<double>& m, const Tensor<double>& x, const std::vector<int>& y,
                             const FixedGates& gates = {}) {
  const auto logits = m.logits(x, gates);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k < logits.dim(1); ++k) mx = std::max(mx, logits[i * logits.dim(1) + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < logits.dim(1); ++k) z += std::exp(logits[i * logits.dim(1) + k] - mx);
    total += logits[i * logits.dim(1) + y[i]] - mx - std::log(z);
  }
  return total;
}

}  // namespace

TEST_CASE("kept-channel limit matches the ungated model") {
  Fixture f;
  std::vector<GateState> gates = {GateState::create("conv2", 4, kRateFloor)};
  const auto obj = evaluate_batch(f.model, gates, f.inputs, f.labels, {.dataset_size = 4}, f.noise);
  const double plain = summed_log_likelihood(f.model, f.inputs, f.labels);
  CHECK(std::abs(obj.data_term - plain) <= 0.01 * std::abs(plain));
}

TEST_CASE("|D| = |B| gives the plain summed log-likelihood") {
  Fixture f;
  std::vector<GateState> gates = {f.gate(0.3)};
  const auto obj = evaluate_batch(f.model, gates, f.inputs, f.labels, {.dataset_size = 4, .batch = 7}, f.noise);
  const auto theta = sample_gate(gates[0], f.noise.normals("conv2", 0, 7, 4));
  const double plain = summed_log_likelihood(f.model, f.inputs, f.labels, {{"conv2", theta}});
  CHECK(obj.data_term == doctest::Approx(plain).epsilon(1e-12));
  CHECK(obj.kl == doctest::Approx(kl_term(gates[0])).epsilon(1e-12));
  CHECK(obj.total == obj.data_term - obj.kl);
  CHECK(obj.kl >= 0.0);
}

TEST_CASE("gradients of L match central differences with common random numbers") {
  Fixture f;
  std::vector<GateState> gates = {f.gate(0.2)};
  const ObjectiveOptions opt{.dataset_size = 4, .epoch = 1, .batch = 2, .noise_samples = 16};
  const auto obj = evaluate_batch(f.model, gates, f.inputs, f.labels, opt, f.noise);
  // At 1e-5 a few conv2 pre-activations cross the ReLU kink inside the stencil.
  const double h = 1e-6;
  double worst = 0.0;

  Model<double> probe = f.model;
  for (auto& [name, param] : probe.params()) {
    const Tensor<double>& analytic = obj.weight_grads.at(name);
    for (std::size_t i = 0; i < param.value.size(); ++i) {
      const double saved = param.value[i];
      param.value[i] = saved + h;
      const double up = evaluate_batch(probe, gates, f.inputs, f.labels, opt, f.noise).total;
      param.value[i] = saved - h;
      const double down = evaluate_batch(probe, gates, f.inputs, f.labels, opt, f.noise).total;
      param.value[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
    }
  }
  std::vector<GateState> g = gates;
  for (std::size_t c = 0; c < 4; ++c) {
    const double saved = g[0].rates.value[c];
    g[0].rates.value[c] = saved + h;
    const double up = evaluate_batch(f.model, g, f.inputs, f.labels, opt, f.noise).total;
    g[0].rates.value[c] = saved - h;
    const double down = evaluate_batch(f.model, g, f.inputs, f.labels, opt, f.noise).total;
    g[0].rates.value[c] = saved;
    worst = std::max(worst, relative_error(obj.rate_grads.at("conv2")[c], (up - down) / (2 * h)));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("evaluate_batch is deterministic") {
  Fixture f;
  std::vector<GateState> gates = {f.gate(0.4)};
  const auto a = evaluate_batch(f.model, gates, f.inputs, f.labels, {.dataset_size = 100, .batch = 3}, f.noise);
  const auto b = evaluate_batch(f.model, gates, f.inputs, f.labels, {.dataset_size = 100, .batch = 3}, f.noise);
  CHECK(a.total == b.total);
  CHECK(a.weight_grads == b.weight_grads);
  CHECK(a.rate_grads == b.rate_grads);
  const auto c = evaluate_batch(f.model, gates, f.inputs, f.labels, {.dataset_size = 100, .batch = 4}, f.noise);
  CHECK(a.total != c.total);
}

TEST_CASE("|D| scales the data gradient linearly and leaves the KL gradient alone") {
  Fixture f;
  std::vector<GateState> gates = {f.gate(0.3)};
  auto rate_grad = [&](std::size_t d) {
    return evaluate_batch(f.model, gates, f.inputs, f.labels, {.dataset_size = d}, f.noise).rate_grads.at("conv2");
  };
  const auto g4 = rate_grad(4), g8 = rate_grad(8), g12 = rate_grad(12);
  const auto kl = kl_gradient(gates[0]);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(g12[c] - g8[c] == doctest::Approx(g8[c] - g4[c]).epsilon(1e-9));
    // Extrapolating to |D| = 0 leaves -dKL/dr.
    CHECK(2 * g4[c] - g8[c] == doctest::Approx(-kl[c]).epsilon(1e-9));
  }
}

TEST_CASE("KL-only steps move rates toward the stationary rate") {
  const double star = stationary_rate(kDefaultPriorVariance);
  GateState g = GateState::create("fc1", 3, 0.5);
  g.rates.value = Tensor<double>({3}, {0.05, 0.5, 0.999});
  for (int step = 0; step < 2000; ++step) {
    const auto grad = kl_gradient(g);
    g.apply_adam(Tensor<double>({3}, grad), AdamSettings{1e-3});
  }
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(g.rate(c) - star) < 0.01);
}

TEST_CASE("preconditions") {
  Fixture f;
  std::vector<GateState> gates = {f.gate(0.3)};
  CHECK_THROWS_AS(evaluate_batch(f.model, gates, f.inputs, f.labels, {.dataset_size = 0}, f.noise), ValidationError);
  gates[0].status = GateStatus::folded;
  CHECK_THROWS_AS(evaluate_batch(f.model, gates, f.inputs, f.labels, {.dataset_size = 4}, f.noise), StateError);

  std::vector<GateState> two = {f.gate(0.3), GateState::create("fc", 8)};
  CHECK_THROWS_AS(evaluate_batch(f.model, two, f.inputs, f.labels, {.dataset_size = 4}, f.noise), StateError);
  const auto obj = evaluate_batch(f.model, two, f.inputs, f.labels,
                                  {.dataset_size = 4, .allow_multiple_gates = true}, f.noise);
  CHECK(obj.kl == doctest::Approx(kl_term(two[0]) + kl_term(two[1])));
  CHECK(obj.rate_grads.size() == 2);
}

TEST_CASE("frozen gates enter at their expectation") {
  Fixture f;
  GateState frozen = GateState::create("conv2", 4, 0.25);
  frozen.status = GateStatus::frozen;
  std::vector<GateState> gates = {frozen, GateState::create("fc", 8, kRateFloor)};
  const auto obj = evaluate_batch(f.model, gates, f.inputs, f.labels, {.dataset_size = 4}, f.noise);
  const double expected = summed_log_likelihood(f.model, f.inputs, f.labels, {{"conv2", expected_gate(frozen)}});
  CHECK(std::abs(obj.data_term - expected) <= 0.01 * std::abs(expected));
  CHECK(obj.rate_grads.count("conv2") == 0);
}

TEST_CASE("non-finite loss reports gate and batch") {
  Fixture f;
  f.inputs[0] = std::nan("");
  std::vector<GateState> gates = {f.gate(0.3)};
  try {
    evaluate_batch(f.model, gates, f.inputs, f.labels, {.dataset_size = 4, .epoch = 2, .batch = 9}, f.noise);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("conv2") != std::string::npos);
    CHECK(msg.find("batch 9") != std::string::npos);
  }
}

TEST_CASE("supervised_batch gradients descend the mean NLL") {
  Fixture f;
  const auto sb = supervised_batch(f.model, f.inputs, f.labels);
  CHECK(sb.loss == doctest::Approx(-summed_log_likelihood(f.model, f.inputs, f.labels) / 4).epsilon(1e-12));
  Model<double> stepped = f.model;
  sgd_step(stepped.params(), sb.grads, SgdSettings{1e-2, 0.0});
  CHECK(supervised_batch(stepped, f.inputs, f.labels).loss < sb.loss);
}
