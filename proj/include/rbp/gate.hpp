#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rbp/autograd.hpp"
#include "rbp/optim.hpp"

namespace rbp {

// Rates are kept inside [kRateFloor, 1 - kRateFloor] while a gate trains.
inline constexpr double kRateFloor = 1e-4;
inline constexpr double kDefaultPriorVariance = 0.025;
inline constexpr double kDefaultInitRate = 0.01;

enum class GateStatus { active, frozen, folded };

std::string_view to_string(GateStatus s);
GateStatus gate_status_from_string(std::string_view s);

// Gaussian dropout gate on the input channels of one layer:
//   theta_c ~ N(1 - r_c, r_c (1 - r_c)),  prior N(0, eps^2).
struct GateState {
  std::string layer_id;
  Parameter<double> rates;  // shape (C); optimizer slots live alongside
  double prior_variance = kDefaultPriorVariance;
  GateStatus status = GateStatus::active;

  static GateState create(std::string layer_id, std::size_t channels, double init_rate = kDefaultInitRate,
                          double prior_variance = kDefaultPriorVariance);

  std::size_t channels() const { return rates.value.size(); }
  double rate(std::size_t c) const { return rates.value[c]; }
  std::span<const double> rate_values() const { return rates.value.data(); }

  void clamp_rates();
  // Adam descent on the rates followed by clamping. Rejected unless active.
  void apply_adam(const Tensor<double>& descent_grad, const AdamSettings& s);
};

// Counter-based standard-normal stream. Every draw is a pure function of
// (seed, layer, epoch, batch, channel), so sampling order never matters.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed = 0) : seed_(seed) {}

  double normal(std::string_view layer, std::uint64_t epoch, std::uint64_t batch, std::uint64_t channel) const;
  std::vector<double> normals(std::string_view layer, std::uint64_t epoch, std::uint64_t batch,
                              std::size_t count) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

// theta_c = 1 - r_c + sqrt(r_c (1 - r_c)) z_c. Throws StateError unless active.
std::vector<double> sample_gate(const GateState& gate, std::span<const double> z);

std::vector<double> expected_gate(const GateState& gate);
std::vector<double> expected_gate(std::span<const double> rates);

// Per-channel KL( N(1-r, r(1-r)) || N(0, eps2) ) and its derivative in r.
double kl_channel(double r, double prior_variance);
double kl_channel_derivative(double r, double prior_variance);

double kl_term(const GateState& gate);
double kl_term(std::span<const double> rates, double prior_variance);
std::vector<double> kl_gradient(const GateState& gate);
std::vector<double> kl_gradient(std::span<const double> rates, double prior_variance);

// Minimizer of kl_channel(., eps2) over (0, 1), located by bisection on the
// sign of the derivative (the channel KL is strictly convex).
double stationary_rate(double prior_variance);

struct StationaryDiagnostic {
  double prior_variance;
  double numeric;              // stationary_rate()
  double quoted_closed_form;   // (1 - 4 eps2 + sqrt(1 + 16 eps2^2)) / 2
  double derived_closed_form;  // (1 - 2 eps2 + sqrt(1 + 4 eps2^2)) / 2
  double gradient_at_numeric;
};

StationaryDiagnostic stationary_diagnostic(double prior_variance);

// ---- tape ops ------------------------------------------------------------------

// Reparameterized sample; differentiable w.r.t. the rates through both the
// mean and the scale term.
template <typename T>
Var gate_sample(Tape<T>& tape, Var rates, std::span<const double> z);

// Scalar KL summed over channels; gradient is kl_gradient().
template <typename T>
Var kl_divergence(Tape<T>& tape, Var rates, double prior_variance);

}  // namespace rbp
