#include "rbp/gate.hpp"

#include <cmath>
#include <numbers>

#include "rbp/hash.hpp"

namespace rbp {
namespace {

// (0, 1], 53 random bits.
double unit_open_closed(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53; }

void check_prior(double prior_variance) {
  if (!(prior_variance > 0.0) || !std::isfinite(prior_variance)) {
    throw ValidationError("prior variance must be positive, got " + std::to_string(prior_variance));
  }
}

void require_active(const GateState& g, const char* what) {
  if (g.status != GateStatus::active) {
    throw StateError(std::string(what) + " on gate '" + g.layer_id + "' which is " + std::string(to_string(g.status)));
  }
}

}  // namespace

std::string_view to_string(GateStatus s) {
  switch (s) {
    case GateStatus::active: return "active";
    case GateStatus::frozen: return "frozen";
    case GateStatus::folded: return "folded";
  }
  return "unknown";
}

GateStatus gate_status_from_string(std::string_view s) {
  if (s == "active") return GateStatus::active;
  if (s == "frozen") return GateStatus::frozen;
  if (s == "folded") return GateStatus::folded;
  throw ValidationError("unknown gate status '" + std::string(s) + "'");
}

GateState GateState::create(std::string layer_id, std::size_t channels, double init_rate, double prior_variance) {
  check_prior(prior_variance);
  if (!(init_rate > 0.0 && init_rate < 1.0)) {
    throw ValidationError("initial dropout rate must lie in (0, 1), got " + std::to_string(init_rate));
  }
  GateState g;
  g.layer_id = std::move(layer_id);
  g.rates.value = Tensor<double>({channels}, init_rate);
  g.prior_variance = prior_variance;
  g.clamp_rates();
  return g;
}

void GateState::clamp_rates() {
  for (double& r : rates.value.data()) r = std::clamp(r, kRateFloor, 1.0 - kRateFloor);
}

void GateState::apply_adam(const Tensor<double>& descent_grad, const AdamSettings& s) {
  require_active(*this, "rate update");
  adam_step(rates, descent_grad, s);
  clamp_rates();
}

double NoiseStream::normal(std::string_view layer, std::uint64_t epoch, std::uint64_t batch,
                           std::uint64_t channel) const {
  std::uint64_t key = splitmix64(seed_);
  key = splitmix64(key ^ fnv1a(layer));
  key = splitmix64(key ^ epoch);
  key = splitmix64(key ^ (batch * 0xD1B54A32D192ED03ULL));
  key = splitmix64(key ^ channel);
  const double u1 = unit_open_closed(key);
  const double u2 = unit_open_closed(splitmix64(key));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> NoiseStream::normals(std::string_view layer, std::uint64_t epoch, std::uint64_t batch,
                                         std::size_t count) const {
  std::vector<double> z(count);
  for (std::size_t c = 0; c < count; ++c) z[c] = normal(layer, epoch, batch, c);
  return z;
}

std::vector<double> sample_gate(const GateState& gate, std::span<const double> z) {
  require_active(gate, "sample_gate");
  if (z.size() != gate.channels()) throw ShapeError("noise length does not match gate channels");
  std::vector<double> theta(z.size());
  for (std::size_t c = 0; c < z.size(); ++c) {
    const double r = gate.rate(c);
    theta[c] = 1.0 - r + std::sqrt(r * (1.0 - r)) * z[c];
  }
  return theta;
}

std::vector<double> expected_gate(std::span<const double> rates) {
  std::vector<double> out(rates.size());
  for (std::size_t c = 0; c < rates.size(); ++c) out[c] = 1.0 - rates[c];
  return out;
}

std::vector<double> expected_gate(const GateState& gate) { return expected_gate(gate.rate_values()); }

double kl_channel(double r, double prior_variance) {
  return -0.5 * std::log(r * (1.0 - r) / prior_variance) + (1.0 - r) / (2.0 * prior_variance) - 0.5;
}

double kl_channel_derivative(double r, double prior_variance) {
  return -0.5 / r + 0.5 / (1.0 - r) - 0.5 / prior_variance;
}

double kl_term(std::span<const double> rates, double prior_variance) {
  check_prior(prior_variance);
  double total = 0.0;
  for (double r : rates) total += kl_channel(r, prior_variance);
  return total;
}

double kl_term(const GateState& gate) { return kl_term(gate.rate_values(), gate.prior_variance); }

std::vector<double> kl_gradient(std::span<const double> rates, double prior_variance) {
  check_prior(prior_variance);
  std::vector<double> g(rates.size());
  for (std::size_t c = 0; c < rates.size(); ++c) g[c] = kl_channel_derivative(rates[c], prior_variance);
  return g;
}

std::vector<double> kl_gradient(const GateState& gate) { return kl_gradient(gate.rate_values(), gate.prior_variance); }

double stationary_rate(double prior_variance) {
  if (!(prior_variance > 0.0 && prior_variance < 0.25)) {
    throw ValidationError("stationary_rate needs prior variance in (0, 0.25), got " + std::to_string(prior_variance));
  }
  // The derivative is -inf at 0+, +inf at 1-, and strictly increasing.
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (kl_channel_derivative(mid, prior_variance) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double glo = std::abs(kl_channel_derivative(lo, prior_variance));
  const double ghi = std::abs(kl_channel_derivative(hi, prior_variance));
  return glo <= ghi ? lo : hi;
}

StationaryDiagnostic stationary_diagnostic(double prior_variance) {
  const double e = prior_variance;
  StationaryDiagnostic d{};
  d.prior_variance = e;
  d.numeric = stationary_rate(e);
  d.quoted_closed_form = (1.0 - 4.0 * e + std::sqrt(1.0 + 16.0 * e * e)) / 2.0;
  d.derived_closed_form = (1.0 - 2.0 * e + std::sqrt(1.0 + 4.0 * e * e)) / 2.0;
  d.gradient_at_numeric = kl_channel_derivative(d.numeric, e);
  return d;
}

template <typename T>
Var gate_sample(Tape<T>& tape, Var rates, std::span<const double> z) {
  const Tensor<T>& r = tape.value(rates);
  if (r.rank() != 1 || r.size() != z.size()) throw ShapeError("gate_sample: noise length does not match rates");
  Tensor<T> theta(r.shape());
  std::vector<T> dtheta(r.size());
  for (std::size_t c = 0; c < r.size(); ++c) {
    const double rc = static_cast<double>(r[c]);
    if (!(rc > 0.0 && rc < 1.0)) throw NumericError("gate rate outside (0, 1)");
    const double sd = std::sqrt(rc * (1.0 - rc));
    theta[c] = static_cast<T>(1.0 - rc + sd * z[c]);
    dtheta[c] = static_cast<T>(-1.0 + (1.0 - 2.0 * rc) / (2.0 * sd) * z[c]);
  }
  return tape.record(std::move(theta), {rates}, [rates, dtheta](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gr = t.grad_accumulator(rates);
    for (std::size_t c = 0; c < g.size(); ++c) gr[c] += g[c] * dtheta[c];
  });
}

template <typename T>
Var kl_divergence(Tape<T>& tape, Var rates, double prior_variance) {
  const Tensor<T>& r = tape.value(rates);
  std::vector<double> rd(r.data().begin(), r.data().end());
  const double value = kl_term(rd, prior_variance);
  std::vector<double> grad = kl_gradient(rd, prior_variance);
  return tape.record(Tensor<T>({1}, {static_cast<T>(value)}), {rates}, [rates, grad](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gr = t.grad_accumulator(rates);
    for (std::size_t c = 0; c < grad.size(); ++c) gr[c] += g[0] * static_cast<T>(grad[c]);
  });
}

template Var gate_sample<float>(Tape<float>&, Var, std::span<const double>);
template Var gate_sample<double>(Tape<double>&, Var, std::span<const double>);
template Var kl_divergence<float>(Tape<float>&, Var, double);
template Var kl_divergence<double>(Tape<double>&, Var, double);

}  // namespace rbp
