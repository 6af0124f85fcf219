#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "rbp/model.hpp"

namespace rbp {

// MAC counts one multiply-accumulate once; FLOP counts it as two operations.
enum class FlopConvention { mac, flop };

std::string_view to_string(FlopConvention c);
FlopConvention flop_convention_from_string(std::string_view s);

// Multiply-accumulates per conv/linear layer for one input image. Pooling,
// activations and residual additions are not counted.
std::map<std::string, std::uint64_t> layer_macs(const Architecture& arch, std::size_t height, std::size_t width);

// resolution 0 uses the architecture's own input size.
std::uint64_t count_flops(const Architecture& arch, FlopConvention convention, std::size_t resolution = 0);

// Parameter count before / after.
double compression_rate(const Architecture& before, const Architecture& after);

inline constexpr std::size_t kHistogramBins = 20;

// 20 uniform bins over [0, 1]; a rate of exactly 1 lands in the last bin.
std::vector<std::size_t> rate_histogram(std::span<const double> rates);

// Fraction of rates in [0, 0.1] or [0.9, 1].
double bimodal_fraction(std::span<const double> rates);

struct ChannelRow {
  std::string layer;
  std::size_t remained = 0;
  std::size_t original = 0;
  double percent = 100.0;
  // FLOPs before / after over this layer and every layer ahead of it.
  double cumulative_flops_ratio = 1.0;

  bool operator==(const ChannelRow&) const = default;
};

struct StageRecord {
  std::size_t index = 0;
  std::vector<std::string> gates;
  std::size_t steps = 0;
  double bimodal_fraction = 1.0;
  std::uint64_t flops_after = 0;

  bool operator==(const StageRecord&) const = default;
};

struct PruneReport {
  std::string architecture;
  FlopConvention convention = FlopConvention::flop;
  std::size_t height = 0, width = 0;
  std::vector<ChannelRow> channels;
  std::uint64_t flops_before = 0, flops_after = 0;
  double flops_ratio = 1.0;
  std::size_t params_before = 0, params_after = 0;
  double compression_rate = 1.0;
  std::map<std::string, std::vector<double>> fold_rates;       // gate id -> rates at fold time
  std::map<std::string, std::vector<std::size_t>> histograms;  // gate id -> 20 bins
  std::vector<StageRecord> stages;
  std::optional<double> accuracy_before, accuracy_pruned, accuracy_finetuned;
  std::string augmentation = "none";
  std::vector<double> finetune_lr;

  bool operator==(const PruneReport&) const = default;
};

// Channel rows, FLOPs, parameter counts and histograms from the original and
// compacted architectures plus the rates captured at each fold.
PruneReport build_report(const Architecture& before, const Architecture& after,
                         const std::map<std::string, std::vector<double>>& fold_rates, FlopConvention convention);

nlohmann::json to_json(const PruneReport& r);
PruneReport prune_report_from_json(const nlohmann::json& j);

// report.json, channels.csv and one rates-<gate>.csv per gate.
void write_report_files(const PruneReport& r, const std::filesystem::path& dir);

}  // namespace rbp
