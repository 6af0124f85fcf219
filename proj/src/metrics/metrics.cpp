#include "rbp/metrics.hpp"

#include <cstdio>
#include <fstream>

#include "rbp/error.hpp"

namespace rbp {
namespace fs = std::filesystem;

std::string_view to_string(FlopConvention c) { return c == FlopConvention::mac ? "mac" : "flop"; }

FlopConvention flop_convention_from_string(std::string_view s) {
  if (s == "mac") return FlopConvention::mac;
  if (s == "flop") return FlopConvention::flop;
  throw ValidationError("unknown FLOPs convention '" + std::string(s) + "' (expected mac or flop)");
}

std::map<std::string, std::uint64_t> layer_macs(const Architecture& arch, std::size_t height, std::size_t width) {
  const auto shapes = trace_shapes(arch, height, width);
  std::map<std::string, std::uint64_t> out;
  for (const auto& [id, s] : shapes) {
    const LayerSpec& l = find_layer(arch, id);
    if (l.kind == LayerKind::conv) {
      out[id] = std::uint64_t{l.in} * l.out * l.kernel * l.kernel * s.out_h * s.out_w;
    } else if (l.kind == LayerKind::linear) {
      out[id] = std::uint64_t{l.in} * l.out;
    } else {
      throw ShapeError("count_flops: unsupported layer kind " + std::string(to_string(l.kind)));
    }
  }
  return out;
}

std::uint64_t count_flops(const Architecture& arch, FlopConvention convention, std::size_t resolution) {
  const std::size_t h = resolution ? resolution : arch.height, w = resolution ? resolution : arch.width;
  std::uint64_t macs = 0;
  for (const auto& [id, m] : layer_macs(arch, h, w)) macs += m;
  return convention == FlopConvention::flop ? 2 * macs : macs;
}

double compression_rate(const Architecture& before, const Architecture& after) {
  return static_cast<double>(parameter_count(before)) / static_cast<double>(parameter_count(after));
}

std::vector<std::size_t> rate_histogram(std::span<const double> rates) {
  std::vector<std::size_t> bins(kHistogramBins, 0);
  for (double r : rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw ValidationError("rate " + std::to_string(r) + " outside [0, 1]");
    ++bins[std::min(kHistogramBins - 1, static_cast<std::size_t>(r * kHistogramBins))];
  }
  return bins;
}

double bimodal_fraction(std::span<const double> rates) {
  if (rates.empty()) return 1.0;
  std::size_t ends = 0;
  for (double r : rates) ends += (r <= 0.1 || r >= 0.9);
  return static_cast<double>(ends) / static_cast<double>(rates.size());
}

PruneReport build_report(const Architecture& before, const Architecture& after,
                         const std::map<std::string, std::vector<double>>& fold_rates, FlopConvention convention) {
  PruneReport r;
  r.architecture = before.name;
  r.convention = convention;
  r.height = before.height;
  r.width = before.width;
  const auto macs_before = layer_macs(before, before.height, before.width);
  const auto macs_after = layer_macs(after, before.height, before.width);
  std::uint64_t prefix_before = 0, prefix_after = 0;
  for (const std::string& id : param_layer_ids(before)) {
    const LayerSpec& lb = find_layer(before, id);
    const LayerSpec& la = find_layer(after, id);
    if (la.out > lb.out) {
      throw StateError("layer '" + id + "' grew from " + std::to_string(lb.out) + " to " + std::to_string(la.out));
    }
    prefix_before += macs_before.at(id);
    prefix_after += macs_after.at(id);
    r.channels.push_back({id, la.out, lb.out, 100.0 * static_cast<double>(la.out) / static_cast<double>(lb.out),
                          static_cast<double>(prefix_before) / static_cast<double>(prefix_after)});
  }
  r.flops_before = count_flops(before, convention);
  r.flops_after = count_flops(after, convention, 0);
  r.flops_ratio = static_cast<double>(r.flops_before) / static_cast<double>(r.flops_after);
  r.params_before = parameter_count(before);
  r.params_after = parameter_count(after);
  r.compression_rate = compression_rate(before, after);
  for (const auto& [id, rates] : fold_rates) {
    if (locate_gate_site(before, id).channels != rates.size()) {
      throw StateError("fold rates for '" + id + "' do not match the layer's input channels");
    }
    r.fold_rates[id] = rates;
    r.histograms[id] = rate_histogram(rates);
  }
  return r;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

nlohmann::json to_json(const PruneReport& r) {
  nlohmann::json j;
  j["architecture"] = r.architecture;
  j["flop_convention"] = to_string(r.convention);
  j["input"] = {{"height", r.height}, {"width", r.width}};
  j["flops"] = {{"before", r.flops_before}, {"after", r.flops_after}, {"ratio", r.flops_ratio}};
  j["parameters"] = {{"before", r.params_before}, {"after", r.params_after}, {"compression_rate", r.compression_rate}};
  j["accuracy"] = {{"before", optional_json(r.accuracy_before)},
                   {"pruned", optional_json(r.accuracy_pruned)},
                   {"finetuned", optional_json(r.accuracy_finetuned)}};
  j["augmentation"] = r.augmentation;
  j["finetune_lr"] = r.finetune_lr;
  j["channels"] = nlohmann::json::array();
  for (const ChannelRow& c : r.channels) {
    j["channels"].push_back({{"layer", c.layer},
                             {"remained", c.remained},
                             {"original", c.original},
                             {"percent", c.percent},
                             {"cumulative_flops_ratio", c.cumulative_flops_ratio}});
  }
  j["gates"] = nlohmann::json::object();
  for (const auto& [id, rates] : r.fold_rates) j["gates"][id] = {{"fold_rates", rates}, {"histogram", r.histograms.at(id)}};
  j["stages"] = nlohmann::json::array();
  for (const StageRecord& s : r.stages) {
    j["stages"].push_back({{"index", s.index},
                           {"gates", s.gates},
                           {"steps", s.steps},
                           {"bimodal_fraction", s.bimodal_fraction},
                           {"flops_after", s.flops_after}});
  }
  return j;
}

PruneReport prune_report_from_json(const nlohmann::json& j) {
  try {
    PruneReport r;
    r.architecture = j.at("architecture").get<std::string>();
    r.convention = flop_convention_from_string(j.at("flop_convention").get<std::string>());
    r.height = j.at("input").at("height").get<std::size_t>();
    r.width = j.at("input").at("width").get<std::size_t>();
    r.flops_before = j.at("flops").at("before").get<std::uint64_t>();
    r.flops_after = j.at("flops").at("after").get<std::uint64_t>();
    r.flops_ratio = j.at("flops").at("ratio").get<double>();
    r.params_before = j.at("parameters").at("before").get<std::size_t>();
    r.params_after = j.at("parameters").at("after").get<std::size_t>();
    r.compression_rate = j.at("parameters").at("compression_rate").get<double>();
    r.accuracy_before = optional_from(j.at("accuracy").at("before"));
    r.accuracy_pruned = optional_from(j.at("accuracy").at("pruned"));
    r.accuracy_finetuned = optional_from(j.at("accuracy").at("finetuned"));
    r.augmentation = j.at("augmentation").get<std::string>();
    r.finetune_lr = j.at("finetune_lr").get<std::vector<double>>();
    for (const auto& c : j.at("channels")) {
      r.channels.push_back({c.at("layer").get<std::string>(), c.at("remained").get<std::size_t>(),
                            c.at("original").get<std::size_t>(), c.at("percent").get<double>(),
                            c.at("cumulative_flops_ratio").get<double>()});
    }
    for (const auto& [id, g] : j.at("gates").items()) {
      r.fold_rates[id] = g.at("fold_rates").get<std::vector<double>>();
      r.histograms[id] = g.at("histogram").get<std::vector<std::size_t>>();
    }
    for (const auto& s : j.at("stages")) {
      r.stages.push_back({s.at("index").get<std::size_t>(), s.at("gates").get<std::vector<std::string>>(),
                          s.at("steps").get<std::size_t>(), s.at("bimodal_fraction").get<double>(),
                          s.at("flops_after").get<std::uint64_t>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

void write_report_files(const PruneReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "report.json", std::ios::binary);
    out << to_json(r).dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "channels.csv", std::ios::binary);
    out << "layer,remained,original,percent,cumulative_flops_ratio\n";
    for (const ChannelRow& c : r.channels) {
      out << c.layer << ',' << c.remained << ',' << c.original << ',' << format_number(c.percent) << ','
          << format_number(c.cumulative_flops_ratio) << '\n';
    }
  }
  for (const auto& [id, bins] : r.histograms) {
    std::ofstream out(dir / ("rates-" + id + ".csv"), std::ios::binary);
    out << "bin_low,bin_high,count\n";
    for (std::size_t b = 0; b < bins.size(); ++b) {
      out << format_number(static_cast<double>(b) / kHistogramBins) << ','
          << format_number(static_cast<double>(b + 1) / kHistogramBins) << ',' << bins[b] << '\n';
    }
  }
  if (!fs::exists(dir / "report.json")) throw DataError("could not write report files to " + dir.string());
}

}  // namespace rbp
