#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rbp/metrics.hpp"
#include "rbp/zoo.hpp"

using namespace rbp;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Architecture single_conv() {
  Architecture a;
  a.name = "single";
  a.channels = 3;
  a.height = a.width = 32;
  a.layers = {conv_layer("conv", 3, 16, 3, 1, 1)};
  return a;
}

}  // namespace

TEST_CASE("conv MACs are Cin Cout k^2 Hout Wout") {
  CHECK(count_flops(single_conv(), FlopConvention::mac) == 442368);
  CHECK(count_flops(single_conv(), FlopConvention::flop) == 2 * 442368);
}

TEST_CASE("reference network totals") {
  const double vgg = static_cast<double>(count_flops(zoo::vgg16(), FlopConvention::flop));
  CHECK(std::abs(vgg - 31.0e9) <= 0.02 * 31.0e9);
  const double resnet = static_cast<double>(count_flops(zoo::resnet50(), FlopConvention::mac));
  CHECK(std::abs(resnet - 4.1e9) <= 0.05 * 4.1e9);
}

TEST_CASE("FLOP convention doubles MACs for every model") {
  for (const Architecture& a : {zoo::mnist_convnet(), zoo::vgg16_cifar(), zoo::resnet_toy(), zoo::planted_net(4, 8, 4, 8),
                                zoo::resnet50(64)}) {
    CHECK(count_flops(a, FlopConvention::flop) == 2 * count_flops(a, FlopConvention::mac));
  }
  CHECK(count_flops(single_conv(), FlopConvention::mac, 16) * 4 == count_flops(single_conv(), FlopConvention::mac));
}

TEST_CASE("compression rate") {
  const Architecture a = zoo::mnist_convnet();
  CHECK(compression_rate(a, a) == 1.0);

  Architecture half = a;
  for (LayerSpec& l : half.layers)
    if (l.has_params()) l.out /= 2;
  Architecture full = a;
  for (LayerSpec& l : full.layers)
    if (l.has_params()) l.out = (l.out / 2) * 2;
  CHECK(compression_rate(full, half) == doctest::Approx(2.0));

  Architecture toy;
  toy.name = "toy";
  toy.channels = 2;
  toy.height = toy.width = 4;
  toy.classes = 3;
  toy.layers = {conv_layer("c", 2, 5, 3, 1, 1), global_avg_pool_layer(), flatten_layer(), linear_layer("f", 5, 3, true)};
  CHECK(parameter_count(toy) == 2 * 5 * 9 + 5 * 3 + 3);
  Architecture smaller = toy;
  find_layer(smaller, "c").out = 2;
  find_layer(smaller, "f").in = 2;
  CHECK(compression_rate(toy, smaller) == doctest::Approx(108.0 / (2 * 2 * 9 + 2 * 3 + 3)));
}

TEST_CASE("histograms") {
  const std::vector<double> rates = {0.0, 0.01, 0.049, 0.05, 0.5, 0.95, 0.999, 1.0};
  const auto h = rate_histogram(rates);
  CHECK(h.size() == 20);
  CHECK(std::accumulate(h.begin(), h.end(), std::size_t{0}) == rates.size());
  CHECK(h[0] == 3);
  CHECK(h[1] == 1);
  CHECK(h[10] == 1);
  CHECK(h[19] == 3);
  CHECK(bimodal_fraction(rates) == doctest::Approx(7.0 / 8.0));
  CHECK_THROWS_AS(rate_histogram(std::vector<double>{1.5}), ValidationError);
}

TEST_CASE("zero-gate report is the identity") {
  const Architecture a = zoo::mnist_convnet();
  const PruneReport r = build_report(a, a, {}, FlopConvention::flop);
  CHECK(r.compression_rate == 1.0);
  CHECK(r.flops_ratio == 1.0);
  for (const ChannelRow& c : r.channels) {
    CHECK(c.remained == c.original);
    CHECK(c.percent == 100.0);
    CHECK(c.cumulative_flops_ratio == 1.0);
  }
  CHECK(r.histograms.empty());
}

TEST_CASE("report rows follow the compacted shapes") {
  const Architecture before = zoo::mnist_convnet();
  Architecture after = before;
  find_layer(after, "conv1").out = 4;
  find_layer(after, "conv2").in = 4;
  find_layer(after, "conv2").out = 8;
  find_layer(after, "fc1").in = 8 * 49;
  std::vector<double> rates(16, 0.01);
  for (std::size_t c = 0; c < 12; ++c) rates[c] = 0.97;
  const PruneReport r = build_report(before, after, {{"conv2", rates}}, FlopConvention::mac);
  CHECK(r.channels[0].layer == "conv1");
  CHECK(r.channels[0].remained == 4);
  CHECK(r.channels[0].percent == doctest::Approx(25.0));
  CHECK(r.channels[0].cumulative_flops_ratio == doctest::Approx(4.0));
  CHECK(r.channels[1].remained == 8);
  CHECK(r.flops_ratio == static_cast<double>(r.flops_before) / static_cast<double>(r.flops_after));
  CHECK(r.histograms.at("conv2")[19] == 12);
  CHECK(r.histograms.at("conv2")[0] == 4);
  const auto last = r.channels.back();
  CHECK(last.cumulative_flops_ratio == doctest::Approx(r.flops_ratio));
  CHECK_THROWS_AS(build_report(before, after, {{"conv2", {0.5}}}, FlopConvention::mac), StateError);
}

TEST_CASE("report round-trips through JSON and regenerates identical files") {
  const Architecture before = zoo::planted_net(4, 8, 4, 8);
  Architecture after = before;
  find_layer(after, "conv2").in = 4;
  find_layer(after, "conv1").out = 4;
  PruneReport r = build_report(before, after, {{"conv2", {0.01, 0.02, 0.99, 0.98, 0.1234567890123, 0.97, 0.96, 0.95}}},
                               FlopConvention::flop);
  r.accuracy_before = 0.9731;
  r.accuracy_finetuned = 0.9712345678901234;
  r.finetune_lr = {1e-4, 5e-5};
  r.stages.push_back({1, {"conv2"}, 1234, 0.875, r.flops_after});
  const PruneReport back = prune_report_from_json(nlohmann::json::parse(to_json(r).dump()));
  CHECK(back == r);

  const fs::path a = fs::temp_directory_path() / "rbp-report-a", b = fs::temp_directory_path() / "rbp-report-b";
  fs::remove_all(a);
  fs::remove_all(b);
  write_report_files(r, a);
  write_report_files(prune_report_from_json(nlohmann::json::parse(slurp(a / "report.json"))), b);
  for (const auto& name : {"report.json", "channels.csv", "rates-conv2.csv"}) CHECK(slurp(a / name) == slurp(b / name));
  CHECK(slurp(a / "channels.csv").rfind("layer,remained,original,percent,cumulative_flops_ratio\n", 0) == 0);
  CHECK_THROWS_AS(prune_report_from_json(nlohmann::json::parse("{}")), DataError);
}
