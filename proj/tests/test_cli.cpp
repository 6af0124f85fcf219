#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rbp/commands.hpp"
#include "rbp/error.hpp"

using namespace rbp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rbp-cli-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_of(const json& j) {
  try {
    config_from_json(j);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

json planted_json() {
  return {{"dataset",
           {{"name", "planted"},
            {"batch_size", 16},
            {"planted_train", 400},
            {"planted_test", 200},
            {"planted_channels", 4},
            {"planted_size", 8}}},
          {"model", {{"architecture", "planted_net"}}},
          {"pretrain", {{"epochs", 2}, {"lr", 0.01}}},
          {"rbp", {{"trigger_epochs", 1}}},
          {"finetune", {{"epochs", 1}}}};
}

json mnist_json() {
  return {{"dataset", {{"batch_size", 16}, {"train_limit", 500}, {"test_limit", 200}}},
          {"pretrain", {{"epochs", 1}}},
          {"rbp", {{"trigger_epochs", 1}, {"scope", {"conv2", "fc1"}}}},
          {"finetune", {{"epochs", 1}}}};
}

CommandOptions in_dir(const fs::path& out) {
  CommandOptions o;
  o.out = out;
  return o;
}

void check_same_params(const Model<float>& a, const Model<float>& b) {
  REQUIRE(a.params().size() == b.params().size());
  for (const auto& [name, p] : a.params()) {
    const auto& q = b.params().at(name);
    CHECK_MESSAGE(std::ranges::equal(p.value.data(), q.value.data()), name);
  }
}

}  // namespace

TEST_CASE("missing keys take their defaults") {
  const RunConfig c = config_from_json(json::object());
  CHECK(c.dataset.name == "mnist");
  CHECK(c.dataset.batch_size == 64);
  CHECK(c.model.architecture == "mnist_convnet");
  CHECK(c.rbp.threshold == 0.5);
  CHECK(c.rbp.prior_variance == 0.025);
  CHECK(c.rbp.init_rate == 0.01);
  CHECK(c.rbp.lr == 1e-4);
  CHECK(c.finetune.epochs == 10);
  CHECK(c.flop_convention == FlopConvention::flop);
}

TEST_CASE("resolved config re-parses to the same text and hash") {
  const RunConfig c = config_from_json(planted_json());
  const std::string text = resolved_config_text(c);
  const RunConfig again = config_from_json(json::parse(text));
  CHECK(resolved_config_text(again) == text);
  CHECK(config_hash(again) == config_hash(c));

  RunConfig other = c;
  other.rbp.trigger_epochs = 2;
  CHECK(config_hash(other) != config_hash(c));
}

TEST_CASE("every config problem is listed at once") {
  const json j = {{"dataset", {{"batch_size", 0}, {"colour", "red"}}},
                  {"rbp", {{"threshold", 2.0}, {"prior_variance", 0.3}}},
                  {"pretrain", {{"epochs", "ten"}}},
                  {"extras", json::object()}};
  const std::string msg = error_of(j);
  CHECK(msg.find("6 problems") != std::string::npos);
  CHECK(msg.find("batch_size") != std::string::npos);
  CHECK(msg.find("colour") != std::string::npos);
  CHECK(msg.find("threshold") != std::string::npos);
  CHECK(msg.find("prior_variance") != std::string::npos);
  CHECK(msg.find("epochs") != std::string::npos);
  CHECK(msg.find("extras") != std::string::npos);
}

TEST_CASE("structural config errors") {
  CHECK_FALSE(error_of({{"model", {{"architecture", "lenet"}}}}).empty());
  CHECK_FALSE(error_of({{"rbp", {{"mode", "rrbp"}}}}).empty());
  CHECK_FALSE(error_of({{"rbp", {{"scope", {"conv9"}}}}}).empty());
  CHECK_FALSE(error_of({{"dataset", {{"name", "cifar10"}}}}).empty());
  CHECK_FALSE(error_of({{"metrics", {{"flop_convention", "ops"}}}}).empty());
  CHECK_THROWS_AS(config_from_json(json::array()), ValidationError);
}

TEST_CASE("rrbp config on a residual model") {
  json j = {{"dataset", {{"name", "cifar10"}, {"root", "data/cifar10"}}},
            {"model", {{"architecture", "resnet_toy"}}},
            {"rbp", {{"mode", "rrbp"}}}};
  const RunConfig c = config_from_json(j);
  CHECK(build_schedule(c, build_architecture(c)).stages.size() == 1);
  j["model"]["architecture"] = "resnet_bottleneck_toy";
  j["dataset"]["name"] = "mnist";
  CHECK_FALSE(error_of(j).empty());
}

TEST_CASE("seed override reaches data and model") {
  CommandOptions o;
  o.seed = 42;
  const RunConfig c = effective_config(RunConfig{}, o);
  CHECK(c.dataset.seed == 42);
  CHECK(c.model.init_seed == 42);
}

TEST_CASE("checkpoints round-trip bit for bit") {
  const RunConfig c = config_from_json(planted_json());
  Model<float> m = Model<float>::initialize(build_architecture(c), 3);

  Checkpoint plain{{config_hash(c), "pretrain", 0, 0, 7, json::object()}, m, {}};
  const std::string a = encode_checkpoint(plain);
  CHECK(encode_checkpoint(decode_checkpoint(a)) == a);

  const DataSplits data = load_splits(c);
  SupervisedSettings s;
  s.optimizer = SupervisedSettings::Optimizer::adam;
  s.lr = [](std::size_t) { return 1e-2; };
  train_supervised(m, TrainData{&data.train, 16, {}, 0}, s);
  GateState g = GateState::create("conv1", 8);
  g.rates.value[3] = 0.75;
  g.rates.steps = 12;
  Checkpoint full{{config_hash(c), "prune", 1, 0, 7, json{{"note", "x"}}}, m, {g}};
  const fs::path dir = fresh_dir("roundtrip");
  save_checkpoint(full, dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.meta.phase == "prune");
  CHECK(back.meta.extra["note"] == "x");
  REQUIRE(back.gates.size() == 1);
  CHECK(back.gates[0].rate(3) == 0.75);
  CHECK(back.gates[0].rates.steps == 12);
  check_same_params(back.model, m);
  for (const auto& [name, p] : m.params()) {
    const auto& q = back.model.params().at(name);
    CHECK(std::ranges::equal(q.first_moment.data(), p.first_moment.data()));
    CHECK(std::ranges::equal(q.second_moment.data(), p.second_moment.data()));
    CHECK(q.steps == p.steps);
  }
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
}

TEST_CASE("corrupt checkpoints are data errors") {
  const RunConfig c = config_from_json(planted_json());
  const Model<float> m = Model<float>::initialize(build_architecture(c), 3);
  const std::string bytes = encode_checkpoint({{0, "pretrain", 0, 0, 0, json::object()}, m, {}});

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), DataError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), DataError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "tail"), DataError);
  CHECK_THROWS_AS(load_checkpoint(fresh_dir("missing") / "none.ckpt"), DataError);
}

TEST_CASE("a second command on the same output directory is refused") {
  const fs::path dir = fresh_dir("lock");
  {
    OutputLock first(dir);
    CHECK_THROWS_AS(OutputLock{dir}, StateError);
    CHECK_THROWS_AS(cmd_pretrain(config_from_json(planted_json()), in_dir(dir)), StateError);
  }
  CHECK_NOTHROW(OutputLock{dir});
  CHECK_FALSE(fs::exists(dir / ".rbp.lock"));
}

TEST_CASE("resumed pretraining equals an uninterrupted run") {
  json j = planted_json();
  j["pretrain"]["epochs"] = 3;
  const RunConfig full = config_from_json(j);
  const fs::path a = fresh_dir("pre-a"), b = fresh_dir("pre-b");
  const double acc = cmd_pretrain(full, in_dir(a));

  j["pretrain"]["epochs"] = 1;
  cmd_pretrain(config_from_json(j), in_dir(b));
  CommandOptions o = in_dir(b);
  o.resume = b / "pretrain.ckpt";
  CHECK_THROWS_AS(cmd_pretrain(full, o), ValidationError);
  o.allow_config_mismatch = true;
  CHECK(cmd_pretrain(full, o) == acc);

  const Checkpoint x = load_checkpoint(a / "pretrain.ckpt"), y = load_checkpoint(b / "pretrain.ckpt");
  CHECK(y.meta.epoch == 3);
  check_same_params(x.model, y.model);
  CHECK(fs::exists(a / "config.resolved.json"));
  CHECK(slurp(a / "train-log.csv").rfind("phase,stage,epoch,batch,layer,L_D,kl,acc\n", 0) == 0);
}

TEST_CASE("one-epoch MNIST smoke pretrain") {
  const json j = {{"dataset", {{"train_limit", 1000}, {"batch_size", 16}}}, {"pretrain", {{"epochs", 1}}}};
  const double acc = cmd_pretrain(config_from_json(j), in_dir(fresh_dir("smoke")));
  CHECK(acc > 0.8);
}

TEST_CASE("a missing dataset names the expected files") {
  const RunConfig c = config_from_json({{"dataset", {{"root", "no/such/dir"}}}});
  try {
    load_splits(c);
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("train-images-idx3-ubyte") != std::string::npos);
  }
}

TEST_CASE("MNIST prune runs are reproducible, resumable and re-renderable") {
  const RunConfig c = config_from_json(mnist_json());
  const fs::path base = fresh_dir("prune-base");
  cmd_pretrain(c, in_dir(base));
  const fs::path ckpt = base / "pretrain.ckpt";

  CommandOptions o1 = in_dir(fresh_dir("prune-1")), o2 = in_dir(fresh_dir("prune-2"));
  o1.checkpoint = o2.checkpoint = ckpt;
  const PruneReport r1 = cmd_prune(c, o1);
  cmd_prune(c, o2);
  CHECK(r1.flops_ratio >= 1.0);
  CHECK(slurp(o1.out / "report.json") == slurp(o2.out / "report.json"));
  CHECK(slurp(o1.out / "pruned.ckpt") == slurp(o2.out / "pruned.ckpt"));
  CHECK(fs::exists(o1.out / "stage-1.ckpt"));

  SUBCASE("resume after the first stage") {
    CommandOptions o3 = in_dir(fresh_dir("prune-3"));
    o3.resume = o1.out / "stage-1.ckpt";
    cmd_prune(c, o3);
    CHECK(slurp(o3.out / "report.json") == slurp(o1.out / "report.json"));
    CHECK(slurp(o3.out / "pruned.ckpt") == slurp(o1.out / "pruned.ckpt"));
  }
  SUBCASE("report files regenerate identically") {
    std::vector<std::pair<fs::path, std::string>> files;
    for (const auto& e : fs::directory_iterator(o1.out))
      if (e.path().extension() == ".csv" && e.path().filename() != "train-log.csv")
        files.emplace_back(e.path(), slurp(e.path()));
    REQUIRE_FALSE(files.empty());
    for (const auto& [p, text] : files) fs::remove(p);
    cmd_report(o1);
    for (const auto& [p, text] : files) CHECK(slurp(p) == text);
  }
  SUBCASE("eval and finetune consume the pruned checkpoint") {
    CommandOptions e = in_dir(fresh_dir("prune-eval"));
    e.checkpoint = o1.out / "pruned.ckpt";
    const std::string before = slurp(*e.checkpoint);
    const double acc = cmd_eval(c, e);
    CHECK(acc == doctest::Approx(r1.accuracy_finetuned.value_or(acc)));
    CHECK(slurp(*e.checkpoint) == before);
    CHECK(fs::is_empty(e.out));
    CHECK(cmd_finetune(c, e) > 0.5);
    CHECK(fs::exists(e.out / "finetune.ckpt"));
  }
  SUBCASE("mismatched inputs") {
    json j = mnist_json();
    j["model"]["widths"] = {8, 32, 128};
    CommandOptions o = in_dir(fresh_dir("prune-bad"));
    o.checkpoint = ckpt;
    CHECK_THROWS_AS(cmd_prune(config_from_json(j), o), ValidationError);
    o.checkpoint.reset();
    CHECK_THROWS_AS(cmd_prune(c, o), ValidationError);
    o.resume = ckpt;
    CHECK_THROWS_AS(cmd_prune(c, o), ValidationError);
  }
}
