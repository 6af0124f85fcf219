#include "rbp/commands.hpp"

#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "rbp/error.hpp"

namespace rbp {
namespace fs = std::filesystem;

namespace {

constexpr const char* kLogHeader = "phase,stage,epoch,batch,layer,L_D,kl,acc\n";

class CsvLog {
 public:
  explicit CsvLog(const fs::path& path) {
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw DataError("cannot open " + path.string());
    if (fresh) out_ << kLogHeader;
  }

  void operator()(const LogRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%s,%.9g,%.9g,%.6f\n", r.phase.c_str(), r.stage, r.epoch, r.batch,
                  r.layer.c_str(), r.data_term, r.kl, r.accuracy);
    out_ << buf;
  }

  TrainLogger logger() {
    return [this](const LogRow& r) { (*this)(r); };
  }

 private:
  std::ofstream out_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void prepare_output(const RunConfig& c, const CommandOptions& o) {
  fs::create_directories(o.out);
  write_text(o.out / "config.resolved.json", resolved_config_text(c));
}

Checkpoint load_resume(const RunConfig& c, const CommandOptions& o, const std::string& phase) {
  Checkpoint ck = load_checkpoint(*o.resume);
  if (ck.meta.phase != phase) {
    throw ValidationError("--resume " + o.resume->string() + " holds a '" + ck.meta.phase + "' checkpoint, not '" +
                          phase + "'");
  }
  if (ck.meta.config_hash != config_hash(c)) {
    if (!o.allow_config_mismatch) {
      throw ValidationError("--resume " + o.resume->string() +
                            " was written under a different config (hash mismatch); pass --allow-config-mismatch "
                            "to continue anyway");
    }
    spdlog::warn("resuming {} under a different config", o.resume->string());
  }
  return ck;
}

Checkpoint load_input(const CommandOptions& o, const std::string& command) {
  if (!o.checkpoint) throw ValidationError(command + " needs --checkpoint");
  return load_checkpoint(*o.checkpoint);
}

TrainData train_data(const RunConfig& c, const Dataset& train, std::size_t batch_size) {
  return TrainData{&train, batch_size, AugmentSettings{c.dataset.augmentation}, c.dataset.seed};
}

CheckpointMeta meta(const RunConfig& c, std::string phase, std::uint64_t stage, std::uint64_t epoch) {
  return CheckpointMeta{config_hash(c), std::move(phase), stage, epoch, c.dataset.seed, nlohmann::json::object()};
}

}  // namespace

RunConfig effective_config(RunConfig c, const CommandOptions& o) {
  if (o.seed) {
    c.dataset.seed = *o.seed;
    c.model.init_seed = *o.seed;
  }
  return c;
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".rbp.lock") {
  fs::create_directories(dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    throw StateError("output directory " + dir.string() + " is in use by another command (remove " +
                     path_.string() + " if that command is no longer running)");
  }
  std::fclose(f);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

nlohmann::json progress_to_json(const PipelineProgress& p) {
  nlohmann::json stages = nlohmann::json::array();
  for (const StageRecord& s : p.stages) {
    stages.push_back({{"index", s.index},
                      {"gates", s.gates},
                      {"steps", s.steps},
                      {"bimodal_fraction", s.bimodal_fraction},
                      {"flops_after", s.flops_after}});
  }
  return {{"original", to_json(p.original)},
          {"completed", p.completed},
          {"fold_rates", p.fold_rates},
          {"stages", stages},
          {"accuracy_before", p.accuracy_before ? nlohmann::json(*p.accuracy_before) : nlohmann::json()}};
}

PipelineProgress progress_from_json(const nlohmann::json& j, std::vector<GateState> gates) {
  try {
    PipelineProgress p;
    p.original = architecture_from_json(j.at("original"));
    p.completed = j.at("completed").get<std::size_t>();
    p.fold_rates = j.at("fold_rates").get<std::map<std::string, std::vector<double>>>();
    for (const auto& s : j.at("stages")) {
      p.stages.push_back({s.at("index").get<std::size_t>(), s.at("gates").get<std::vector<std::string>>(),
                          s.at("steps").get<std::size_t>(), s.at("bimodal_fraction").get<double>(),
                          s.at("flops_after").get<std::uint64_t>()});
    }
    if (!j.at("accuracy_before").is_null()) p.accuracy_before = j.at("accuracy_before").get<double>();
    p.gates = std::move(gates);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint holds no usable pipeline progress: ") + e.what());
  }
}

double cmd_pretrain(const RunConfig& config, const CommandOptions& o) {
  const RunConfig c = effective_config(config, o);
  OutputLock lock(o.out);
  prepare_output(c, o);
  const DataSplits data = load_splits(c);

  Model<float> model;
  std::size_t first_epoch = 0;
  if (o.resume) {
    Checkpoint ck = load_resume(c, o, "pretrain");
    model = std::move(ck.model);
    first_epoch = ck.meta.epoch;
    spdlog::info("resuming pretraining at epoch {}", first_epoch);
  } else {
    model = Model<float>::initialize(build_architecture(c), c.model.init_seed);
  }

  CsvLog log(o.out / "train-log.csv");
  SupervisedSettings s;
  s.first_epoch = first_epoch;
  s.epochs = c.pretrain.epochs > first_epoch ? c.pretrain.epochs - first_epoch : 0;
  s.optimizer = c.pretrain.optimizer == "sgd" ? SupervisedSettings::Optimizer::sgd : SupervisedSettings::Optimizer::adam;
  s.lr = [lr = c.pretrain.lr](std::size_t) { return lr; };
  s.momentum = c.pretrain.momentum;
  s.phase = "pretrain";
  s.on_epoch_end = [&](std::size_t next) {
    save_checkpoint({meta(c, "pretrain", 0, next), model, {}}, o.out / "pretrain.ckpt");
  };
  const TrainData td = train_data(c, data.train, c.dataset.batch_size);
  train_supervised(model, td, s, log.logger());

  const double acc = evaluate_accuracy(model, data.test, evaluation_augment(td.augment));
  Checkpoint final{meta(c, "pretrain", 0, std::max(first_epoch, c.pretrain.epochs)), model, {}};
  final.meta.extra["test_accuracy"] = acc;
  save_checkpoint(final, o.out / "pretrain.ckpt");
  spdlog::info("pretrain: test accuracy {:.4f} after {} epochs", acc, c.pretrain.epochs);
  return acc;
}

PruneReport cmd_prune(const RunConfig& config, const CommandOptions& o) {
  const RunConfig c = effective_config(config, o);
  OutputLock lock(o.out);
  prepare_output(c, o);
  const Architecture expected = build_architecture(c);
  const PruneSchedule schedule = build_schedule(c, expected);
  const DataSplits data = load_splits(c);

  Model<float> start;
  std::optional<PipelineProgress> resume;
  if (o.resume) {
    Checkpoint ck = load_resume(c, o, "prune");
    resume = progress_from_json(ck.meta.extra, std::move(ck.gates));
    if (!(resume->original == expected)) {
      throw ValidationError("--resume checkpoint was pruned from a different architecture than the config's");
    }
    start = std::move(ck.model);
    spdlog::info("resuming pruning after stage {}", resume->completed);
  } else {
    Checkpoint ck = load_input(o, "prune");
    if (!(ck.model.architecture() == expected)) {
      throw ValidationError("architecture mismatch: --checkpoint " + o.checkpoint->string() + " holds '" +
                            ck.model.architecture().name + "' which differs from the config's '" + expected.name +
                            "'");
    }
    start = std::move(ck.model);
  }

  CsvLog log(o.out / "train-log.csv");
  PipelineHooks hooks;
  hooks.log = log.logger();
  hooks.on_stage_end = [&](const Model<float>& m, const PipelineProgress& p) {
    Checkpoint ck{meta(c, "prune", p.completed, 0), m, p.gates};
    ck.meta.extra = progress_to_json(p);
    save_checkpoint(ck, o.out / ("stage-" + std::to_string(p.completed) + ".ckpt"));
  };
  PruneSchedule sched = schedule;
  sched.finetune.batch_size = c.dataset.batch_size;
  const std::size_t stage_batch = c.rbp.batch_size ? c.rbp.batch_size : c.dataset.batch_size;
  const PipelineResult r = rbp_pipeline(start, train_data(c, data.train, stage_batch), &data.test, sched,
                                        c.flop_convention, hooks, resume ? &*resume : nullptr);

  Checkpoint out{meta(c, "prune", r.progress.completed, c.finetune.epochs), r.model, r.progress.gates};
  out.meta.extra = progress_to_json(r.progress);
  save_checkpoint(out, o.out / "pruned.ckpt");
  write_report_files(r.report, o.out);
  spdlog::info("prune: FLOPs {:.2f}x lower, {:.2f}x fewer parameters", r.report.flops_ratio, r.report.compression_rate);
  return r.report;
}

double cmd_finetune(const RunConfig& config, const CommandOptions& o) {
  const RunConfig c = effective_config(config, o);
  OutputLock lock(o.out);
  prepare_output(c, o);
  const DataSplits data = load_splits(c);

  Checkpoint ck = o.resume ? load_resume(c, o, "finetune") : load_input(o, "finetune");
  const std::size_t first_epoch = o.resume ? ck.meta.epoch : 0;
  if (!o.resume) ck.model.params().reset_state();
  Model<float> model = std::move(ck.model);
  const FinetuneSettings f = build_finetune(c);

  CsvLog log(o.out / "train-log.csv");
  SupervisedSettings s;
  s.first_epoch = first_epoch;
  s.epochs = f.epochs > first_epoch ? f.epochs - first_epoch : 0;
  s.optimizer = SupervisedSettings::Optimizer::sgd;
  s.momentum = f.optimizer.momentum;
  s.lr = [&f](std::size_t e) { return f.lr_for_epoch(e); };
  s.phase = "finetune";
  s.on_epoch_end = [&](std::size_t next) {
    save_checkpoint({meta(c, "finetune", 0, next), model, ck.gates}, o.out / "finetune.ckpt");
  };
  const TrainData td = train_data(c, data.train, c.dataset.batch_size);
  train_supervised(model, td, s, log.logger());
  const double acc = evaluate_accuracy(model, data.test, evaluation_augment(td.augment));
  Checkpoint final{meta(c, "finetune", 0, std::max(first_epoch, f.epochs)), model, ck.gates};
  final.meta.extra["test_accuracy"] = acc;
  save_checkpoint(final, o.out / "finetune.ckpt");
  spdlog::info("finetune: test accuracy {:.4f}", acc);
  return acc;
}

double cmd_eval(const RunConfig& config, const CommandOptions& o) {
  const RunConfig c = effective_config(config, o);
  const Checkpoint ck = load_input(o, "eval");
  const DataSplits data = load_splits(c);
  return evaluate_accuracy(ck.model, data.test, evaluation_augment(AugmentSettings{c.dataset.augmentation}));
}

void cmd_report(const CommandOptions& o) {
  const fs::path path = o.out / "report.json";
  if (!fs::exists(path)) throw DataError("no report to render: " + path.string() + " does not exist");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
  OutputLock lock(o.out);
  write_report_files(prune_report_from_json(j), o.out);
}

}  // namespace rbp
