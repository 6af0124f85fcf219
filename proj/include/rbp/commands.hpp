#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "rbp/checkpoint.hpp"
#include "rbp/config.hpp"

namespace rbp {

struct CommandOptions {
  std::filesystem::path out = "runs/default";
  std::optional<std::uint64_t> seed;               // overrides dataset.seed and model.init_seed
  std::optional<std::filesystem::path> checkpoint;  // input model
  std::optional<std::filesystem::path> resume;      // continue an interrupted run
  bool allow_config_mismatch = false;
};

// Applies the seed override.
RunConfig effective_config(RunConfig c, const CommandOptions& o);

// Holds <dir>/.rbp.lock for its lifetime; a second holder gets a StateError.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Each command writes config.resolved.json beside its outputs and appends to
// train-log.csv. ValidationError means bad input (exit 1); other errors are
// runtime failures (exit 2).

// Writes pretrain.ckpt after every epoch; returns test accuracy.
double cmd_pretrain(const RunConfig& config, const CommandOptions& o);

// From a baseline (--checkpoint) or a stage checkpoint (--resume): writes
// stage-<k>.ckpt after each stage, pruned.ckpt and the report files.
PruneReport cmd_prune(const RunConfig& config, const CommandOptions& o);

// Finetunes --checkpoint (or resumes finetune.ckpt); writes finetune.ckpt.
double cmd_finetune(const RunConfig& config, const CommandOptions& o);

// Test accuracy of --checkpoint. Writes nothing.
double cmd_eval(const RunConfig& config, const CommandOptions& o);

// Regenerates channels.csv and rates-*.csv from <out>/report.json.
void cmd_report(const CommandOptions& o);

// PipelineProgress <-> checkpoint metadata.
nlohmann::json progress_to_json(const PipelineProgress& p);
PipelineProgress progress_from_json(const nlohmann::json& j, std::vector<GateState> gates);

}  // namespace rbp
