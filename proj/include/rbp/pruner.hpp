#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rbp/data.hpp"
#include "rbp/gate.hpp"
#include "rbp/metrics.hpp"
#include "rbp/model.hpp"
#include "rbp/optim.hpp"

namespace rbp {

// Gates trained together; a gate is named after the layer whose input it scales.
struct PruneStage {
  std::vector<std::string> gates;
  std::size_t trigger_epochs = 3;
};

struct FinetuneSettings {
  std::size_t epochs = 10;
  SgdSettings optimizer{1e-4, 0.9};
  double decay = 0.5;
  std::size_t decay_every = 3;  // lr multiplied by `decay` after epochs 3, 6, 9, ...
  std::size_t batch_size = 0;   // 0 keeps the training data's batch size

  double lr_for_epoch(std::size_t epoch) const;
  std::vector<double> lr_trace() const;
};

struct PruneSchedule {
  std::vector<PruneStage> stages;
  double threshold = 0.5;
  double init_rate = kDefaultInitRate;
  double prior_variance = kDefaultPriorVariance;
  AdamSettings weight_optimizer{1e-4};
  AdamSettings rate_optimizer{1e-4};
  FinetuneSettings finetune;
  // Stages with several gates are only legal in the residual two-phase mode.
  bool allow_multiple_gates = false;
  // Optional early stop: end a stage once no rate moved more than this over an
  // epoch. 0 disables it (fixed trigger epochs).
  double min_rate_movement = 0.0;

  // Throws ValidationError listing every problem found.
  void validate(const Architecture& arch) const;
};

// One single-gate stage per gateable layer in topological order. A non-empty
// `scope` keeps only the listed gates (still in topological order).
PruneSchedule layerwise_schedule(const Architecture& arch, std::size_t trigger_epochs,
                                 const std::vector<std::string>& scope = {});

// Outcome of thresholding one gate: which producer filters survive and the
// scale folded into each consumer slice.
struct ChannelMask {
  std::string layer_id;  // consumer / gate id
  std::string producer;
  std::vector<bool> keep;
  std::vector<double> fold_scale;  // 1 - r per channel (0 for pruned ones)

  std::size_t kept() const;
};

struct TrainData {
  const Dataset* dataset = nullptr;
  std::size_t batch_size = 64;
  AugmentSettings augment;
  std::uint64_t seed = 0;
};

struct LogRow {
  std::string phase;  // pretrain | rbp | finetune
  std::size_t stage = 0;
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::string layer;
  double data_term = 0.0;
  double kl = 0.0;
  double accuracy = 0.0;
};

using TrainLogger = std::function<void(const LogRow&)>;

struct StageResult {
  std::size_t steps = 0;
  std::size_t epochs = 0;
};

// Runs the stage's trigger epochs: every batch evaluates the variational
// objective and takes one Adam step on all weights and on the active rates.
StageResult run_stage(Model<float>& model, std::vector<GateState>& gates, const TrainData& data,
                      const PruneStage& stage, const PruneSchedule& schedule, std::size_t stage_index,
                      const TrainLogger& log = {});

// Rates above `threshold` become 1, then each consumer input slice is scaled
// by (1 - r). The gate ends folded.
template <typename T>
ChannelMask threshold_and_fold(GateState& gate, Model<T>& model, double threshold);

// Removes pruned producer filters and consumer input slices.
template <typename T>
void compact(Model<T>& model, const std::vector<ChannelMask>& masks);

// Supervised epochs (pretraining and finetuning).
struct SupervisedSettings {
  std::size_t epochs = 1;
  std::size_t first_epoch = 0;  // resume point; also keys the shuffles
  enum class Optimizer { sgd, adam } optimizer = Optimizer::sgd;
  std::function<double(std::size_t epoch)> lr;
  double momentum = 0.9;
  std::string phase = "finetune";
  // Called after every epoch with the next epoch index.
  std::function<void(std::size_t next_epoch)> on_epoch_end;
};

void train_supervised(Model<float>& model, const TrainData& data, const SupervisedSettings& settings,
                      const TrainLogger& log = {});

std::vector<double> finetune(Model<float>& model, const TrainData& data, const FinetuneSettings& settings,
                             const TrainLogger& log = {});

// Test accuracy without augmentation beyond `eval`.
double evaluate_accuracy(const Model<float>& model, const Dataset& data, const AugmentSettings& eval = {});

// Deterministic counterpart of a training policy (center crop for imagenet, none otherwise).
AugmentSettings evaluation_augment(const AugmentSettings& train);

// Everything carried from one stage to the next; enough to resume a pipeline
// after stage `completed`.
struct PipelineProgress {
  Architecture original;
  std::size_t completed = 0;
  std::vector<GateState> gates;
  std::map<std::string, std::vector<double>> fold_rates;  // rates captured before thresholding
  std::vector<StageRecord> stages;
  std::optional<double> accuracy_before;
};

struct PipelineHooks {
  TrainLogger log;
  // After a stage has been folded and compacted.
  std::function<void(const Model<float>&, const PipelineProgress&)> on_stage_end;
};

struct PipelineResult {
  Model<float> model;
  PruneReport report;
  PipelineProgress progress;
};

// All stages (gate, train, fold, compact), then finetuning, then the report.
// With `resume`, `start` is the compacted model after resume->completed stages.
PipelineResult rbp_pipeline(const Model<float>& start, const TrainData& train, const Dataset* test,
                            const PruneSchedule& schedule, FlopConvention convention = FlopConvention::flop,
                            const PipelineHooks& hooks = {}, const PipelineProgress* resume = nullptr);

}  // namespace rbp
