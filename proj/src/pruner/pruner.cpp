#include "rbp/pruner.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "rbp/hash.hpp"
#include "rbp/objective.hpp"

namespace rbp {

double FinetuneSettings::lr_for_epoch(std::size_t epoch) const {
  const std::size_t drops = decay_every ? epoch / decay_every : 0;
  return optimizer.lr * std::pow(decay, static_cast<double>(drops));
}

std::vector<double> FinetuneSettings::lr_trace() const {
  std::vector<double> out;
  for (std::size_t e = 0; e < epochs; ++e) out.push_back(lr_for_epoch(e));
  return out;
}

void PruneSchedule::validate(const Architecture& arch) const {
  std::vector<std::string> problems;
  if (!(threshold >= 0.1 && threshold <= 0.9)) {
    problems.push_back("threshold " + std::to_string(threshold) + " outside [0.1, 0.9]");
  }
  if (!(init_rate > 0.0 && init_rate < 1.0)) problems.push_back("init_rate must lie in (0, 1)");
  if (!(prior_variance > 0.0 && prior_variance < 0.25)) problems.push_back("prior variance must lie in (0, 0.25)");
  if (!(weight_optimizer.lr > 0.0) || !(rate_optimizer.lr > 0.0)) problems.push_back("learning rates must be positive");
  std::set<std::string> seen;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const PruneStage& s = stages[k];
    const std::string where = "stage " + std::to_string(k + 1);
    if (s.trigger_epochs == 0) problems.push_back(where + ": trigger epochs must be at least 1");
    if (s.gates.empty()) problems.push_back(where + ": no gates");
    if (s.gates.size() > 1 && !allow_multiple_gates) {
      problems.push_back(where + ": " + std::to_string(s.gates.size()) +
                         " gates trained together; only the residual two-phase schedule allows that");
    }
    for (const std::string& g : s.gates) {
      if (!seen.insert(g).second) problems.push_back(where + ": gate '" + g + "' already scheduled");
      try {
        locate_gate_site(arch, g);
      } catch (const Error& e) {
        problems.push_back(where + ": " + e.what());
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid prune schedule:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
}

PruneSchedule layerwise_schedule(const Architecture& arch, std::size_t trigger_epochs,
                                 const std::vector<std::string>& scope) {
  PruneSchedule s;
  const auto all = gateable_layers(arch);
  for (const std::string& id : scope) {
    if (std::find(all.begin(), all.end(), id) == all.end()) {
      throw ValidationError("layer '" + id + "' cannot carry a channel gate in '" + arch.name + "'");
    }
  }
  for (const std::string& id : all) {
    if (scope.empty() || std::find(scope.begin(), scope.end(), id) != scope.end()) {
      s.stages.push_back({{id}, trigger_epochs});
    }
  }
  return s;
}

std::size_t ChannelMask::kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }

// ---- training --------------------------------------------------------------------

StageResult run_stage(Model<float>& model, std::vector<GateState>& gates, const TrainData& data,
                      const PruneStage& stage, const PruneSchedule& schedule, std::size_t stage_index,
                      const TrainLogger& log) {
  if (stage.trigger_epochs == 0) throw ValidationError("run_stage: trigger epochs must be at least 1");
  if (!data.dataset || data.dataset->size() == 0) throw ValidationError("run_stage: no training data");
  std::vector<GateState*> active;
  for (GateState& g : gates)
    if (g.status == GateStatus::active) active.push_back(&g);
  if (active.empty()) throw StateError("run_stage: no active gate");
  std::string layer_label;
  for (const GateState* g : active) layer_label += (layer_label.empty() ? "" : "+") + g->layer_id;

  const NoiseStream noise(data.seed);
  const std::size_t n = data.dataset->size();
  model.params().reset_state();
  StageResult result;
  for (std::size_t epoch = 0; epoch < stage.trigger_epochs; ++epoch) {
    std::vector<std::vector<double>> start;
    for (const GateState* g : active) start.emplace_back(g->rate_values().begin(), g->rate_values().end());
    const std::uint64_t epoch_key = mix_keys({0x52425000ULL + stage_index, epoch});
    const auto batches = batch_indices(n, data.batch_size, data.seed, epoch_key);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch batch = make_batch(*data.dataset, batches[b], data.augment, data.seed, epoch_key);
      ObjectiveOptions opt;
      opt.dataset_size = n;
      opt.epoch = epoch_key;
      opt.batch = b;
      opt.allow_multiple_gates = schedule.allow_multiple_gates;
      BatchObjective<float> obj = evaluate_batch(model, gates, batch.inputs, batch.labels, opt, noise);
      for (auto& [name, g] : obj.weight_grads)
        for (float& v : g.data()) v = -v;
      adam_step(model.params(), obj.weight_grads, schedule.weight_optimizer);
      for (GateState* g : active) {
        Tensor<double> descent = obj.rate_grads.at(g->layer_id);
        for (double& v : descent.data()) v = -v;
        g->apply_adam(descent, schedule.rate_optimizer);
      }
      ++result.steps;
      if (log) log({"rbp", stage_index, epoch, b, layer_label, obj.data_term, obj.kl, obj.accuracy});
    }
    ++result.epochs;
    if (spdlog::should_log(spdlog::level::debug)) {
      std::vector<double> rates;
      for (const GateState* g : active) rates.insert(rates.end(), g->rate_values().begin(), g->rate_values().end());
      spdlog::debug("stage {} epoch {}: {:.1f}% of rates bimodal", stage_index, epoch + 1,
                    100.0 * bimodal_fraction(rates));
    }
    if (schedule.min_rate_movement > 0.0) {
      double moved = 0.0;
      for (std::size_t i = 0; i < active.size(); ++i)
        for (std::size_t c = 0; c < start[i].size(); ++c)
          moved = std::max(moved, std::abs(active[i]->rate(c) - start[i][c]));
      if (moved < schedule.min_rate_movement) break;
    }
  }
  return result;
}

void train_supervised(Model<float>& model, const TrainData& data, const SupervisedSettings& settings,
                      const TrainLogger& log) {
  if (!data.dataset || data.dataset->size() == 0) throw ValidationError("training needs a non-empty dataset");
  if (!settings.lr) throw ValidationError("training needs a learning-rate schedule");
  const std::size_t n = data.dataset->size();
  for (std::size_t epoch = settings.first_epoch; epoch < settings.first_epoch + settings.epochs; ++epoch) {
    const double lr = settings.lr(epoch);
    const std::uint64_t epoch_key = mix_keys({fnv1a(settings.phase), epoch});
    const auto batches = batch_indices(n, data.batch_size, data.seed, epoch_key);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch batch = make_batch(*data.dataset, batches[b], data.augment, data.seed, epoch_key);
      const SupervisedBatch<float> step = supervised_batch(model, batch.inputs, batch.labels);
      if (!std::isfinite(step.loss)) {
        throw NumericError(settings.phase + ": non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      }
      if (settings.optimizer == SupervisedSettings::Optimizer::adam) {
        adam_step(model.params(), step.grads, AdamSettings{lr});
      } else {
        sgd_step(model.params(), step.grads, SgdSettings{lr, settings.momentum});
      }
      if (log) {
        log({settings.phase, 0, epoch, b, "", -static_cast<double>(batch.size()) * step.loss, 0.0, step.accuracy});
      }
    }
    if (settings.on_epoch_end) settings.on_epoch_end(epoch + 1);
  }
}

std::vector<double> finetune(Model<float>& model, const TrainData& data, const FinetuneSettings& settings,
                             const TrainLogger& log) {
  model.params().reset_state();
  SupervisedSettings s;
  s.epochs = settings.epochs;
  s.optimizer = SupervisedSettings::Optimizer::sgd;
  s.momentum = settings.optimizer.momentum;
  s.lr = [&settings](std::size_t e) { return settings.lr_for_epoch(e); };
  s.phase = "finetune";
  TrainData d = data;
  if (settings.batch_size) d.batch_size = settings.batch_size;
  train_supervised(model, d, s, log);
  return settings.lr_trace();
}

double evaluate_accuracy(const Model<float>& model, const Dataset& data, const AugmentSettings& eval) {
  constexpr std::size_t kChunk = 500;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + kChunk); ++i) idx.push_back(i);
    const Batch b = make_batch(data, idx, eval, 0, 0);
    correct += static_cast<std::size_t>(std::lround(accuracy(model.logits(b.inputs), b.labels) * idx.size()));
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

AugmentSettings evaluation_augment(const AugmentSettings& train) {
  AugmentSettings eval = train;
  eval.policy = train.policy == AugmentPolicy::imagenet ? AugmentPolicy::center : AugmentPolicy::none;
  return eval;
}

// ---- fold and compaction --------------------------------------------------------------

template <typename T>
ChannelMask threshold_and_fold(GateState& gate, Model<T>& model, double threshold) {
  if (gate.status != GateStatus::active) {
    throw StateError("threshold_and_fold: gate '" + gate.layer_id + "' is " + std::string(to_string(gate.status)));
  }
  const GateSite site = locate_gate_site(model.architecture(), gate.layer_id);
  if (site.channels != gate.channels()) {
    throw ShapeError("gate '" + gate.layer_id + "' has " + std::to_string(gate.channels()) + " rates but the layer has " +
                     std::to_string(site.channels) + " input channels");
  }
  const std::size_t c_total = gate.channels();
  const std::span<double> r = gate.rates.value.data();
  std::size_t above = 0;
  for (double v : r) above += v > threshold;
  std::size_t spare = c_total;
  if (above == c_total) {
    spare = static_cast<std::size_t>(std::min_element(r.begin(), r.end()) - r.begin());
    spdlog::warn("gate '{}': every rate exceeds {}; keeping channel {} (rate {:.4f})", gate.layer_id, threshold, spare,
                 r[spare]);
  }
  ChannelMask mask{gate.layer_id, site.producer, std::vector<bool>(c_total), std::vector<double>(c_total)};
  for (std::size_t c = 0; c < c_total; ++c) {
    if (r[c] > threshold && c != spare) r[c] = 1.0;
    mask.keep[c] = r[c] < 1.0;
    mask.fold_scale[c] = 1.0 - r[c];
  }

  Tensor<T>& w = model.params().at(weight_name(gate.layer_id)).value;
  const std::size_t out = w.dim(0), row = w.size() / out, per_channel = row / c_total;
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t c = 0; c < c_total; ++c) {
      const T s = static_cast<T>(mask.fold_scale[c]);
      T* slice = w.raw() + o * row + c * per_channel;
      for (std::size_t k = 0; k < per_channel; ++k) slice[k] *= s;
    }
  model.params().at(weight_name(gate.layer_id)).reset_state();
  gate.status = GateStatus::folded;
  return mask;
}

namespace {

// Keeps the rows (axis 0) or the channel blocks of axis 1 selected by `keep`.
template <typename T>
Tensor<T> select_rows(const Tensor<T>& t, const std::vector<bool>& keep) {
  const std::size_t rows = t.dim(0), per = t.size() / rows;
  std::vector<T> out;
  for (std::size_t r = 0; r < rows; ++r)
    if (keep[r]) out.insert(out.end(), t.raw() + r * per, t.raw() + (r + 1) * per);
  Shape shape = t.shape();
  shape[0] = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
  return Tensor<T>(shape, std::move(out));
}

template <typename T>
Tensor<T> select_input_blocks(const Tensor<T>& t, const std::vector<bool>& keep) {
  const std::size_t rows = t.dim(0), per_row = t.size() / rows, block = per_row / keep.size();
  const std::size_t kept = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
  std::vector<T> out;
  out.reserve(rows * kept * block);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < keep.size(); ++c)
      if (keep[c]) out.insert(out.end(), t.raw() + r * per_row + c * block, t.raw() + r * per_row + (c + 1) * block);
  Shape shape = t.shape();
  shape[1] = shape[1] / keep.size() * kept;
  return Tensor<T>(shape, std::move(out));
}

}  // namespace

template <typename T>
void compact(Model<T>& model, const std::vector<ChannelMask>& masks) {
  Architecture& arch = model.architecture();
  // Sites are resolved against the uncompacted wiring before any shape changes.
  std::vector<GateSite> sites;
  for (const ChannelMask& m : masks) {
    const GateSite site = locate_gate_site(arch, m.layer_id);
    if (site.producer != m.producer || site.channels != m.keep.size() || m.fold_scale.size() != m.keep.size()) {
      throw ShapeError("mask for '" + m.layer_id + "' (" + std::to_string(m.keep.size()) +
                       " channels, producer '" + m.producer + "') does not match the model (" +
                       std::to_string(site.channels) + " channels, producer '" + site.producer + "')");
    }
    if (m.kept() == 0) throw ShapeError("mask for '" + m.layer_id + "' removes every channel");
    sites.push_back(site);
  }
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const ChannelMask& m = masks[i];
    if (m.kept() == m.keep.size()) continue;
    LayerSpec& producer = find_layer(arch, m.producer);
    LayerSpec& consumer = find_layer(arch, m.layer_id);
    auto& params = model.params();
    params.set(weight_name(producer.id), select_rows(params.at(weight_name(producer.id)).value, m.keep));
    if (producer.bias) params.set(bias_name(producer.id), select_rows(params.at(bias_name(producer.id)).value, m.keep));
    producer.out = m.kept();
    params.set(weight_name(consumer.id), select_input_blocks(params.at(weight_name(consumer.id)).value, m.keep));
    consumer.in = consumer.in / m.keep.size() * m.kept();
  }
  model.params().reset_state();
  model.validate();
  trace_shapes(arch);
}

// ---- pipeline ------------------------------------------------------------------------

PipelineResult rbp_pipeline(const Model<float>& start, const TrainData& train, const Dataset* test,
                            const PruneSchedule& schedule, FlopConvention convention, const PipelineHooks& hooks,
                            const PipelineProgress* resume) {
  PipelineResult result{start, {}, {}};
  const AugmentSettings eval = evaluation_augment(train.augment);
  Model<float>& model = result.model;
  PipelineProgress& progress = result.progress;
  if (resume) {
    progress = *resume;
    if (progress.completed > schedule.stages.size()) {
      throw StateError("resume point " + std::to_string(progress.completed) + " is past the schedule's " +
                       std::to_string(schedule.stages.size()) + " stages");
    }
  } else {
    progress.original = start.architecture();
    if (test && !schedule.stages.empty()) progress.accuracy_before = evaluate_accuracy(model, *test, eval);
  }
  const Architecture& before = progress.original;
  schedule.validate(before);
  std::uint64_t flops_prev = count_flops(model.architecture(), convention);

  for (std::size_t k = progress.completed; k < schedule.stages.size(); ++k) {
    const PruneStage& stage = schedule.stages[k];
    for (const GateState& g : progress.gates) {
      if (g.status != GateStatus::folded) {
        throw StateError("stage " + std::to_string(k + 1) + " would start while gate '" + g.layer_id + "' is " +
                         std::string(to_string(g.status)));
      }
    }
    const std::size_t first_new = progress.gates.size();
    for (const std::string& id : stage.gates) {
      const GateSite site = locate_gate_site(model.architecture(), id);
      progress.gates.push_back(GateState::create(id, site.channels, schedule.init_rate, schedule.prior_variance));
    }
    const StageResult sr = run_stage(model, progress.gates, train, stage, schedule, k + 1, hooks.log);

    std::vector<double> stage_rates;
    std::vector<ChannelMask> stage_masks;
    for (std::size_t i = first_new; i < progress.gates.size(); ++i) {
      GateState& g = progress.gates[i];
      progress.fold_rates[g.layer_id] = std::vector<double>(g.rate_values().begin(), g.rate_values().end());
      stage_rates.insert(stage_rates.end(), g.rate_values().begin(), g.rate_values().end());
      stage_masks.push_back(threshold_and_fold(g, model, schedule.threshold));
    }
    compact(model, stage_masks);

    const std::uint64_t flops_now = count_flops(model.architecture(), convention);
    if (flops_now > flops_prev) {
      throw StateError("FLOPs grew from " + std::to_string(flops_prev) + " to " + std::to_string(flops_now) +
                       " in stage " + std::to_string(k + 1));
    }
    flops_prev = flops_now;
    progress.stages.push_back({k + 1, stage.gates, sr.steps, bimodal_fraction(stage_rates), flops_now});
    progress.completed = k + 1;
    spdlog::info("stage {}: {} steps, {:.1f}% of rates bimodal, FLOPs {} -> {}", k + 1, sr.steps,
                 100.0 * progress.stages.back().bimodal_fraction, count_flops(before, convention), flops_now);
    if (hooks.on_stage_end) hooks.on_stage_end(model, progress);
  }

  std::optional<double> acc_pruned, acc_final;
  std::vector<double> lr_trace;
  if (!schedule.stages.empty()) {
    if (test) acc_pruned = evaluate_accuracy(model, *test, eval);
    lr_trace = finetune(model, train, schedule.finetune, hooks.log);
    if (test) acc_final = evaluate_accuracy(model, *test, eval);
  }

  result.report = build_report(before, model.architecture(), progress.fold_rates, convention);
  result.report.stages = progress.stages;
  result.report.accuracy_before = progress.accuracy_before;
  result.report.accuracy_pruned = acc_pruned;
  result.report.accuracy_finetuned = acc_final;
  result.report.augmentation = std::string(to_string(train.augment.policy));
  result.report.finetune_lr = lr_trace;
  return result;
}

template ChannelMask threshold_and_fold<float>(GateState&, Model<float>&, double);
template ChannelMask threshold_and_fold<double>(GateState&, Model<double>&, double);
template void compact<float>(Model<float>&, const std::vector<ChannelMask>&);
template void compact<double>(Model<double>&, const std::vector<ChannelMask>&);

}  // namespace rbp
