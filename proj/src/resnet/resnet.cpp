#include "rbp/resnet.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

#include "rbp/error.hpp"

namespace rbp {

std::vector<ResidualBlockSpec> residual_blocks(const Architecture& arch) {
  std::vector<ResidualBlockSpec> out;
  for (const LayerSpec& l : arch.layers) {
    if (l.kind != LayerKind::residual) continue;
    ResidualBlockSpec b;
    b.block_id = l.id;
    for (const LayerSpec& s : l.body) {
      if (s.kind == LayerKind::residual) throw ShapeError("block '" + l.id + "' nests another residual block");
      if (s.kind == LayerKind::linear) throw ShapeError("block '" + l.id + "' contains a linear layer");
      if (s.kind == LayerKind::conv) b.convs.push_back(s.id);
    }
    if (b.convs.size() != 2 && b.convs.size() != 3) {
      throw ShapeError("block '" + l.id + "' has " + std::to_string(b.convs.size()) +
                       " convs; expected 2 (basic) or 3 (bottleneck)");
    }
    b.has_downsample = std::any_of(l.shortcut.begin(), l.shortcut.end(),
                                   [](const LayerSpec& s) { return s.kind == LayerKind::conv; });
    b.gate_sites.assign(b.convs.begin() + 1, b.convs.end());
    for (const std::string& id : b.gate_sites) locate_gate_site(arch, id);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<GateState> attach_residual_gates(const Architecture& arch, const std::vector<std::string>& requested,
                                             double init_rate, double prior_variance) {
  const auto blocks = residual_blocks(arch);
  if (blocks.empty()) throw ValidationError("'" + arch.name + "' has no residual blocks");
  std::vector<std::string> allowed;
  for (const ResidualBlockSpec& b : blocks) allowed.insert(allowed.end(), b.gate_sites.begin(), b.gate_sites.end());

  std::vector<std::string> ids = requested.empty() ? allowed : requested;
  std::vector<GateState> gates;
  for (const std::string& id : ids) {
    if (std::find(allowed.begin(), allowed.end(), id) == allowed.end()) {
      throw ValidationError("cannot gate '" + id +
                            "': only the inputs of the last two convs inside a block are gated; block input and "
                            "output channels stay fixed so residual sums remain valid");
    }
    gates.push_back(GateState::create(id, locate_gate_site(arch, id).channels, init_rate, prior_variance));
  }
  return gates;
}

PruneSchedule rrbp_schedule(const Architecture& arch, std::size_t trigger_epochs) {
  const auto blocks = residual_blocks(arch);
  if (blocks.empty()) {
    throw ValidationError("'" + arch.name + "' has no residual blocks; use the layer-wise schedule instead");
  }
  PruneSchedule s;
  s.allow_multiple_gates = true;
  PruneStage first{{}, trigger_epochs}, second{{}, trigger_epochs};
  for (const ResidualBlockSpec& b : blocks) {
    if (b.has_downsample) continue;
    first.gates.push_back(b.gate_sites[0]);
    if (b.gate_sites.size() > 1) second.gates.push_back(b.gate_sites[1]);
  }
  if (first.gates.empty()) {
    spdlog::warn("rrbp: every residual block of '{}' down-samples; nothing to prune", arch.name);
    return s;
  }
  s.stages.push_back(std::move(first));
  if (!second.gates.empty()) s.stages.push_back(std::move(second));
  return s;
}

}  // namespace rbp
