#pragma once

#include <string>
#include <vector>

#include "rbp/gate.hpp"
#include "rbp/model.hpp"
#include "rbp/pruner.hpp"

namespace rbp {

struct ResidualBlockSpec {
  std::string block_id;
  std::vector<std::string> convs;  // body convs in order: 2 (basic) or 3 (bottleneck)
  bool has_downsample = false;     // shortcut holds a strided or projection conv
  // Consumers whose inputs carry gates: the second conv of a basic block, the
  // second and third of a bottleneck. Never the block output.
  std::vector<std::string> gate_sites;
};

// Every top-level residual block in order. Throws ShapeError for a block whose
// body is not 2 or 3 stacked convs.
std::vector<ResidualBlockSpec> residual_blocks(const Architecture& arch);

// Gates for the requested consumers, or for every site of every block when
// `requested` is empty. A request outside the allowed sites (block input or
// output channels, shortcut convs, plain layers) is a ValidationError.
std::vector<GateState> attach_residual_gates(const Architecture& arch, const std::vector<std::string>& requested = {},
                                             double init_rate = kDefaultInitRate,
                                             double prior_variance = kDefaultPriorVariance);

inline constexpr std::size_t kRrbpTriggerEpochs = 7;

// Two stages over the blocks without down-sampling: first-position gates of
// all of them together, then the second-position gates. Blocks with a single
// site (basic blocks) contribute to stage 1 only; a stage with no gates is
// dropped. A model whose blocks all down-sample yields no stages and a warning.
PruneSchedule rrbp_schedule(const Architecture& arch, std::size_t trigger_epochs = kRrbpTriggerEpochs);

}  // namespace rbp
