#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "rbp/gate.hpp"
#include "rbp/model.hpp"

namespace rbp {

inline constexpr char kCheckpointMagic[8] = {'R', 'B', 'P', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::string phase;  // pretrain | prune | finetune
  std::uint64_t stage = 0;
  std::uint64_t epoch = 0;  // epochs completed in `phase`
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const CheckpointMeta&) const = default;
};

// Layout, all integers and floats little-endian:
//   magic[8] u32 version
//   metadata: u64 config_hash, str phase, u64 stage, u64 epoch, u64 seed, str extra_json
//   str architecture_json
//   u64 n, n x tensor: str name, u8 dtype (0 f32, 1 f64), u32 rank, u64 dims[rank], raw data
//   u64 n, n x gate: str layer_id, u8 status, f64 prior_variance, tensor rates, tensor m, tensor v, i64 steps
// where str is u64 length + bytes. Optimizer slots are tensors named
// "<param>@m" / "<param>@v"; their step counts sit in extra["optimizer_steps"].
struct Checkpoint {
  CheckpointMeta meta;
  Model<float> model;
  std::vector<GateState> gates;
};

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::string& bytes);

// Written to a temporary name and renamed into place.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rbp
