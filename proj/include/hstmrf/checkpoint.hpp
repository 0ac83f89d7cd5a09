#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hstmrf/nn.hpp"
#include "hstmrf/optim.hpp"

namespace hstmrf {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// File layout, all integers little-endian:
///   "HSTM" | u32 version | u32 len + config text | u64 step | u64 seed |
///   u32 count | count x (u32 len + name | u32 rank | rank x u32 extent |
///   numel x f32)
/// Optimizer moments are entries named "optim.m/<param>" and "optim.v/<param>".
struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  std::string config_text;
  uint64_t step = 0;
  uint64_t seed = 0;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source = "<checkpoint>");
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot of all parameters and buffers, plus moments when `opt` is given.
Checkpoint capture(const ParamStore& params, const AdamW* opt, uint64_t step, uint64_t seed,
                   const std::string& config_text);

/// Copies entries into `params` (and `opt`). Every missing, unexpected or
/// shape-mismatched name is listed in the thrown CheckpointError.
void restore(const Checkpoint& ckpt, ParamStore& params, AdamW* opt);

}  // namespace hstmrf
