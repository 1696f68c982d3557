#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "icl/model.hpp"

namespace icl {

// JSON container:
//   {"format": "iclab-checkpoint", "version": 1, "seed": .., "step": ..,
//    "config_hash": "..", "config": "<config text>", "variant": "skip",
//    "readout": 2, "blocks": [{"heads": 3, "attn.wq": {"shape": [3, 3], "data": [...]}, ...}]}
// Doubles are written in shortest round-trip form, so read(write(p)) == p.
struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  std::string config_hash;
  std::string config_text;
};

inline constexpr int kCheckpointVersion = 1;

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace icl
