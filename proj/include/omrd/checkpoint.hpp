#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "omrd/tensor.hpp"

namespace omrd {

// On-disk container: "OMRD" magic, u32 version, u64 manifest length, the JSON
// manifest, then tightly packed little-endian float32 payload. Tensors are
// laid out in name order; save(load(x)) reproduces x byte for byte.
struct Checkpoint {
  nlohmann::json model;  // model configuration snapshot
  nlohmann::json train;  // training configuration snapshot
  nlohmann::json extra;  // OIM head metadata and the like
  std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
};

inline constexpr char kCheckpointMagic[4] = {'O', 'M', 'R', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace omrd
