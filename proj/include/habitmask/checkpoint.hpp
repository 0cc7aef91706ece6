#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "habitmask/params.hpp"

namespace habitmask::num {

// On-disk layout (all integers little-endian):
//   "HCKP"  u16 version  u32 json_len  json_bytes
//   u32 count, then per parameter:
//   u32 name_len  name_bytes  u32 rank  u32 dims[rank]  f32 data[prod(dims)]
struct Checkpoint {
    nlohmann::json config = nlohmann::json::object();
    std::vector<NamedTensor> params;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace habitmask::num
