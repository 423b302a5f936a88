#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "airl/model.hpp"

namespace airl {

inline constexpr std::string_view kCheckpointMagic = "AIRL CKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic | u32 version | u64 header length | JSON header |
// little-endian f32 payload in header order | u64 FNV-1a checksum of payload.
std::string encode_checkpoint(const ModelParams& params);
// Throws Error("checkpoint") on bad magic/version/header and
// Error("checksum") on truncation or payload corruption.
ModelParams decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace airl
