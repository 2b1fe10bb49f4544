#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "pfsa/model.hpp"

namespace pfsa {

inline constexpr char kCheckpointMagic[4] = {'S', 'A', 'P', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers little-endian:
///
///   "SAPL" | u32 version | u32 count | count × entry
///   entry = u32 name_len | name bytes | u32 rank | rank × u64 dim | f64 payload (row-major)
///
/// Entries follow the ordered parameter names, so equal Params always produce identical bytes.
std::string encode_checkpoint(const Params& params);
Params decode_checkpoint(const std::string& bytes);

void write_checkpoint(const Params& params, const std::filesystem::path& path);
Params read_checkpoint(const std::filesystem::path& path);

}  // namespace pfsa
