#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmpt/training.hpp"

namespace lmpt {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Serialized bytes: "LMPT", u16 version, u32 CRC32 of the payload, payload.
std::vector<unsigned char> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// CRC32 of a whole file, as 8 hex digits.
std::string file_checksum(const std::string& path);

}  // namespace lmpt
