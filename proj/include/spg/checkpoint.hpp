#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "spg/trainer.hpp"

namespace spg {

inline constexpr int kCheckpointVersion = 1;

/// One JSON header line (version, config hash, shapes, payload checksum)
/// followed by raw little-endian doubles.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws CheckpointError: `corrupt` for unreadable, truncated or altered
/// files, `hash_mismatch` when `expected_hash` is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash = {});

}  // namespace spg
