// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Single-file model checkpoints.
//
//   bytes  content
//   8      magic "TFMOECKP"
//   4      format version, u32 little-endian
//   8      manifest length M, u64 little-endian
//   M      manifest, UTF-8 JSON (scalars, names, shapes, payload offsets)
//   8      payload length P in doubles, u64 little-endian
//   8*P    payload, IEEE-754 binary64 little-endian
//   4      CRC-32 (zlib polynomial) of every preceding byte
//
// Each manifest array entry gives {name, role, shape, offset}; offset counts
// doubles from the payload start. Roles: "param", "adam.m", "adam.v", "centroids".

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>

#include "tfmoe/engine.hpp"

namespace tfmoe::ckpt {

inline constexpr std::uint32_t kFormatVersion = 2;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class VersionError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class ChecksumError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

struct Checkpoint {
    engine::ModelState state;
    std::string config_hash;
};

std::uint32_t crc32_of(std::span<const unsigned char> bytes);

void save_checkpoint(const engine::ModelState& state, const std::string& config_hash,
                     const std::filesystem::path& path);

/// Throws VersionError for any version other than kFormatVersion and
/// ChecksumError for truncated or corrupted files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tfmoe::ckpt
