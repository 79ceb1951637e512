#pragma once

#include <string>

#include "convotd/model.hpp"

namespace convotd {

/// Checkpoint layout:
///   8 bytes   magic "CVTDCKP1"
///   8 bytes   little-endian uint64 header length H
///   H bytes   JSON header: {"config": {...}, "vocab_hash": "...",
///                           "tensors": [{"name", "shape": [r, c], "offset", "nbytes"}]}
///   payload   row-major little-endian float32 tensors; offsets are relative to the payload start
struct Checkpoint {
    ModelConfig config;
    std::string vocab_hash;
    ModelParameters params;
};

void save_checkpoint(const ModelParameters& params, const ModelConfig& config, const std::string& vocab_hash,
                     const std::string& path);

/// Throws InputError on a bad magic, malformed header, truncation (with the byte offset)
/// or tensor shapes that disagree with the stored config.
Checkpoint load_checkpoint(const std::string& path);

/// As above, and additionally rejects a checkpoint whose config shapes or vocabulary hash
/// differ from the expected ones, naming the mismatched tensor.
Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected, const std::string& expected_vocab_hash);

/// Parameters rounded to float32 and back, i.e. what a save/load round trip yields.
ModelParameters round_to_float(const ModelParameters& params);

}  // namespace convotd
