#pragma once

#include <string>
#include <utility>
#include <vector>

#include "harvim/tensor.hpp"

namespace harvim {

/// Named tensors in file order.
using CheckpointRecords = std::vector<std::pair<std::string, Tensor>>;

/// Binary checkpoint shared repo-wide: magic "HVMF", format version u16,
/// little-endian, then per-parameter records (u32 name length, UTF-8
/// name, u64 rank, u64 dims, raw little-endian 32-bit scalars).
/// All writes go through a temp file renamed into place.
void save_checkpoint(const std::string& path, const CheckpointRecords& records);

/// Loads and validates magic, version, and that records consume the file
/// byte count exactly. Throws IoError on any mismatch.
CheckpointRecords load_checkpoint(const std::string& path);

}  // namespace harvim
