#pragma once

#include <string>

#include "sfv/config.hpp"
#include "sfv/nets.hpp"
#include "sfv/training.hpp"

namespace sfv {

struct CheckpointData {
  KeyValues meta;
  NamedTensors tensors;
};

// SFVC container: magic, version, key=value blob, named tensors, CRC32.
std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what);
void write_checkpoint(const CheckpointData& data, const std::string& path);
CheckpointData read_checkpoint(const std::string& path);

CheckpointData state_to_checkpoint(const ModelState& state);
ModelState state_from_checkpoint(const CheckpointData& data);

void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace sfv
