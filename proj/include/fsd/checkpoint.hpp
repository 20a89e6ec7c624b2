#pragma once

#include "fsd/config.hpp"
#include "fsd/network.hpp"
#include "fsd/optim.hpp"

#include <filesystem>
#include <optional>

namespace fsd {

// Checkpoint container:
//   "FSDCKPT\0" | u32 format version | u64 header length | JSON header |
//   little-endian f32 payload
// The header holds the network spec, whether auxiliary branches are present,
// a table of named tensors with payload offsets, optional Adam state and free
// metadata. Nothing time-dependent is written, so identical training runs
// give identical files.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Network<float> network;
  std::optional<Adam<float>> optimizer;
  Json metadata = Json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Network<float>& network,
                     const Adam<float>* optimizer = nullptr,
                     const Json& metadata = Json::object());

// The loaded network is in evaluation mode.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Header only (cheap inspection of spec and metadata).
Json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace fsd
