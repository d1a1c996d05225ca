#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "trainer/trainer.hpp"

namespace xcod::trainer {

inline constexpr char kCheckpointMagic[8] = {'X', 'C', 'O', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian):
//   magic[8] | version u32 | header_len u64 | header JSON (header_len bytes)
//   | f64 blocks: params, adam_m, adam_v, tokens_since_fired
// Each parameter set is written side by side as encoder (F x d_i, row-major),
// decoder (F x d_i, row-major), decoder bias (d_i); then the encoder bias (F).
void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const nlohmann::json& config = nlohmann::json::object());

struct LoadedCheckpoint {
  TrainState state;
  nlohmann::json header;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xcod::trainer
