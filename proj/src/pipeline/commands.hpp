#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "pipeline/config.hpp"

namespace xcod::pipeline {

struct CommandContext {
  RunConfig config = desk_config();
  fs::path out = "xcod_out";
  bool timestamp = true;
};

// Each command writes its artifacts and a <name>_report.json under ctx.out
// and returns the report. Failures are rethrown prefixed with the stage name.
nlohmann::json cmd_synth(const CommandContext& ctx);
nlohmann::json cmd_train(const CommandContext& ctx);
nlohmann::json cmd_diff(const CommandContext& ctx);
nlohmann::json cmd_ablate(const CommandContext& ctx);
nlohmann::json cmd_steer(const CommandContext& ctx);
nlohmann::json cmd_geometry(const CommandContext& ctx);
// synth, train, diff, ablate, steer, geometry, then desk_report.json.
nlohmann::json cmd_repro_desk(const CommandContext& ctx);

// Synthetic function-class dataset and its embedding table: every pair is
// (u, u + class offset + noise), some entries use two-token words.
void write_geometry_fixture(const GeometryFixture& fixture, std::uint64_t seed, const fs::path& dataset_path,
                            const fs::path& table_path);

}  // namespace xcod::pipeline
