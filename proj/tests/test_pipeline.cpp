#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "common/error.hpp"
#include "pipeline/commands.hpp"
#include "pipeline/config.hpp"

using namespace xcod;
using namespace xcod::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "xcod_test_pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json small_patch() {
  const nlohmann::json cats = {{{"name", "self-reflection"}, {"target_tokens", {"Wait"}}},
                               {{"name", "deductive"}, {"target_tokens", {"Therefore"}}},
                               {{"name", "alternative"}, {"target_tokens", {"Alternatively"}}}};
  return {{"world",
           {{"n_shared", 8}, {"n_unique_base", 3}, {"n_unique_distilled", 3}, {"d_base", 16}, {"d_distilled", 16},
            {"vocab_size", 64}, {"doc_length", 32}}},
          {"synth", {{"n_tokens", 6000}}},
          {"train", {{"n_features", 24}, {"total_steps", 300}, {"batch_size", 64}, {"log_interval", 50}, {"learning_rate", 0.003}}},
          {"stream", {{"shuffle_buffer", 1024}}},
          {"diff", {{"categories", cats}}},
          {"ablate", {{"categories", cats}}},
          {"geometry", {{"dims", {2, 5}}}}};
}

CommandContext small_context(const fs::path& out) {
  return {run_config_from_json(small_patch()), out, false};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("config parsing keeps desk defaults and rejects unknown keys") {
  const auto desk = desk_config();
  CHECK(run_config_from_json(nlohmann::json::object()).train.total_steps == desk.train.total_steps);
  CHECK(to_json(run_config_from_json(to_json(desk))) == to_json(desk));
  CHECK_THROWS_AS(run_config_from_json({{"trian", {}}}), Error);
  CHECK_THROWS_AS(run_config_from_json({{"train", {{"learnig_rate", 1}}}}), Error);
  CHECK_THROWS_AS(run_config_from_json({{"synth", {{"n_tokens", 0}}}}).validate(), Error);
  CHECK_THROWS_AS(run_config_from_json({{"geometry", {{"fit", "sideways"}}}}), Error);

  const auto seeded = run_config_from_json({{"seed", 9}});
  CHECK(seeded.world.seed == 9);
  CHECK(seeded.train.seed == 9);
  CHECK(run_config_digest(seeded) != run_config_digest(desk));
  CHECK(run_config_digest(run_config_from_json({{"seed", 9}})) == run_config_digest(seeded));
}

TEST_CASE("stages chain through their artifacts") {
  const auto out = fresh_dir("chain");
  const auto ctx = small_context(out);

  const auto synth = cmd_synth(ctx);
  CHECK(synth["rows"] == 6000);
  CHECK(fs::exists(out / "world.json"));
  CHECK(fs::exists(out / "shards" / "shard_000.xcs"));

  const auto train = cmd_train(ctx);
  CHECK(train["steps"] == 300);
  CHECK(line_count(out / "metrics.csv") == 1 + 300 / 50);
  CHECK(train["metric_rows"] == 6);
  CHECK(train["normalization"].size() == 2);

  const auto diff = cmd_diff(ctx);
  CHECK(diff["n_features"] == 24);
  CHECK(line_count(out / "features.csv") == 25);
  CHECK(line_count(out / "nrn_histogram.csv") == 51);
  std::uint64_t total = 0;
  for (const auto& c : diff["histogram"]["counts"]) total += c.get<std::uint64_t>();
  CHECK(total == 24);
  CHECK(diff.contains("planted"));
  CHECK(diff["top"].size() == 20);

  const auto ablate = cmd_ablate(ctx);
  CHECK(line_count(out / "ablation.csv") == 1 + 3 * 6);
  CHECK(ablate["categories"].size() == 3);

  const auto steer = cmd_steer(ctx);
  CHECK(steer["zero_alpha_matches_baseline"] == true);
  CHECK(steer["linearity_max_error"].get<double>() <= 1e-9);
  CHECK(fs::exists(out / "steer" / "baseline.json"));
  CHECK(fs::exists(out / "steer" / "alpha_3.json"));

  const auto geometry = cmd_geometry(ctx);
  CHECK(geometry["dims"].size() == 2);
  CHECK(geometry["multi_token_entries_dropped"] == 4 * 2);
  CHECK(fs::exists(out / "geometry_curves.csv"));

  for (const auto* name : {"synth", "train", "diff", "ablate", "steer", "geometry"}) {
    const auto report = nlohmann::json::parse(slurp(out / (std::string(name) + "_report.json")));
    CHECK(report["config_digest"] == run_config_digest(ctx.config));
    CHECK(report["deterministic"] == true);
    CHECK_FALSE(report.contains("generated_at"));
  }

  auto swapped = ctx;
  swapped.config.diff.swap_sides = true;
  const auto flipped = cmd_diff(swapped);
  CHECK(flipped["mean_nrn"].get<double>() == doctest::Approx(1.0 - diff["mean_nrn"].get<double>()));
  CHECK_FALSE(flipped.contains("planted"));
}

TEST_CASE("missing inputs fail with the stage and the path") {
  const auto out = fresh_dir("missing");
  auto ctx = small_context(out);
  try {
    cmd_train(ctx);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
    const std::string what = e.what();
    CHECK(what.rfind("train:", 0) == 0);
    CHECK(what.find((out / "shards").string()) != std::string::npos);
  }
  ctx.config.paths.shards = {out / "nope.xcs"};
  try {
    cmd_diff(ctx);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).rfind("diff:", 0) == 0);
    CHECK(std::string(e.what()).find("nope.xcs") != std::string::npos);
  }
}

TEST_CASE("repro-desk is byte-identical across equal-seed runs") {
  const auto a = fresh_dir("desk_a");
  const auto b = fresh_dir("desk_b");
  const auto c = fresh_dir("desk_c");
  cmd_repro_desk(small_context(a));
  cmd_repro_desk(small_context(b));
  auto other = small_context(c);
  apply_seed(other.config, 1);
  cmd_repro_desk(other);
  for (const auto* name : {"synth_report.json", "train_report.json", "diff_report.json", "ablate_report.json",
                           "steer_report.json", "geometry_report.json", "desk_report.json", "metrics.csv",
                           "features.csv", "ablation.csv"})
    CHECK(slurp(a / name) == slurp(b / name));
  CHECK(slurp(a / "checkpoint.xckpt") == slurp(b / "checkpoint.xckpt"));
  CHECK(slurp(a / "features.csv") != slurp(c / "features.csv"));
}
