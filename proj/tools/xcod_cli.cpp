#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xcod/xcod.h"

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out = "xcod_out";
  bool no_timestamp = false;
};

struct Overrides {
  std::vector<std::string> shards;
  std::string world;
  std::string checkpoint;
  std::string dataset;
  std::string embeddings;
  bool swap_sides = false;
  std::optional<std::size_t> top_n;
  std::vector<double> k_grid;
  bool all_positions = false;
  std::optional<long long> feature;
  std::vector<double> alphas;
  std::optional<std::size_t> max_steps;
  std::vector<long long> dims;
  std::string fit;

  nlohmann::json patch() const {
    nlohmann::json p = nlohmann::json::object();
    if (!shards.empty()) p["paths"]["shards"] = shards;
    if (!world.empty()) p["paths"]["world"] = world;
    if (!checkpoint.empty()) p["paths"]["checkpoint"] = checkpoint;
    if (!dataset.empty()) p["paths"]["dataset"] = dataset;
    if (!embeddings.empty()) p["paths"]["embeddings"] = embeddings;
    if (swap_sides) p["diff"]["swap_sides"] = true;
    if (top_n) p["diff"]["top_n"] = *top_n;
    if (!k_grid.empty()) p["ablate"]["k_grid"] = k_grid;
    if (all_positions) p["ablate"]["all_positions"] = true;
    if (feature) p["steer"]["feature"] = *feature;
    if (!alphas.empty()) p["steer"]["alphas"] = alphas;
    if (max_steps) p["steer"]["max_steps"] = *max_steps;
    if (!dims.empty()) p["geometry"]["dims"] = dims;
    if (!fit.empty()) p["geometry"]["fit"] = fit;
    return p;
  }
};

int report_failure(xcod_status st) {
  std::cerr << "error (" << xcod_status_name(st) << "): " << xcod_last_error() << "\n";
  return static_cast<int>(st);
}

int run(const std::string& command, const Globals& g, const Overrides& o, bool print_config) {
  xcod_run_options* opts = nullptr;
  xcod_status st = xcod_run_options_create(&opts);
  if (st != XCOD_OK) return report_failure(st);
  auto check = [&](xcod_status s) {
    if (s != XCOD_OK && st == XCOD_OK) st = s;
  };
  if (!g.config.empty()) check(xcod_run_options_set_config_path(opts, g.config.c_str()));
  const auto patch = o.patch();
  if (!patch.empty()) check(xcod_run_options_add_override(opts, patch.dump().c_str()));
  if (g.seed) check(xcod_run_options_set_seed(opts, *g.seed));
  check(xcod_run_options_set_deterministic(opts, g.deterministic ? 1 : 0));
  check(xcod_run_options_set_out(opts, g.out.c_str()));
  check(xcod_run_options_set_timestamp(opts, g.no_timestamp ? 0 : 1));
  char* text = nullptr;
  if (st == XCOD_OK) {
    st = print_config ? xcod_run_options_resolve(opts, &text) : xcod_run(opts, command.c_str(), &text);
  }
  xcod_run_options_free(opts);
  if (st != XCOD_OK) return report_failure(st);
  if (print_config) {
    std::cout << text << "\n";
  } else {
    const auto report = nlohmann::json::parse(text);
    const std::string name = report.value("command", command);
    std::cout << command << ": ok, report " << g.out << "/" << name << "_report.json\n";
  }
  xcod_string_free(text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crosscoder model diffing: train, compare, ablate, steer and probe geometry"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run config JSON (defaults to the built-in desk config)");
  app.add_option("--seed", g.seed, "Seed for every seeded stage");
  app.add_flag("--deterministic", g.deterministic, "Record deterministic mode in reports");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--no-timestamp", g.no_timestamp, "Omit wall-clock fields from reports");
  app.fallthrough();

  Overrides o;
  bool show_config = false;
  app.add_flag("--show-config", show_config, "Print the resolved config and exit");

  auto* synth = app.add_subcommand("synth", "Plant a world and write activation shards");
  auto* train = app.add_subcommand("train", "Train a crosscoder on shards");
  train->add_option("--shards", o.shards, "Shard files (default: OUT/shards/*.xcs)");
  auto* diff = app.add_subcommand("diff", "Decoder-norm diffing report");
  diff->add_option("--shards", o.shards, "Shard files");
  diff->add_option("--checkpoint", o.checkpoint, "Checkpoint (default: OUT/checkpoint.xckpt)");
  diff->add_option("--world", o.world, "Planted world for recovery stats");
  diff->add_flag("--swap-sides", o.swap_sides, "Relabel base and distilled");
  diff->add_option("--top-n", o.top_n, "Length of top and bottom NRN lists");
  auto* ablate = app.add_subcommand("ablate", "Ablation logit-change sweep");
  ablate->add_option("--shards", o.shards, "Shard files");
  ablate->add_option("--checkpoint", o.checkpoint, "Checkpoint");
  ablate->add_option("--world", o.world, "Planted world");
  ablate->add_option("--k", o.k_grid, "Top-percent grid");
  ablate->add_flag("--all-positions", o.all_positions, "Ablate every position");
  auto* steer = app.add_subcommand("steer", "Greedy decoding with decoder-vector steering");
  steer->add_option("--shards", o.shards, "Shard files");
  steer->add_option("--checkpoint", o.checkpoint, "Checkpoint");
  steer->add_option("--world", o.world, "Planted world");
  steer->add_option("--feature", o.feature, "Feature id (default: top of the first category's set)");
  steer->add_option("--alpha", o.alphas, "Steering strengths, one transcript each");
  steer->add_option("--max-steps", o.max_steps, "Tokens to generate");
  auto* geometry = app.add_subcommand("geometry", "Parallelogram loss under PCA");
  geometry->add_option("--dataset", o.dataset, "Function-class dataset JSON");
  geometry->add_option("--embeddings", o.embeddings, "Embedding table shard");
  geometry->add_option("--dims", o.dims, "PCA dimensions");
  geometry->add_option("--fit", o.fit, "per_class or global")->check(CLI::IsMember({"per_class", "global"}));
  auto* desk = app.add_subcommand("repro-desk", "synth, train, diff, ablate, steer and geometry in one run");

  CLI11_PARSE(app, argc, argv);
  for (auto* sub : {synth, train, diff, ablate, steer, geometry, desk})
    if (sub->parsed()) return run(sub->get_name(), g, o, show_config);
  return 1;
}
