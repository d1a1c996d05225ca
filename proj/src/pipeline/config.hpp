#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "diff/annotate.hpp"
#include "geometry/geometry.hpp"
#include "intervene/category.hpp"
#include "toymodel/world.hpp"
#include "trainer/trainer.hpp"

namespace xcod::pipeline {

namespace fs = std::filesystem;

struct SynthOptions {
  std::uint64_t n_tokens = 300000;
  std::size_t n_shards = 1;
};

struct StreamOptions {
  coder::Index shuffle_buffer = 8192;
  std::uint64_t epochs = 0;  // 0 cycles the shards until training stops
};

struct DiffOptions {
  int n_bins = 50;
  std::size_t top_n = 20;
  std::size_t examples = 5;
  std::size_t window = 4;
  bool swap_sides = false;
  std::vector<intervene::ReasoningCategory> categories;
  diff::AnnotateConfig annotate;
};

struct AblateOptions {
  std::vector<intervene::ReasoningCategory> categories;
  double nrn_threshold = 0.5;
  std::vector<double> k_grid = {0.5, 1.0, 2.0, 5.0, 10.0, 20.0};
  std::size_t n_targets = 100;
  bool all_positions = false;
  std::size_t max_docs = 0;  // replay documents used as prompts, 0 = all
};

struct SteerOptions {
  std::vector<double> alphas;  // empty: the feature's observed max activation
  std::size_t max_steps = 8;
  std::size_t prompt_tokens = 8;
  coder::Index feature = -1;  // -1: top of the first category's ablation set
};

// Synthetic function-class fixture written by synth for the geometry stage.
struct GeometryFixture {
  std::size_t n_classes = 4;
  std::size_t entries_per_class = 14;
  std::size_t multi_token_per_class = 2;
  coder::Index dim = 32;
  double noise = 0.05;
};

struct GeometryOptions {
  std::vector<coder::Index> dims = {2, 5, 10, 20};
  geometry::PcaFit fit = geometry::PcaFit::kPerClass;
  GeometryFixture fixture;
};

// Inputs; empty paths resolve to the artifacts earlier stages wrote under --out.
struct PathOptions {
  std::vector<fs::path> shards;
  fs::path world;
  fs::path checkpoint;
  fs::path dataset;
  fs::path embeddings;
};

struct RunConfig {
  std::uint64_t seed = 0;
  bool deterministic = true;
  toymodel::WorldConfig world;
  SynthOptions synth;
  trainer::TrainConfig train;
  StreamOptions stream;
  DiffOptions diff;
  AblateOptions ablate;
  SteerOptions steer;
  GeometryOptions geometry;
  PathOptions paths;

  void validate() const;
};

// Built-in desk configuration for the planted world.
RunConfig desk_config();
// The desk marker categories, one marker word each.
std::vector<intervene::ReasoningCategory> desk_categories();

// Unknown keys are rejected; missing keys keep their desk defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_run_config(const fs::path& path);
std::string run_config_digest(const RunConfig& c);

// Applies a seed to every seeded stage.
void apply_seed(RunConfig& c, std::uint64_t seed);

}  // namespace xcod::pipeline
