#include "pipeline/config.hpp"

#include <fstream>
#include <set>

#include "common/digest.hpp"
#include "common/error.hpp"

namespace xcod::pipeline {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& section, const std::set<std::string>& known) {
  require(j.is_object(), ErrorCode::kConfig, "config section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, ErrorCode::kConfig,
            "unknown key '" + (section.empty() ? key : section + "." + key) + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<intervene::ReasoningCategory> read_categories(const json& j) {
  require(j.is_array(), ErrorCode::kConfig, "categories must be an array");
  std::vector<intervene::ReasoningCategory> out;
  for (const auto& c : j) out.push_back(intervene::category_from_json(c));
  return out;
}

json categories_json(const std::vector<intervene::ReasoningCategory>& cs) {
  auto arr = json::array();
  for (const auto& c : cs) arr.push_back(intervene::to_json(c));
  return arr;
}

std::vector<fs::path> read_paths(const json& j) {
  std::vector<fs::path> out;
  for (const auto& s : j.get<std::vector<std::string>>()) out.emplace_back(s);
  return out;
}

void parse_sections(const json& j, RunConfig& c) {
  check_keys(j, "", {"seed", "deterministic", "world", "synth", "train", "stream", "diff", "ablate", "steer",
                     "geometry", "paths"});
  read(j, "deterministic", c.deterministic);
  if (j.contains("world")) c.world = toymodel::world_config_from_json(j.at("world"));
  if (j.contains("train")) c.train = trainer::train_config_from_json(j.at("train"));
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    check_keys(s, "synth", {"n_tokens", "n_shards"});
    read(s, "n_tokens", c.synth.n_tokens);
    read(s, "n_shards", c.synth.n_shards);
  }
  if (j.contains("stream")) {
    const auto& s = j.at("stream");
    check_keys(s, "stream", {"shuffle_buffer", "epochs"});
    read(s, "shuffle_buffer", c.stream.shuffle_buffer);
    read(s, "epochs", c.stream.epochs);
  }
  if (j.contains("diff")) {
    const auto& s = j.at("diff");
    check_keys(s, "diff", {"n_bins", "top_n", "examples", "window", "swap_sides", "categories", "annotate"});
    read(s, "n_bins", c.diff.n_bins);
    read(s, "top_n", c.diff.top_n);
    read(s, "examples", c.diff.examples);
    read(s, "window", c.diff.window);
    read(s, "swap_sides", c.diff.swap_sides);
    if (s.contains("categories")) c.diff.categories = read_categories(s.at("categories"));
    if (s.contains("annotate")) c.diff.annotate = diff::annotate_config_from_json(s.at("annotate"));
  }
  if (j.contains("ablate")) {
    const auto& s = j.at("ablate");
    check_keys(s, "ablate", {"categories", "nrn_threshold", "k_grid", "n_targets", "all_positions", "max_docs"});
    if (s.contains("categories")) c.ablate.categories = read_categories(s.at("categories"));
    read(s, "nrn_threshold", c.ablate.nrn_threshold);
    read(s, "k_grid", c.ablate.k_grid);
    read(s, "n_targets", c.ablate.n_targets);
    read(s, "all_positions", c.ablate.all_positions);
    read(s, "max_docs", c.ablate.max_docs);
  }
  if (j.contains("steer")) {
    const auto& s = j.at("steer");
    check_keys(s, "steer", {"alphas", "max_steps", "prompt_tokens", "feature"});
    read(s, "alphas", c.steer.alphas);
    read(s, "max_steps", c.steer.max_steps);
    read(s, "prompt_tokens", c.steer.prompt_tokens);
    read(s, "feature", c.steer.feature);
  }
  if (j.contains("geometry")) {
    const auto& s = j.at("geometry");
    check_keys(s, "geometry", {"dims", "fit", "fixture"});
    read(s, "dims", c.geometry.dims);
    if (s.contains("fit")) {
      const auto fit = s.at("fit").get<std::string>();
      require(fit == "per_class" || fit == "global", ErrorCode::kConfig, "geometry.fit must be per_class or global");
      c.geometry.fit = fit == "global" ? geometry::PcaFit::kGlobal : geometry::PcaFit::kPerClass;
    }
    if (s.contains("fixture")) {
      const auto& f = s.at("fixture");
      check_keys(f, "geometry.fixture", {"n_classes", "entries_per_class", "multi_token_per_class", "dim", "noise"});
      read(f, "n_classes", c.geometry.fixture.n_classes);
      read(f, "entries_per_class", c.geometry.fixture.entries_per_class);
      read(f, "multi_token_per_class", c.geometry.fixture.multi_token_per_class);
      read(f, "dim", c.geometry.fixture.dim);
      read(f, "noise", c.geometry.fixture.noise);
    }
  }
  if (j.contains("paths")) {
    const auto& s = j.at("paths");
    check_keys(s, "paths", {"shards", "world", "checkpoint", "dataset", "embeddings"});
    if (s.contains("shards")) c.paths.shards = read_paths(s.at("shards"));
    if (s.contains("world")) c.paths.world = s.at("world").get<std::string>();
    if (s.contains("checkpoint")) c.paths.checkpoint = s.at("checkpoint").get<std::string>();
    if (s.contains("dataset")) c.paths.dataset = s.at("dataset").get<std::string>();
    if (s.contains("embeddings")) c.paths.embeddings = s.at("embeddings").get<std::string>();
  }
  if (j.contains("seed")) apply_seed(c, j.at("seed").get<std::uint64_t>());
}

}  // namespace

void RunConfig::validate() const {
  world.validate();
  train.validate(2);
  require(synth.n_tokens >= 1, ErrorCode::kConfig, "synth.n_tokens must be >= 1");
  require(synth.n_shards >= 1, ErrorCode::kConfig, "synth.n_shards must be >= 1");
  require(stream.shuffle_buffer >= 1, ErrorCode::kConfig, "stream.shuffle_buffer must be >= 1");
  require(diff.n_bins >= 1, ErrorCode::kConfig, "diff.n_bins must be >= 1");
  require(!ablate.k_grid.empty(), ErrorCode::kConfig, "ablate.k_grid must not be empty");
  for (const double k : ablate.k_grid)
    require(k > 0.0 && k <= 100.0, ErrorCode::kConfig, "ablate.k_grid values must lie in (0, 100]");
  require(!ablate.categories.empty(), ErrorCode::kConfig, "ablate.categories must not be empty");
  require(ablate.n_targets >= 1, ErrorCode::kConfig, "ablate.n_targets must be >= 1");
  require(steer.prompt_tokens >= 1, ErrorCode::kConfig, "steer.prompt_tokens must be >= 1");
  require(!geometry.dims.empty(), ErrorCode::kConfig, "geometry.dims must not be empty");
  for (const auto d : geometry.dims) require(d >= 1, ErrorCode::kConfig, "geometry.dims must be positive");
  const auto& f = geometry.fixture;
  require(f.n_classes >= 1 && f.entries_per_class >= 2 && f.multi_token_per_class < f.entries_per_class && f.dim >= 2 &&
              f.noise >= 0.0,
          ErrorCode::kConfig, "invalid geometry.fixture");
}

std::vector<intervene::ReasoningCategory> desk_categories() {
  return {{"self-reflection", {"Wait"}},
          {"deductive", {"Therefore"}},
          {"alternative", {"Alternatively"}},
          {"contrastive", {"However"}}};
}

RunConfig desk_config() {
  RunConfig c;
  c.train.n_features = 96;
  c.train.sparsity = coder::WeightedL1{1.0};
  c.train.learning_rate = 1e-3;
  c.train.total_steps = 6000;
  c.train.batch_size = 256;
  c.train.log_interval = 100;
  c.diff.categories = desk_categories();
  c.ablate.categories = desk_categories();
  c.steer.alphas = {0.0, 1.0, 2.0, 4.0};
  return c;
}

void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.world.seed = seed;
  c.train.seed = seed;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c = desk_config();
  try {
    parse_sections(j, c);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad run config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  auto paths = json::object();
  std::vector<std::string> shards;
  for (const auto& p : c.paths.shards) shards.push_back(p.string());
  paths["shards"] = shards;
  paths["world"] = c.paths.world.string();
  paths["checkpoint"] = c.paths.checkpoint.string();
  paths["dataset"] = c.paths.dataset.string();
  paths["embeddings"] = c.paths.embeddings.string();
  const auto& fx = c.geometry.fixture;
  return {{"seed", c.seed},
          {"deterministic", c.deterministic},
          {"world", toymodel::to_json(c.world)},
          {"synth", {{"n_tokens", c.synth.n_tokens}, {"n_shards", c.synth.n_shards}}},
          {"train", trainer::to_json(c.train)},
          {"stream", {{"shuffle_buffer", c.stream.shuffle_buffer}, {"epochs", c.stream.epochs}}},
          {"diff",
           {{"n_bins", c.diff.n_bins},
            {"top_n", c.diff.top_n},
            {"examples", c.diff.examples},
            {"window", c.diff.window},
            {"swap_sides", c.diff.swap_sides},
            {"categories", categories_json(c.diff.categories)},
            {"annotate", diff::to_json(c.diff.annotate)}}},
          {"ablate",
           {{"categories", categories_json(c.ablate.categories)},
            {"nrn_threshold", c.ablate.nrn_threshold},
            {"k_grid", c.ablate.k_grid},
            {"n_targets", c.ablate.n_targets},
            {"all_positions", c.ablate.all_positions},
            {"max_docs", c.ablate.max_docs}}},
          {"steer",
           {{"alphas", c.steer.alphas},
            {"max_steps", c.steer.max_steps},
            {"prompt_tokens", c.steer.prompt_tokens},
            {"feature", c.steer.feature}}},
          {"geometry",
           {{"dims", c.geometry.dims},
            {"fit", c.geometry.fit == geometry::PcaFit::kGlobal ? "global" : "per_class"},
            {"fixture",
             {{"n_classes", fx.n_classes},
              {"entries_per_class", fx.entries_per_class},
              {"multi_token_per_class", fx.multi_token_per_class},
              {"dim", fx.dim},
              {"noise", fx.noise}}}}},
          {"paths", paths}};
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

std::string run_config_digest(const RunConfig& c) { return digest_hex(to_json(c).dump()); }

}  // namespace xcod::pipeline
