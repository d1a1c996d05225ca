#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "actstore/shard.hpp"
#include "common/types.hpp"
#include "intervene/adapter.hpp"

namespace xcod::toymodel {

namespace fs = std::filesystem;
using Index = Eigen::Index;
using intervene::TokenId;

struct WorldConfig {
  Index n_shared = 40;
  Index n_unique_base = 12;
  Index n_unique_distilled = 12;
  Index d_base = 64;
  Index d_distilled = 64;
  Index vocab_size = 256;
  double fire_probability = -1.0;  // < 0 selects 6 / (total planted features)
  double magnitude_min = 0.5;
  double magnitude_max = 2.0;
  Index doc_length = 64;
  std::uint64_t seed = 0;

  Index n_planted() const { return n_shared + n_unique_base + n_unique_distilled; }
  double resolved_fire_probability() const;
  void validate() const;
};

nlohmann::json to_json(const WorldConfig& c);
WorldConfig world_config_from_json(const nlohmann::json& j);

enum class PlantedKind { kShared, kUniqueBase, kUniqueDistilled };

// Planted ground truth. Rows of every dictionary are unit norm, and within a
// side the shared and unique rows are mutually orthonormal. Feature ids run
// shared, then unique-base, then unique-distilled.
struct PlantedWorld {
  WorldConfig config;
  double fire_probability = 0.0;
  Matrix shared_base;         // n_s x d_A
  Matrix shared_distilled;    // n_s x d_B
  Matrix unique_base;         // n_a x d_A
  Matrix unique_distilled;    // n_b x d_B
  Matrix unembed_base;        // V x d_A
  Matrix unembed_distilled;   // V x d_B
  Matrix token_residual_base;       // V x d_A, residual of a position outside the replayed stream
  Matrix token_residual_distilled;  // V x d_B
  std::vector<TokenId> marker_tokens;  // per unique-distilled feature
  std::vector<std::string> vocab;

  PlantedKind kind(Index feature) const;
  // Dictionary row of a planted feature on one side; empty when the feature
  // does not exist on that side.
  Vector row(Index feature, Side side) const;
  // All planted rows that live on a side, in feature-id order, plus their ids.
  Matrix side_dictionary(Side side, std::vector<Index>* ids = nullptr) const;
  const Matrix& unembed(Side side) const { return side == Side::kBase ? unembed_base : unembed_distilled; }
  Index dim(Side side) const { return side == Side::kBase ? config.d_base : config.d_distilled; }
  // Marker token of a unique-distilled feature (index within that group).
  TokenId marker_of(Index unique_distilled_index) const { return marker_tokens.at(unique_distilled_index); }
  std::optional<Index> feature_of_marker(TokenId token) const;
  TokenId token_id(const std::string& text) const;

  // Logit contribution of unique-distilled feature j on its marker token for
  // a distilled-side residual x: (w_j . x) * (U_marker . w_j).
  double marker_contribution(Index unique_distilled_index, const Vector& distilled_residual) const;
};

PlantedWorld plant_world(const WorldConfig& config);

nlohmann::json world_to_json(const PlantedWorld& world);
PlantedWorld world_from_json(const nlohmann::json& j);
void save_world(const fs::path& path, const PlantedWorld& world);
PlantedWorld load_world(const fs::path& path);

struct ActiveFeature {
  Index feature = 0;
  double magnitude = 0.0;
};

struct PlantedSample {
  Vector base;
  Vector distilled;
  std::vector<ActiveFeature> active;
  TokenId token = 0;
  std::int64_t doc_id = 0;
  std::int64_t position = 0;
};

// Residual pair produced by a set of active features.
std::pair<Vector, Vector> activations_for(const PlantedWorld& world, const std::vector<ActiveFeature>& active);

// Deterministic token stream: documents of doc_length tokens. A token
// following a position where unique-distilled features fired is the marker of
// the strongest of them; every other token is a uniform filler token.
class PlantedSampler {
 public:
  PlantedSampler(const PlantedWorld& world, std::uint64_t seed);
  PlantedSample next();

 private:
  const PlantedWorld& world_;
  std::mt19937_64 rng_;
  std::int64_t doc_id_ = 0;
  std::int64_t position_ = 0;
  std::optional<TokenId> pending_marker_;
};

struct SampleSummary {
  std::vector<fs::path> shards;
  std::uint64_t rows = 0;
};

// Writes n_tokens rows split into n_shards actstore shards named
// shard_000.xcs, ... (documents never straddle shards when avoidable).
SampleSummary sample_shards(const PlantedWorld& world, std::uint64_t n_tokens, const fs::path& dir,
                            std::uint64_t seed, std::size_t n_shards = 1);

// Replayable token stream held in memory, grouped by document.
struct ReplayDoc {
  std::int64_t doc_id = 0;
  std::vector<TokenId> tokens;
  MatrixF base;       // T x d_A
  MatrixF distilled;  // T x d_B
};

struct ReplayCorpus {
  std::vector<ReplayDoc> docs;
};

// Loads documents in file order; max_docs == 0 loads all.
std::shared_ptr<const ReplayCorpus> load_replay(const std::vector<fs::path>& shards, std::size_t max_docs = 0);

class PlantedAdapter final : public intervene::ModelAdapter {
 public:
  PlantedAdapter(std::shared_ptr<const PlantedWorld> world, Side side, std::shared_ptr<const ReplayCorpus> corpus);

  Side side() const override { return side_; }
  Index vocab_size() const override { return world_->config.vocab_size; }
  Index hidden_dim() const override { return world_->dim(side_); }
  Matrix residuals(std::span<const TokenId> tokens) const override;
  Matrix logits_from(const Matrix& residuals) const override;
  Matrix forward(std::span<const TokenId> tokens) const override;
  std::optional<Matrix> partner_residuals(std::span<const TokenId> tokens) const override;
  bool supports_generation() const override { return true; }
  std::string token_text(TokenId id) const override;

 private:
  Matrix residuals_for(std::span<const TokenId> tokens, Side side) const;

  std::shared_ptr<const PlantedWorld> world_;
  Side side_;
  std::shared_ptr<const ReplayCorpus> corpus_;
  std::unordered_map<TokenId, std::vector<std::size_t>> by_first_token_;
};

struct MmcsResult {
  std::vector<double> max_cosine;   // per ground-truth row
  std::vector<Index> best_match;    // learned row achieving it, -1 when none
  double mean = 0.0;
  Index skipped_zero_rows = 0;
};

// For each ground-truth row, the max |cosine| over learned rows.
MmcsResult mmcs(const Matrix& ground_truth, const Matrix& learned);

}  // namespace xcod::toymodel
