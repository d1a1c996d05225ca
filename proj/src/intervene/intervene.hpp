#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "coder/coder.hpp"
#include "diff/diff.hpp"
#include "intervene/adapter.hpp"
#include "intervene/category.hpp"

namespace xcod::intervene {

struct AblationSpec {
  ReasoningCategory category;
  double nrn_threshold = 0.5;
  double top_percent = 1.0;  // k in (0, 100]
  Side side = Side::kDistilled;
  bool all_positions = false;  // ablate every position instead of only the predicting one

  void validate() const;
};

nlohmann::json to_json(const AblationSpec& spec);

struct FeatureStat {
  Index id = 0;
  double nrn = 0.0;
  double frequency = 0.0;  // firing frequency on the category's target tokens
};

struct AblationSet {
  std::vector<Index> features;  // ranked by frequency descending, then id
  std::size_t active_count = 0;
  bool empty_active = false;
};

// Among features with frequency > 0, keeps nrn > threshold, ranks by frequency
// and takes ceil(top_percent% of the active count).
AblationSet select_ablation_set(const std::vector<FeatureStat>& stats, double nrn_threshold, double top_percent);

// Feature stats for one category column of a firing-stats table.
std::vector<FeatureStat> category_stats(const diff::FiringStats& stats, const Vector& nrn,
                                        const std::string& category);

// Crosscoder input for a token sequence: the adapter's residuals in side
// order, with its partner's residuals on the other side (or its own when no
// partner is available).
coder::Batch paired_inputs(const ModelAdapter& adapter, std::span<const TokenId> tokens,
                           const coder::CrosscoderParams& params);

// Rows of `side` minus the selected features' decoded contributions, with f
// computed once from the clean paired input and mapped back to raw units.
Matrix ablate_residual(const coder::CrosscoderParams& params, const coder::Batch& paired,
                       std::span<const Index> features, Side side, const diff::EncodeOptions& options = {});

struct Occurrence {
  std::size_t prompt = 0;
  Index position = 0;  // index of the target token; logits are read at position - 1
  TokenId token = 0;
  double clean = 0.0;
  double ablated = 0.0;
  double delta = 0.0;
};

struct LogitChangeOptions {
  std::size_t n_targets = 100;
  std::uint64_t seed = 0;
  bool all_positions = false;
  diff::EncodeOptions encode;
};

struct LogitChangeReport {
  std::vector<Occurrence> occurrences;  // sampled, in prompt then position order
  double mean_delta = 0.0;
  std::size_t available = 0;     // occurrences found before sampling
  bool fewer_than_requested = false;
};

LogitChangeReport logit_change(const ModelAdapter& adapter, const coder::CrosscoderParams& params,
                               const std::vector<std::vector<TokenId>>& prompts, const ReasoningCategory& category,
                               std::span<const Index> features, const LogitChangeOptions& options = {});

nlohmann::json to_json(const LogitChangeReport& report);

// Residuals of the adapter's side plus alpha times the feature's decoder row
// (in raw units) at every position.
Matrix steered_residuals(const ModelAdapter& adapter, const coder::CrosscoderParams& params,
                         std::span<const TokenId> tokens, Index feature, double alpha,
                         const std::vector<double>& normalization = {});

struct SteerResult {
  std::vector<TokenId> tokens;                // prompt followed by generated tokens
  std::vector<std::vector<double>> watched;   // per step, logits of the watched tokens at the last position
};

// Greedy decoding (ties to the lower token id) with the steering vector added
// on every forward pass.
SteerResult steer(const ModelAdapter& adapter, const coder::CrosscoderParams& params,
                  std::span<const TokenId> prompt, Index feature, double alpha, std::size_t max_steps,
                  const std::vector<TokenId>& watch = {}, const std::vector<double>& normalization = {});

// Plain greedy decoding through adapter.forward.
std::vector<TokenId> greedy(const ModelAdapter& adapter, std::span<const TokenId> prompt, std::size_t max_steps);

}  // namespace xcod::intervene
