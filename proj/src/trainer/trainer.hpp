#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "actstore/shard.hpp"
#include "coder/coder.hpp"

namespace xcod::trainer {

using coder::Index;

struct TrainConfig {
  Index n_features = 96;
  coder::SparsityKind sparsity = coder::WeightedL1{1.0};
  double learning_rate = 1e-3;
  double lr_decay_fraction = 0.2;       // final fraction of steps decayed linearly to 0
  double lambda_warmup_fraction = 0.05;
  Index batch_size = 256;
  std::uint64_t total_steps = 2000;
  std::uint64_t seed = 0;
  std::uint64_t dead_threshold_tokens = 200000;
  std::uint64_t resample_interval_steps = 10000;  // 0 disables resampling
  std::uint64_t log_interval = 100;
  std::vector<double> normalization;              // per side; empty means 1.0

  void validate(int n_sides) const;
};

nlohmann::json to_json(const TrainConfig& config);
// Rejects unknown keys; missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);
std::string config_digest(const TrainConfig& config);

struct MetricsRow {
  std::uint64_t step = 0;  // 1-based count of completed updates
  double total_loss = 0.0;
  std::vector<double> mse_per_side;
  double sparsity_term = 0.0;
  double l0 = 0.0;
  std::uint64_t dead_features = 0;
  double learning_rate = 0.0;
  double lambda = 0.0;
};

std::string metrics_csv_header(int n_sides);
std::string metrics_csv_row(const MetricsRow& row);

struct TrainState {
  coder::CrosscoderParams params;
  coder::CrosscoderParams adam_m;
  coder::CrosscoderParams adam_v;
  std::uint64_t step = 0;
  std::uint64_t batches_consumed = 0;
  std::vector<double> tokens_since_fired;  // per feature
  std::vector<double> normalization;       // per side
  std::string rng_state;
  std::string config_digest;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsRow> metrics;
};

using BatchSource = std::function<std::optional<coder::Batch>()>;

struct TrainHooks {
  std::function<void(const MetricsRow&)> on_metrics;
  // Called after every completed step; return true to stop early (used to
  // cut checkpoints mid-run).
  std::function<bool(const TrainState&)> after_step;
};

std::vector<double> normalize_factors(const std::vector<actstore::SideStats>& stats,
                                      const std::vector<Index>& dims);

double lambda_at(const TrainConfig& config, std::uint64_t step);
double learning_rate_at(const TrainConfig& config, std::uint64_t step);

// Runs adaptive-moment optimization from a fresh init, or continues from
// `resume` after discarding the batches that state already consumed.
TrainResult train(const TrainConfig& config, const std::vector<Index>& dims, const BatchSource& next_batch,
                  const TrainState* resume = nullptr, const TrainHooks& hooks = {});

// Reinitializes each dead feature toward a high-error input row. `rows` must
// be in the normalized training space; `row_errors` holds squared
// reconstruction error per row and drives the sampling.
void resample_dead(coder::CrosscoderParams& params, coder::CrosscoderParams& adam_m,
                   coder::CrosscoderParams& adam_v, const std::vector<Index>& dead, const coder::Batch& rows,
                   const Vector& row_errors, std::mt19937_64& rng);

}  // namespace xcod::trainer
