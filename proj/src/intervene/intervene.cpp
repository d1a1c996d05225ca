#include "intervene/intervene.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "common/error.hpp"

namespace xcod::intervene {

namespace {

int side_index(const coder::CrosscoderParams& params, Side side) {
  const int i = static_cast<int>(side);
  require(i < params.n_sides(), ErrorCode::kInvalidArgument,
          std::string("crosscoder has no ") + side_name(side) + " side");
  return i;
}

double scale_of(const std::vector<double>& normalization, int side) {
  if (normalization.empty()) return 1.0;
  require(side < static_cast<int>(normalization.size()), ErrorCode::kShapeMismatch,
          "normalization needs one factor per side");
  return normalization[static_cast<std::size_t>(side)];
}

void check_feature(const coder::CrosscoderParams& params, Index k) {
  require(k >= 0 && k < params.n_features(), ErrorCode::kInvalidArgument, "invalid feature id " + std::to_string(k));
}

Index argmax_row(const Matrix& logits, Index row) {
  Index best = 0;
  for (Index v = 1; v < logits.cols(); ++v)
    if (logits(row, v) > logits(row, best)) best = v;
  return best;
}

}  // namespace

void AblationSpec::validate() const {
  category.validate();
  require(std::isfinite(nrn_threshold), ErrorCode::kInvalidArgument, "nrn threshold must be finite");
  require(top_percent > 0.0 && top_percent <= 100.0, ErrorCode::kInvalidArgument, "top percent must lie in (0, 100]");
}

nlohmann::json to_json(const AblationSpec& spec) {
  return {{"category", to_json(spec.category)},
          {"nrn_threshold", spec.nrn_threshold},
          {"top_percent", spec.top_percent},
          {"side", side_name(spec.side)},
          {"all_positions", spec.all_positions}};
}

AblationSet select_ablation_set(const std::vector<FeatureStat>& stats, double nrn_threshold, double top_percent) {
  require(top_percent > 0.0 && top_percent <= 100.0, ErrorCode::kInvalidArgument, "top percent must lie in (0, 100]");
  AblationSet out;
  std::vector<FeatureStat> candidates;
  for (const auto& s : stats) {
    if (!(s.frequency > 0.0)) continue;
    ++out.active_count;
    if (s.nrn > nrn_threshold) candidates.push_back(s);
  }
  out.empty_active = out.active_count == 0;
  std::sort(candidates.begin(), candidates.end(), [](const FeatureStat& a, const FeatureStat& b) {
    if (a.frequency != b.frequency) return a.frequency > b.frequency;
    return a.id < b.id;
  });
  const double want = top_percent / 100.0 * static_cast<double>(out.active_count);
  const auto take = static_cast<std::size_t>(std::ceil(want - 1e-9));
  for (std::size_t i = 0; i < std::min(take, candidates.size()); ++i) out.features.push_back(candidates[i].id);
  return out;
}

std::vector<FeatureStat> category_stats(const diff::FiringStats& stats, const Vector& nrn,
                                        const std::string& category) {
  const auto it = std::find(stats.categories.begin(), stats.categories.end(), category);
  require(it != stats.categories.end(), ErrorCode::kNotFound, "no firing stats for category '" + category + "'");
  require(nrn.size() == stats.frequency.rows(), ErrorCode::kShapeMismatch, "nrn and firing stats differ in size");
  const auto c = static_cast<Index>(it - stats.categories.begin());
  std::vector<FeatureStat> out;
  for (Index k = 0; k < nrn.size(); ++k) out.push_back({k, nrn(k), stats.frequency(k, c)});
  return out;
}

coder::Batch paired_inputs(const ModelAdapter& adapter, std::span<const TokenId> tokens,
                           const coder::CrosscoderParams& params) {
  Matrix own = adapter.residuals(tokens);
  coder::Batch batch;
  if (params.n_sides() == 1) {
    batch.sides.push_back(std::move(own));
    return batch;
  }
  require(params.n_sides() == 2, ErrorCode::kInvalidArgument, "expected a one- or two-sided coder");
  std::optional<Matrix> partner = adapter.partner_residuals(tokens);
  Matrix other = partner ? std::move(*partner) : own;
  if (adapter.side() == Side::kBase) {
    batch.sides = {std::move(own), std::move(other)};
  } else {
    batch.sides = {std::move(other), std::move(own)};
  }
  return batch;
}

Matrix ablate_residual(const coder::CrosscoderParams& params, const coder::Batch& paired,
                       std::span<const Index> features, Side side, const diff::EncodeOptions& options) {
  const int s = side_index(params, side);
  coder::check_batch(params, paired);
  Matrix out = paired.sides[static_cast<std::size_t>(s)];
  if (features.empty()) return out;
  for (const Index k : features) check_feature(params, k);
  coder::Batch scaled = paired;
  for (int i = 0; i < params.n_sides(); ++i) scaled.sides[static_cast<std::size_t>(i)] *= scale_of(options.normalization, i);
  const Matrix f = coder::encode(params, scaled, options.sparsity);
  const double scale = scale_of(options.normalization, s);
  const Matrix& w = params.decoder[static_cast<std::size_t>(s)];
  for (Index r = 0; r < out.rows(); ++r)
    for (const Index k : features)
      if (f(r, k) != 0.0) out.row(r) -= (f(r, k) / scale) * w.row(k);
  return out;
}

LogitChangeReport logit_change(const ModelAdapter& adapter, const coder::CrosscoderParams& params,
                               const std::vector<std::vector<TokenId>>& prompts, const ReasoningCategory& category,
                               std::span<const Index> features, const LogitChangeOptions& options) {
  category.validate();
  side_index(params, params.n_sides() == 1 ? Side::kBase : adapter.side());
  std::vector<Occurrence> all;
  for (std::size_t p = 0; p < prompts.size(); ++p)
    for (std::size_t t = 1; t < prompts[p].size(); ++t)
      if (category.matches(adapter.token_text(prompts[p][t])))
        all.push_back({p, static_cast<Index>(t), prompts[p][t], 0.0, 0.0, 0.0});
  require(!all.empty(), ErrorCode::kNotFound, "no occurrences of category '" + category.name + "'");

  LogitChangeReport report;
  report.available = all.size();
  report.fewer_than_requested = all.size() < options.n_targets;
  if (all.size() > options.n_targets) {
    std::mt19937_64 rng(options.seed);
    std::sample(all.begin(), all.end(), std::back_inserter(report.occurrences), options.n_targets, rng);
  } else {
    report.occurrences = std::move(all);
  }

  const Side side = params.n_sides() == 1 ? Side::kBase : adapter.side();
  std::map<std::size_t, std::vector<Occurrence*>> by_prompt;
  for (auto& o : report.occurrences) by_prompt[o.prompt].push_back(&o);
  for (auto& [p, occs] : by_prompt) {
    const auto& tokens = prompts[p];
    const coder::Batch paired = paired_inputs(adapter, tokens, params);
    const Matrix& clean_res = paired.sides[params.n_sides() == 1 ? 0 : static_cast<std::size_t>(side)];
    const Matrix clean_logits = adapter.logits_from(clean_res);
    const Matrix ablated_res = ablate_residual(params, paired, features, side, options.encode);
    std::optional<Matrix> all_logits;
    if (options.all_positions) all_logits = adapter.logits_from(ablated_res);
    for (Occurrence* o : occs) {
      const Index pred = o->position - 1;
      o->clean = clean_logits(pred, o->token);
      if (all_logits) {
        o->ablated = (*all_logits)(pred, o->token);
      } else {
        Matrix edited = clean_res;
        edited.row(pred) = ablated_res.row(pred);
        o->ablated = adapter.logits_from(edited)(pred, o->token);
      }
      o->delta = o->ablated - o->clean;
    }
  }
  double sum = 0.0;
  for (const auto& o : report.occurrences) sum += o.delta;
  report.mean_delta = sum / static_cast<double>(report.occurrences.size());
  return report;
}

nlohmann::json to_json(const LogitChangeReport& report) {
  auto occ = nlohmann::json::array();
  for (const auto& o : report.occurrences)
    occ.push_back({{"prompt", o.prompt}, {"position", o.position}, {"token", o.token},
                   {"clean", o.clean}, {"ablated", o.ablated}, {"delta", o.delta}});
  return {{"mean_delta", report.mean_delta},
          {"available", report.available},
          {"fewer_than_requested", report.fewer_than_requested},
          {"occurrences", occ}};
}

Matrix steered_residuals(const ModelAdapter& adapter, const coder::CrosscoderParams& params,
                         std::span<const TokenId> tokens, Index feature, double alpha,
                         const std::vector<double>& normalization) {
  check_feature(params, feature);
  require(std::isfinite(alpha), ErrorCode::kInvalidArgument, "steering alpha must be finite");
  const int s = side_index(params, params.n_sides() == 1 ? Side::kBase : adapter.side());
  Matrix res = adapter.residuals(tokens);
  require(res.cols() == params.shape.dims[static_cast<std::size_t>(s)], ErrorCode::kShapeMismatch,
          "adapter hidden size does not match the coder");
  if (alpha != 0.0) {
    const RowVector v = (alpha / scale_of(normalization, s)) * params.decoder[static_cast<std::size_t>(s)].row(feature);
    res.rowwise() += v;
  }
  return res;
}

SteerResult steer(const ModelAdapter& adapter, const coder::CrosscoderParams& params,
                  std::span<const TokenId> prompt, Index feature, double alpha, std::size_t max_steps,
                  const std::vector<TokenId>& watch, const std::vector<double>& normalization) {
  require(adapter.supports_generation(), ErrorCode::kInvalidArgument, "adapter does not support generation");
  require(!prompt.empty(), ErrorCode::kInvalidArgument, "steering needs a non-empty prompt");
  for (const TokenId w : watch)
    require(w >= 0 && w < adapter.vocab_size(), ErrorCode::kInvalidArgument, "watched token out of range");
  SteerResult out;
  out.tokens.assign(prompt.begin(), prompt.end());
  for (std::size_t step = 0; step < max_steps; ++step) {
    const Matrix logits = adapter.logits_from(steered_residuals(adapter, params, out.tokens, feature, alpha, normalization));
    const Index last = logits.rows() - 1;
    std::vector<double> row;
    for (const TokenId w : watch) row.push_back(logits(last, w));
    out.watched.push_back(std::move(row));
    out.tokens.push_back(argmax_row(logits, last));
  }
  return out;
}

std::vector<TokenId> greedy(const ModelAdapter& adapter, std::span<const TokenId> prompt, std::size_t max_steps) {
  require(adapter.supports_generation(), ErrorCode::kInvalidArgument, "adapter does not support generation");
  std::vector<TokenId> tokens(prompt.begin(), prompt.end());
  for (std::size_t step = 0; step < max_steps; ++step) {
    const Matrix logits = adapter.forward(tokens);
    tokens.push_back(argmax_row(logits, logits.rows() - 1));
  }
  return tokens;
}

}  // namespace xcod::intervene
