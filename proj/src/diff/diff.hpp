#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "coder/coder.hpp"
#include "intervene/category.hpp"

namespace xcod::diff {

namespace fs = std::filesystem;
using coder::Index;

// Per side, the L1 norm of every feature's decoder row.
std::vector<Vector> decoder_norms(const coder::CrosscoderParams& params);

struct RdnNrn {
  Vector rdn;  // may hold +infinity
  Vector nrn;  // in [0, 1]
};

// rdn = |B| / |A| (B = distilled side), nrn = rdn / (1 + rdn). A zero A-norm
// gives rdn = inf and nrn = 1 unless B is zero too, in which case nrn = 0.5.
RdnNrn rdn_nrn(const Vector& norms_base, const Vector& norms_distilled);

struct NrnSummary {
  std::vector<double> edges;          // n_bins + 1, uniform over [0, 1]
  std::vector<std::uint64_t> counts;  // n_bins
  double mean = 0.0;

  std::size_t bin_of(double nrn) const;
};

NrnSummary nrn_summary(const Vector& nrns, int n_bins = 50);

// True when each [lo, hi] band holds a nonzero peak bin and every pair of
// neighbouring peaks is separated by a strictly lower valley.
bool is_multimodal(const NrnSummary& hist, const std::vector<std::pair<double, double>>& bands);

// Where a target-token occurrence at row t is observed: at the row that
// predicts it (t - 1, same document) or at the target row itself.
enum class OccurrencePosition { kPredicting, kTarget };

struct FiringStats {
  std::vector<std::string> categories;
  Matrix frequency;                           // F x C
  std::vector<std::uint64_t> category_tokens; // occurrences per category
  std::vector<bool> empty_category;           // warning flag: zero occurrences
  Vector global_frequency;                    // fraction of all rows with f > 0
  Vector max_activation;
  Vector mean_active;                         // mean activation over rows where it fires
  std::uint64_t rows = 0;
};

struct EncodeOptions {
  std::vector<double> normalization;  // per side; empty means 1.0
  coder::SparsityKind sparsity = coder::WeightedL1{};
};

FiringStats firing_stats(const coder::CrosscoderParams& params, const std::vector<fs::path>& shards,
                         const std::vector<intervene::ReasoningCategory>& categories,
                         const EncodeOptions& options = {},
                         OccurrencePosition position = OccurrencePosition::kPredicting);

struct ContextToken {
  std::string text;
  double activation = 0.0;
};

struct ActivatingContext {
  std::uint64_t row = 0;  // global stream position
  std::int64_t doc_id = 0;
  std::int64_t position = 0;
  double activation = 0.0;
  std::size_t focus = 0;  // index of the activating token within `tokens`
  std::vector<ContextToken> tokens;
};

// Top-n firing rows (activation > 0) per requested feature, each with
// +-window surrounding tokens of the same document; ties go to the earlier row.
std::vector<std::vector<ActivatingContext>> max_activating(const coder::CrosscoderParams& params,
                                                           const std::vector<fs::path>& shards,
                                                           const std::vector<Index>& features, std::size_t n,
                                                           std::size_t window, const EncodeOptions& options = {});

// Feature ids ordered by NRN descending (top) or ascending (bottom), ties by id.
std::vector<Index> top_by_nrn(const Vector& nrn, std::size_t n);
std::vector<Index> bottom_by_nrn(const Vector& nrn, std::size_t n);

// Swaps the two sides of a crosscoder, turning every nrn into 1 - nrn.
coder::CrosscoderParams swap_sides(const coder::CrosscoderParams& params);

nlohmann::json to_json(const ActivatingContext& c);

}  // namespace xcod::diff
