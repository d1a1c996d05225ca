#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "common/types.hpp"

namespace xcod::geometry {

namespace fs = std::filesystem;
using Index = Eigen::Index;
using TokenId = std::int64_t;

struct WordPair {
  std::string a;
  std::string b;
  std::vector<TokenId> a_tokens;
  std::vector<TokenId> b_tokens;
  Vector ea;  // empty until embeddings are attached
  Vector eb;
};

struct FunctionClass {
  std::string name;
  std::vector<WordPair> entries;
};

struct FunctionClassDataset {
  std::vector<FunctionClass> classes;
};

// {class_name: [{a, b, a_tokens, b_tokens}, ...]}; classes come out in key order.
FunctionClassDataset dataset_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FunctionClassDataset& dataset);
FunctionClassDataset load_dataset(const fs::path& path);
void save_dataset(const fs::path& path, const FunctionClassDataset& dataset);

// Token id to vector, read from a single-side shard whose metadata carries the ids.
struct EmbeddingTable {
  Index dim = 0;
  std::unordered_map<TokenId, Vector> rows;

  const Vector& at(TokenId id) const;
};

EmbeddingTable load_embedding_table(const fs::path& shard);

// Keeps entries where both words are exactly one token.
FunctionClassDataset filter_single_token(const FunctionClassDataset& dataset);

// Looks up the single token of every word; entries must already be filtered.
void attach_embeddings(FunctionClassDataset& dataset, const EmbeddingTable& table);

struct PcaModel {
  Vector mean;
  Matrix components;  // k x d, orthonormal rows
  Vector eigenvalues; // k, descending
  double total_variance = 0.0;

  Index dim() const { return components.cols(); }
  Index k() const { return components.rows(); }
  double captured_fraction() const { return eigenvalues.sum() / total_variance; }
};

// Covariance uses the N - 1 divisor. The largest-magnitude entry of every
// component is made positive.
PcaModel fit_pca(const Matrix& x, Index k);
Matrix project(const PcaModel& model, const Matrix& x);

double parallelogram_loss(const Vector& ea, const Vector& eb, const Vector& ec, const Vector& ed);

struct ClassLosses {
  std::string name;
  std::vector<double> losses;  // one per unordered pair of distinct entries
  bool skipped = false;
  std::string reason;
};

enum class PcaFit { kPerClass, kGlobal };

// Losses under a fixed projection.
std::vector<ClassLosses> class_losses(const FunctionClassDataset& dataset, const PcaModel& pca);
// Fits a k-dim PCA per class (or once over all words) and computes losses.
std::vector<ClassLosses> class_losses(const FunctionClassDataset& dataset, Index k, PcaFit fit = PcaFit::kPerClass);

// All word embeddings of the dataset, one row per entry word (a then b).
Matrix stacked_embeddings(const FunctionClassDataset& dataset);

struct CurvePoint {
  double threshold = 0.0;
  double fraction = 0.0;
};

std::vector<CurvePoint> cumulative_fraction(const std::vector<double>& losses, const std::vector<double>& thresholds);
// Thresholds at every distinct loss value, so the curve ends at 1.
std::vector<CurvePoint> cumulative_fraction(const std::vector<double>& losses);

}  // namespace xcod::geometry
