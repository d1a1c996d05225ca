#include "geometry/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <Eigen/Eigenvalues>

#include "actstore/shard.hpp"
#include "common/error.hpp"

namespace xcod::geometry {

namespace {

std::vector<TokenId> token_list(const nlohmann::json& j, const std::string& key) {
  if (!j.contains(key)) return {};
  return j.at(key).get<std::vector<TokenId>>();
}

bool has_embeddings(const WordPair& p) { return p.ea.size() > 0 && p.eb.size() > 0; }

Matrix class_words(const FunctionClass& c) {
  const Index d = c.entries.front().ea.size();
  Matrix x(static_cast<Index>(2 * c.entries.size()), d);
  for (std::size_t i = 0; i < c.entries.size(); ++i) {
    x.row(static_cast<Index>(2 * i)) = c.entries[i].ea.transpose();
    x.row(static_cast<Index>(2 * i + 1)) = c.entries[i].eb.transpose();
  }
  return x;
}

void check_embedded(const FunctionClassDataset& dataset) {
  for (const auto& c : dataset.classes)
    for (const auto& e : c.entries)
      require(has_embeddings(e), ErrorCode::kInvalidArgument,
              "entry " + e.a + ":" + e.b + " in class '" + c.name + "' has no embeddings");
}

ClassLosses losses_for(const FunctionClass& c, const PcaModel& pca) {
  ClassLosses out{c.name, {}, false, ""};
  if (c.entries.size() < 2) {
    out.skipped = true;
    out.reason = "fewer than 2 entries";
    return out;
  }
  const Matrix z = project(pca, class_words(c));
  const auto m = c.entries.size();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      out.losses.push_back(parallelogram_loss(z.row(static_cast<Index>(2 * i)).transpose(),
                                              z.row(static_cast<Index>(2 * i + 1)).transpose(),
                                              z.row(static_cast<Index>(2 * j)).transpose(),
                                              z.row(static_cast<Index>(2 * j + 1)).transpose()));
  return out;
}

}  // namespace

FunctionClassDataset dataset_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::kConfig, "dataset must be an object of classes");
  FunctionClassDataset ds;
  try {
    for (const auto& [name, entries] : j.items()) {
      require(entries.is_array(), ErrorCode::kConfig, "class '" + name + "' must be an array");
      FunctionClass c{name, {}};
      for (const auto& e : entries) {
        WordPair p;
        p.a = e.at("a").get<std::string>();
        p.b = e.at("b").get<std::string>();
        p.a_tokens = token_list(e, "a_tokens");
        p.b_tokens = token_list(e, "b_tokens");
        c.entries.push_back(std::move(p));
      }
      ds.classes.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad dataset: ") + e.what());
  }
  return ds;
}

nlohmann::json to_json(const FunctionClassDataset& dataset) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& c : dataset.classes) {
    auto arr = nlohmann::json::array();
    for (const auto& e : c.entries)
      arr.push_back({{"a", e.a}, {"b", e.b}, {"a_tokens", e.a_tokens}, {"b_tokens", e.b_tokens}});
    j[c.name] = arr;
  }
  return j;
}

FunctionClassDataset load_dataset(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open dataset " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, "dataset " + path.string() + " is not valid JSON: " + e.what());
  }
  return dataset_from_json(j);
}

void save_dataset(const fs::path& path, const FunctionClassDataset& dataset) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write dataset " + path.string());
  out << to_json(dataset).dump(2) << "\n";
}

const Vector& EmbeddingTable::at(TokenId id) const {
  const auto it = rows.find(id);
  require(it != rows.end(), ErrorCode::kNotFound, "no embedding for token " + std::to_string(id));
  return it->second;
}

EmbeddingTable load_embedding_table(const fs::path& shard) {
  auto reader = actstore::ShardReader::open(shard);
  require(reader.header().n_sides == 1, ErrorCode::kInvalidArgument, "embedding table must be a single-side shard");
  const auto meta = actstore::read_meta(shard);
  const coder::Batch batch = reader.read_batch(static_cast<Index>(reader.header().n_rows));
  EmbeddingTable table;
  table.dim = batch.sides[0].cols();
  for (std::size_t r = 0; r < meta.size(); ++r) {
    const bool fresh = table.rows.emplace(meta[r].token_id, batch.sides[0].row(static_cast<Index>(r)).transpose()).second;
    require(fresh, ErrorCode::kInvalidArgument, "duplicate embedding for token " + std::to_string(meta[r].token_id));
  }
  return table;
}

FunctionClassDataset filter_single_token(const FunctionClassDataset& dataset) {
  FunctionClassDataset out;
  for (const auto& c : dataset.classes) {
    FunctionClass kept{c.name, {}};
    for (const auto& e : c.entries)
      if (e.a_tokens.size() == 1 && e.b_tokens.size() == 1) kept.entries.push_back(e);
    out.classes.push_back(std::move(kept));
  }
  return out;
}

void attach_embeddings(FunctionClassDataset& dataset, const EmbeddingTable& table) {
  for (auto& c : dataset.classes)
    for (auto& e : c.entries) {
      require(e.a_tokens.size() == 1 && e.b_tokens.size() == 1, ErrorCode::kInvalidArgument,
              "entry " + e.a + ":" + e.b + " is not single-token");
      e.ea = table.at(e.a_tokens[0]);
      e.eb = table.at(e.b_tokens[0]);
    }
}

PcaModel fit_pca(const Matrix& x, Index k) {
  const Index n = x.rows();
  const Index d = x.cols();
  require(n >= 2, ErrorCode::kInvalidArgument, "PCA needs at least 2 rows");
  require(k >= 1 && k <= std::min(n - 1, d), ErrorCode::kInvalidArgument,
          "PCA dimension " + std::to_string(k) + " exceeds min(N - 1, d) = " + std::to_string(std::min(n - 1, d)));
  require(x.allFinite(), ErrorCode::kNonFinite, "PCA input has non-finite values");
  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - model.mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  model.total_variance = cov.trace();
  require(model.total_variance > 0.0, ErrorCode::kInvalidArgument, "PCA input has zero variance");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  require(eig.info() == Eigen::Success, ErrorCode::kInternal, "eigendecomposition failed");
  model.components.resize(k, d);
  model.eigenvalues.resize(k);
  for (Index i = 0; i < k; ++i) {
    const Index col = d - 1 - i;  // eigenvalues come out ascending
    Vector v = eig.eigenvectors().col(col);
    Index big = 0;
    for (Index j = 1; j < d; ++j)
      if (std::abs(v(j)) > std::abs(v(big))) big = j;
    if (v(big) < 0.0) v = -v;
    model.components.row(i) = v.transpose();
    model.eigenvalues(i) = std::max(0.0, eig.eigenvalues()(col));
  }
  return model;
}

Matrix project(const PcaModel& model, const Matrix& x) {
  require(x.cols() == model.dim(), ErrorCode::kShapeMismatch,
          "projection input has " + std::to_string(x.cols()) + " columns, model expects " + std::to_string(model.dim()));
  return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

double parallelogram_loss(const Vector& ea, const Vector& eb, const Vector& ec, const Vector& ed) {
  require(ea.size() == eb.size() && ea.size() == ec.size() && ea.size() == ed.size(), ErrorCode::kShapeMismatch,
          "parallelogram vectors differ in dimension");
  const double denom2 = ea.squaredNorm() + eb.squaredNorm() + ec.squaredNorm() + ed.squaredNorm();
  require(denom2 > 0.0, ErrorCode::kInvalidArgument, "parallelogram loss is undefined for four zero vectors");
  return (ea - eb - ec + ed).norm() / std::sqrt(denom2);
}

Matrix stacked_embeddings(const FunctionClassDataset& dataset) {
  check_embedded(dataset);
  std::vector<const Vector*> rows;
  for (const auto& c : dataset.classes)
    for (const auto& e : c.entries) {
      rows.push_back(&e.ea);
      rows.push_back(&e.eb);
    }
  require(!rows.empty(), ErrorCode::kInvalidArgument, "dataset has no entries");
  Matrix x(static_cast<Index>(rows.size()), rows.front()->size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i]->size() == x.cols(), ErrorCode::kShapeMismatch, "embeddings differ in dimension");
    x.row(static_cast<Index>(i)) = rows[i]->transpose();
  }
  return x;
}

std::vector<ClassLosses> class_losses(const FunctionClassDataset& dataset, const PcaModel& pca) {
  check_embedded(dataset);
  std::vector<ClassLosses> out;
  for (const auto& c : dataset.classes) out.push_back(losses_for(c, pca));
  return out;
}

std::vector<ClassLosses> class_losses(const FunctionClassDataset& dataset, Index k, PcaFit fit) {
  if (fit == PcaFit::kGlobal) return class_losses(dataset, fit_pca(stacked_embeddings(dataset), k));
  check_embedded(dataset);
  std::vector<ClassLosses> out;
  for (const auto& c : dataset.classes) {
    if (c.entries.size() < 2) {
      out.push_back({c.name, {}, true, "fewer than 2 entries"});
      continue;
    }
    const Matrix x = class_words(c);
    if (k > std::min(x.rows() - 1, x.cols())) {
      out.push_back({c.name, {}, true, "too few words for a " + std::to_string(k) + "-dim PCA"});
      continue;
    }
    out.push_back(losses_for(c, fit_pca(x, k)));
  }
  return out;
}

std::vector<CurvePoint> cumulative_fraction(const std::vector<double>& losses, const std::vector<double>& thresholds) {
  require(!losses.empty(), ErrorCode::kInvalidArgument, "cumulative fraction needs at least one loss");
  for (const double l : losses) require(std::isfinite(l), ErrorCode::kNonFinite, "losses must be finite");
  std::vector<double> sorted = losses;
  std::sort(sorted.begin(), sorted.end());
  std::vector<CurvePoint> out;
  for (const double t : thresholds) {
    const auto count = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back({t, static_cast<double>(count) / static_cast<double>(sorted.size())});
  }
  return out;
}

std::vector<CurvePoint> cumulative_fraction(const std::vector<double>& losses) {
  std::vector<double> thresholds = losses;
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  return cumulative_fraction(losses, thresholds);
}

}  // namespace xcod::geometry
