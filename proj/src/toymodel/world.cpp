#include "toymodel/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "common/error.hpp"

namespace xcod::toymodel {

namespace {

const char* const kMarkerWords[] = {"Wait", "Therefore", "Alternatively", "However", "Thus",   "But",
                                    "Hmm",  "So",        "Hence",         "Instead", "Yet",    "Although"};

Matrix random_normal(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

// n orthonormal rows in R^d (n <= d) via Householder QR of a Gaussian matrix.
Matrix orthonormal_rows(Index n, Index d, std::mt19937_64& rng) {
  if (n == 0) return Matrix(0, d);
  const Eigen::MatrixXd gauss = random_normal(d, n, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, n);
  return q.transpose();
}

// Orthonormal basis (rows) of the complement of span(rows).
Matrix complement_rows(const Matrix& rows, Index d) {
  const Index n = rows.rows();
  if (n >= d) return Matrix(0, d);
  if (n == 0) return Matrix::Identity(d, d);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(rows.transpose()));
  const Eigen::MatrixXd q = qr.householderQ();
  return q.rightCols(d - n).transpose();
}

Vector random_unit(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(d);
  double norm = 0.0;
  while (norm == 0.0) {
    for (Index i = 0; i < d; ++i) v(i) = normal(rng);
    norm = v.norm();
  }
  return v / norm;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  auto rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(m.row(r).data(), m.row(r).data() + m.cols());
    rows.push_back(row);
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  Matrix m(rows, cols);
  const auto& data = j.at("data");
  require(static_cast<Index>(data.size()) == rows, ErrorCode::kShapeMismatch, "world matrix row count mismatch");
  for (Index r = 0; r < rows; ++r) {
    const auto row = data[static_cast<std::size_t>(r)].get<std::vector<double>>();
    require(static_cast<Index>(row.size()) == cols, ErrorCode::kShapeMismatch, "world matrix column count mismatch");
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

fs::path shard_name(const fs::path& dir, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "shard_%03zu.xcs", i);
  return dir / buf;
}

}  // namespace

double WorldConfig::resolved_fire_probability() const {
  if (fire_probability >= 0.0) return fire_probability;
  return n_planted() > 0 ? std::min(1.0, 6.0 / static_cast<double>(n_planted())) : 0.0;
}

void WorldConfig::validate() const {
  require(n_shared >= 0 && n_unique_base >= 0 && n_unique_distilled >= 0, ErrorCode::kInvalidArgument,
          "planted feature counts must be >= 0");
  require(n_planted() >= 1, ErrorCode::kInvalidArgument, "world needs at least one planted feature");
  require(d_base >= 1 && d_distilled >= 1, ErrorCode::kInvalidArgument, "world dims must be >= 1");
  require(n_shared + n_unique_base <= d_base, ErrorCode::kInvalidArgument,
          "infeasible counts: shared + unique_base = " + std::to_string(n_shared + n_unique_base) +
              " exceeds d_base = " + std::to_string(d_base));
  require(n_shared + n_unique_distilled <= d_distilled, ErrorCode::kInvalidArgument,
          "infeasible counts: shared + unique_distilled = " + std::to_string(n_shared + n_unique_distilled) +
              " exceeds d_distilled = " + std::to_string(d_distilled));
  require(vocab_size > n_unique_distilled, ErrorCode::kInvalidArgument,
          "vocab_size must exceed the number of marker tokens");
  const double p = resolved_fire_probability();
  require(p >= 0.0 && p <= 1.0, ErrorCode::kInvalidArgument, "fire_probability must lie in [0, 1]");
  require(magnitude_min > 0.0 && magnitude_max >= magnitude_min, ErrorCode::kInvalidArgument,
          "magnitudes need 0 < min <= max");
  require(doc_length >= 1, ErrorCode::kInvalidArgument, "doc_length must be >= 1");
}

nlohmann::json to_json(const WorldConfig& c) {
  return {{"n_shared", c.n_shared},
          {"n_unique_base", c.n_unique_base},
          {"n_unique_distilled", c.n_unique_distilled},
          {"d_base", c.d_base},
          {"d_distilled", c.d_distilled},
          {"vocab_size", c.vocab_size},
          {"fire_probability", c.fire_probability},
          {"magnitude_min", c.magnitude_min},
          {"magnitude_max", c.magnitude_max},
          {"doc_length", c.doc_length},
          {"seed", c.seed}};
}

WorldConfig world_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::kConfig, "world config must be an object");
  static const std::set<std::string> known = {"n_shared",   "n_unique_base",    "n_unique_distilled",
                                              "d_base",     "d_distilled",      "vocab_size",
                                              "fire_probability", "magnitude_min", "magnitude_max",
                                              "doc_length", "seed"};
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, ErrorCode::kConfig, "unknown key 'world." + key + "'");
  WorldConfig c;
  try {
    c.n_shared = j.value("n_shared", c.n_shared);
    c.n_unique_base = j.value("n_unique_base", c.n_unique_base);
    c.n_unique_distilled = j.value("n_unique_distilled", c.n_unique_distilled);
    c.d_base = j.value("d_base", c.d_base);
    c.d_distilled = j.value("d_distilled", c.d_distilled);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.fire_probability = j.value("fire_probability", c.fire_probability);
    c.magnitude_min = j.value("magnitude_min", c.magnitude_min);
    c.magnitude_max = j.value("magnitude_max", c.magnitude_max);
    c.doc_length = j.value("doc_length", c.doc_length);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad world config: ") + e.what());
  }
  return c;
}

PlantedKind PlantedWorld::kind(Index feature) const {
  require(feature >= 0 && feature < config.n_planted(), ErrorCode::kInvalidArgument, "planted feature id out of range");
  if (feature < config.n_shared) return PlantedKind::kShared;
  if (feature < config.n_shared + config.n_unique_base) return PlantedKind::kUniqueBase;
  return PlantedKind::kUniqueDistilled;
}

Vector PlantedWorld::row(Index feature, Side side) const {
  const Index ns = config.n_shared;
  const Index na = config.n_unique_base;
  switch (kind(feature)) {
    case PlantedKind::kShared:
      return side == Side::kBase ? Vector(shared_base.row(feature).transpose())
                                 : Vector(shared_distilled.row(feature).transpose());
    case PlantedKind::kUniqueBase:
      return side == Side::kBase ? Vector(unique_base.row(feature - ns).transpose()) : Vector();
    case PlantedKind::kUniqueDistilled:
      return side == Side::kDistilled ? Vector(unique_distilled.row(feature - ns - na).transpose()) : Vector();
  }
  return Vector();
}

Matrix PlantedWorld::side_dictionary(Side side, std::vector<Index>* ids) const {
  const Matrix& shared = side == Side::kBase ? shared_base : shared_distilled;
  const Matrix& unique = side == Side::kBase ? unique_base : unique_distilled;
  Matrix out(shared.rows() + unique.rows(), dim(side));
  out << shared, unique;
  if (ids != nullptr) {
    ids->clear();
    for (Index k = 0; k < shared.rows(); ++k) ids->push_back(k);
    const Index offset = side == Side::kBase ? config.n_shared : config.n_shared + config.n_unique_base;
    for (Index k = 0; k < unique.rows(); ++k) ids->push_back(offset + k);
  }
  return out;
}

std::optional<Index> PlantedWorld::feature_of_marker(TokenId token) const {
  const auto it = std::find(marker_tokens.begin(), marker_tokens.end(), token);
  if (it == marker_tokens.end()) return std::nullopt;
  return static_cast<Index>(it - marker_tokens.begin());
}

TokenId PlantedWorld::token_id(const std::string& text) const {
  const auto it = std::find(vocab.begin(), vocab.end(), text);
  require(it != vocab.end(), ErrorCode::kNotFound, "token '" + text + "' is not in the planted vocabulary");
  return static_cast<TokenId>(it - vocab.begin());
}

double PlantedWorld::marker_contribution(Index j, const Vector& distilled_residual) const {
  const Vector w = unique_distilled.row(j).transpose();
  return w.dot(distilled_residual) * unembed_distilled.row(marker_of(j)).dot(w.transpose());
}

PlantedWorld plant_world(const WorldConfig& config) {
  config.validate();
  PlantedWorld w;
  w.config = config;
  w.fire_probability = config.resolved_fire_probability();
  std::mt19937_64 rng(config.seed);

  const Matrix dict_a = orthonormal_rows(config.n_shared + config.n_unique_base, config.d_base, rng);
  const Matrix dict_b = orthonormal_rows(config.n_shared + config.n_unique_distilled, config.d_distilled, rng);
  w.shared_base = dict_a.topRows(config.n_shared);
  w.unique_base = dict_a.bottomRows(config.n_unique_base);
  w.shared_distilled = dict_b.topRows(config.n_shared);
  w.unique_distilled = dict_b.bottomRows(config.n_unique_distilled);

  const Index vocab = config.vocab_size;
  w.unembed_base.resize(vocab, config.d_base);
  w.unembed_distilled.resize(vocab, config.d_distilled);
  for (Index v = 0; v < vocab; ++v) {
    w.unembed_base.row(v) = random_unit(config.d_base, rng).transpose();
    w.unembed_distilled.row(v) = random_unit(config.d_distilled, rng).transpose();
  }

  // Markers read the distilled-only direction on the distilled side, and a
  // direction outside every planted base feature on the base side.
  const Matrix base_complement = complement_rows(dict_a, config.d_base);
  for (Index j = 0; j < config.n_unique_distilled; ++j) {
    const TokenId marker = j;
    w.marker_tokens.push_back(marker);
    w.unembed_distilled.row(marker) = w.unique_distilled.row(j);
    if (base_complement.rows() > 0) {
      const Vector coeffs = random_unit(base_complement.rows(), rng);
      Vector dir = base_complement.transpose() * coeffs;
      w.unembed_base.row(marker) = (dir / dir.norm()).transpose();
    }
  }

  w.vocab.resize(static_cast<std::size_t>(vocab));
  for (Index v = 0; v < vocab; ++v) {
    if (v < config.n_unique_distilled) {
      w.vocab[static_cast<std::size_t>(v)] = v < static_cast<Index>(std::size(kMarkerWords))
                                                 ? kMarkerWords[v]
                                                 : "<marker" + std::to_string(v) + ">";
    } else {
      w.vocab[static_cast<std::size_t>(v)] = "tok" + std::to_string(v);
    }
  }

  w.token_residual_base = Matrix::Zero(vocab, config.d_base);
  w.token_residual_distilled = Matrix::Zero(vocab, config.d_distilled);
  if (config.n_shared >= 1) {
    std::uniform_int_distribution<Index> pick(0, config.n_shared - 1);
    for (Index v = 0; v < vocab; ++v) {
      const Index a = pick(rng);
      Index b = pick(rng);
      if (config.n_shared >= 2)
        while (b == a) b = pick(rng);
      w.token_residual_base.row(v) = w.shared_base.row(a) + w.shared_base.row(b);
      w.token_residual_distilled.row(v) = w.shared_distilled.row(a) + w.shared_distilled.row(b);
    }
  }
  return w;
}

nlohmann::json world_to_json(const PlantedWorld& w) {
  return {{"config", to_json(w.config)},
          {"fire_probability", w.fire_probability},
          {"shared_base", matrix_to_json(w.shared_base)},
          {"shared_distilled", matrix_to_json(w.shared_distilled)},
          {"unique_base", matrix_to_json(w.unique_base)},
          {"unique_distilled", matrix_to_json(w.unique_distilled)},
          {"unembed_base", matrix_to_json(w.unembed_base)},
          {"unembed_distilled", matrix_to_json(w.unembed_distilled)},
          {"token_residual_base", matrix_to_json(w.token_residual_base)},
          {"token_residual_distilled", matrix_to_json(w.token_residual_distilled)},
          {"marker_tokens", w.marker_tokens},
          {"vocab", w.vocab}};
}

PlantedWorld world_from_json(const nlohmann::json& j) {
  PlantedWorld w;
  try {
    w.config = world_config_from_json(j.at("config"));
    w.fire_probability = j.at("fire_probability").get<double>();
    w.shared_base = matrix_from_json(j.at("shared_base"));
    w.shared_distilled = matrix_from_json(j.at("shared_distilled"));
    w.unique_base = matrix_from_json(j.at("unique_base"));
    w.unique_distilled = matrix_from_json(j.at("unique_distilled"));
    w.unembed_base = matrix_from_json(j.at("unembed_base"));
    w.unembed_distilled = matrix_from_json(j.at("unembed_distilled"));
    w.token_residual_base = matrix_from_json(j.at("token_residual_base"));
    w.token_residual_distilled = matrix_from_json(j.at("token_residual_distilled"));
    w.marker_tokens = j.at("marker_tokens").get<std::vector<TokenId>>();
    w.vocab = j.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed world description: ") + e.what());
  }
  return w;
}

void save_world(const fs::path& path, const PlantedWorld& world) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write world description " + path.string());
  out << world_to_json(world).dump() << '\n';
  require(out.good(), ErrorCode::kIo, "write failed for " + path.string());
}

PlantedWorld load_world(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot open world description " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, "malformed world description " + path.string() + ": " + e.what());
  }
  return world_from_json(j);
}

std::pair<Vector, Vector> activations_for(const PlantedWorld& world, const std::vector<ActiveFeature>& active) {
  Vector a = Vector::Zero(world.config.d_base);
  Vector b = Vector::Zero(world.config.d_distilled);
  const Index ns = world.config.n_shared;
  const Index na = world.config.n_unique_base;
  for (const auto& f : active) {
    switch (world.kind(f.feature)) {
      case PlantedKind::kShared:
        a += f.magnitude * world.shared_base.row(f.feature).transpose();
        b += f.magnitude * world.shared_distilled.row(f.feature).transpose();
        break;
      case PlantedKind::kUniqueBase:
        a += f.magnitude * world.unique_base.row(f.feature - ns).transpose();
        break;
      case PlantedKind::kUniqueDistilled:
        b += f.magnitude * world.unique_distilled.row(f.feature - ns - na).transpose();
        break;
    }
  }
  return {a, b};
}

PlantedSampler::PlantedSampler(const PlantedWorld& world, std::uint64_t seed) : world_(world), rng_(seed) {}

PlantedSample PlantedSampler::next() {
  const auto& c = world_.config;
  if (position_ == c.doc_length) {
    ++doc_id_;
    position_ = 0;
    pending_marker_.reset();
  }
  PlantedSample s;
  s.doc_id = doc_id_;
  s.position = position_;
  if (pending_marker_) {
    s.token = *pending_marker_;
  } else {
    std::uniform_int_distribution<TokenId> filler(c.n_unique_distilled, c.vocab_size - 1);
    s.token = filler(rng_);
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> magnitude(c.magnitude_min, c.magnitude_max);
  for (Index k = 0; k < c.n_planted(); ++k) {
    if (unit(rng_) < world_.fire_probability) s.active.push_back({k, magnitude(rng_)});
  }
  std::tie(s.base, s.distilled) = activations_for(world_, s.active);

  pending_marker_.reset();
  double strongest = -1.0;
  const Index first_distilled = c.n_shared + c.n_unique_base;
  for (const auto& f : s.active) {
    if (f.feature >= first_distilled && f.magnitude > strongest) {
      strongest = f.magnitude;
      pending_marker_ = world_.marker_of(f.feature - first_distilled);
    }
  }
  ++position_;
  return s;
}

SampleSummary sample_shards(const PlantedWorld& world, std::uint64_t n_tokens, const fs::path& dir,
                            std::uint64_t seed, std::size_t n_shards) {
  require(n_shards >= 1, ErrorCode::kInvalidArgument, "n_shards must be >= 1");
  fs::create_directories(dir);
  const auto doc_len = static_cast<std::uint64_t>(world.config.doc_length);
  const std::uint64_t n_docs = (n_tokens + doc_len - 1) / doc_len;
  const std::vector<std::uint32_t> dims = {static_cast<std::uint32_t>(world.config.d_base),
                                           static_cast<std::uint32_t>(world.config.d_distilled)};
  PlantedSampler sampler(world, seed);
  SampleSummary summary;
  std::uint64_t emitted = 0;
  std::vector<float> a(dims[0]), b(dims[1]);
  for (std::size_t s = 0; s < n_shards; ++s) {
    const std::uint64_t doc_end = n_docs * (s + 1) / n_shards;
    const std::uint64_t row_end = std::min(n_tokens, doc_end * doc_len);
    const auto path = shard_name(dir, s);
    actstore::ShardWriter writer(path, dims);
    while (emitted < row_end) {
      const PlantedSample sample = sampler.next();
      for (Index i = 0; i < sample.base.size(); ++i) a[static_cast<std::size_t>(i)] = static_cast<float>(sample.base(i));
      for (Index i = 0; i < sample.distilled.size(); ++i)
        b[static_cast<std::size_t>(i)] = static_cast<float>(sample.distilled(i));
      const std::span<const float> sides[] = {a, b};
      writer.append(sides, {sample.doc_id, sample.position, sample.token,
                            world.vocab[static_cast<std::size_t>(sample.token)]});
      ++emitted;
    }
    summary.rows += writer.finish().rows_written;
    summary.shards.push_back(path);
  }
  return summary;
}

std::shared_ptr<const ReplayCorpus> load_replay(const std::vector<fs::path>& shards, std::size_t max_docs) {
  auto corpus = std::make_shared<ReplayCorpus>();
  struct Pending {
    std::int64_t doc_id = -1;
    std::vector<TokenId> tokens;
    std::vector<float> base, distilled;
  } cur;
  Index da = 0, db = 0;
  bool full = false;
  auto flush = [&] {
    if (cur.tokens.empty()) return;
    ReplayDoc doc;
    doc.doc_id = cur.doc_id;
    doc.tokens = std::move(cur.tokens);
    const auto t = static_cast<Index>(doc.tokens.size());
    doc.base = Eigen::Map<const MatrixF>(cur.base.data(), t, da);
    doc.distilled = Eigen::Map<const MatrixF>(cur.distilled.data(), t, db);
    corpus->docs.push_back(std::move(doc));
    cur = Pending{};
    if (max_docs != 0 && corpus->docs.size() >= max_docs) full = true;
  };
  for (const auto& path : shards) {
    if (full) break;
    actstore::for_each_chunk({path}, 4096, [&](const coder::Batch& chunk, std::span<const actstore::TokenMeta> meta,
                                               std::uint64_t) {
      require(chunk.sides.size() == 2, ErrorCode::kShapeMismatch, "replay needs two-sided shards");
      da = chunk.sides[0].cols();
      db = chunk.sides[1].cols();
      for (std::size_t r = 0; r < meta.size() && !full; ++r) {
        if (meta[r].doc_id != cur.doc_id) {
          flush();
          if (full) break;
          cur.doc_id = meta[r].doc_id;
        }
        cur.tokens.push_back(meta[r].token_id);
        const auto row = static_cast<Index>(r);
        for (Index i = 0; i < da; ++i) cur.base.push_back(static_cast<float>(chunk.sides[0](row, i)));
        for (Index i = 0; i < db; ++i) cur.distilled.push_back(static_cast<float>(chunk.sides[1](row, i)));
      }
    });
  }
  if (!full) flush();
  return corpus;
}

PlantedAdapter::PlantedAdapter(std::shared_ptr<const PlantedWorld> world, Side side,
                               std::shared_ptr<const ReplayCorpus> corpus)
    : world_(std::move(world)), side_(side), corpus_(std::move(corpus)) {
  require(world_ != nullptr && corpus_ != nullptr, ErrorCode::kInvalidArgument, "adapter needs a world and a corpus");
  for (std::size_t d = 0; d < corpus_->docs.size(); ++d) {
    const auto& doc = corpus_->docs[d];
    if (!doc.tokens.empty()) by_first_token_[doc.tokens.front()].push_back(d);
  }
}

Matrix PlantedAdapter::residuals_for(std::span<const TokenId> tokens, Side side) const {
  require(!tokens.empty(), ErrorCode::kInvalidArgument, "empty token sequence");
  for (const auto t : tokens)
    require(t >= 0 && t < world_->config.vocab_size, ErrorCode::kInvalidArgument,
            "token id " + std::to_string(t) + " outside the vocabulary");
  std::size_t best_len = 0;
  const ReplayDoc* best = nullptr;
  if (const auto it = by_first_token_.find(tokens.front()); it != by_first_token_.end()) {
    for (const std::size_t d : it->second) {
      const auto& doc = corpus_->docs[d];
      std::size_t len = 0;
      while (len < tokens.size() && len < doc.tokens.size() && doc.tokens[len] == tokens[len]) ++len;
      if (len > best_len) {
        best_len = len;
        best = &doc;
      }
    }
  }
  require(best != nullptr, ErrorCode::kNotFound, "tokens outside the sampled stream: no replayed document starts with token " +
                                                     std::to_string(tokens.front()));
  const Matrix& fallback = side == Side::kBase ? world_->token_residual_base : world_->token_residual_distilled;
  const MatrixF& stored = side == Side::kBase ? best->base : best->distilled;
  Matrix out(static_cast<Index>(tokens.size()), world_->dim(side));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto row = static_cast<Index>(t);
    if (t < best_len)
      out.row(row) = stored.row(row).cast<double>();
    else
      out.row(row) = fallback.row(tokens[t]);
  }
  return out;
}

Matrix PlantedAdapter::residuals(std::span<const TokenId> tokens) const { return residuals_for(tokens, side_); }

std::optional<Matrix> PlantedAdapter::partner_residuals(std::span<const TokenId> tokens) const {
  return residuals_for(tokens, side_ == Side::kBase ? Side::kDistilled : Side::kBase);
}

Matrix PlantedAdapter::logits_from(const Matrix& residuals) const {
  require(residuals.cols() == hidden_dim(), ErrorCode::kShapeMismatch, "residual width does not match adapter");
  return residuals * world_->unembed(side_).transpose();
}

Matrix PlantedAdapter::forward(std::span<const TokenId> tokens) const {
  const Matrix x = residuals_for(tokens, side_);
  return x * world_->unembed(side_).transpose();
}

std::string PlantedAdapter::token_text(TokenId id) const {
  require(id >= 0 && id < world_->config.vocab_size, ErrorCode::kInvalidArgument, "token id outside the vocabulary");
  return world_->vocab[static_cast<std::size_t>(id)];
}

MmcsResult mmcs(const Matrix& ground_truth, const Matrix& learned) {
  require(ground_truth.cols() == learned.cols(), ErrorCode::kShapeMismatch,
          "ground truth and learned rows differ in dimension");
  MmcsResult out;
  std::vector<Index> keep;
  for (Index k = 0; k < learned.rows(); ++k) {
    if (learned.row(k).norm() > 0.0)
      keep.push_back(k);
    else
      ++out.skipped_zero_rows;
  }
  Matrix unit(static_cast<Index>(keep.size()), learned.cols());
  for (std::size_t i = 0; i < keep.size(); ++i)
    unit.row(static_cast<Index>(i)) = learned.row(keep[i]).normalized();
  double sum = 0.0;
  for (Index g = 0; g < ground_truth.rows(); ++g) {
    const double gn = ground_truth.row(g).norm();
    double best = 0.0;
    Index arg = -1;
    if (gn > 0.0 && unit.rows() > 0) {
      const Vector cos = (unit * ground_truth.row(g).transpose()).cwiseAbs() / gn;
      Index i = 0;
      best = cos.maxCoeff(&i);
      arg = keep[static_cast<std::size_t>(i)];
    }
    out.max_cosine.push_back(best);
    out.best_match.push_back(arg);
    sum += best;
  }
  out.mean = ground_truth.rows() > 0 ? sum / static_cast<double>(ground_truth.rows()) : 0.0;
  return out;
}

}  // namespace xcod::toymodel
