#include <doctest.h>

#include <filesystem>
#include <random>

#include "actstore/shard.hpp"
#include "common/error.hpp"
#include "oracles/oracles.hpp"
#include "toymodel/world.hpp"

using namespace xcod;
using namespace xcod::toymodel;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "xcod_test_toymodel" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

WorldConfig small_world() {
  WorldConfig c;
  c.n_shared = 6;
  c.n_unique_base = 3;
  c.n_unique_distilled = 3;
  c.d_base = 16;
  c.d_distilled = 14;
  c.vocab_size = 40;
  c.doc_length = 12;
  c.fire_probability = 0.2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("planted dictionaries are orthonormal within each side") {
  const auto w = plant_world(small_world());
  for (const Side side : {Side::kBase, Side::kDistilled}) {
    std::vector<Index> ids;
    const Matrix d = w.side_dictionary(side, &ids);
    CHECK(d.rows() == 9);
    CHECK(ids.size() == 9);
    const Matrix gram = d * d.transpose();
    CHECK((gram - Matrix::Identity(9, 9)).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(w.kind(0) == PlantedKind::kShared);
  CHECK(w.kind(6) == PlantedKind::kUniqueBase);
  CHECK(w.kind(11) == PlantedKind::kUniqueDistilled);
  CHECK(w.row(7, Side::kDistilled).size() == 0);
  CHECK(w.row(10, Side::kBase).size() == 0);
  CHECK(plant_world(small_world()).shared_base == w.shared_base);
}

TEST_CASE("marker tokens read their feature only on the distilled side") {
  const auto w = plant_world(small_world());
  for (Index j = 0; j < 3; ++j) {
    const TokenId m = w.marker_of(j);
    CHECK(w.feature_of_marker(m) == j);
    CHECK(w.unembed_distilled.row(m) == w.unique_distilled.row(j));
    const Vector base_dict_read = w.side_dictionary(Side::kBase) * w.unembed_base.row(m).transpose();
    CHECK(base_dict_read.cwiseAbs().maxCoeff() < 1e-10);
    const Vector x = 1.5 * w.unique_distilled.row(j).transpose();
    CHECK(w.marker_contribution(j, x) == doctest::Approx(1.5));
  }
  CHECK_FALSE(w.feature_of_marker(30).has_value());
  CHECK(w.token_id(w.vocab[20]) == 20);
  CHECK_THROWS_AS(w.token_id("no such token"), Error);
}

TEST_CASE("invalid world configs are rejected") {
  auto c = small_world();
  c.vocab_size = 2;
  CHECK_THROWS_AS(plant_world(c), Error);
  c = small_world();
  c.d_base = 4;  // 9 orthonormal rows cannot fit
  CHECK_THROWS_AS(plant_world(c), Error);
  c = small_world();
  c.magnitude_min = 3.0;
  CHECK_THROWS_AS(plant_world(c), Error);
}

TEST_CASE("sampled activations are the sum of active planted rows") {
  const auto w = plant_world(small_world());
  PlantedSampler sampler(w, 3);
  const Index first_distilled = 9;
  std::optional<TokenId> expected_marker;
  for (int t = 0; t < 200; ++t) {
    const auto s = sampler.next();
    CHECK(s.position == t % 12);
    CHECK(s.doc_id == t / 12);
    Vector a = Vector::Zero(16), b = Vector::Zero(14);
    for (const auto& f : s.active) {
      CHECK(f.magnitude >= 0.5);
      CHECK(f.magnitude <= 2.0);
      if (w.row(f.feature, Side::kBase).size()) a += f.magnitude * w.row(f.feature, Side::kBase);
      if (w.row(f.feature, Side::kDistilled).size()) b += f.magnitude * w.row(f.feature, Side::kDistilled);
    }
    CHECK((a - s.base).norm() < 1e-12);
    CHECK((b - s.distilled).norm() < 1e-12);
    if (expected_marker && s.position != 0)
      CHECK(s.token == *expected_marker);
    else
      CHECK(s.token >= 3);
    expected_marker.reset();
    double strongest = -1.0;
    for (const auto& f : s.active)
      if (f.feature >= first_distilled && f.magnitude > strongest) {
        strongest = f.magnitude;
        expected_marker = w.marker_of(f.feature - first_distilled);
      }
  }
}

TEST_CASE("shards and replay reproduce the sampled stream") {
  const auto w = std::make_shared<const PlantedWorld>(plant_world(small_world()));
  const auto dir = scratch("replay");
  const auto summary = sample_shards(*w, 100, dir, 9, 3);
  CHECK(summary.rows == 100);
  CHECK(summary.shards.size() == 3);
  const auto meta0 = actstore::read_meta(summary.shards[0]);
  const auto meta1 = actstore::read_meta(summary.shards[1]);
  CHECK(meta0.back().doc_id != meta1.front().doc_id);

  const auto corpus = load_replay(summary.shards);
  CHECK(corpus->docs.size() == 9);  // ceil(100 / 12)
  CHECK(corpus->docs.back().tokens.size() == 4);

  PlantedSampler sampler(*w, 9);
  const auto first = sampler.next();
  CHECK(corpus->docs[0].tokens[0] == first.token);
  CHECK((corpus->docs[0].base.row(0).cast<double>().transpose() - first.base).norm() < 1e-6);

  PlantedAdapter distilled(w, Side::kDistilled, corpus);
  const auto& doc = corpus->docs[2];
  const std::vector<TokenId> tokens(doc.tokens.begin(), doc.tokens.begin() + 6);
  const Matrix x = distilled.residuals(tokens);
  CHECK(x == doc.distilled.topRows(6).cast<double>());
  CHECK(*distilled.partner_residuals(tokens) == doc.base.topRows(6).cast<double>());
  CHECK(distilled.forward(tokens) == distilled.logits_from(x));
  CHECK((distilled.logits_from(x) - x * w->unembed_distilled.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  auto extended = tokens;
  extended.push_back(20);
  const Matrix y = distilled.residuals(extended);
  CHECK(y.topRows(6) == x);
  CHECK(y.row(6) == w->token_residual_distilled.row(20));
  CHECK(load_replay(summary.shards, 2)->docs.size() == 2);
  CHECK_THROWS_AS(distilled.residuals(std::vector<TokenId>{99}), Error);
}

TEST_CASE("mmcs against a brute-force cosine search") {
  std::mt19937_64 rng(3);
  Matrix truth = oracle::random_matrix(5, 7, rng);
  Matrix learned = oracle::random_matrix(9, 7, rng);
  learned.row(4).setZero();
  learned.row(6) = -2.0 * truth.row(1);
  const auto r = mmcs(truth, learned);
  CHECK(r.skipped_zero_rows == 1);
  double mean = 0.0;
  for (Index i = 0; i < 5; ++i) {
    double best = 0.0;
    for (Index j = 0; j < 9; ++j) {
      const double n = learned.row(j).norm();
      if (n == 0.0) continue;
      best = std::max(best, std::abs(truth.row(i).dot(learned.row(j))) / (truth.row(i).norm() * n));
    }
    CHECK(r.max_cosine[static_cast<std::size_t>(i)] == doctest::Approx(best).epsilon(1e-12));
    mean += best / 5.0;
  }
  CHECK(r.max_cosine[1] == doctest::Approx(1.0));
  CHECK(r.best_match[1] == 6);
  CHECK(r.mean == doctest::Approx(mean));
}

TEST_CASE("world save and load roundtrip") {
  const auto w = plant_world(small_world());
  const auto path = scratch("save") / "world.json";
  save_world(path, w);
  const auto back = load_world(path);
  CHECK(back.unique_distilled == w.unique_distilled);
  CHECK(back.unembed_base == w.unembed_base);
  CHECK(back.marker_tokens == w.marker_tokens);
  CHECK(back.vocab == w.vocab);
  CHECK(back.fire_probability == w.fire_probability);
}
