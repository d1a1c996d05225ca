#include <doctest.h>

#include <cmath>
#include <random>

#include "common/error.hpp"
#include "intervene/intervene.hpp"
#include "oracles/oracles.hpp"

using namespace xcod;
using namespace xcod::intervene;

namespace {

// Residual of token t is row t of an embedding table; logits are a linear head.
class TableAdapter final : public ModelAdapter {
 public:
  TableAdapter(Matrix embed, Matrix unembed, Side side, bool generation = true)
      : embed_(std::move(embed)), unembed_(std::move(unembed)), side_(side), generation_(generation) {}

  Side side() const override { return side_; }
  Index vocab_size() const override { return unembed_.rows(); }
  Index hidden_dim() const override { return embed_.cols(); }
  Matrix residuals(std::span<const TokenId> tokens) const override {
    Matrix out(static_cast<Index>(tokens.size()), embed_.cols());
    for (std::size_t t = 0; t < tokens.size(); ++t) out.row(static_cast<Index>(t)) = embed_.row(tokens[t]);
    return out;
  }
  Matrix logits_from(const Matrix& residuals) const override { return residuals * unembed_.transpose(); }
  bool supports_generation() const override { return generation_; }
  std::string token_text(TokenId id) const override { return id == 1 ? "Wait" : id == 2 ? " Wait" : "t" + std::to_string(id); }

 private:
  Matrix embed_, unembed_;
  Side side_;
  bool generation_;
};

struct Fixture {
  std::mt19937_64 rng{21};
  coder::CrosscoderParams params = oracle::random_params({2, {5, 5}, 8}, rng);
  TableAdapter adapter{oracle::random_matrix(12, 5, rng), oracle::random_matrix(12, 5, rng), Side::kDistilled};
  std::vector<TokenId> tokens{3, 1, 4, 1, 5, 9, 2, 6};
};

}  // namespace

TEST_CASE("selection follows the nrn filter, frequency rank and ceil rule") {
  const std::vector<FeatureStat> stats = {{1, 0.6, 0.2}, {2, 0.4, 0.9}, {3, 0.9, 0.5}, {4, 0.99, 0.0}};
  const auto s = select_ablation_set(stats, 0.5, 50);
  CHECK(s.features == std::vector<Index>{3, 1});
  CHECK(s.active_count == 3);
  CHECK(select_ablation_set(stats, 0.5, 20).features == std::vector<Index>{3});
  CHECK(select_ablation_set(stats, 0.95, 100).features.empty());

  const std::vector<FeatureStat> low = {{0, 0.5, 0.3}, {1, 0.2, 0.4}};
  CHECK(select_ablation_set(low, 0.5, 100).features.empty());
  const auto none = select_ablation_set({{0, 0.9, 0.0}}, 0.5, 10);
  CHECK(none.empty_active);
  CHECK(none.features.empty());

  const std::vector<FeatureStat> tied = {{5, 0.8, 0.5}, {2, 0.8, 0.5}, {7, 0.8, 0.6}};
  CHECK(select_ablation_set(tied, 0.5, 100).features == std::vector<Index>{7, 2, 5});
  CHECK_THROWS_AS(select_ablation_set(tied, 0.5, 0), Error);
  CHECK_THROWS_AS(select_ablation_set(tied, 0.5, 101), Error);
}

TEST_CASE("ablating a single known feature subtracts f times its decoder row") {
  auto p = coder::CrosscoderParams::zeros({1, {3}, 2});
  p.encoder[0] << 1, 0, 0, 0, 1, 0;
  p.decoder[0] << 1, 0, 0, 0, 1, 0;
  coder::Batch x{{Matrix(1, 3)}};
  x.sides[0] << 2, 0.5, 7;
  const std::vector<Index> one = {0};
  const Matrix out = ablate_residual(p, x, one, Side::kBase);
  CHECK(out(0, 0) == 0.0);
  CHECK(out(0, 1) == 0.5);
  CHECK(out(0, 2) == 7.0);
  CHECK_THROWS_AS(ablate_residual(p, x, one, Side::kDistilled), Error);
}

TEST_CASE("ablation identity, full-set oracle and additivity") {
  Fixture fx;
  const auto paired = paired_inputs(fx.adapter, fx.tokens, fx.params);
  const Matrix& x = paired.sides[1];
  CHECK(ablate_residual(fx.params, paired, std::vector<Index>{}, Side::kDistilled) == x);

  std::vector<Index> all(8);
  for (Index k = 0; k < 8; ++k) all[static_cast<std::size_t>(k)] = k;
  const Matrix f = coder::encode(fx.params, paired);
  const Matrix recon = coder::decode(fx.params, f)[1];
  const Matrix expected = x - (recon.rowwise() - fx.params.decoder_bias[1].transpose());
  CHECK((ablate_residual(fx.params, paired, all, Side::kDistilled) - expected).cwiseAbs().maxCoeff() < 1e-12);

  const std::vector<Index> s1 = {0, 3, 5}, s2 = {1, 6}, both = {0, 3, 5, 1, 6};
  const Matrix a1 = ablate_residual(fx.params, paired, s1, Side::kDistilled);
  const Matrix a2 = ablate_residual(fx.params, paired, s2, Side::kDistilled);
  const Matrix a12 = ablate_residual(fx.params, paired, both, Side::kDistilled);
  CHECK((a12 - (a1 + a2 - x)).cwiseAbs().maxCoeff() < 1e-12);

  const std::vector<double> norm = {2.0, 4.0};
  diff::EncodeOptions opts{norm, coder::WeightedL1{}};
  coder::Batch scaled = paired;
  scaled.sides[0] *= 2.0;
  scaled.sides[1] *= 4.0;
  const Matrix fs = coder::encode(fx.params, scaled);
  const Matrix raw = ablate_residual(fx.params, paired, std::vector<Index>{2}, Side::kDistilled, opts);
  for (Index r = 0; r < x.rows(); ++r)
    CHECK((raw.row(r) - (x.row(r) - fs(r, 2) / 4.0 * fx.params.decoder[1].row(2))).norm() < 1e-12);
}

TEST_CASE("paired inputs place the adapter's residuals on its side") {
  Fixture fx;
  const auto paired = paired_inputs(fx.adapter, fx.tokens, fx.params);
  CHECK(paired.sides[1] == fx.adapter.residuals(fx.tokens));
  CHECK(paired.sides[0] == paired.sides[1]);  // no partner available
  const auto one = paired_inputs(fx.adapter, fx.tokens, coder::CrosscoderParams::zeros({1, {5}, 3}));
  CHECK(one.sides.size() == 1);
}

TEST_CASE("logit change reads the predicting position") {
  Fixture fx;
  const ReasoningCategory cat{"reflect", {"Wait", " Wait"}};
  const std::vector<std::vector<TokenId>> prompts = {fx.tokens, {7, 8, 1}};

  LogitChangeOptions opts;
  const auto empty = logit_change(fx.adapter, fx.params, prompts, cat, std::vector<Index>{}, opts);
  CHECK(empty.available == 4);
  CHECK(empty.fewer_than_requested);
  CHECK(empty.mean_delta == 0.0);
  for (const auto& o : empty.occurrences) CHECK(o.delta == 0.0);

  const std::vector<Index> set = {1, 4};
  const auto r = logit_change(fx.adapter, fx.params, prompts, cat, set, opts);
  double sum = 0.0;
  for (const auto& o : r.occurrences) {
    const auto paired = paired_inputs(fx.adapter, prompts[o.prompt], fx.params);
    const Matrix ablated = ablate_residual(fx.params, paired, set, Side::kDistilled);
    const Matrix clean = fx.adapter.logits_from(paired.sides[1]);
    const Matrix after = fx.adapter.logits_from(ablated);
    CHECK(o.clean == clean(o.position - 1, o.token));
    CHECK(o.ablated == doctest::Approx(after(o.position - 1, o.token)).epsilon(1e-12));
    sum += o.delta;
  }
  CHECK(r.mean_delta == doctest::Approx(sum / 4.0));

  opts.n_targets = 2;
  opts.seed = 5;
  const auto sampled = logit_change(fx.adapter, fx.params, prompts, cat, set, opts);
  CHECK(sampled.occurrences.size() == 2);
  CHECK_FALSE(sampled.fewer_than_requested);
  const auto again = logit_change(fx.adapter, fx.params, prompts, cat, set, opts);
  CHECK(again.occurrences[1].position == sampled.occurrences[1].position);

  const ReasoningCategory absent{"deduce", {"Therefore"}};
  CHECK_THROWS_AS(logit_change(fx.adapter, fx.params, prompts, absent, set, opts), Error);
}

TEST_CASE("zero steering reproduces greedy decoding") {
  Fixture fx;
  const std::vector<TokenId> prompt = {3, 1, 4};
  const auto plain = greedy(fx.adapter, prompt, 6);
  CHECK(plain.size() == 9);
  CHECK(steer(fx.adapter, fx.params, prompt, 2, 0.0, 6).tokens == plain);
  CHECK(steered_residuals(fx.adapter, fx.params, prompt, 2, 0.0) == fx.adapter.residuals(prompt));

  TableAdapter frozen(Matrix::Identity(12, 5), Matrix::Identity(12, 5), Side::kDistilled, false);
  CHECK_THROWS_AS(steer(frozen, fx.params, prompt, 2, 1.0, 3), Error);
  CHECK_THROWS_AS(steer(fx.adapter, fx.params, prompt, 8, 1.0, 3), Error);
  CHECK_THROWS_AS(steered_residuals(fx.adapter, fx.params, prompt, 2, std::nan("")), Error);
}

TEST_CASE("steering is linear in alpha and moves the aligned logit monotonically") {
  Fixture fx;
  const std::vector<TokenId> prompt = {3, 1, 4, 1};
  for (const double a1 : {0.5, 1.0, -2.0})
    for (const double a2 : {1.5, 3.0}) {
      const Matrix lhs = steered_residuals(fx.adapter, fx.params, prompt, 5, a1) +
                         steered_residuals(fx.adapter, fx.params, prompt, 5, a2) -
                         steered_residuals(fx.adapter, fx.params, prompt, 5, 0.0);
      CHECK((lhs - steered_residuals(fx.adapter, fx.params, prompt, 5, a1 + a2)).cwiseAbs().maxCoeff() < 1e-9);
    }

  // a token whose unembedding is the feature's decoder row gains logit with alpha
  Matrix unembed = Matrix::Zero(12, 5);
  unembed.row(1) = fx.params.decoder[1].row(5);
  TableAdapter aligned(oracle::random_matrix(12, 5, fx.rng), unembed, Side::kDistilled);
  std::vector<double> watched;
  for (const double alpha : {-4.0, -1.0, 0.0, 1.0, 2.0, 4.0})
    watched.push_back(steer(aligned, fx.params, prompt, 5, alpha, 1, {1}).watched[0][0]);
  for (std::size_t i = 1; i < watched.size(); ++i) CHECK(watched[i] > watched[i - 1]);
}

TEST_CASE("greedy ties resolve to the lower token id") {
  TableAdapter flat(Matrix::Zero(6, 3), Matrix::Zero(6, 3), Side::kBase);
  CHECK(greedy(flat, std::vector<TokenId>{4}, 3) == std::vector<TokenId>{4, 0, 0, 0});
}
