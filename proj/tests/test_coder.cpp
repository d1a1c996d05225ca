#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "coder/coder.hpp"
#include "common/error.hpp"
#include "oracles/oracles.hpp"

using namespace xcod;
using namespace xcod::coder;

namespace {

CoderShape two_sided(Index da, Index db, Index f) { return {2, {da, db}, f}; }

double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("zero params decode to the decoder bias") {
  auto p = CrosscoderParams::zeros(two_sided(3, 2, 4));
  p.decoder_bias[0] << 1, 2, 3;
  p.decoder_bias[1] << -1, 5;
  const auto out = decode(p, Matrix::Zero(2, 4));
  CHECK(out[0].row(1) == p.decoder_bias[0].transpose());
  CHECK(out[1].row(0) == p.decoder_bias[1].transpose());
}

TEST_CASE("encode applies ReLU to the summed per-side pre-activations") {
  auto p = CrosscoderParams::zeros(two_sided(2, 1, 2));
  p.encoder[0] << 1, 0, 0, -1;
  p.encoder[1] << 1, 1;
  p.encoder_bias << 0.5, 0.0;
  Batch b{{Matrix(1, 2), Matrix(1, 1)}};
  b.sides[0] << 2, 3;
  b.sides[1] << 1;
  const Matrix f = encode(p, b);
  CHECK(f(0, 0) == doctest::Approx(3.5));
  CHECK(f(0, 1) == 0.0);  // -3 + 1 clipped
}

TEST_CASE("TopK keeps the k largest and breaks ties toward the lower index") {
  auto p = CrosscoderParams::zeros({1, {1}, 4});
  p.encoder[0] << 1, 2, 2, 0.5;
  Batch b{{Matrix::Ones(1, 1)}};
  const Matrix f = encode(p, b, TopK{2});
  CHECK(f(0, 0) == 0.0);
  CHECK(f(0, 1) == 2.0);
  CHECK(f(0, 2) == 2.0);
  CHECK(f(0, 3) == 0.0);
  const Matrix g = encode(p, b, TopK{1});
  CHECK(g(0, 1) == 2.0);
  CHECK(g(0, 2) == 0.0);
}

TEST_CASE("init gives unit-0.1 decoder rows and a tied encoder") {
  const auto p = init_params(two_sided(5, 7, 6), 3);
  for (int i = 0; i < 2; ++i) {
    for (Index k = 0; k < 6; ++k) CHECK(p.decoder[i].row(k).norm() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(p.encoder[i] == p.decoder[i]);
  }
  CHECK(p.encoder_bias.isZero());
  CHECK(init_params(two_sided(5, 7, 6), 3) == p);
  CHECK_FALSE(init_params(two_sided(5, 7, 6), 4) == p);
}

TEST_CASE("loss matches a loop-based evaluation on random instances") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const int sides = trial % 2 == 0 ? 2 : 1;
    CoderShape shape{sides, sides == 2 ? std::vector<Index>{3, 4} : std::vector<Index>{5}, 6};
    const auto p = oracle::random_params(shape, rng);
    const auto b = oracle::random_batch(shape, 5, rng);
    const double lambda = 0.3 * trial;
    CHECK(std::abs(loss(p, b, WeightedL1{lambda}).total - oracle::crosscoder_loss(p, b, lambda)) < 1e-10);
  }
}

TEST_CASE("loss record splits reconstruction per side and sparsity") {
  std::mt19937_64 rng(2);
  const auto shape = two_sided(3, 3, 4);
  const auto p = oracle::random_params(shape, rng);
  const auto b = oracle::random_batch(shape, 6, rng);
  const auto rec = loss(p, b, WeightedL1{0.7});
  CHECK(rec.recon_mse_per_side.size() == 2);
  CHECK(rec.total == doctest::Approx(rec.recon_mse_per_side[0] + rec.recon_mse_per_side[1] + rec.sparsity_term));
  CHECK(loss(p, b, WeightedL1{0.0}).sparsity_term == 0.0);
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(5);
  for (const auto& shape : {two_sided(6, 6, 10), CoderShape{1, {6}, 10}}) {
    const auto p = oracle::random_params(shape, rng);
    const auto b = oracle::random_batch(shape, 4, rng);
    const SparsityKind s = WeightedL1{0.4};
    const auto g = grad(p, b, s);
    const auto fd = oracle::finite_difference(p, [&](const CrosscoderParams& q) { return loss(q, b, s).total; }, 1e-4);
    CHECK(max_rel_error(oracle::flatten(g.grad), fd) < 1e-4);
    CHECK(g.loss.total == doctest::Approx(loss(p, b, s).total).epsilon(1e-14));
  }
}

TEST_CASE("gradient with TopK matches central differences away from the cut") {
  std::mt19937_64 rng(8);
  const auto shape = two_sided(4, 4, 8);
  const auto p = oracle::random_params(shape, rng);
  const auto b = oracle::random_batch(shape, 3, rng);
  const SparsityKind s = TopK{3};
  const auto g = grad(p, b, s);
  const auto fd = oracle::finite_difference(p, [&](const CrosscoderParams& q) { return loss(q, b, s).total; }, 1e-5);
  CHECK(max_rel_error(oracle::flatten(g.grad), fd) < 1e-4);
}

TEST_CASE("shape and value errors") {
  const auto p = init_params(two_sided(3, 4, 5), 0);
  Batch wrong{{Matrix::Zero(2, 3), Matrix::Zero(2, 5)}};
  CHECK_THROWS_AS(encode(p, wrong), Error);
  try {
    encode(p, wrong);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }
  Batch nan{{Matrix::Zero(1, 3), Matrix::Zero(1, 4)}};
  nan.sides[0](0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(loss(p, nan, WeightedL1{}), Error);
  CHECK_THROWS_AS(validate_sparsity(TopK{0}, 5), Error);
  CHECK_THROWS_AS(validate_sparsity(TopK{6}, 5), Error);
  CHECK_THROWS_AS(validate_sparsity(WeightedL1{-1.0}, 5), Error);
  CHECK_THROWS_AS(CrosscoderParams::zeros({3, {1, 1, 1}, 2}), Error);
}
