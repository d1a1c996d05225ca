#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "common/types.hpp"

namespace xcod::coder {

using Index = Eigen::Index;

// n_sides == 1 is the plain sparse autoencoder; n_sides == 2 is the
// crosscoder over a base (side 0) and a distilled (side 1) model.
struct CoderShape {
  int n_sides = 2;
  std::vector<Index> dims;
  Index n_features = 0;

  void validate() const;
  Index total_dim() const;
  bool operator==(const CoderShape&) const = default;
};

struct CrosscoderParams {
  CoderShape shape;
  std::vector<Matrix> encoder;       // per side, F x d_i
  std::vector<Matrix> decoder;       // per side, F x d_i; row k is feature k's decoder vector
  std::vector<Vector> decoder_bias;  // per side, d_i
  Vector encoder_bias;               // F

  static CrosscoderParams zeros(const CoderShape& shape);

  int n_sides() const { return shape.n_sides; }
  Index n_features() const { return shape.n_features; }

  // Throws kShapeMismatch / kNonFinite.
  void validate() const;
  bool all_finite() const;

  // Visits every parameter block in the fixed serialization order:
  // for each side: encoder, decoder, decoder_bias; then encoder_bias.
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    for (int i = 0; i < shape.n_sides; ++i) {
      fn(encoder[i].data(), static_cast<std::size_t>(encoder[i].size()));
      fn(decoder[i].data(), static_cast<std::size_t>(decoder[i].size()));
      fn(decoder_bias[i].data(), static_cast<std::size_t>(decoder_bias[i].size()));
    }
    fn(encoder_bias.data(), static_cast<std::size_t>(encoder_bias.size()));
  }
  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    const_cast<CrosscoderParams*>(this)->for_each_block(
        [&](double* p, std::size_t n) { fn(static_cast<const double*>(p), n); });
  }

  std::size_t parameter_count() const;
  bool operator==(const CrosscoderParams& other) const;
};

// Gradients mirror the parameter layout.
using Gradient = CrosscoderParams;

struct WeightedL1 {
  double lambda = 1.0;
};
struct TopK {
  int k = 1;
};
using SparsityKind = std::variant<WeightedL1, TopK>;

void validate_sparsity(const SparsityKind& sparsity, Index n_features);

struct Batch {
  std::vector<Matrix> sides;  // per side, B x d_i

  Index rows() const { return sides.empty() ? 0 : sides.front().rows(); }
};

void check_batch(const CrosscoderParams& params, const Batch& batch);

struct LossRecord {
  double total = 0.0;
  std::vector<double> recon_mse_per_side;
  double sparsity_term = 0.0;
};

struct GradResult {
  Gradient grad;
  LossRecord loss;
  Matrix activations;  // B x F, post-sparsity feature activations
};

CrosscoderParams init_params(const CoderShape& shape, std::uint64_t seed);

// Pre-activations z = sum_i a_i W_enc_i^T + b_enc.
Matrix pre_activations(const CrosscoderParams& params, const Batch& batch);

// f = ReLU(z); with TopK only the k largest entries of each row survive,
// ties going to the lower feature index.
Matrix encode(const CrosscoderParams& params, const Batch& batch,
              const SparsityKind& sparsity = WeightedL1{});

std::vector<Matrix> decode(const CrosscoderParams& params, const Matrix& activations);

// Sum over sides of the per-feature decoder L2 norms.
Vector decoder_l2_norm_sums(const CrosscoderParams& params);

LossRecord loss(const CrosscoderParams& params, const Batch& batch, const SparsityKind& sparsity);

GradResult grad(const CrosscoderParams& params, const Batch& batch, const SparsityKind& sparsity);

}  // namespace xcod::coder
