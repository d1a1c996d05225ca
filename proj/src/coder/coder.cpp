#include "coder/coder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "common/error.hpp"

namespace xcod::coder {

namespace {

constexpr double kInitDecoderNorm = 0.1;

bool finite(const Matrix& m) { return m.allFinite(); }

struct Forward {
  Matrix pre;                     // B x F
  Matrix act;                     // B x F
  std::vector<Matrix> residual;   // per side, reconstruction - input
};

void apply_topk(Matrix& act, int k) {
  const Index n = act.cols();
  if (k >= n) return;
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index r = 0; r < act.rows(); ++r) {
    std::iota(order.begin(), order.end(), Index{0});
    auto row = act.row(r);
    std::nth_element(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
      if (row(a) != row(b)) return row(a) > row(b);
      return a < b;
    });
    for (auto it = order.begin() + k; it != order.end(); ++it) row(*it) = 0.0;
  }
}

Forward forward(const CrosscoderParams& params, const Batch& batch, const SparsityKind& sparsity) {
  Forward fw;
  fw.pre = pre_activations(params, batch);
  fw.act = fw.pre.cwiseMax(0.0);
  if (const auto* topk = std::get_if<TopK>(&sparsity)) apply_topk(fw.act, topk->k);
  const auto recon = decode(params, fw.act);
  fw.residual.reserve(recon.size());
  for (int i = 0; i < params.n_sides(); ++i) fw.residual.push_back(recon[i] - batch.sides[i]);
  return fw;
}

double sparsity_lambda(const SparsityKind& sparsity) {
  if (const auto* l1 = std::get_if<WeightedL1>(&sparsity)) return l1->lambda;
  return 0.0;
}

LossRecord loss_from(const CrosscoderParams& params, const Forward& fw, const SparsityKind& sparsity) {
  const double rows = static_cast<double>(fw.act.rows());
  LossRecord rec;
  for (int i = 0; i < params.n_sides(); ++i) {
    const double mse = fw.residual[i].squaredNorm() / rows;
    rec.recon_mse_per_side.push_back(mse);
    rec.total += mse;
  }
  const double lambda = sparsity_lambda(sparsity);
  if (lambda != 0.0) {
    const Vector norms = decoder_l2_norm_sums(params);
    rec.sparsity_term = lambda * (fw.act * norms).sum() / rows;
  }
  rec.total += rec.sparsity_term;
  return rec;
}

}  // namespace

void CoderShape::validate() const {
  require(n_sides == 1 || n_sides == 2, ErrorCode::kInvalidArgument,
          "n_sides must be 1 or 2, got " + std::to_string(n_sides));
  require(static_cast<int>(dims.size()) == n_sides, ErrorCode::kInvalidArgument,
          "expected " + std::to_string(n_sides) + " side dims, got " + std::to_string(dims.size()));
  for (const Index d : dims)
    require(d >= 1, ErrorCode::kInvalidArgument, "side dims must be >= 1");
  require(n_features >= 1, ErrorCode::kInvalidArgument, "n_features must be >= 1");
}

Index CoderShape::total_dim() const {
  return std::accumulate(dims.begin(), dims.end(), Index{0});
}

CrosscoderParams CrosscoderParams::zeros(const CoderShape& shape) {
  shape.validate();
  CrosscoderParams p;
  p.shape = shape;
  for (int i = 0; i < shape.n_sides; ++i) {
    p.encoder.push_back(Matrix::Zero(shape.n_features, shape.dims[i]));
    p.decoder.push_back(Matrix::Zero(shape.n_features, shape.dims[i]));
    p.decoder_bias.push_back(Vector::Zero(shape.dims[i]));
  }
  p.encoder_bias = Vector::Zero(shape.n_features);
  return p;
}

void CrosscoderParams::validate() const {
  shape.validate();
  const auto n = static_cast<std::size_t>(shape.n_sides);
  require(encoder.size() == n && decoder.size() == n && decoder_bias.size() == n,
          ErrorCode::kShapeMismatch, "parameter side count does not match shape");
  for (std::size_t i = 0; i < n; ++i) {
    const Index d = shape.dims[i];
    require(encoder[i].rows() == shape.n_features && encoder[i].cols() == d,
            ErrorCode::kShapeMismatch, "encoder block shape mismatch on side " + std::to_string(i));
    require(decoder[i].rows() == shape.n_features && decoder[i].cols() == d,
            ErrorCode::kShapeMismatch, "decoder block shape mismatch on side " + std::to_string(i));
    require(decoder_bias[i].size() == d, ErrorCode::kShapeMismatch,
            "decoder bias shape mismatch on side " + std::to_string(i));
  }
  require(encoder_bias.size() == shape.n_features, ErrorCode::kShapeMismatch,
          "encoder bias shape mismatch");
  require(all_finite(), ErrorCode::kNonFinite, "parameters contain non-finite entries");
}

bool CrosscoderParams::all_finite() const {
  bool ok = encoder_bias.allFinite();
  for (int i = 0; i < shape.n_sides; ++i)
    ok = ok && encoder[i].allFinite() && decoder[i].allFinite() && decoder_bias[i].allFinite();
  return ok;
}

std::size_t CrosscoderParams::parameter_count() const {
  std::size_t n = 0;
  for_each_block([&](const double*, std::size_t size) { n += size; });
  return n;
}

bool CrosscoderParams::operator==(const CrosscoderParams& other) const {
  if (!(shape == other.shape)) return false;
  for (int i = 0; i < shape.n_sides; ++i) {
    if (encoder[i] != other.encoder[i] || decoder[i] != other.decoder[i] ||
        decoder_bias[i] != other.decoder_bias[i])
      return false;
  }
  return encoder_bias == other.encoder_bias;
}

void validate_sparsity(const SparsityKind& sparsity, Index n_features) {
  if (const auto* l1 = std::get_if<WeightedL1>(&sparsity)) {
    require(std::isfinite(l1->lambda) && l1->lambda >= 0.0, ErrorCode::kInvalidArgument,
            "L1 coefficient must be finite and >= 0");
  } else {
    const int k = std::get<TopK>(sparsity).k;
    require(k >= 1 && k <= n_features, ErrorCode::kInvalidArgument,
            "TopK k must lie in [1, n_features], got " + std::to_string(k));
  }
}

void check_batch(const CrosscoderParams& params, const Batch& batch) {
  require(static_cast<int>(batch.sides.size()) == params.n_sides(), ErrorCode::kShapeMismatch,
          "batch has " + std::to_string(batch.sides.size()) + " sides, params expect " +
              std::to_string(params.n_sides()));
  const Index rows = batch.rows();
  for (int i = 0; i < params.n_sides(); ++i) {
    require(batch.sides[i].rows() == rows, ErrorCode::kShapeMismatch,
            "batch sides disagree on row count");
    require(batch.sides[i].cols() == params.shape.dims[i], ErrorCode::kShapeMismatch,
            "batch side " + std::to_string(i) + " has width " +
                std::to_string(batch.sides[i].cols()) + ", expected " +
                std::to_string(params.shape.dims[i]));
  }
}

CrosscoderParams init_params(const CoderShape& shape, std::uint64_t seed) {
  CrosscoderParams p = CrosscoderParams::zeros(shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < shape.n_sides; ++i) {
    Matrix& dec = p.decoder[i];
    for (Index k = 0; k < dec.rows(); ++k) {
      double norm = 0.0;
      while (norm == 0.0) {
        for (Index j = 0; j < dec.cols(); ++j) dec(k, j) = normal(rng);
        norm = dec.row(k).norm();
      }
      dec.row(k) *= kInitDecoderNorm / norm;
    }
    p.encoder[i] = dec;
  }
  return p;
}

Matrix pre_activations(const CrosscoderParams& params, const Batch& batch) {
  check_batch(params, batch);
  Matrix z = batch.sides[0] * params.encoder[0].transpose();
  for (int i = 1; i < params.n_sides(); ++i) z.noalias() += batch.sides[i] * params.encoder[i].transpose();
  z.rowwise() += params.encoder_bias.transpose();
  return z;
}

Matrix encode(const CrosscoderParams& params, const Batch& batch, const SparsityKind& sparsity) {
  Matrix f = pre_activations(params, batch).cwiseMax(0.0);
  if (const auto* topk = std::get_if<TopK>(&sparsity)) apply_topk(f, topk->k);
  return f;
}

std::vector<Matrix> decode(const CrosscoderParams& params, const Matrix& activations) {
  require(activations.cols() == params.n_features(), ErrorCode::kShapeMismatch,
          "activation width " + std::to_string(activations.cols()) + " != n_features " +
              std::to_string(params.n_features()));
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(params.n_sides()));
  for (int i = 0; i < params.n_sides(); ++i) {
    Matrix r = activations * params.decoder[i];
    r.rowwise() += params.decoder_bias[i].transpose();
    out.push_back(std::move(r));
  }
  return out;
}

Vector decoder_l2_norm_sums(const CrosscoderParams& params) {
  Vector norms = Vector::Zero(params.n_features());
  for (int i = 0; i < params.n_sides(); ++i) norms += params.decoder[i].rowwise().norm();
  return norms;
}

LossRecord loss(const CrosscoderParams& params, const Batch& batch, const SparsityKind& sparsity) {
  check_batch(params, batch);
  validate_sparsity(sparsity, params.n_features());
  for (const auto& side : batch.sides)
    require(finite(side), ErrorCode::kNonFinite, "batch contains non-finite activations");
  require(batch.rows() >= 1, ErrorCode::kInvalidArgument, "empty batch");
  return loss_from(params, forward(params, batch, sparsity), sparsity);
}

GradResult grad(const CrosscoderParams& params, const Batch& batch, const SparsityKind& sparsity) {
  check_batch(params, batch);
  validate_sparsity(sparsity, params.n_features());
  require(batch.rows() >= 1, ErrorCode::kInvalidArgument, "empty batch");
  for (const auto& side : batch.sides)
    require(finite(side), ErrorCode::kNonFinite, "batch contains non-finite activations");

  Forward fw = forward(params, batch, sparsity);
  const double inv_rows = 1.0 / static_cast<double>(batch.rows());
  const double lambda = sparsity_lambda(sparsity);

  GradResult out{CrosscoderParams::zeros(params.shape), loss_from(params, fw, sparsity), Matrix()};
  require(std::isfinite(out.loss.total), ErrorCode::kNonFinite, "loss is non-finite");
  Gradient& g = out.grad;

  // dL/df, accumulated over sides.
  Matrix d_act = Matrix::Zero(fw.act.rows(), fw.act.cols());
  for (int i = 0; i < params.n_sides(); ++i) {
    const Matrix d_recon = (2.0 * inv_rows) * fw.residual[i];
    g.decoder[i].noalias() = fw.act.transpose() * d_recon;
    g.decoder_bias[i] = d_recon.colwise().sum().transpose();
    d_act.noalias() += d_recon * params.decoder[i].transpose();
  }

  if (lambda != 0.0) {
    const Vector act_sums = fw.act.colwise().sum().transpose();
    const Vector norm_sums = decoder_l2_norm_sums(params);
    d_act.rowwise() += (lambda * inv_rows) * norm_sums.transpose();
    for (int i = 0; i < params.n_sides(); ++i) {
      const Vector norms = params.decoder[i].rowwise().norm();
      for (Index k = 0; k < params.n_features(); ++k) {
        if (norms(k) > 0.0 && act_sums(k) != 0.0)
          g.decoder[i].row(k) += (lambda * inv_rows * act_sums(k) / norms(k)) * params.decoder[i].row(k);
      }
    }
  }

  // ReLU (and TopK) gate: subgradient 0 wherever the output is exactly 0.
  Matrix d_pre = d_act.cwiseProduct((fw.act.array() > 0.0).cast<double>().matrix());
  for (int i = 0; i < params.n_sides(); ++i) g.encoder[i].noalias() = d_pre.transpose() * batch.sides[i];
  g.encoder_bias = d_pre.colwise().sum().transpose();

  require(g.all_finite(), ErrorCode::kNonFinite, "gradient contains non-finite entries");
  out.activations = std::move(fw.act);
  return out;
}

}  // namespace xcod::coder
