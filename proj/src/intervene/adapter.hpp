#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "common/types.hpp"

namespace xcod::intervene {

using Index = Eigen::Index;
using TokenId = std::int64_t;

// What the analysis needs from a language model: hook-layer residuals for a
// token sequence, and the map from (possibly edited) residuals to logits.
// forward(tokens) must equal logits_from(residuals(tokens)) bit-exactly.
class ModelAdapter {
 public:
  virtual ~ModelAdapter() = default;

  virtual Side side() const = 0;
  virtual Index vocab_size() const = 0;
  virtual Index hidden_dim() const = 0;

  virtual Matrix residuals(std::span<const TokenId> tokens) const = 0;  // T x d
  virtual Matrix logits_from(const Matrix& residuals) const = 0;       // T x V
  virtual Matrix forward(std::span<const TokenId> tokens) const { return logits_from(residuals(tokens)); }

  // The other model's residuals on the same tokens, when the adapter can
  // provide them; used to encode with a two-sided crosscoder.
  virtual std::optional<Matrix> partner_residuals(std::span<const TokenId>) const { return std::nullopt; }

  virtual bool supports_generation() const { return false; }
  virtual std::string token_text(TokenId id) const { return std::to_string(id); }
};

}  // namespace xcod::intervene
