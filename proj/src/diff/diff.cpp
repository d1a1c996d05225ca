#include "diff/diff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <unordered_map>

#include "actstore/shard.hpp"
#include "common/error.hpp"

namespace xcod::diff {

namespace {

coder::Batch scaled(coder::Batch batch, const std::vector<double>& normalization) {
  for (std::size_t i = 0; i < batch.sides.size() && i < normalization.size(); ++i)
    batch.sides[i] *= normalization[i];
  return batch;
}

void check_options(const coder::CrosscoderParams& params, const EncodeOptions& options) {
  require(options.normalization.empty() || static_cast<int>(options.normalization.size()) == params.n_sides(),
          ErrorCode::kShapeMismatch, "normalization needs one factor per side");
  coder::validate_sparsity(options.sparsity, params.n_features());
}

std::vector<Index> sorted_by_nrn(const Vector& nrn, std::size_t n, bool descending) {
  std::vector<Index> ids(static_cast<std::size_t>(nrn.size()));
  std::iota(ids.begin(), ids.end(), Index{0});
  std::stable_sort(ids.begin(), ids.end(), [&](Index a, Index b) {
    if (nrn(a) != nrn(b)) return descending ? nrn(a) > nrn(b) : nrn(a) < nrn(b);
    return a < b;
  });
  if (ids.size() > n) ids.resize(n);
  return ids;
}

}  // namespace

std::vector<Vector> decoder_norms(const coder::CrosscoderParams& params) {
  params.validate();
  std::vector<Vector> out;
  // sequential sums, independent of vectorization
  for (int i = 0; i < params.n_sides(); ++i) {
    const Matrix& w = params.decoder[i];
    Vector n = Vector::Zero(w.rows());
    for (Index k = 0; k < w.rows(); ++k)
      for (Index j = 0; j < w.cols(); ++j) n(k) += std::abs(w(k, j));
    out.push_back(n);
  }
  return out;
}

RdnNrn rdn_nrn(const Vector& norms_base, const Vector& norms_distilled) {
  require(norms_base.size() == norms_distilled.size(), ErrorCode::kShapeMismatch,
          "norm vectors differ in length");
  RdnNrn out{Vector(norms_base.size()), Vector(norms_base.size())};
  for (Index k = 0; k < norms_base.size(); ++k) {
    const double a = norms_base(k);
    const double b = norms_distilled(k);
    require(a >= 0.0 && b >= 0.0, ErrorCode::kInternal, "decoder norms must be nonnegative");
    if (a == 0.0 && b == 0.0) {
      out.rdn(k) = 1.0;
      out.nrn(k) = 0.5;
    } else if (a == 0.0) {
      out.rdn(k) = std::numeric_limits<double>::infinity();
      out.nrn(k) = 1.0;
    } else {
      out.rdn(k) = b / a;
      out.nrn(k) = out.rdn(k) / (1.0 + out.rdn(k));
    }
  }
  return out;
}

std::size_t NrnSummary::bin_of(double nrn) const {
  const auto n_bins = counts.size();
  const auto b = static_cast<std::size_t>(std::floor(nrn * static_cast<double>(n_bins)));
  return std::min(b, n_bins - 1);
}

NrnSummary nrn_summary(const Vector& nrns, int n_bins) {
  require(n_bins >= 1, ErrorCode::kInvalidArgument, "n_bins must be >= 1");
  NrnSummary s;
  s.counts.assign(static_cast<std::size_t>(n_bins), 0);
  for (int b = 0; b <= n_bins; ++b) s.edges.push_back(static_cast<double>(b) / n_bins);
  double sum = 0.0;
  for (Index k = 0; k < nrns.size(); ++k) {
    const double v = nrns(k);
    require(v >= 0.0 && v <= 1.0, ErrorCode::kInvalidArgument, "nrn values must lie in [0, 1]");
    ++s.counts[s.bin_of(v)];
    sum += v;
  }
  s.mean = nrns.size() > 0 ? sum / static_cast<double>(nrns.size()) : 0.0;
  return s;
}

bool is_multimodal(const NrnSummary& hist, const std::vector<std::pair<double, double>>& bands) {
  const auto n_bins = hist.counts.size();
  std::vector<std::size_t> peaks;
  for (const auto& [lo, hi] : bands) {
    std::optional<std::size_t> best;
    for (std::size_t b = 0; b < n_bins; ++b) {
      const double center = 0.5 * (hist.edges[b] + hist.edges[b + 1]);
      if (center < lo || center > hi) continue;
      if (!best || hist.counts[b] > hist.counts[*best]) best = b;
    }
    if (!best || hist.counts[*best] == 0) return false;
    peaks.push_back(*best);
  }
  for (std::size_t i = 1; i < peaks.size(); ++i) {
    const auto [a, b] = std::minmax(peaks[i - 1], peaks[i]);
    if (b - a < 2) return false;
    const auto valley = *std::min_element(hist.counts.begin() + static_cast<std::ptrdiff_t>(a + 1),
                                          hist.counts.begin() + static_cast<std::ptrdiff_t>(b));
    if (valley >= std::min(hist.counts[a], hist.counts[b])) return false;
  }
  return true;
}

FiringStats firing_stats(const coder::CrosscoderParams& params, const std::vector<fs::path>& shards,
                         const std::vector<intervene::ReasoningCategory>& categories, const EncodeOptions& options,
                         OccurrencePosition position) {
  params.validate();
  check_options(params, options);
  for (const auto& c : categories) c.validate();
  const Index n_features = params.n_features();
  const auto n_cat = static_cast<Index>(categories.size());

  FiringStats st;
  for (const auto& c : categories) st.categories.push_back(c.name);
  Matrix hits = Matrix::Zero(n_features, n_cat);
  st.category_tokens.assign(categories.size(), 0);
  Vector fire_count = Vector::Zero(n_features);
  Vector active_sum = Vector::Zero(n_features);
  st.max_activation = Vector::Zero(n_features);

  RowVector prev_f;
  std::optional<actstore::TokenMeta> prev_meta;
  actstore::for_each_chunk(shards, 4096, [&](const coder::Batch& chunk, std::span<const actstore::TokenMeta> meta,
                                             std::uint64_t) {
    const Matrix f = coder::encode(params, scaled(chunk, options.normalization), options.sparsity);
    for (Index r = 0; r < f.rows(); ++r) {
      const auto& m = meta[static_cast<std::size_t>(r)];
      const auto row = f.row(r);
      for (Index k = 0; k < n_features; ++k) {
        if (row(k) > 0.0) {
          fire_count(k) += 1.0;
          active_sum(k) += row(k);
          st.max_activation(k) = std::max(st.max_activation(k), row(k));
        }
      }
      const bool has_predictor =
          prev_meta && prev_meta->doc_id == m.doc_id && prev_meta->position + 1 == m.position;
      for (Index c = 0; c < n_cat; ++c) {
        if (!categories[static_cast<std::size_t>(c)].matches(m.token_text)) continue;
        if (position == OccurrencePosition::kPredicting) {
          if (!has_predictor) continue;
          ++st.category_tokens[static_cast<std::size_t>(c)];
          for (Index k = 0; k < n_features; ++k)
            if (prev_f(k) > 0.0) hits(k, c) += 1.0;
        } else {
          ++st.category_tokens[static_cast<std::size_t>(c)];
          for (Index k = 0; k < n_features; ++k)
            if (row(k) > 0.0) hits(k, c) += 1.0;
        }
      }
      prev_f = row;
      prev_meta = m;
      ++st.rows;
    }
  });

  st.frequency = Matrix::Zero(n_features, n_cat);
  for (Index c = 0; c < n_cat; ++c) {
    const auto tokens = st.category_tokens[static_cast<std::size_t>(c)];
    st.empty_category.push_back(tokens == 0);
    if (tokens > 0) st.frequency.col(c) = hits.col(c) / static_cast<double>(tokens);
  }
  st.global_frequency = st.rows > 0 ? Vector(fire_count / static_cast<double>(st.rows)) : Vector::Zero(n_features);
  st.mean_active = Vector::Zero(n_features);
  for (Index k = 0; k < n_features; ++k)
    if (fire_count(k) > 0.0) st.mean_active(k) = active_sum(k) / fire_count(k);
  return st;
}

std::vector<std::vector<ActivatingContext>> max_activating(const coder::CrosscoderParams& params,
                                                           const std::vector<fs::path>& shards,
                                                           const std::vector<Index>& features, std::size_t n,
                                                           std::size_t window, const EncodeOptions& options) {
  params.validate();
  check_options(params, options);
  for (const Index k : features)
    require(k >= 0 && k < params.n_features(), ErrorCode::kInvalidArgument,
            "invalid feature id " + std::to_string(k));

  struct Hit {
    double activation;
    std::uint64_t row;
  };
  // Heap top is the weakest kept hit: lowest activation, then latest row.
  auto weaker = [](const Hit& a, const Hit& b) {
    if (a.activation != b.activation) return a.activation > b.activation;
    return a.row < b.row;
  };
  std::vector<std::priority_queue<Hit, std::vector<Hit>, decltype(weaker)>> heaps(
      features.size(), std::priority_queue<Hit, std::vector<Hit>, decltype(weaker)>(weaker));
  std::vector<actstore::TokenMeta> all_meta;

  actstore::for_each_chunk(shards, 4096, [&](const coder::Batch& chunk, std::span<const actstore::TokenMeta> meta,
                                             std::uint64_t first_row) {
    const Matrix f = coder::encode(params, scaled(chunk, options.normalization), options.sparsity);
    all_meta.insert(all_meta.end(), meta.begin(), meta.end());
    for (std::size_t i = 0; i < features.size(); ++i) {
      auto& heap = heaps[i];
      for (Index r = 0; r < f.rows(); ++r) {
        const double a = f(r, features[i]);
        if (!(a > 0.0) || n == 0) continue;
        const Hit h{a, first_row + static_cast<std::uint64_t>(r)};
        if (heap.size() < n) {
          heap.push(h);
        } else if (weaker(h, heap.top())) {
          heap.pop();
          heap.push(h);
        }
      }
    }
  });

  // Second pass: activations on every row that appears in some window.
  std::vector<std::vector<Hit>> ranked(features.size());
  std::unordered_map<std::uint64_t, std::vector<double>> needed;
  auto window_of = [&](std::uint64_t row) {
    const auto doc = all_meta[row].doc_id;
    std::uint64_t lo = row, hi = row;
    while (lo > 0 && row - lo < window && all_meta[lo - 1].doc_id == doc) --lo;
    while (hi + 1 < all_meta.size() && hi - row < window && all_meta[hi + 1].doc_id == doc) ++hi;
    return std::pair{lo, hi};
  };
  for (std::size_t i = 0; i < features.size(); ++i) {
    while (!heaps[i].empty()) {
      ranked[i].push_back(heaps[i].top());
      heaps[i].pop();
    }
    std::reverse(ranked[i].begin(), ranked[i].end());
    for (const auto& h : ranked[i]) {
      const auto [lo, hi] = window_of(h.row);
      for (auto r = lo; r <= hi; ++r) needed.emplace(r, std::vector<double>());
    }
  }
  if (!needed.empty()) {
    actstore::for_each_chunk(shards, 4096, [&](const coder::Batch& chunk, std::span<const actstore::TokenMeta>,
                                               std::uint64_t first_row) {
      const auto rows = static_cast<std::uint64_t>(chunk.rows());
      bool any = false;
      for (std::uint64_t r = 0; r < rows && !any; ++r) any = needed.count(first_row + r) > 0;
      if (!any) return;
      const Matrix f = coder::encode(params, scaled(chunk, options.normalization), options.sparsity);
      for (std::uint64_t r = 0; r < rows; ++r) {
        auto it = needed.find(first_row + r);
        if (it == needed.end()) continue;
        for (const Index k : features) it->second.push_back(f(static_cast<Index>(r), k));
      }
    });
  }

  std::vector<std::vector<ActivatingContext>> out(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (const auto& h : ranked[i]) {
      ActivatingContext ctx;
      ctx.row = h.row;
      ctx.doc_id = all_meta[h.row].doc_id;
      ctx.position = all_meta[h.row].position;
      ctx.activation = h.activation;
      const auto [lo, hi] = window_of(h.row);
      ctx.focus = static_cast<std::size_t>(h.row - lo);
      for (auto r = lo; r <= hi; ++r) ctx.tokens.push_back({all_meta[r].token_text, needed.at(r)[i]});
      out[i].push_back(std::move(ctx));
    }
  }
  return out;
}

std::vector<Index> top_by_nrn(const Vector& nrn, std::size_t n) { return sorted_by_nrn(nrn, n, true); }
std::vector<Index> bottom_by_nrn(const Vector& nrn, std::size_t n) { return sorted_by_nrn(nrn, n, false); }

coder::CrosscoderParams swap_sides(const coder::CrosscoderParams& params) {
  require(params.n_sides() == 2, ErrorCode::kInvalidArgument, "side swap needs a two-sided crosscoder");
  coder::CrosscoderParams out = params;
  std::swap(out.shape.dims[0], out.shape.dims[1]);
  std::swap(out.encoder[0], out.encoder[1]);
  std::swap(out.decoder[0], out.decoder[1]);
  std::swap(out.decoder_bias[0], out.decoder_bias[1]);
  return out;
}

nlohmann::json to_json(const ActivatingContext& c) {
  auto tokens = nlohmann::json::array();
  for (const auto& t : c.tokens) tokens.push_back({{"text", t.text}, {"activation", t.activation}});
  return {{"row", c.row},       {"doc_id", c.doc_id}, {"position", c.position},
          {"activation", c.activation}, {"focus", c.focus}, {"tokens", tokens}};
}

}  // namespace xcod::diff
