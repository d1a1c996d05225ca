#include "trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "common/digest.hpp"
#include "common/error.hpp"

namespace xcod::trainer {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEpsilon = 1e-8;
constexpr double kResampleDecoderNorm = 0.1;
constexpr double kResampleEncoderScale = 0.2;

std::uint64_t ceil_fraction(double fraction, std::uint64_t total) {
  return static_cast<std::uint64_t>(std::ceil(fraction * static_cast<double>(total)));
}

void adam_update(coder::CrosscoderParams& params, coder::CrosscoderParams& m, coder::CrosscoderParams& v,
                 const coder::Gradient& g, double lr, std::uint64_t t) {
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
  std::vector<double*> p_blocks, m_blocks, v_blocks;
  std::vector<const double*> g_blocks;
  std::vector<std::size_t> sizes;
  params.for_each_block([&](double* p, std::size_t n) {
    p_blocks.push_back(p);
    sizes.push_back(n);
  });
  m.for_each_block([&](double* p, std::size_t) { m_blocks.push_back(p); });
  v.for_each_block([&](double* p, std::size_t) { v_blocks.push_back(p); });
  g.for_each_block([&](const double* p, std::size_t) { g_blocks.push_back(p); });
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    double* p = p_blocks[b];
    double* mb = m_blocks[b];
    double* vb = v_blocks[b];
    const double* gb = g_blocks[b];
    for (std::size_t i = 0; i < sizes[b]; ++i) {
      mb[i] = kBeta1 * mb[i] + (1.0 - kBeta1) * gb[i];
      vb[i] = kBeta2 * vb[i] + (1.0 - kBeta2) * gb[i] * gb[i];
      p[i] -= lr * (mb[i] / bc1) / (std::sqrt(vb[i] / bc2) + kEpsilon);
    }
  }
}

void zero_feature(coder::CrosscoderParams& p, Index k) {
  for (int i = 0; i < p.n_sides(); ++i) {
    p.encoder[i].row(k).setZero();
    p.decoder[i].row(k).setZero();
  }
  p.encoder_bias(k) = 0.0;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  require(!is.fail(), ErrorCode::kInvalidArgument, "corrupt RNG state in training state");
  return rng;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

}  // namespace

void TrainConfig::validate(int n_sides) const {
  require(n_features >= 1, ErrorCode::kInvalidArgument, "n_features must be >= 1");
  coder::validate_sparsity(sparsity, n_features);
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::kInvalidArgument,
          "learning_rate must be positive");
  require(lr_decay_fraction >= 0.0 && lr_decay_fraction <= 1.0, ErrorCode::kInvalidArgument,
          "lr_decay_fraction must lie in [0, 1]");
  require(lambda_warmup_fraction >= 0.0 && lambda_warmup_fraction <= 1.0, ErrorCode::kInvalidArgument,
          "lambda_warmup_fraction must lie in [0, 1]");
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  require(total_steps >= 1, ErrorCode::kInvalidArgument, "total_steps must be >= 1");
  require(log_interval >= 1, ErrorCode::kInvalidArgument, "log_interval must be >= 1");
  require(normalization.empty() || static_cast<int>(normalization.size()) == n_sides,
          ErrorCode::kInvalidArgument, "normalization needs one factor per side");
  for (const double f : normalization)
    require(f > 0.0 && std::isfinite(f), ErrorCode::kInvalidArgument, "normalization factors must be > 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json sparsity;
  if (const auto* l1 = std::get_if<coder::WeightedL1>(&c.sparsity))
    sparsity = {{"kind", "l1"}, {"lambda", l1->lambda}};
  else
    sparsity = {{"kind", "topk"}, {"k", std::get<coder::TopK>(c.sparsity).k}};
  return {{"n_features", c.n_features},
          {"sparsity", sparsity},
          {"learning_rate", c.learning_rate},
          {"lr_decay_fraction", c.lr_decay_fraction},
          {"lambda_warmup_fraction", c.lambda_warmup_fraction},
          {"batch_size", c.batch_size},
          {"total_steps", c.total_steps},
          {"seed", c.seed},
          {"dead_threshold_tokens", c.dead_threshold_tokens},
          {"resample_interval_steps", c.resample_interval_steps},
          {"log_interval", c.log_interval},
          {"normalization", c.normalization}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::kConfig, "train config must be an object");
  static const std::set<std::string> known = {
      "n_features", "sparsity", "learning_rate", "lr_decay_fraction", "lambda_warmup_fraction",
      "batch_size", "total_steps", "seed", "dead_threshold_tokens", "resample_interval_steps",
      "log_interval", "normalization"};
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, ErrorCode::kConfig, "unknown key 'train." + key + "'");
  TrainConfig c;
  try {
    if (j.contains("n_features")) c.n_features = j.at("n_features").get<Index>();
    if (j.contains("sparsity")) {
      const auto& s = j.at("sparsity");
      for (const auto& [key, _] : s.items())
        require(key == "kind" || key == "lambda" || key == "k", ErrorCode::kConfig,
                "unknown key 'train.sparsity." + key + "'");
      const auto kind = s.value("kind", std::string("l1"));
      if (kind == "l1")
        c.sparsity = coder::WeightedL1{s.value("lambda", 1.0)};
      else if (kind == "topk")
        c.sparsity = coder::TopK{s.at("k").get<int>()};
      else
        fail(ErrorCode::kConfig, "train.sparsity.kind must be 'l1' or 'topk'");
    }
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("lr_decay_fraction")) c.lr_decay_fraction = j.at("lr_decay_fraction").get<double>();
    if (j.contains("lambda_warmup_fraction"))
      c.lambda_warmup_fraction = j.at("lambda_warmup_fraction").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<Index>();
    if (j.contains("total_steps")) c.total_steps = j.at("total_steps").get<std::uint64_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("dead_threshold_tokens"))
      c.dead_threshold_tokens = j.at("dead_threshold_tokens").get<std::uint64_t>();
    if (j.contains("resample_interval_steps"))
      c.resample_interval_steps = j.at("resample_interval_steps").get<std::uint64_t>();
    if (j.contains("log_interval")) c.log_interval = j.at("log_interval").get<std::uint64_t>();
    if (j.contains("normalization")) c.normalization = j.at("normalization").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad train config: ") + e.what());
  }
  return c;
}

std::string config_digest(const TrainConfig& config) { return digest_hex(to_json(config).dump()); }

std::string metrics_csv_header(int n_sides) {
  std::string h = "step,total_loss";
  for (int i = 0; i < n_sides; ++i) h += ",mse_side" + std::to_string(i);
  return h + ",sparsity_term,l0,dead_features,learning_rate,lambda";
}

std::string metrics_csv_row(const MetricsRow& r) {
  std::string s = std::to_string(r.step) + "," + format_double(r.total_loss);
  for (const double m : r.mse_per_side) s += "," + format_double(m);
  s += "," + format_double(r.sparsity_term) + "," + format_double(r.l0) + "," + std::to_string(r.dead_features) +
       "," + format_double(r.learning_rate) + "," + format_double(r.lambda);
  return s;
}

std::vector<double> normalize_factors(const std::vector<actstore::SideStats>& stats, const std::vector<Index>& dims) {
  require(stats.size() == dims.size(), ErrorCode::kShapeMismatch, "stats and dims disagree on side count");
  std::vector<double> out;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    require(stats[i].mean_norm > 0.0, ErrorCode::kInvalidArgument,
            "side " + std::to_string(i) + " has zero mean activation norm");
    out.push_back(std::sqrt(static_cast<double>(dims[i])) / stats[i].mean_norm);
  }
  return out;
}

double lambda_at(const TrainConfig& config, std::uint64_t step) {
  const auto* l1 = std::get_if<coder::WeightedL1>(&config.sparsity);
  if (l1 == nullptr) return 0.0;
  const auto warmup = ceil_fraction(config.lambda_warmup_fraction, config.total_steps);
  if (warmup == 0) return l1->lambda;
  return l1->lambda * std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup));
}

double learning_rate_at(const TrainConfig& config, std::uint64_t step) {
  const auto decay = ceil_fraction(config.lr_decay_fraction, config.total_steps);
  if (decay == 0 || step + decay < config.total_steps) return config.learning_rate;
  const double remaining = static_cast<double>(config.total_steps - step);
  return config.learning_rate * std::min(1.0, remaining / static_cast<double>(decay));
}

void resample_dead(coder::CrosscoderParams& params, coder::CrosscoderParams& adam_m, coder::CrosscoderParams& adam_v,
                   const std::vector<Index>& dead, const coder::Batch& rows, const Vector& row_errors,
                   std::mt19937_64& rng) {
  if (dead.empty()) return;
  coder::check_batch(params, rows);
  require(rows.rows() >= 1 && row_errors.size() == rows.rows(), ErrorCode::kShapeMismatch,
          "resampling needs one error value per input row");

  const Index n_features = params.n_features();
  std::vector<bool> is_dead(static_cast<std::size_t>(n_features), false);
  for (const Index k : dead) {
    require(k >= 0 && k < n_features, ErrorCode::kInvalidArgument, "dead feature id out of range");
    is_dead[static_cast<std::size_t>(k)] = true;
  }

  auto encoder_row_norm = [&](Index k) {
    double sq = 0.0;
    for (int i = 0; i < params.n_sides(); ++i) sq += params.encoder[i].row(k).squaredNorm();
    return std::sqrt(sq);
  };
  double norm_sum = 0.0;
  Index alive = 0;
  for (Index k = 0; k < n_features; ++k) {
    if (is_dead[static_cast<std::size_t>(k)]) continue;
    norm_sum += encoder_row_norm(k);
    ++alive;
  }
  if (alive == 0) {
    for (Index k = 0; k < n_features; ++k) norm_sum += encoder_row_norm(k);
    alive = n_features;
  }
  double target_encoder_norm = kResampleEncoderScale * norm_sum / static_cast<double>(alive);
  if (!(target_encoder_norm > 0.0)) target_encoder_norm = kResampleEncoderScale;

  std::vector<double> weights(row_errors.data(), row_errors.data() + row_errors.size());
  const bool any_error = std::any_of(weights.begin(), weights.end(), [](double w) { return w > 0.0; });
  if (!any_error) std::fill(weights.begin(), weights.end(), 1.0);
  std::discrete_distribution<Index> pick_row(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);

  for (const Index k : dead) {
    const Index r = pick_row(rng);
    double input_sq = 0.0;
    for (int i = 0; i < params.n_sides(); ++i) {
      Vector dir = rows.sides[i].row(r).transpose();
      double norm = dir.norm();
      input_sq += norm * norm;
      while (norm == 0.0) {
        for (Index j = 0; j < dir.size(); ++j) dir(j) = normal(rng);
        norm = dir.norm();
      }
      params.decoder[i].row(k) = (kResampleDecoderNorm / norm) * dir.transpose();
    }
    const double input_norm = std::sqrt(input_sq);
    for (int i = 0; i < params.n_sides(); ++i) {
      if (input_norm > 0.0)
        params.encoder[i].row(k) = (target_encoder_norm / input_norm) * rows.sides[i].row(r);
      else
        params.encoder[i].row(k) = params.decoder[i].row(k) *
                                   (target_encoder_norm / (kResampleDecoderNorm * std::sqrt(params.n_sides())));
    }
    params.encoder_bias(k) = 0.0;
    zero_feature(adam_m, k);
    zero_feature(adam_v, k);
  }
}

TrainResult train(const TrainConfig& config, const std::vector<Index>& dims, const BatchSource& next_batch,
                  const TrainState* resume, const TrainHooks& hooks) {
  const int n_sides = static_cast<int>(dims.size());
  config.validate(n_sides);
  const coder::CoderShape shape{n_sides, dims, config.n_features};
  shape.validate();

  TrainResult result;
  TrainState& st = result.state;
  std::mt19937_64 rng;
  const std::string digest = config_digest(config);

  if (resume != nullptr) {
    require(resume->params.shape == shape, ErrorCode::kShapeMismatch, "checkpoint shape does not match config");
    require(resume->config_digest == digest, ErrorCode::kConfig,
            "checkpoint was produced by a different training config (" + resume->config_digest + " vs " + digest +
                ")");
    st = *resume;
    rng = rng_from_string(st.rng_state);
    for (std::uint64_t b = 0; b < st.batches_consumed; ++b) {
      require(next_batch().has_value(), ErrorCode::kStreamExhausted,
              "stream exhausted while replaying " + std::to_string(st.batches_consumed) + " consumed batches");
    }
  } else {
    st.params = coder::init_params(shape, config.seed);
    st.adam_m = coder::CrosscoderParams::zeros(shape);
    st.adam_v = coder::CrosscoderParams::zeros(shape);
    st.tokens_since_fired.assign(static_cast<std::size_t>(config.n_features), 0.0);
    st.normalization = config.normalization.empty() ? std::vector<double>(dims.size(), 1.0) : config.normalization;
    rng.seed(config.seed ^ 0x9e3779b97f4a7c15ULL);
    st.config_digest = digest;
  }

  for (std::uint64_t step = st.step; step < config.total_steps; ++step) {
    auto batch = next_batch();
    if (!batch) fail(ErrorCode::kStreamExhausted, "data stream exhausted at step " + std::to_string(step));
    ++st.batches_consumed;
    require(static_cast<int>(batch->sides.size()) == n_sides, ErrorCode::kShapeMismatch,
            "batch side count does not match config");
    for (int i = 0; i < n_sides; ++i) batch->sides[i] *= st.normalization[i];

    const double lambda = lambda_at(config, step);
    const double lr = learning_rate_at(config, step);
    coder::SparsityKind sparsity = config.sparsity;
    if (auto* l1 = std::get_if<coder::WeightedL1>(&sparsity)) l1->lambda = lambda;

    coder::GradResult g;
    try {
      g = coder::grad(st.params, *batch, sparsity);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kNonFinite)
        fail(ErrorCode::kNonFinite, "non-finite loss at step " + std::to_string(step) + ": " + e.what());
      throw;
    }

    adam_update(st.params, st.adam_m, st.adam_v, g.grad, lr, step + 1);
    require(st.params.all_finite(), ErrorCode::kNonFinite,
            "parameters became non-finite at step " + std::to_string(step));

    const auto batch_rows = static_cast<double>(batch->rows());
    const Eigen::Array<bool, 1, Eigen::Dynamic> fired = (g.activations.array() > 0.0).colwise().any();
    for (Index k = 0; k < config.n_features; ++k) {
      auto& since = st.tokens_since_fired[static_cast<std::size_t>(k)];
      since = fired(k) ? 0.0 : since + batch_rows;
    }

    const std::uint64_t done = step + 1;
    if (config.resample_interval_steps > 0 && done % config.resample_interval_steps == 0) {
      std::vector<Index> dead;
      for (Index k = 0; k < config.n_features; ++k)
        if (st.tokens_since_fired[static_cast<std::size_t>(k)] >= static_cast<double>(config.dead_threshold_tokens))
          dead.push_back(k);
      if (!dead.empty()) {
        const auto recon = coder::decode(st.params, coder::encode(st.params, *batch, config.sparsity));
        Vector errors = Vector::Zero(batch->rows());
        for (int i = 0; i < n_sides; ++i) errors += (recon[i] - batch->sides[i]).rowwise().squaredNorm();
        resample_dead(st.params, st.adam_m, st.adam_v, dead, *batch, errors, rng);
        for (const Index k : dead) st.tokens_since_fired[static_cast<std::size_t>(k)] = 0.0;
      }
    }

    st.step = done;
    if (done % config.log_interval == 0) {
      MetricsRow row;
      row.step = done;
      row.total_loss = g.loss.total;
      row.mse_per_side = g.loss.recon_mse_per_side;
      row.sparsity_term = g.loss.sparsity_term;
      row.l0 = static_cast<double>((g.activations.array() > 0.0).count()) / batch_rows;
      row.dead_features = static_cast<std::uint64_t>(std::count_if(
          st.tokens_since_fired.begin(), st.tokens_since_fired.end(),
          [&](double t) { return t >= static_cast<double>(config.dead_threshold_tokens); }));
      row.learning_rate = lr;
      row.lambda = lambda;
      result.metrics.push_back(row);
      if (hooks.on_metrics) hooks.on_metrics(row);
    }
    if (hooks.after_step) {
      st.rng_state = rng_to_string(rng);
      if (hooks.after_step(st)) break;
    }
  }
  st.rng_state = rng_to_string(rng);
  return result;
}

}  // namespace xcod::trainer
