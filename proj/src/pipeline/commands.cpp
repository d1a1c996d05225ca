#include "pipeline/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "actstore/shard.hpp"
#include "common/digest.hpp"
#include "common/error.hpp"
#include "diff/annotate.hpp"
#include "diff/diff.hpp"
#include "geometry/geometry.hpp"
#include "intervene/intervene.hpp"
#include "toymodel/recovery.hpp"
#include "toymodel/world.hpp"
#include "trainer/checkpoint.hpp"
#include "trainer/trainer.hpp"

namespace xcod::pipeline {

namespace {

using nlohmann::json;
using coder::Index;

constexpr std::uint64_t kSampleSeedOffset = 1;
constexpr std::uint64_t kStreamSeedOffset = 2;
constexpr std::uint64_t kAblateSeedOffset = 3;
constexpr std::uint64_t kFixtureSeedOffset = 4;

json stage(const char* name, const std::function<json()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    throw Error(e.code(), std::string(name) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kInternal, std::string(name) + ": " + e.what());
  }
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::kIo, "failed writing " + path.string());
}

json finish_report(const CommandContext& ctx, const std::string& name, json body) {
  json report = {{"command", name},
                 {"config_digest", run_config_digest(ctx.config)},
                 {"seed", ctx.config.seed},
                 {"deterministic", ctx.config.deterministic}};
  if (ctx.timestamp) report["generated_at"] = utc_now();
  for (auto& [k, v] : body.items()) report[k] = std::move(v);
  write_text(ctx.out / (name + "_report.json"), report.dump(2) + "\n");
  return report;
}

std::vector<fs::path> shard_paths(const CommandContext& ctx) {
  if (!ctx.config.paths.shards.empty()) {
    for (const auto& p : ctx.config.paths.shards)
      require(fs::exists(p), ErrorCode::kIo, "shard " + p.string() + " does not exist");
    return ctx.config.paths.shards;
  }
  const fs::path dir = ctx.out / "shards";
  require(fs::is_directory(dir), ErrorCode::kIo, "shard directory " + dir.string() + " does not exist");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".xcs") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  require(!out.empty(), ErrorCode::kIo, "no shards in " + dir.string());
  return out;
}

fs::path resolved(const fs::path& configured, const fs::path& fallback) {
  const fs::path p = configured.empty() ? fallback : configured;
  require(fs::exists(p), ErrorCode::kIo, p.string() + " does not exist");
  return p;
}

fs::path checkpoint_path(const CommandContext& ctx) {
  return resolved(ctx.config.paths.checkpoint, ctx.out / "checkpoint.xckpt");
}
fs::path world_path(const CommandContext& ctx) { return resolved(ctx.config.paths.world, ctx.out / "world.json"); }

struct Loaded {
  trainer::TrainState state;
  coder::CrosscoderParams params;
  std::vector<double> normalization;
  Vector nrn;
};

Loaded load_coder(const CommandContext& ctx, bool swap = false) {
  Loaded l;
  l.state = trainer::load_checkpoint(checkpoint_path(ctx)).state;
  l.params = l.state.params;
  l.normalization = l.state.normalization;
  require(l.params.n_sides() == 2, ErrorCode::kShapeMismatch, "checkpoint is not a two-sided crosscoder");
  if (swap) {
    l.params = diff::swap_sides(l.params);
    if (l.normalization.size() == 2) std::swap(l.normalization[0], l.normalization[1]);
  }
  const auto norms = diff::decoder_norms(l.params);
  l.nrn = diff::rdn_nrn(norms[0], norms[1]).nrn;
  return l;
}

void check_shard_shape(const std::vector<fs::path>& shards, const coder::CrosscoderParams& params) {
  const auto header = actstore::ShardReader::open(shards.front()).header();
  require(header.n_sides == static_cast<std::uint32_t>(params.n_sides()), ErrorCode::kShapeMismatch,
          "shards have " + std::to_string(header.n_sides) + " sides, checkpoint has " +
              std::to_string(params.n_sides()));
  for (int i = 0; i < params.n_sides(); ++i)
    require(static_cast<Index>(header.dims[static_cast<std::size_t>(i)]) == params.shape.dims[static_cast<std::size_t>(i)],
            ErrorCode::kShapeMismatch, "shard and checkpoint widths differ on side " + std::to_string(i));
}

std::vector<std::vector<intervene::TokenId>> prompts_of(const toymodel::ReplayCorpus& corpus) {
  std::vector<std::vector<intervene::TokenId>> out;
  for (const auto& d : corpus.docs) out.push_back(d.tokens);
  return out;
}

json token_list(const intervene::ModelAdapter& adapter, const std::vector<intervene::TokenId>& tokens) {
  auto arr = json::array();
  for (const auto t : tokens) arr.push_back({{"id", t}, {"text", adapter.token_text(t)}});
  return arr;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

void write_geometry_fixture(const GeometryFixture& fx, std::uint64_t seed, const fs::path& dataset_path,
                            const fs::path& table_path) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Index d) {
    Vector v(d);
    for (Index i = 0; i < d; ++i) v(i) = normal(rng);
    return v;
  };
  geometry::FunctionClassDataset ds;
  std::vector<actstore::ShardRow> rows;
  std::int64_t next_id = 0;
  auto add_word = [&](const std::string& name, const Vector& e) {
    actstore::ShardRow r;
    r.sides.emplace_back(e.data(), e.data() + e.size());
    r.meta = {0, next_id, next_id, name};
    rows.push_back(std::move(r));
    return next_id++;
  };
  for (std::size_t c = 0; c < fx.n_classes; ++c) {
    geometry::FunctionClass cls{"class_" + std::to_string(c), {}};
    const Vector offset = gaussian(fx.dim);
    for (std::size_t i = 0; i < fx.entries_per_class; ++i) {
      geometry::WordPair p;
      p.a = "c" + std::to_string(c) + "_a" + std::to_string(i);
      p.b = "c" + std::to_string(c) + "_b" + std::to_string(i);
      const Vector u = gaussian(fx.dim);
      const Vector v = u + offset + fx.noise * gaussian(fx.dim);
      p.a_tokens = {add_word(p.a, u)};
      p.b_tokens = {add_word(p.b, v)};
      if (i < fx.multi_token_per_class) p.a_tokens.push_back(add_word(p.a + "_tail", gaussian(fx.dim)));
      cls.entries.push_back(std::move(p));
    }
    ds.classes.push_back(std::move(cls));
  }
  if (dataset_path.has_parent_path()) fs::create_directories(dataset_path.parent_path());
  if (table_path.has_parent_path()) fs::create_directories(table_path.parent_path());
  geometry::save_dataset(dataset_path, ds);
  actstore::write_shard(table_path, {static_cast<std::uint32_t>(fx.dim)}, rows);
}

json cmd_synth(const CommandContext& ctx) {
  return stage("synth", [&] {
    const auto& c = ctx.config;
    c.validate();
    fs::create_directories(ctx.out);
    const auto world = toymodel::plant_world(c.world);
    const fs::path wpath = ctx.out / "world.json";
    toymodel::save_world(wpath, world);
    const auto summary =
        toymodel::sample_shards(world, c.synth.n_tokens, ctx.out / "shards", c.seed + kSampleSeedOffset, c.synth.n_shards);
    const fs::path dataset = ctx.out / "geometry" / "dataset.json";
    const fs::path table = ctx.out / "geometry" / "embeddings.xcs";
    write_geometry_fixture(c.geometry.fixture, c.seed + kFixtureSeedOffset, dataset, table);
    auto shards = json::array();
    for (const auto& p : summary.shards)
      shards.push_back({{"path", p.filename().string()}, {"digest", file_digest_hex(p)}});
    return finish_report(ctx, "synth",
                         {{"rows", summary.rows},
                          {"shards", shards},
                          {"world_digest", file_digest_hex(wpath)},
                          {"fire_probability", world.fire_probability},
                          {"geometry_dataset_digest", file_digest_hex(dataset)},
                          {"geometry_table_digest", file_digest_hex(table)}});
  });
}

json cmd_train(const CommandContext& ctx) {
  return stage("train", [&] {
    const auto& c = ctx.config;
    c.validate();
    const auto shards = shard_paths(ctx);
    const auto header = actstore::ShardReader::open(shards.front()).header();
    std::vector<Index> dims;
    for (const auto d : header.dims) dims.push_back(static_cast<Index>(d));
    trainer::TrainConfig tc = c.train;
    if (tc.normalization.empty()) tc.normalization = trainer::normalize_factors(actstore::shard_stats(shards), dims);
    actstore::BatchStream stream(shards, tc.batch_size, c.stream.shuffle_buffer, c.seed + kStreamSeedOffset,
                                 c.stream.epochs);
    std::ostringstream csv;
    csv << trainer::metrics_csv_header(static_cast<int>(dims.size())) << "\n";
    std::size_t metric_rows = 0;
    trainer::TrainHooks hooks;
    hooks.on_metrics = [&](const trainer::MetricsRow& m) {
      csv << trainer::metrics_csv_row(m) << "\n";
      ++metric_rows;
    };
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = trainer::train(tc, dims, [&] { return stream.next(); }, nullptr, hooks);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fs::create_directories(ctx.out);
    const fs::path ckpt = ctx.out / "checkpoint.xckpt";
    trainer::save_checkpoint(ckpt, result.state, trainer::to_json(tc));
    write_text(ctx.out / "metrics.csv", csv.str());
    json body = {{"steps", result.state.step},
                 {"metric_rows", metric_rows},
                 {"normalization", tc.normalization},
                 {"checkpoint_digest", file_digest_hex(ckpt)},
                 {"train_config_digest", result.state.config_digest}};
    if (!result.metrics.empty()) {
      const auto& m = result.metrics.back();
      body["final"] = {{"total_loss", m.total_loss}, {"mse_per_side", m.mse_per_side}, {"l0", m.l0},
                       {"dead_features", m.dead_features}};
    }
    if (ctx.timestamp) body["seconds"] = seconds;
    return finish_report(ctx, "train", body);
  });
}

json cmd_diff(const CommandContext& ctx) {
  return stage("diff", [&] {
    const auto& c = ctx.config;
    const auto shards = shard_paths(ctx);
    const Loaded l = load_coder(ctx, c.diff.swap_sides);
    check_shard_shape(shards, l.state.params);
    const auto norms = diff::decoder_norms(l.params);
    const auto rn = diff::rdn_nrn(norms[0], norms[1]);
    const auto hist = diff::nrn_summary(rn.nrn, c.diff.n_bins);
    // Shards stay in checkpoint side order; a swapped view only relabels.
    diff::EncodeOptions enc{l.state.normalization, c.train.sparsity};
    const auto stats = diff::firing_stats(l.state.params, shards, c.diff.categories, enc);

    auto features = json::array();
    std::ostringstream fcsv;
    fcsv << "feature,norm_base,norm_distilled,rdn,nrn,global_frequency,max_activation,mean_active\n";
    for (Index k = 0; k < l.params.n_features(); ++k) {
      json freq = json::object();
      for (std::size_t ci = 0; ci < stats.categories.size(); ++ci)
        freq[stats.categories[ci]] = stats.frequency(k, static_cast<Index>(ci));
      features.push_back({{"id", k},
                          {"norm_base", norms[0](k)},
                          {"norm_distilled", norms[1](k)},
                          {"rdn", finite_or_null(rn.rdn(k))},
                          {"nrn", rn.nrn(k)},
                          {"category_frequency", freq},
                          {"global_frequency", stats.global_frequency(k)},
                          {"max_activation", stats.max_activation(k)},
                          {"mean_active", stats.mean_active(k)}});
      fcsv << k << "," << fmt(norms[0](k)) << "," << fmt(norms[1](k)) << ","
           << (std::isfinite(rn.rdn(k)) ? fmt(rn.rdn(k)) : "inf") << "," << fmt(rn.nrn(k)) << ","
           << fmt(stats.global_frequency(k)) << "," << fmt(stats.max_activation(k)) << ","
           << fmt(stats.mean_active(k)) << "\n";
    }
    std::ostringstream hcsv;
    hcsv << "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < hist.counts.size(); ++b)
      hcsv << fmt(hist.edges[b]) << "," << fmt(hist.edges[b + 1]) << "," << hist.counts[b] << "\n";
    write_text(ctx.out / "features.csv", fcsv.str());
    write_text(ctx.out / "nrn_histogram.csv", hcsv.str());

    const auto top = diff::top_by_nrn(rn.nrn, c.diff.top_n);
    const auto bottom = diff::bottom_by_nrn(rn.nrn, c.diff.top_n);
    auto listed = [&](const std::vector<Index>& ids) {
      const auto contexts = diff::max_activating(l.state.params, shards, ids, c.diff.examples, c.diff.window, enc);
      const auto labels = diff::annotate_features(ids, contexts, c.diff.annotate);
      auto arr = json::array();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        auto ex = json::array();
        for (const auto& ctxt : contexts[i]) ex.push_back(diff::to_json(ctxt));
        arr.push_back({{"id", ids[i]}, {"nrn", rn.nrn(ids[i])}, {"label", labels[i]}, {"examples", ex}});
      }
      return arr;
    };
    auto empty_categories = json::array();
    for (std::size_t ci = 0; ci < stats.categories.size(); ++ci)
      if (stats.empty_category[ci]) empty_categories.push_back(stats.categories[ci]);

    json body = {{"n_features", l.params.n_features()},
                 {"swap_sides", c.diff.swap_sides},
                 {"mean_nrn", hist.mean},
                 {"histogram", {{"edges", hist.edges}, {"counts", hist.counts}}},
                 {"trimodal", diff::is_multimodal(hist, {{0.0, 0.3}, {0.35, 0.65}, {0.7, 1.0}})},
                 {"category_tokens", stats.category_tokens},
                 {"empty_categories", empty_categories},
                 {"rows", stats.rows},
                 {"features", features},
                 {"top", listed(top)},
                 {"bottom", listed(bottom)}};
    const fs::path wpath = c.paths.world.empty() ? ctx.out / "world.json" : c.paths.world;
    if (fs::exists(wpath) && !c.diff.swap_sides) {
      const auto world = toymodel::load_world(wpath);
      body["planted"] = toymodel::to_json(toymodel::planted_recovery(world, l.params, rn.nrn));
    }
    return finish_report(ctx, "diff", body);
  });
}

json cmd_ablate(const CommandContext& ctx) {
  return stage("ablate", [&] {
    const auto& c = ctx.config;
    const auto shards = shard_paths(ctx);
    const Loaded l = load_coder(ctx);
    check_shard_shape(shards, l.params);
    auto world = std::make_shared<const toymodel::PlantedWorld>(toymodel::load_world(world_path(ctx)));
    const auto corpus = toymodel::load_replay(shards, c.ablate.max_docs);
    const toymodel::PlantedAdapter distilled(world, Side::kDistilled, corpus);
    const toymodel::PlantedAdapter base(world, Side::kBase, corpus);
    const auto prompts = prompts_of(*corpus);
    diff::EncodeOptions enc{l.normalization, c.train.sparsity};
    const auto stats = diff::firing_stats(l.params, shards, c.ablate.categories, enc);

    intervene::LogitChangeOptions opts;
    opts.n_targets = c.ablate.n_targets;
    opts.seed = c.seed + kAblateSeedOffset;
    opts.all_positions = c.ablate.all_positions;
    opts.encode = enc;

    std::ostringstream csv;
    csv << "category,k,n_features,distilled_mean_delta,base_mean_delta,planted_contribution,drop_fraction,"
           "base_ratio\n";
    auto categories = json::array();
    for (const auto& cat : c.ablate.categories) {
      const auto fstats = intervene::category_stats(stats, l.nrn, cat.name);
      auto grid = json::array();
      for (const double k : c.ablate.k_grid) {
        intervene::AblationSpec spec{cat, c.ablate.nrn_threshold, k, Side::kDistilled, c.ablate.all_positions};
        spec.validate();
        const auto set = intervene::select_ablation_set(fstats, spec.nrn_threshold, k);
        const auto rd = intervene::logit_change(distilled, l.params, prompts, cat, set.features, opts);
        const auto rb = intervene::logit_change(base, l.params, prompts, cat, set.features, opts);
        double contribution = 0.0;
        std::size_t counted = 0;
        double abs_d = 0.0, abs_b = 0.0;
        for (const auto& o : rd.occurrences) {
          abs_d += std::abs(o.delta);
          const auto j = world->feature_of_marker(o.token);
          if (!j) continue;
          const Matrix res = distilled.residuals(prompts[o.prompt]);
          contribution += world->marker_contribution(*j, res.row(o.position - 1).transpose());
          ++counted;
        }
        for (const auto& o : rb.occurrences) abs_b += std::abs(o.delta);
        abs_d /= static_cast<double>(rd.occurrences.size());
        abs_b /= static_cast<double>(rb.occurrences.size());
        const double mean_contribution = counted > 0 ? contribution / static_cast<double>(counted) : 0.0;
        const double drop = mean_contribution != 0.0 ? -rd.mean_delta / mean_contribution : 0.0;
        const double base_ratio = abs_d > 0.0 ? abs_b / abs_d : 0.0;
        grid.push_back({{"k", k},
                        {"features", set.features},
                        {"active_count", set.active_count},
                        {"empty_active", set.empty_active},
                        {"planted_contribution", mean_contribution},
                        {"drop_fraction", drop},
                        {"base_ratio", base_ratio},
                        {"distilled", {{"mean_delta", rd.mean_delta}, {"mean_abs_delta", abs_d},
                                       {"available", rd.available}, {"report", intervene::to_json(rd)}}},
                        {"base", {{"mean_delta", rb.mean_delta}, {"mean_abs_delta", abs_b},
                                  {"available", rb.available}, {"report", intervene::to_json(rb)}}}});
        csv << cat.name << "," << fmt(k) << "," << set.features.size() << "," << fmt(rd.mean_delta) << ","
            << fmt(rb.mean_delta) << "," << fmt(mean_contribution) << "," << fmt(drop) << "," << fmt(base_ratio)
            << "\n";
      }
      categories.push_back({{"category", intervene::to_json(cat)}, {"grid", grid}});
    }
    write_text(ctx.out / "ablation.csv", csv.str());
    return finish_report(ctx, "ablate",
                         {{"k_grid", c.ablate.k_grid},
                          {"nrn_threshold", c.ablate.nrn_threshold},
                          {"n_targets", c.ablate.n_targets},
                          {"all_positions", c.ablate.all_positions},
                          {"logit_seed", opts.seed},
                          {"categories", categories}});
  });
}

json cmd_steer(const CommandContext& ctx) {
  return stage("steer", [&] {
    const auto& c = ctx.config;
    const auto shards = shard_paths(ctx);
    const Loaded l = load_coder(ctx);
    auto world = std::make_shared<const toymodel::PlantedWorld>(toymodel::load_world(world_path(ctx)));
    const auto corpus = toymodel::load_replay(shards, 1);
    require(!corpus->docs.empty(), ErrorCode::kNotFound, "no documents to take a prompt from");
    const toymodel::PlantedAdapter adapter(world, Side::kDistilled, corpus);
    require(!c.ablate.categories.empty(), ErrorCode::kConfig, "steering needs a category to watch");
    const auto& cat = c.ablate.categories.front();

    diff::EncodeOptions enc{l.normalization, c.train.sparsity};
    std::optional<diff::FiringStats> stats;
    auto firing = [&]() -> const diff::FiringStats& {
      if (!stats) stats = diff::firing_stats(l.params, shards, {cat}, enc);
      return *stats;
    };
    Index feature = c.steer.feature;
    if (feature < 0) {
      const auto set =
          intervene::select_ablation_set(intervene::category_stats(firing(), l.nrn, cat.name), c.ablate.nrn_threshold, 100.0);
      require(!set.features.empty(), ErrorCode::kNotFound, "no feature qualifies for steering on '" + cat.name + "'");
      feature = set.features.front();
    }
    require(feature < l.params.n_features(), ErrorCode::kInvalidArgument, "invalid feature id " + std::to_string(feature));
    std::vector<double> alphas = c.steer.alphas;
    if (alphas.empty()) alphas = {firing().max_activation(feature)};

    std::vector<intervene::TokenId> watch;
    for (const auto& t : cat.target_tokens) watch.push_back(world->token_id(t));
    const auto& doc = corpus->docs.front().tokens;
    const std::vector<intervene::TokenId> prompt(doc.begin(),
                                                 doc.begin() + static_cast<std::ptrdiff_t>(
                                                                   std::min(c.steer.prompt_tokens, doc.size())));
    const auto baseline = intervene::greedy(adapter, prompt, c.steer.max_steps);
    write_text(ctx.out / "steer" / "baseline.json",
               json({{"prompt", token_list(adapter, prompt)}, {"tokens", token_list(adapter, baseline)}}).dump(2) + "\n");

    auto runs = json::array();
    std::vector<double> first_logits;
    bool zero_matches = true;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      const auto r = intervene::steer(adapter, l.params, prompt, feature, alphas[i], c.steer.max_steps, watch,
                                      l.normalization);
      if (alphas[i] == 0.0) zero_matches = zero_matches && r.tokens == baseline;
      const double first = r.watched.empty() || r.watched.front().empty() ? 0.0 : r.watched.front().front();
      first_logits.push_back(first);
      const json transcript = {{"prompt", token_list(adapter, prompt)},
                               {"alpha", alphas[i]},
                               {"feature", feature},
                               {"watch", token_list(adapter, watch)},
                               {"tokens", token_list(adapter, r.tokens)},
                               {"watched_logits", r.watched}};
      const std::string file = "alpha_" + std::to_string(i) + ".json";
      write_text(ctx.out / "steer" / file, transcript.dump(2) + "\n");
      runs.push_back({{"alpha", alphas[i]}, {"transcript", file}, {"first_step_watched_logit", first},
                      {"identical_to_baseline", r.tokens == baseline}});
    }
    bool increasing = true;
    for (std::size_t i = 1; i < alphas.size(); ++i)
      if (alphas[i] > alphas[i - 1] && !(first_logits[i] > first_logits[i - 1])) increasing = false;
    const Matrix r0 = intervene::steered_residuals(adapter, l.params, prompt, feature, 0.0, l.normalization);
    const Matrix r1 = intervene::steered_residuals(adapter, l.params, prompt, feature, 1.0, l.normalization);
    const Matrix r2 = intervene::steered_residuals(adapter, l.params, prompt, feature, 2.0, l.normalization);
    const Matrix r3 = intervene::steered_residuals(adapter, l.params, prompt, feature, 3.0, l.normalization);
    const double linearity = (r1 + r2 - r0 - r3).cwiseAbs().maxCoeff();
    return finish_report(ctx, "steer",
                         {{"feature", feature},
                          {"nrn", l.nrn(feature)},
                          {"category", cat.name},
                          {"alphas", alphas},
                          {"runs", runs},
                          {"zero_alpha_matches_baseline", zero_matches},
                          {"watched_logit_increasing", increasing},
                          {"linearity_max_error", linearity}});
  });
}

json cmd_geometry(const CommandContext& ctx) {
  return stage("geometry", [&] {
    const auto& c = ctx.config;
    const fs::path dpath = resolved(c.paths.dataset, ctx.out / "geometry" / "dataset.json");
    const fs::path tpath = resolved(c.paths.embeddings, ctx.out / "geometry" / "embeddings.xcs");
    const auto raw = geometry::load_dataset(dpath);
    auto ds = geometry::filter_single_token(raw);
    geometry::attach_embeddings(ds, geometry::load_embedding_table(tpath));
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < raw.classes.size(); ++i) dropped += raw.classes[i].entries.size() - ds.classes[i].entries.size();

    std::vector<double> thresholds;
    for (int i = 0; i <= 100; ++i) thresholds.push_back(0.02 * i);
    std::ostringstream csv;
    csv << "dim,class,threshold,fraction\n";
    auto per_dim = json::array();
    for (const Index k : c.geometry.dims) {
      const auto losses = geometry::class_losses(ds, k, c.geometry.fit);
      auto classes = json::array();
      std::vector<double> pooled;
      for (const auto& cl : losses) {
        json entry = {{"name", cl.name}, {"skipped", cl.skipped}, {"losses", cl.losses}};
        if (cl.skipped) entry["reason"] = cl.reason;
        if (!cl.losses.empty()) {
          double s = 0.0;
          for (const double v : cl.losses) s += v;
          entry["mean_loss"] = s / static_cast<double>(cl.losses.size());
          auto curve = json::array();
          for (const auto& p : geometry::cumulative_fraction(cl.losses, thresholds)) {
            curve.push_back({p.threshold, p.fraction});
            csv << k << "," << cl.name << "," << fmt(p.threshold) << "," << fmt(p.fraction) << "\n";
          }
          entry["curve"] = curve;
          pooled.insert(pooled.end(), cl.losses.begin(), cl.losses.end());
        }
        classes.push_back(entry);
      }
      json dim_entry = {{"dim", k}, {"classes", classes}};
      if (!pooled.empty()) {
        auto curve = json::array();
        for (const auto& p : geometry::cumulative_fraction(pooled, thresholds)) {
          curve.push_back({p.threshold, p.fraction});
          csv << k << ",all," << fmt(p.threshold) << "," << fmt(p.fraction) << "\n";
        }
        dim_entry["curve"] = curve;
      }
      per_dim.push_back(dim_entry);
    }
    write_text(ctx.out / "geometry_curves.csv", csv.str());
    return finish_report(ctx, "geometry",
                         {{"fit", c.geometry.fit == geometry::PcaFit::kGlobal ? "global" : "per_class"},
                          {"dataset_digest", file_digest_hex(dpath)},
                          {"multi_token_entries_dropped", dropped},
                          {"dims", per_dim}});
  });
}

json cmd_repro_desk(const CommandContext& ctx) {
  const json synth = cmd_synth(ctx);
  const json train = cmd_train(ctx);
  const json diffr = cmd_diff(ctx);
  const json ablate = cmd_ablate(ctx);
  const json steer = cmd_steer(ctx);
  const json geom = cmd_geometry(ctx);
  return stage("repro-desk", [&] {
    json summary = {{"rows", synth.at("rows")},
                    {"steps", train.at("steps")},
                    {"checkpoint_digest", train.at("checkpoint_digest")},
                    {"mean_nrn", diffr.at("mean_nrn")},
                    {"trimodal", diffr.at("trimodal")}};
    if (diffr.contains("planted")) {
      const auto& p = diffr.at("planted");
      summary["recovered_fraction"] = p.at("recovered_fraction");
      summary["band_fraction"] = {{"shared", p.at("shared").at("band_fraction")},
                                  {"unique_base", p.at("unique_base").at("band_fraction")},
                                  {"unique_distilled", p.at("unique_distilled").at("band_fraction")}};
    }
    double worst_drop = std::numeric_limits<double>::infinity();
    double worst_ratio = 0.0;
    for (const auto& cat : ablate.at("categories"))
      for (const auto& g : cat.at("grid")) {
        worst_drop = std::min(worst_drop, g.at("drop_fraction").get<double>());
        worst_ratio = std::max(worst_ratio, g.at("base_ratio").get<double>());
      }
    summary["ablation_min_drop_fraction"] = finite_or_null(worst_drop);
    summary["ablation_max_base_ratio"] = worst_ratio;
    summary["steer_increasing"] = steer.at("watched_logit_increasing");
    summary["steer_zero_alpha_matches"] = steer.at("zero_alpha_matches_baseline");
    summary["steer_linearity_max_error"] = steer.at("linearity_max_error");
    auto reports = json::object();
    for (const char* name : {"synth", "train", "diff", "ablate", "steer", "geometry"}) {
      const fs::path p = ctx.out / (std::string(name) + "_report.json");
      reports[name] = file_digest_hex(p);
    }
    summary["report_digests"] = reports;
    (void)geom;
    return finish_report(ctx, "desk", summary);
  });
}

}  // namespace xcod::pipeline
