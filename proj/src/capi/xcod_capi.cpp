#include "xcod/xcod.h"

#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "actstore/shard.hpp"
#include "coder/coder.hpp"
#include "common/error.hpp"
#include "diff/diff.hpp"
#include "pipeline/commands.hpp"
#include "pipeline/config.hpp"
#include "toymodel/world.hpp"
#include "trainer/checkpoint.hpp"

struct xcod_coder {
  xcod::coder::CrosscoderParams params;
};

struct xcod_shard {
  xcod::actstore::ShardReader reader;
};

struct xcod_world {
  xcod::toymodel::PlantedWorld world;
};

struct xcod_run_options {
  std::string config_path;
  std::vector<nlohmann::json> overrides;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out = "xcod_out";
  bool timestamp = true;
};

namespace {

using namespace xcod;
using Index = Eigen::Index;

thread_local std::string g_last_error;

xcod_status to_status(ErrorCode code) { return static_cast<xcod_status>(static_cast<int>(code)); }

template <typename F>
xcod_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return XCOD_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return XCOD_ERR_CONFIG;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return XCOD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return XCOD_ERR_UNKNOWN;
  } catch (...) {
    g_last_error = "unknown failure";
    return XCOD_ERR_UNKNOWN;
  }
}

struct NullArgument : Error {
  explicit NullArgument(const char* name) : Error(ErrorCode::kInvalidArgument, std::string(name) + " is null") {}
};

template <typename T>
void not_null(const T* p, const char* name) {
  if (p == nullptr) throw NullArgument(name);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

coder::Batch batch_from(const coder::CrosscoderParams& params, const double* const* sides, std::size_t rows) {
  not_null(sides, "sides");
  coder::Batch b;
  for (int i = 0; i < params.n_sides(); ++i) {
    const double* p = sides[i];
    not_null(p, "side block");
    const Index d = params.shape.dims[static_cast<std::size_t>(i)];
    b.sides.push_back(Eigen::Map<const Matrix>(p, static_cast<Index>(rows), d));
  }
  return b;
}

coder::SparsityKind sparsity_of(double lambda, std::uint32_t top_k) {
  if (lambda < 0.0) return coder::TopK{static_cast<int>(top_k)};
  return coder::WeightedL1{lambda};
}

pipeline::RunConfig resolve(const xcod_run_options& o) {
  nlohmann::json j = nlohmann::json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + o.config_path);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kConfig, "config " + o.config_path + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& patch : o.overrides) j.merge_patch(patch);
  pipeline::RunConfig c = pipeline::run_config_from_json(j);
  if (o.seed) pipeline::apply_seed(c, *o.seed);
  if (o.deterministic) c.deterministic = true;
  c.validate();
  return c;
}

}  // namespace

extern "C" {

const char* xcod_version(void) { return "0.1.0"; }

const char* xcod_status_name(xcod_status status) {
  switch (status) {
    case XCOD_OK: return "ok";
    case XCOD_ERR_NULL_ARGUMENT: return "null_argument";
    case XCOD_ERR_UNKNOWN: return "unknown";
    default:
      if (status >= XCOD_ERR_INVALID_ARGUMENT && status <= XCOD_ERR_INTERNAL)
        return error_code_name(static_cast<ErrorCode>(static_cast<int>(status)));
      return "unrecognized";
  }
}

const char* xcod_last_error(void) { return g_last_error.c_str(); }

void xcod_string_free(char* s) { std::free(s); }

xcod_status xcod_coder_create(uint32_t n_sides, const uint32_t* dims, uint32_t n_features, uint64_t seed,
                              xcod_coder** out) {
  if (out == nullptr || dims == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    coder::CoderShape shape;
    shape.n_sides = static_cast<int>(n_sides);
    for (uint32_t i = 0; i < n_sides; ++i) shape.dims.push_back(dims[i]);
    shape.n_features = n_features;
    auto h = std::make_unique<xcod_coder>();
    h->params = coder::init_params(shape, seed);
    *out = h.release();
  });
}

xcod_status xcod_coder_load(const char* checkpoint_path, xcod_coder** out) {
  if (out == nullptr || checkpoint_path == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    auto h = std::make_unique<xcod_coder>();
    h->params = trainer::load_checkpoint(checkpoint_path).state.params;
    *out = h.release();
  });
}

void xcod_coder_free(xcod_coder* coder) { delete coder; }

xcod_status xcod_coder_shape(const xcod_coder* coder, uint32_t* n_sides, uint32_t* dims, uint32_t* n_features) {
  if (coder == nullptr) return g_last_error = "null coder", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    const auto& s = coder->params.shape;
    if (n_sides) *n_sides = static_cast<uint32_t>(s.n_sides);
    if (dims)
      for (int i = 0; i < s.n_sides; ++i) dims[i] = static_cast<uint32_t>(s.dims[static_cast<std::size_t>(i)]);
    if (n_features) *n_features = static_cast<uint32_t>(s.n_features);
  });
}

xcod_status xcod_coder_encode(const xcod_coder* coder, const double* const* sides, size_t rows, double lambda,
                              uint32_t top_k, double* out) {
  if (coder == nullptr || sides == nullptr || out == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    const Matrix f = coder::encode(coder->params, batch_from(coder->params, sides, rows), sparsity_of(lambda, top_k));
    Eigen::Map<Matrix>(out, f.rows(), f.cols()) = f;
  });
}

xcod_status xcod_coder_decode(const xcod_coder* coder, const double* features, size_t rows, double* const* out) {
  if (coder == nullptr || features == nullptr || out == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    const Matrix f = Eigen::Map<const Matrix>(features, static_cast<Index>(rows), coder->params.n_features());
    const auto decoded = coder::decode(coder->params, f);
    for (std::size_t i = 0; i < decoded.size(); ++i) {
      not_null(out[i], "output block");
      Eigen::Map<Matrix>(out[i], decoded[i].rows(), decoded[i].cols()) = decoded[i];
    }
  });
}

xcod_status xcod_coder_loss(const xcod_coder* coder, const double* const* sides, size_t rows, double lambda,
                            double* out_loss) {
  if (coder == nullptr || sides == nullptr || out_loss == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    *out_loss = coder::loss(coder->params, batch_from(coder->params, sides, rows), coder::WeightedL1{lambda}).total;
  });
}

xcod_status xcod_coder_nrn(const xcod_coder* coder, double* out) {
  if (coder == nullptr || out == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    require(coder->params.n_sides() == 2, ErrorCode::kInvalidArgument, "nrn needs a two-sided coder");
    const auto norms = diff::decoder_norms(coder->params);
    const Vector nrn = diff::rdn_nrn(norms[0], norms[1]).nrn;
    std::copy(nrn.data(), nrn.data() + nrn.size(), out);
  });
}

xcod_status xcod_shard_open(const char* path, xcod_shard** out) {
  if (path == nullptr || out == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] { *out = new xcod_shard{actstore::ShardReader::open(path)}; });
}

void xcod_shard_close(xcod_shard* shard) { delete shard; }

xcod_status xcod_shard_info(const xcod_shard* shard, uint32_t* n_sides, uint32_t* dims, uint64_t* n_rows) {
  if (shard == nullptr) return g_last_error = "null shard", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    const auto& h = shard->reader.header();
    if (n_sides) *n_sides = h.n_sides;
    if (dims) std::copy(h.dims.begin(), h.dims.end(), dims);
    if (n_rows) *n_rows = h.n_rows;
  });
}

xcod_status xcod_shard_read(xcod_shard* shard, size_t max_rows, float* out, size_t* rows_read) {
  if (shard == nullptr || out == nullptr || rows_read == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    const MatrixF block = shard->reader.read_block(static_cast<Index>(max_rows));
    std::copy(block.data(), block.data() + block.size(), out);
    *rows_read = static_cast<size_t>(block.rows());
  });
}

xcod_status xcod_shard_write(const char* path, uint32_t n_sides, const uint32_t* dims, uint64_t n_rows,
                             const float* rows, const int64_t* doc_ids, const int64_t* positions,
                             const int64_t* token_ids, const char* const* token_texts) {
  if (path == nullptr || dims == nullptr || (rows == nullptr && n_rows > 0))
    return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    const std::vector<std::uint32_t> d(dims, dims + n_sides);
    std::size_t width = 0;
    for (const auto x : d) width += x;
    std::uint64_t r = 0;
    actstore::write_shard(path, d, [&](actstore::ShardRow& row) {
      if (r == n_rows) return false;
      row.sides.clear();
      const float* p = rows + r * width;
      for (const auto x : d) {
        row.sides.emplace_back(p, p + x);
        p += x;
      }
      row.meta.doc_id = doc_ids ? doc_ids[r] : 0;
      row.meta.position = positions ? positions[r] : 0;
      row.meta.token_id = token_ids ? token_ids[r] : 0;
      row.meta.token_text = token_texts && token_texts[r] ? token_texts[r] : "";
      ++r;
      return true;
    });
  });
}

xcod_status xcod_world_plant(const char* world_config_json, xcod_world** out) {
  if (out == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    toymodel::WorldConfig c;
    if (world_config_json != nullptr) c = toymodel::world_config_from_json(nlohmann::json::parse(world_config_json));
    *out = new xcod_world{toymodel::plant_world(c)};
  });
}

xcod_status xcod_world_load(const char* path, xcod_world** out) {
  if (path == nullptr || out == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] { *out = new xcod_world{toymodel::load_world(path)}; });
}

xcod_status xcod_world_save(const xcod_world* world, const char* path) {
  if (world == nullptr || path == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] { toymodel::save_world(path, world->world); });
}

void xcod_world_free(xcod_world* world) { delete world; }

xcod_status xcod_world_sample(const xcod_world* world, uint64_t n_tokens, const char* dir, uint64_t seed,
                              size_t n_shards, uint64_t* rows_written) {
  if (world == nullptr || dir == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    const auto s = toymodel::sample_shards(world->world, n_tokens, dir, seed, n_shards);
    if (rows_written) *rows_written = s.rows;
  });
}

xcod_status xcod_world_mmcs(const xcod_world* world, const xcod_coder* coder, uint32_t side, double* mean,
                            double* per_row, size_t per_row_len) {
  if (world == nullptr || coder == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    require(side < 2 && static_cast<int>(side) < coder->params.n_sides(), ErrorCode::kInvalidArgument,
            "invalid side");
    const Side s = side == 0 ? Side::kBase : Side::kDistilled;
    const auto m = toymodel::mmcs(world->world.side_dictionary(s), coder->params.decoder[side]);
    if (mean) *mean = m.mean;
    if (per_row) {
      require(per_row_len >= m.max_cosine.size(), ErrorCode::kShapeMismatch, "per_row buffer too small");
      std::copy(m.max_cosine.begin(), m.max_cosine.end(), per_row);
    }
  });
}

xcod_status xcod_run_options_create(xcod_run_options** out) {
  if (out == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] { *out = new xcod_run_options(); });
}

void xcod_run_options_free(xcod_run_options* opts) { delete opts; }

xcod_status xcod_run_options_set_config_path(xcod_run_options* opts, const char* path) {
  if (opts == nullptr || path == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] { opts->config_path = path; });
}

xcod_status xcod_run_options_add_override(xcod_run_options* opts, const char* json_patch) {
  if (opts == nullptr || json_patch == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    auto patch = nlohmann::json::parse(json_patch);
    require(patch.is_object(), ErrorCode::kConfig, "override must be a JSON object");
    opts->overrides.push_back(std::move(patch));
  });
}

xcod_status xcod_run_options_set_seed(xcod_run_options* opts, uint64_t seed) {
  if (opts == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] { opts->seed = seed; });
}

xcod_status xcod_run_options_set_deterministic(xcod_run_options* opts, int deterministic) {
  if (opts == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] { opts->deterministic = deterministic != 0; });
}

xcod_status xcod_run_options_set_out(xcod_run_options* opts, const char* dir) {
  if (opts == nullptr || dir == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] { opts->out = dir; });
}

xcod_status xcod_run_options_set_timestamp(xcod_run_options* opts, int enabled) {
  if (opts == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] { opts->timestamp = enabled != 0; });
}

xcod_status xcod_run_options_resolve(const xcod_run_options* opts, char** config_json) {
  if (opts == nullptr || config_json == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] { *config_json = dup_string(pipeline::to_json(resolve(*opts)).dump(2)); });
}

xcod_status xcod_run(const xcod_run_options* opts, const char* command, char** report_json) {
  if (opts == nullptr || command == nullptr) return g_last_error = "null argument", XCOD_ERR_NULL_ARGUMENT;
  return guarded([&] {
    pipeline::CommandContext ctx;
    ctx.config = resolve(*opts);
    ctx.out = opts->out;
    ctx.timestamp = opts->timestamp;
    const std::string cmd = command;
    nlohmann::json report;
    if (cmd == "synth") report = pipeline::cmd_synth(ctx);
    else if (cmd == "train") report = pipeline::cmd_train(ctx);
    else if (cmd == "diff") report = pipeline::cmd_diff(ctx);
    else if (cmd == "ablate") report = pipeline::cmd_ablate(ctx);
    else if (cmd == "steer") report = pipeline::cmd_steer(ctx);
    else if (cmd == "geometry") report = pipeline::cmd_geometry(ctx);
    else if (cmd == "repro-desk") report = pipeline::cmd_repro_desk(ctx);
    else fail(ErrorCode::kInvalidArgument, "unknown command '" + cmd + "'");
    if (report_json) *report_json = dup_string(report.dump(2));
  });
}

}  // extern "C"
