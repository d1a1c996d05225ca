#ifndef XCOD_XCOD_H
#define XCOD_XCOD_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define XCOD_API __declspec(dllexport)
#else
#define XCOD_API __attribute__((visibility("default")))
#endif

typedef enum xcod_status {
  XCOD_OK = 0,
  XCOD_ERR_INVALID_ARGUMENT = 1,
  XCOD_ERR_SHAPE_MISMATCH = 2,
  XCOD_ERR_NON_FINITE = 3,
  XCOD_ERR_IO = 4,
  XCOD_ERR_BAD_MAGIC = 5,
  XCOD_ERR_UNSUPPORTED_VERSION = 6,
  XCOD_ERR_TRUNCATED_PAYLOAD = 7,
  XCOD_ERR_STREAM_EXHAUSTED = 8,
  XCOD_ERR_CONFIG = 9,
  XCOD_ERR_NETWORK = 10,
  XCOD_ERR_NOT_FOUND = 11,
  XCOD_ERR_INTERNAL = 12,
  XCOD_ERR_NULL_ARGUMENT = 13,
  XCOD_ERR_UNKNOWN = 99
} xcod_status;

typedef struct xcod_coder xcod_coder;
typedef struct xcod_shard xcod_shard;
typedef struct xcod_world xcod_world;
typedef struct xcod_run_options xcod_run_options;

XCOD_API const char* xcod_version(void);
XCOD_API const char* xcod_status_name(xcod_status status);
/* Message of the last failed call on this thread; empty after a success. */
XCOD_API const char* xcod_last_error(void);
/* Frees strings returned through char** out-parameters. */
XCOD_API void xcod_string_free(char* s);

/* Coder: sides are row-major double blocks, rows x dims[i]. */
XCOD_API xcod_status xcod_coder_create(uint32_t n_sides, const uint32_t* dims, uint32_t n_features, uint64_t seed,
                                       xcod_coder** out);
XCOD_API xcod_status xcod_coder_load(const char* checkpoint_path, xcod_coder** out);
XCOD_API void xcod_coder_free(xcod_coder* coder);
/* dims must hold at least n_sides entries; pass NULL to query n_sides only. */
XCOD_API xcod_status xcod_coder_shape(const xcod_coder* coder, uint32_t* n_sides, uint32_t* dims,
                                      uint32_t* n_features);
/* lambda < 0 selects TopK with k = top_k. out: rows x n_features. */
XCOD_API xcod_status xcod_coder_encode(const xcod_coder* coder, const double* const* sides, size_t rows,
                                       double lambda, uint32_t top_k, double* out);
/* features: rows x n_features; out[i]: rows x dims[i]. */
XCOD_API xcod_status xcod_coder_decode(const xcod_coder* coder, const double* features, size_t rows,
                                       double* const* out);
XCOD_API xcod_status xcod_coder_loss(const xcod_coder* coder, const double* const* sides, size_t rows,
                                     double lambda, double* out_loss);
/* Per-feature normalized relative decoder norm of a two-sided coder. */
XCOD_API xcod_status xcod_coder_nrn(const xcod_coder* coder, double* out);

/* Shards. Rows are row-major f32 with all sides concatenated. */
XCOD_API xcod_status xcod_shard_open(const char* path, xcod_shard** out);
XCOD_API void xcod_shard_close(xcod_shard* shard);
XCOD_API xcod_status xcod_shard_info(const xcod_shard* shard, uint32_t* n_sides, uint32_t* dims, uint64_t* n_rows);
XCOD_API xcod_status xcod_shard_read(xcod_shard* shard, size_t max_rows, float* out, size_t* rows_read);
/* token_texts may be NULL; doc_ids, positions and token_ids may be NULL (zeros). */
XCOD_API xcod_status xcod_shard_write(const char* path, uint32_t n_sides, const uint32_t* dims, uint64_t n_rows,
                                      const float* rows, const int64_t* doc_ids, const int64_t* positions,
                                      const int64_t* token_ids, const char* const* token_texts);

/* Planted worlds. world_config_json may be NULL for defaults. */
XCOD_API xcod_status xcod_world_plant(const char* world_config_json, xcod_world** out);
XCOD_API xcod_status xcod_world_load(const char* path, xcod_world** out);
XCOD_API xcod_status xcod_world_save(const xcod_world* world, const char* path);
XCOD_API void xcod_world_free(xcod_world* world);
XCOD_API xcod_status xcod_world_sample(const xcod_world* world, uint64_t n_tokens, const char* dir, uint64_t seed,
                                       size_t n_shards, uint64_t* rows_written);
/* Max-cosine match of the planted dictionary on one side (0 base, 1 distilled)
   against a coder's decoder; per_row receives one value per planted row. */
XCOD_API xcod_status xcod_world_mmcs(const xcod_world* world, const xcod_coder* coder, uint32_t side,
                                     double* mean, double* per_row, size_t per_row_len);

/* Subcommand runs. */
XCOD_API xcod_status xcod_run_options_create(xcod_run_options** out);
XCOD_API void xcod_run_options_free(xcod_run_options* opts);
XCOD_API xcod_status xcod_run_options_set_config_path(xcod_run_options* opts, const char* path);
/* JSON merge patch applied on top of the config file (or the built-in desk config). */
XCOD_API xcod_status xcod_run_options_add_override(xcod_run_options* opts, const char* json_patch);
XCOD_API xcod_status xcod_run_options_set_seed(xcod_run_options* opts, uint64_t seed);
XCOD_API xcod_status xcod_run_options_set_deterministic(xcod_run_options* opts, int deterministic);
XCOD_API xcod_status xcod_run_options_set_out(xcod_run_options* opts, const char* dir);
XCOD_API xcod_status xcod_run_options_set_timestamp(xcod_run_options* opts, int enabled);
/* The resolved run config as JSON. */
XCOD_API xcod_status xcod_run_options_resolve(const xcod_run_options* opts, char** config_json);
/* command: synth, train, diff, ablate, steer, geometry or repro-desk. report_json may be NULL. */
XCOD_API xcod_status xcod_run(const xcod_run_options* opts, const char* command, char** report_json);

#ifdef __cplusplus
}
#endif

#endif
