#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "xcod/xcod.h"

static int failures = 0;

#define EXPECT(cond)                                              \
  do {                                                            \
    if (!(cond)) {                                                \
      fprintf(stderr, "%s:%d: failed: %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                 \
    }                                                             \
  } while (0)

static void coder_roundtrip(void) {
  const uint32_t dims[2] = {3, 2};
  xcod_coder* coder = NULL;
  EXPECT(xcod_coder_create(2, dims, 4, 7, &coder) == XCOD_OK);

  uint32_t n_sides = 0, got_dims[2] = {0, 0}, n_features = 0;
  EXPECT(xcod_coder_shape(coder, &n_sides, got_dims, &n_features) == XCOD_OK);
  EXPECT(n_sides == 2 && got_dims[0] == 3 && got_dims[1] == 2 && n_features == 4);

  const double a[6] = {1, 0, 0, 0, 1, 0};
  const double b[4] = {0.5, 0.5, 0, 1};
  const double* sides[2] = {a, b};
  double f[8], recon_a[6], recon_b[4], loss = -1.0;
  EXPECT(xcod_coder_encode(coder, sides, 2, 0.0, 0, f) == XCOD_OK);
  for (int i = 0; i < 8; ++i) EXPECT(f[i] >= 0.0);
  double* outs[2] = {recon_a, recon_b};
  EXPECT(xcod_coder_decode(coder, f, 2, outs) == XCOD_OK);
  EXPECT(xcod_coder_loss(coder, sides, 2, 0.0, &loss) == XCOD_OK);

  double direct = 0.0;
  for (int i = 0; i < 6; ++i) direct += (recon_a[i] - a[i]) * (recon_a[i] - a[i]);
  for (int i = 0; i < 4; ++i) direct += (recon_b[i] - b[i]) * (recon_b[i] - b[i]);
  EXPECT(fabs(loss - direct / 2.0) < 1e-12);

  double topk[8];
  EXPECT(xcod_coder_encode(coder, sides, 2, -1.0, 1, topk) == XCOD_OK);
  int nonzero = 0;
  for (int i = 0; i < 4; ++i) nonzero += topk[i] != 0.0;
  EXPECT(nonzero <= 1);

  double nrn[4];
  EXPECT(xcod_coder_nrn(coder, nrn) == XCOD_OK);
  for (int i = 0; i < 4; ++i) EXPECT(nrn[i] >= 0.0 && nrn[i] <= 1.0);
  xcod_coder_free(coder);
}

static void shard_roundtrip(const char* dir) {
  char path[512];
  snprintf(path, sizeof path, "%s/capi.xcs", dir);
  const uint32_t dims[2] = {2, 1};
  const float rows[9] = {1.5f, -2.0f, 3.0f, 0.25f, 0.0f, -1.0f, 7.0f, 8.0f, 9.0f};
  const char* texts[3] = {"a", "Wait", "b"};
  EXPECT(xcod_shard_write(path, 2, dims, 3, rows, NULL, NULL, NULL, texts) == XCOD_OK);

  xcod_shard* shard = NULL;
  EXPECT(xcod_shard_open(path, &shard) == XCOD_OK);
  uint32_t n_sides = 0, got[2] = {0, 0};
  uint64_t n_rows = 0;
  EXPECT(xcod_shard_info(shard, &n_sides, got, &n_rows) == XCOD_OK);
  EXPECT(n_sides == 2 && got[0] == 2 && got[1] == 1 && n_rows == 3);
  float back[9];
  size_t read = 0;
  EXPECT(xcod_shard_read(shard, 10, back, &read) == XCOD_OK);
  EXPECT(read == 3);
  EXPECT(memcmp(back, rows, sizeof rows) == 0);
  xcod_shard_close(shard);

  FILE* fp = fopen(path, "r+b");
  fputc('Z', fp);
  fclose(fp);
  shard = NULL;
  EXPECT(xcod_shard_open(path, &shard) == XCOD_ERR_BAD_MAGIC);
  EXPECT(shard == NULL);
  EXPECT(strlen(xcod_last_error()) > 0);
}

static void errors(void) {
  xcod_coder* coder = NULL;
  const uint32_t dims[1] = {3};
  EXPECT(xcod_coder_create(1, dims, 0, 0, &coder) != XCOD_OK);
  EXPECT(xcod_coder_create(1, dims, 2, 0, NULL) == XCOD_ERR_NULL_ARGUMENT);
  EXPECT(xcod_coder_load("/nonexistent/ckpt.xckpt", &coder) == XCOD_ERR_IO);
  EXPECT(strstr(xcod_last_error(), "/nonexistent/ckpt.xckpt") != NULL);
  EXPECT(strcmp(xcod_status_name(XCOD_ERR_BAD_MAGIC), xcod_status_name(XCOD_ERR_TRUNCATED_PAYLOAD)) != 0);
  EXPECT(xcod_coder_create(1, dims, 2, 0, &coder) == XCOD_OK);
  EXPECT(strlen(xcod_last_error()) == 0);
  double nrn[2];
  EXPECT(xcod_coder_nrn(coder, nrn) == XCOD_ERR_INVALID_ARGUMENT);
  xcod_coder_free(coder);
  xcod_coder_free(NULL);

  xcod_run_options* opts = NULL;
  EXPECT(xcod_run_options_create(&opts) == XCOD_OK);
  EXPECT(xcod_run_options_add_override(opts, "{\"train\":{\"learnin_rate\":1}}") == XCOD_OK);
  char* text = NULL;
  EXPECT(xcod_run_options_resolve(opts, &text) == XCOD_ERR_CONFIG);
  EXPECT(xcod_run_options_add_override(opts, "not json") == XCOD_ERR_CONFIG);
  xcod_run_options_free(opts);
  EXPECT(xcod_run_options_create(&opts) == XCOD_OK);
  EXPECT(xcod_run(opts, "explode", NULL) == XCOD_ERR_INVALID_ARGUMENT);
  xcod_run_options_free(opts);
}

static void world_and_config(const char* dir) {
  xcod_world* world = NULL;
  EXPECT(xcod_world_plant("{\"n_shared\":4,\"n_unique_base\":2,\"n_unique_distilled\":2,\"d_base\":8,"
                          "\"d_distilled\":8,\"vocab_size\":20,\"doc_length\":8}",
                          &world) == XCOD_OK);
  uint64_t rows = 0;
  EXPECT(xcod_world_sample(world, 50, dir, 1, 1, &rows) == XCOD_OK);
  EXPECT(rows == 50);
  const uint32_t dims[2] = {8, 8};
  xcod_coder* coder = NULL;
  EXPECT(xcod_coder_create(2, dims, 6, 0, &coder) == XCOD_OK);
  double mean = -1.0, per_row[6];
  EXPECT(xcod_world_mmcs(world, coder, 0, &mean, per_row, 6) == XCOD_OK);
  EXPECT(mean >= 0.0 && mean <= 1.0);
  EXPECT(xcod_world_mmcs(world, coder, 0, &mean, per_row, 2) == XCOD_ERR_SHAPE_MISMATCH);
  xcod_coder_free(coder);
  xcod_world_free(world);

  xcod_run_options* opts = NULL;
  EXPECT(xcod_run_options_create(&opts) == XCOD_OK);
  EXPECT(xcod_run_options_set_seed(opts, 17) == XCOD_OK);
  EXPECT(xcod_run_options_add_override(opts, "{\"train\":{\"total_steps\":5}}") == XCOD_OK);
  char* text = NULL;
  EXPECT(xcod_run_options_resolve(opts, &text) == XCOD_OK);
  EXPECT(text != NULL && strstr(text, "\"total_steps\": 5") != NULL);
  EXPECT(text != NULL && strstr(text, "\"seed\": 17") != NULL);
  xcod_string_free(text);
  xcod_run_options_free(opts);
}

int main(int argc, char** argv) {
  const char* dir = argc > 1 ? argv[1] : ".";
  EXPECT(strlen(xcod_version()) > 0);
  coder_roundtrip();
  shard_roundtrip(dir);
  errors();
  world_and_config(dir);
  if (failures == 0) printf("capi: all checks passed\n");
  return failures == 0 ? 0 : 1;
}
