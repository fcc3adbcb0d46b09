#ifndef MLR_H
#define MLR_H

/* C interface to the laminography reconstruction engine. All functions set a
 * thread-local error message readable via mlr_last_error(); functions that
 * return pointers return NULL on failure, functions that return int return
 * one of the MLR_* status codes. Strings returned as char* are heap copies
 * owned by the caller; release them with mlr_free(). */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  MLR_OK = 0,
  MLR_ERR_CONFIG = 1,  /* bad configuration, arguments or input shapes */
  MLR_ERR_IO = 2,      /* file or socket failure */
  MLR_ERR_RUNTIME = 3, /* internal failure */
  MLR_ERR_ABORTED = 4  /* solver divergence abort */
};

typedef struct mlr_config mlr_config;
typedef struct mlr_array mlr_array;   /* complex 3-d volume or stack */
typedef struct mlr_result mlr_result; /* reconstruction output */
typedef struct mlr_server mlr_server; /* memoization service */

const char* mlr_last_error(void);
void mlr_free(char* text);

/* ---- configuration (flat key=value model) ---- */
mlr_config* mlr_config_new(void);
mlr_config* mlr_config_from_file(const char* path);
int mlr_config_set(mlr_config* cfg, const char* key, const char* value);
char* mlr_config_dump(const mlr_config* cfg);
void mlr_config_free(mlr_config* cfg);

/* ---- arrays ---- */
mlr_array* mlr_array_load(const char* path);
int mlr_array_save(const mlr_array* a, const char* path);
int mlr_array_shape(const mlr_array* a, int64_t shape[3]);
/* Interleaved (re, im) doubles, row-major; length 2*d0*d1*d2. */
const double* mlr_array_data(const mlr_array* a);
void mlr_array_free(mlr_array* a);

/* ---- phantoms and the forward model ---- */
/* kind: "blocks", "shepp3d-like" or "random-smooth". */
mlr_array* mlr_make_phantom(const char* kind, int64_t d0, int64_t d1, int64_t d2,
                            uint64_t seed);
/* Projects a volume through the acquisition model of cfg's geometry. */
mlr_array* mlr_project(const mlr_config* cfg, const mlr_array* volume);

/* ---- reconstruction ---- */
/* reference may be NULL; when given, per-iteration reconstruction error and
 * accuracy are reported against it. Returns NULL only on setup errors; a
 * diverged solve still returns a result with mlr_result_aborted() == 1. */
mlr_result* mlr_reconstruct(const mlr_config* cfg, const mlr_array* data,
                            const mlr_array* reference);
const mlr_array* mlr_result_volume(const mlr_result* r);
char* mlr_result_csv(const mlr_result* r);
int mlr_result_aborted(const mlr_result* r);
char* mlr_result_abort_reason(const mlr_result* r);
void mlr_result_free(mlr_result* r);

/* ---- memoization server ---- */
/* port 0 picks an ephemeral port; read it back with mlr_server_port. */
mlr_server* mlr_server_start(const char* host, int port, int nlist, int nprobe,
                             int train_size);
int mlr_server_port(const mlr_server* s);
void mlr_server_stop(mlr_server* s); /* stops and frees */

/* ---- offload planning ---- */
/* trace_text is the phase/var/access trace; format is "plan" or "csv".
 * bandwidth is in bytes per millisecond. */
char* mlr_plan_offload(const char* trace_text, double bandwidth, const char* format);
/* LRU baseline under a fixed memory budget, same trace format. */
char* mlr_lru_baseline(const char* trace_text, double bandwidth, uint64_t budget_bytes);

/* ---- encoder training ---- */
/* Records operator-input chunks from a reference reconstruction of a seeded
 * phantom, trains the cnn encoder contrastively and writes the weights to
 * weights_out. Returns the epoch/train/holdout loss history as csv. */
char* mlr_train_encoder(const mlr_config* cfg, const char* phantom_kind, uint64_t seed,
                        const char* weights_out);

/* ---- memoization micro-benchmark ---- */
/* Times pure compute, misses, service hits and private-cache hits on the
 * configured geometry. Returns csv. */
char* mlr_bench(const mlr_config* cfg);

#ifdef __cplusplus
}
#endif

#endif /* MLR_H */
