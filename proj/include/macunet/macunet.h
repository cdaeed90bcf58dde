/* Public C API for libmacunet.
 *
 * All functions returning macu_status set a thread-local error message on
 * failure, readable via macu_last_error(). String outputs use the usual
 * two-call pattern: pass buf=NULL (or a too-small cap) to learn the required
 * size via *needed, then call again.
 */
#ifndef MACUNET_H
#define MACUNET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum macu_status {
  MACU_OK = 0,
  MACU_ERR_ARGUMENT = 1, /* bad pointer, flag, or value */
  MACU_ERR_IO = 2,       /* file could not be read or written */
  MACU_ERR_FORMAT = 3,   /* malformed image or checkpoint bytes */
  MACU_ERR_SHAPE = 4,    /* tensor dimensions do not line up */
  MACU_ERR_CONFIG = 5,   /* invalid network configuration */
  MACU_ERR_CHECKSUM = 6, /* checkpoint CRC mismatch */
  MACU_ERR_NUMERIC = 7,  /* non-finite values during optimization */
  MACU_ERR_UNKNOWN = 8
} macu_status;

typedef struct macu_net macu_net; /* opaque network handle (f32 weights) */

typedef struct macu_net_config {
  const char* variant; /* macu | mu | unet | unet_h | unet_v | acu */
  int32_t levels;      /* encoder depth N >= 2 */
  int32_t base_width;  /* channels at the finest level */
  int32_t classes;
  int32_t in_channels;
  int32_t cab_ratio; /* attention bottleneck ratio */
} macu_net_config;

typedef struct macu_train_options {
  int32_t epochs;
  int32_t batch_size;
  uint64_t seed;
  double lr;
  double lr_min;
  int64_t max_steps;     /* cap on total optimizer steps, -1 = none */
  const char* precision; /* "f32" | "f64" */
} macu_train_options;

typedef struct macu_bench_result {
  double median_ms_unfused;
  double median_ms_fused;
  int64_t macs_unfused; /* whole network, analytic */
  int64_t macs_fused;
  int64_t acb_macs_unfused; /* conv blocks only */
  int64_t acb_macs_fused;
} macu_bench_result;

const char* macu_version(void);
const char* macu_status_name(macu_status s);
/* Message from the most recent failing call on this thread ("" if none). */
const char* macu_last_error(void);

/* --- network lifecycle ------------------------------------------------- */

macu_status macu_net_create(const macu_net_config* cfg, uint64_t seed,
                            macu_net** out);
void macu_net_destroy(macu_net* net);

/* Collapse every asymmetric block into its single-kernel form. Idempotent. */
macu_status macu_net_fuse(macu_net* net);
int macu_net_is_fused(const macu_net* net);

/* cfg->variant is filled with a pointer to a static string. */
macu_status macu_net_config_of(const macu_net* net, macu_net_config* cfg);

macu_status macu_net_param_count(const macu_net* net, int fused,
                                 uint64_t* out);
/* Per-module table: "module,params" header, one row per module, then a
 * "total,N" row. */
macu_status macu_net_param_report(const macu_net* net, int fused, char* buf,
                                  size_t cap, size_t* needed);

macu_status macu_net_save(const macu_net* net, const char* path, int fused);
macu_status macu_net_load(const char* path, macu_net** out);

/* --- dataset ----------------------------------------------------------- */

macu_status macu_synth(const char* out_dir, int32_t count, int32_t size,
                       int32_t classes, uint64_t seed);
macu_status macu_tile(const char* in_dir, const char* out_dir, int32_t patch,
                      uint64_t* patches_out);
macu_status macu_split(const char* data_dir, uint64_t seed,
                       const char* out_file, uint64_t* train_out,
                       uint64_t* val_out, uint64_t* test_out);

/* --- training and evaluation ------------------------------------------- */

macu_status macu_train(const macu_net_config* cfg,
                       const macu_train_options* opt, const char* data_dir,
                       const char* split_file, const char* ckpt_out,
                       const char* log_csv /* may be NULL */);

/* Pooled metrics over one subset ("train" | "val" | "test"); the report text
 * lands in buf. */
macu_status macu_evaluate(const char* ckpt, const char* data_dir,
                          const char* split_file, const char* subset,
                          char* buf, size_t cap, size_t* needed);

/* Segment one PPM into a PGM label mask; color_ppm (optional) gets a
 * palette rendering. With use_fused and an unfused checkpoint the fused and
 * plain predictions are compared and *mismatch_out counts differing pixels;
 * it is -1 when no comparison was possible. */
macu_status macu_infer_file(const char* ckpt, const char* image,
                            const char* out_pgm,
                            const char* color_ppm /* may be NULL */,
                            int use_fused, int64_t* mismatch_out);

/* Rewrite an unfused checkpoint as a fused one. mac_ratio is the fused /
 * unfused multiply-accumulate ratio over the conv blocks. */
macu_status macu_fuse_file(const char* ckpt_in, const char* ckpt_out,
                           uint64_t* params_before, uint64_t* params_after,
                           double* mac_ratio);

/* --- verification ------------------------------------------------------ */

/* Finite-difference suite in f64. *all_pass is 1 iff every case passed;
 * per-case lines land in buf. end-to-end cases run at 10x tol. */
macu_status macu_gradcheck(double tol, int* all_pass, char* buf, size_t cap,
                           size_t* needed);

macu_status macu_bench(const macu_net_config* cfg, int32_t size, int32_t reps,
                       macu_bench_result* out);

#ifdef __cplusplus
}
#endif

#endif /* MACUNET_H */
