/* C interface to the LGSP library. All functions return an lgsp_status;
 * on failure lgsp_last_error() describes the problem (per thread). */
#ifndef LGSP_H
#define LGSP_H

#include <stddef.h>

#if defined(_WIN32)
#define LGSP_API __declspec(dllexport)
#else
#define LGSP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lgsp_status {
  LGSP_OK = 0,
  LGSP_ERR_INVALID_ARGUMENT = 1,
  LGSP_ERR_IO = 2,
  LGSP_ERR_CONFIG = 3,
  LGSP_ERR_INVARIANT = 4,
  LGSP_ERR_CHECK_FAILED = 5,
  LGSP_ERR_INTERNAL = 6
} lgsp_status;

typedef struct lgsp_config lgsp_config;

LGSP_API const char* lgsp_last_error(void);
LGSP_API const char* lgsp_status_name(lgsp_status status);

/* Worker count for commands that read their config from a run directory
 * (train_novel, eval, export). 0 restores the default of one. */
LGSP_API void lgsp_set_threads(size_t threads);

/* Config handles. Every key of the documented schema has a default. */
LGSP_API lgsp_status lgsp_config_new(lgsp_config** out);
LGSP_API lgsp_status lgsp_config_parse(const char* text, lgsp_config** out);
LGSP_API lgsp_status lgsp_config_load(const char* path, lgsp_config** out);
LGSP_API void lgsp_config_free(lgsp_config* cfg);
LGSP_API lgsp_status lgsp_config_set(lgsp_config* cfg, const char* key, const char* value);
/* Copies the value (NUL-terminated) into buf when it fits; *needed gets the
 * required size including the terminator. */
LGSP_API lgsp_status lgsp_config_get(const lgsp_config* cfg, const char* key, char* buf, size_t cap, size_t* needed);
LGSP_API lgsp_status lgsp_config_resolved(const lgsp_config* cfg, char* buf, size_t cap, size_t* needed);
LGSP_API lgsp_status lgsp_config_validate(const lgsp_config* cfg);

/* Writes the synthetic dataset to out_dir (data.dir when NULL). */
LGSP_API lgsp_status lgsp_datagen(const lgsp_config* cfg, const char* out_dir, size_t* files);

/* Full protocol into run_dir; *avg receives the average session accuracy. */
LGSP_API lgsp_status lgsp_run(const lgsp_config* cfg, const char* run_dir, double* avg);
LGSP_API lgsp_status lgsp_train_base(const lgsp_config* cfg, const char* run_dir, double* acc);
LGSP_API lgsp_status lgsp_train_novel(const char* run_dir, size_t* session, double* acc);
LGSP_API lgsp_status lgsp_eval(const char* run_dir, double* acc);
LGSP_API lgsp_status lgsp_sweep_pool(const lgsp_config* cfg, const char* out_dir);

/* Writes the CSV report to csv_path (skipped when NULL). Returns
 * LGSP_ERR_CHECK_FAILED when any entry exceeds its tolerance. */
LGSP_API lgsp_status lgsp_grad_check(const lgsp_config* cfg, const char* csv_path, double* max_rel_error);

/* what: "cls", "prompts", "masks" or "local_prompts"; out_dir NULL means
 * <run_dir>/exports. *count receives the number of images written. */
LGSP_API lgsp_status lgsp_export(const char* run_dir, const char* what, const char* out_dir, size_t* count);

#ifdef __cplusplus
}
#endif

#endif
