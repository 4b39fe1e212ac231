/* C interface to the one-step video distillation library. */
#ifndef SFV_H
#define SFV_H

#include <stddef.h>
#include <stdint.h>

#if defined(SFV_BUILDING_LIBRARY)
#define SFV_API __attribute__((visibility("default")))
#else
#define SFV_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sfv_status {
  SFV_OK = 0,
  SFV_ERR_INVALID_ARGUMENT = 1,
  SFV_ERR_IO = 2,
  SFV_ERR_FORMAT = 3,
  SFV_ERR_CHECKSUM = 4,
  SFV_ERR_VERSION = 5,
  SFV_ERR_DIVERGED = 6,
  SFV_ERR_INTERNAL = 7
} sfv_status;

typedef enum sfv_model_kind { SFV_MODEL_TEACHER = 0, SFV_MODEL_STUDENT = 1 } sfv_model_kind;

typedef struct sfv_config sfv_config;
typedef struct sfv_dataset sfv_dataset;
typedef struct sfv_model sfv_model;

typedef struct sfv_dataset_stats {
  double mean;
  double stddev;
  double min;
  double max;
  double frame_diff;
} sfv_dataset_stats;

/* CSV column names of the progress lines. */
#define SFV_TEACHER_CSV_HEADER "step,loss"
#define SFV_DISTILL_CSV_HEADER "step,adv_g,recon,total_g,adv_d_real,adv_d_fake,r1,total_d"

/* Called after every training step with one CSV line. Return nonzero to stop
   early; the model is then returned as of that step. */
typedef int (*sfv_progress_fn)(void* user, int64_t step, const char* csv_line);

/* Version string "major.minor.patch+rev". */
SFV_API const char* sfv_version(void);
/* Message of the last failed call on this thread. */
SFV_API const char* sfv_last_error(void);
/* Strings returned through char** are released with this. */
SFV_API void sfv_string_free(char* s);

/* Key=value configuration. Keys use prefixes: net., teacher., distill.,
   schedule., data. Unset keys take library defaults. */
SFV_API sfv_status sfv_config_new(sfv_config** out);
SFV_API sfv_status sfv_config_load(sfv_config* cfg, const char* path);
SFV_API sfv_status sfv_config_parse(sfv_config* cfg, const char* text);
SFV_API sfv_status sfv_config_set(sfv_config* cfg, const char* key, const char* value);
SFV_API sfv_status sfv_config_get(const sfv_config* cfg, const char* key, char** out);
SFV_API sfv_status sfv_config_dump(const sfv_config* cfg, char** out);
/* Like sfv_config_dump, with every known key filled in (defaults included). */
SFV_API sfv_status sfv_config_resolve(const sfv_config* cfg, char** out);
SFV_API void sfv_config_free(sfv_config* cfg);

/* Float32 clips [B, N, C, H, W]. */
SFV_API sfv_status sfv_dataset_generate(const sfv_config* cfg, int64_t count, uint64_t seed, sfv_dataset** out);
SFV_API sfv_status sfv_dataset_read(const char* path, sfv_dataset** out);
SFV_API sfv_status sfv_dataset_write(const sfv_dataset* ds, const char* path);
SFV_API sfv_status sfv_dataset_from_data(const int64_t dims[5], const float* data, sfv_dataset** out);
SFV_API sfv_status sfv_dataset_slice(const sfv_dataset* ds, int64_t start, int64_t count, sfv_dataset** out);
SFV_API sfv_status sfv_dataset_dims(const sfv_dataset* ds, int64_t dims[5]);
SFV_API const float* sfv_dataset_data(const sfv_dataset* ds);
SFV_API sfv_status sfv_dataset_stats_get(const sfv_dataset* ds, sfv_dataset_stats* out);
SFV_API void sfv_dataset_free(sfv_dataset* ds);

/* Teacher pretraining. `resume` may be NULL; otherwise training continues
   from that teacher's step counter. */
SFV_API sfv_status sfv_pretrain(const sfv_config* cfg, const sfv_dataset* data, const sfv_model* resume,
                                sfv_progress_fn progress, void* user, sfv_model** out);
/* Adversarial distillation. `start` is a teacher (fresh student) or a student
   (resumed run). */
SFV_API sfv_status sfv_distill(const sfv_config* cfg, const sfv_model* start, const sfv_dataset* data,
                               sfv_progress_fn progress, void* user, sfv_model** out);

SFV_API sfv_status sfv_model_load(const char* path, sfv_model** out);
SFV_API sfv_status sfv_model_save(const sfv_model* model, const char* path);
SFV_API sfv_model_kind sfv_model_get_kind(const sfv_model* model);
SFV_API int64_t sfv_model_step(const sfv_model* model);
SFV_API int64_t sfv_model_parameter_count(const sfv_model* model);
SFV_API sfv_status sfv_model_meta(const sfv_model* model, char** out);
SFV_API void sfv_model_free(sfv_model* model);

/* One clip per clip of `cond_source`, conditioned on its first frame.
   steps == 1: one-step sampling; steps >= 2: Euler with guidance `cfg_scale`. */
SFV_API sfv_status sfv_sample(const sfv_model* model, const sfv_dataset* cond_source, int steps, double cfg_scale,
                              uint64_t seed, int64_t batch, sfv_dataset** out, int64_t* forwards_per_clip);

/* MetricsReport JSON: toy-FVD of `generated` vs `real`, collapse metrics
   against `cond_source` (the clips whose first frames conditioned generation). */
SFV_API sfv_status sfv_eval(const sfv_dataset* generated, const sfv_dataset* real, const sfv_dataset* cond_source,
                            char** json);

/* Latency rows for the 25/16/8/4-step guided teacher and the one-step student,
   batch = number of clips in cond_source. */
SFV_API sfv_status sfv_bench(const sfv_model* teacher, const sfv_model* student, const sfv_dataset* cond_source,
                             int repetitions, int warmup, uint64_t seed, char** json);

SFV_API sfv_status sfv_write_contact_sheet(const sfv_dataset* ds, const char* path, int scale, int64_t max_clips);

#ifdef __cplusplus
}
#endif

#endif
