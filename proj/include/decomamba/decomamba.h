#ifndef DECOMAMBA_H
#define DECOMAMBA_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define DM_API __declspec(dllexport)
#else
#define DM_API __attribute__((visibility("default")))
#endif

typedef enum dm_status {
  DM_OK = 0,
  DM_ERR_INVALID_ARGUMENT = 1,
  DM_ERR_CONFIG = 2,
  DM_ERR_SHAPE = 3,
  DM_ERR_NUMERIC = 4,
  DM_ERR_IO = 5,
  DM_ERR_FORMAT = 6,
  DM_ERR_INCOMPATIBLE = 7, /* checkpoint and data or image disagree */
  DM_ERR_CHECK_FAILED = 8, /* a gradient check or bench assertion failed */
  DM_ERR_INTERNAL = 9
} dm_status;

typedef struct dm_model dm_model;

/* Receives one report or log line (no trailing newline). */
typedef void (*dm_line_fn)(const char* line, void* user);

DM_API const char* dm_version(void);
DM_API const char* dm_status_name(dm_status status);
/* Message of the last failing call on this thread; "" after a success. */
DM_API const char* dm_last_error(void);
/* Effective thread cap (DM_THREADS, else the hardware concurrency). */
DM_API int dm_thread_count(void);

/* ------------------------------------------------------------ model handle */

/* config_json: a model config object, optionally {"preset": "v0"|"v1"|"desk", ...overrides}. */
DM_API dm_status dm_model_create(const char* config_json, dm_model** out);
DM_API dm_status dm_model_load(const char* checkpoint_path, dm_model** out);
/* Parameters and buffers only; optimizer state is not part of a handle. */
DM_API dm_status dm_model_save(const dm_model* model, const char* checkpoint_path);
DM_API void dm_model_free(dm_model* model);

DM_API dm_status dm_model_input_shape(const dm_model* model, int64_t* channels, int64_t* height,
                                      int64_t* width, int64_t* num_classes);
DM_API dm_status dm_model_param_count(const dm_model* model, int64_t* out);
/* Multiply-accumulates of one forward pass at batch 1. */
DM_API dm_status dm_model_flop_count(const dm_model* model, uint64_t* out);
DM_API dm_status dm_model_describe(const dm_model* model, dm_line_fn line, void* user);
/* images [batch,C,H,W] -> softmax probabilities [batch,N,H,W], eval mode. */
DM_API dm_status dm_model_forward(const dm_model* model, const float* images, int64_t batch,
                                  float* probs_out);

/* ---------------------------------------------------------------- commands */

DM_API dm_status dm_train(const char* config_path, dm_line_fn line, void* user);
/* split: "val", "train" or "all". */
DM_API dm_status dm_eval(const char* checkpoint_path, const char* data_dir, const char* split,
                         dm_line_fn line, void* user);
/* filter selects cases by substring ("" for all); inject_fault names an op whose
   backward is sign-flipped for the run ("" for none). DM_ERR_CHECK_FAILED if any row fails. */
DM_API dm_status dm_gradcheck(const char* filter, const char* inject_fault, dm_line_fn line,
                              void* user);
/* what: "all", "scan", "forward", "counts" or "conv". */
DM_API dm_status dm_bench(const char* what, dm_line_fn line, void* user);
/* spec_json may be NULL or an object with any of count, val_count, height, width,
   num_classes, channels, noise; count overrides spec_json when >= 0. */
DM_API dm_status dm_synth(const char* out_dir, int64_t count, uint64_t seed, const char* spec_json,
                          dm_line_fn line, void* user);
/* Writes the argmax mask as PGM. prob_path (may be NULL) receives the class
   probabilities. A wrong-size image is resized when resize != 0, else rejected. */
DM_API dm_status dm_predict(const char* checkpoint_path, const char* image_path, const char* out_pgm,
                            const char* prob_path, int resize, dm_line_fn line, void* user);
/* Accepts a training config or a bare model config. */
DM_API dm_status dm_describe_config(const char* config_path, dm_line_fn line, void* user);

#ifdef __cplusplus
}
#endif

#endif /* DECOMAMBA_H */
