#ifndef VMBH_VMBH_H
#define VMBH_VMBH_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VMBH_API __declspec(dllexport)
#else
#define VMBH_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vmbh_status {
  VMBH_OK = 0,
  VMBH_ERR_DIMENSION = 1,
  VMBH_ERR_CONTRACT = 2,
  VMBH_ERR_CONFIG = 3,
  VMBH_ERR_IO = 4,
  VMBH_ERR_FORMAT = 5,
  VMBH_ERR_NUMERIC = 6,
  VMBH_ERR_INVALID_ARGUMENT = 7,
  VMBH_ERR_INTERNAL = 8
} vmbh_status;

typedef struct vmbh_config vmbh_config;
typedef struct vmbh_model vmbh_model;
typedef struct vmbh_dataset vmbh_dataset;
typedef struct vmbh_rig vmbh_rig;

/* Message of the last failed call on this thread; empty after success. */
VMBH_API const char* vmbh_last_error(void);
VMBH_API const char* vmbh_status_name(vmbh_status status);

/* Configuration. profile is "toy" or "full". */
VMBH_API vmbh_status vmbh_config_create(const char* profile, vmbh_config** out);
VMBH_API vmbh_status vmbh_config_load(const char* path, vmbh_config** out);
VMBH_API vmbh_status vmbh_config_from_json(const char* json, vmbh_config** out);
VMBH_API void vmbh_config_destroy(vmbh_config* config);
VMBH_API vmbh_status vmbh_config_set_seed(vmbh_config* config, uint64_t seed);
VMBH_API vmbh_status vmbh_config_set_epochs(vmbh_config* config, size_t epochs);
VMBH_API vmbh_status vmbh_config_set_learning_rate(vmbh_config* config, double lr);
VMBH_API vmbh_status vmbh_config_set_samples(vmbh_config* config, size_t samples);
typedef struct vmbh_config_summary {
  uint64_t seed;
  size_t epochs;
  size_t samples;
  double learning_rate;
} vmbh_config_summary;
VMBH_API vmbh_status vmbh_config_summarize(const vmbh_config* config, vmbh_config_summary* out);
/* Writes the config as JSON into buf (NUL-terminated). *needed receives the
   full length including the terminator; VMBH_ERR_INVALID_ARGUMENT if it does
   not fit. buf == NULL with size 0 only queries the length. */
VMBH_API vmbh_status vmbh_config_to_json(const vmbh_config* config, char* buf, size_t size, size_t* needed);

/* Model. */
VMBH_API vmbh_status vmbh_model_create(const vmbh_config* config, vmbh_model** out);
VMBH_API void vmbh_model_destroy(vmbh_model* model);
VMBH_API vmbh_status vmbh_model_param_count(const vmbh_model* model, uint64_t* out);
VMBH_API vmbh_status vmbh_model_save(const vmbh_model* model, const char* path);
VMBH_API vmbh_status vmbh_model_load(vmbh_model* model, const char* path);

/* Forward pass on one [3,H,W] image (row-major). Outputs may be NULL; sizes
   are 48 (theta), 10 (beta), 63 (joints, mm), V*3 (vertices, mm), 3 (T_rel). */
typedef struct vmbh_hand_result {
  double* theta;
  double* beta;
  double* joints;
  double* vertices;
} vmbh_hand_result;
VMBH_API vmbh_status vmbh_model_forward(const vmbh_model* model, const double* image, size_t image_len,
                                        vmbh_hand_result* left, vmbh_hand_result* right, double* t_rel);
VMBH_API vmbh_status vmbh_model_vertex_count(const vmbh_model* model, size_t* out);

/* Analytic parameter and FLOP count of a configuration. */
VMBH_API vmbh_status vmbh_count(const vmbh_config* config, uint64_t* params, uint64_t* flops);

/* Synthetic data. */
VMBH_API vmbh_status vmbh_dataset_generate(const vmbh_model* model, size_t samples, uint64_t seed,
                                           vmbh_dataset** out);
VMBH_API vmbh_status vmbh_dataset_load(const char* path, vmbh_dataset** out);
VMBH_API vmbh_status vmbh_dataset_save(const vmbh_dataset* data, const char* path);
VMBH_API vmbh_status vmbh_dataset_size(const vmbh_dataset* data, size_t* out);
VMBH_API void vmbh_dataset_destroy(vmbh_dataset* data);

/* Training and evaluation. */
typedef struct vmbh_step {
  size_t step;
  size_t epoch;
  double lr;
  double total;
  double terms[9];
} vmbh_step;
typedef void (*vmbh_step_fn)(const vmbh_step* step, void* user);

typedef struct vmbh_metrics {
  double mpjpe_single, mpjpe_two, mpjpe_all;
  double mpvpe_single, mpvpe_two, mpvpe_all;
  size_t count_single, count_two;
  double loss;
} vmbh_metrics;

typedef struct vmbh_train_report {
  vmbh_metrics initial;
  vmbh_metrics final;
  size_t steps;
} vmbh_train_report;

/* Trains for `epochs`; writes the loss trace CSV to loss_csv_path when it is
   not NULL and calls on_step after every optimizer step when given. */
VMBH_API vmbh_status vmbh_train(vmbh_model* model, const vmbh_dataset* data, size_t epochs,
                                const char* loss_csv_path, vmbh_step_fn on_step, void* user,
                                vmbh_train_report* report);
VMBH_API vmbh_status vmbh_evaluate(const vmbh_model* model, const vmbh_dataset* data, vmbh_metrics* out);
VMBH_API vmbh_status vmbh_write_metrics_csv(const vmbh_metrics* metrics, const char* split, const char* path);

/* Finite-difference gradient suite. fault_op names an op whose backward rule
   is deliberately corrupted for the run (NULL or "" for none). */
typedef void (*vmbh_gradcheck_fn)(const char* op, double max_rel_err, double tolerance, int passed, void* user);
VMBH_API vmbh_status vmbh_gradcheck(const vmbh_config* config, uint64_t seed, const char* fault_op,
                                    vmbh_gradcheck_fn on_result, void* user, int* all_passed);
VMBH_API size_t vmbh_gradcheck_op_count(void);
VMBH_API const char* vmbh_gradcheck_op_name(size_t index);

/* Selective scan versus dense quadratic operator. */
typedef struct vmbh_bench_row {
  size_t seq;
  uint64_t scan_flops;
  uint64_t dense_flops;
  double scan_seconds;
  double dense_seconds;
} vmbh_bench_row;
typedef void (*vmbh_bench_fn)(const vmbh_bench_row* row, void* user);
VMBH_API vmbh_status vmbh_bench_scan(const size_t* seq_lengths, size_t count, size_t channels, size_t state,
                                     uint64_t seed, vmbh_bench_fn on_row, void* user);

/* Hand rigs. */
/* The rig a configuration resolves to: procedural from its seed, or loaded
   from the JSON file named by hand_model. */
VMBH_API vmbh_status vmbh_rig_from_config(const vmbh_config* config, vmbh_rig** out);
VMBH_API vmbh_status vmbh_rig_create_default(uint64_t seed, size_t vertices, vmbh_rig** out);
VMBH_API vmbh_status vmbh_rig_load_json(const char* path, vmbh_rig** out);
VMBH_API vmbh_status vmbh_rig_save_json(const vmbh_rig* rig, const char* path);
VMBH_API vmbh_status vmbh_rig_vertex_count(const vmbh_rig* rig, size_t* out);
VMBH_API void vmbh_rig_destroy(vmbh_rig* rig);

#ifdef __cplusplus
}
#endif

#endif
