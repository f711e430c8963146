/* C interface to the bonenet library. All functions are safe to call from
 * C; strings are UTF-8 and NUL-terminated. */
#ifndef BONENET_BONENET_H
#define BONENET_BONENET_H

#include <stddef.h>
#include <stdint.h>

#if defined(BONENET_BUILDING)
#define BN_API __attribute__((visibility("default")))
#else
#define BN_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bn_status {
  BN_OK = 0,
  BN_ERR_USAGE = 1,      /* bad arguments to the call itself */
  BN_ERR_INVALID = 2,    /* validation, data, format or I/O error */
  BN_ERR_DIVERGED = 3    /* training produced a non-finite loss */
} bn_status;

typedef struct bn_config bn_config;
typedef struct bn_model bn_model;

/* Message for the last failing call on this thread ("" if none). */
BN_API const char* bn_last_error(void);
BN_API const char* bn_version(void);
BN_API void bn_string_free(char* s);

BN_API bn_status bn_config_default(bn_config** out);
BN_API bn_status bn_config_parse(const char* json_text, bn_config** out);
BN_API bn_status bn_config_load(const char* path, bn_config** out);
BN_API void bn_config_free(bn_config* cfg);
BN_API bn_status bn_config_set_seed(bn_config* cfg, uint64_t seed);
BN_API bn_status bn_config_set_data_dir(bn_config* cfg, const char* dir);
/* Canonical JSON of the fully defaulted config; free with bn_string_free. */
BN_API bn_status bn_config_to_json(const bn_config* cfg, char** out);
/* 64 hex characters plus NUL of the model + train fingerprint. */
BN_API bn_status bn_config_fingerprint(const bn_config* cfg, char out_hex[65]);

BN_API bn_status bn_generate(const bn_config* cfg, const char* out_dir, size_t* rows_written);

typedef void (*bn_epoch_fn)(int epoch, double train_loss, double val_mae, double lr, void* user);

typedef struct bn_train_summary {
  int epochs_run;
  int best_epoch;
  double best_val_mae;
  double final_lr;
  double test_mae;
  uint64_t param_count;
} bn_train_summary;

/* arch: "hier" | "plain"; region: "full" | "upper" | "lower". */
BN_API bn_status bn_train(const bn_config* cfg, const char* arch, const char* region, const char* out_dir,
                          bn_epoch_fn on_epoch, void* user, bn_train_summary* summary);

BN_API bn_status bn_model_load(const char* checkpoint, bn_model** out);
BN_API void bn_model_free(bn_model* model);
BN_API uint64_t bn_model_param_count(const bn_model* model, int trainable_only);
/* Learnable parameters of the connection tapping `block`, 0 if none. */
BN_API uint64_t bn_model_connection_params(const bn_model* model, int block);

/* Evaluates a checkpoint or ensemble descriptor on a manifest. The report
 * CSV (group,count,mae) is returned in *report_csv when non-null; with
 * out_dir set, eval.csv and predictions.csv are written there too. */
BN_API bn_status bn_evaluate(const char* model_path, const char* manifest, int by_gender, const char* out_dir,
                             double* mae, char** report_csv);

/* mode: "late" | "early". head_epochs <= 0 uses the config's epoch count. */
BN_API bn_status bn_fuse(const bn_config* cfg, const char* mode, const char* const* checkpoints, size_t count,
                         const char* out_dir, int head_epochs, int unfreeze_members, bn_epoch_fn on_epoch,
                         void* user, char** descriptor_path);

/* *defined is 0 when the heatmap is identically zero (masses unset). */
BN_API bn_status bn_explain(const char* checkpoint, const char* image, const char* layer, const char* out_pgm,
                            double* upper_mass, double* lower_mass, int* defined);
BN_API bn_status bn_explain_manifest(const char* checkpoint, const char* manifest, const char* layer,
                                     const char* out_dir, size_t* images, size_t* undefined,
                                     double* median_upper_mass);

typedef void (*bn_gradcheck_fn)(const char* name, size_t cases, double max_rel_err, int passed, void* user);

BN_API bn_status bn_gradcheck(uint64_t seed, bn_gradcheck_fn on_result, void* user, int* all_passed);

#ifdef __cplusplus
}
#endif

#endif
