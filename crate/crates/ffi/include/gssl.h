#ifndef GSSL_H
#define GSSL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define GSSL_OK 0

// Invalid configuration: bad JSON, unknown key, out-of-range value.
#define GSSL_ERR_CONFIG 1

// Missing, unreadable or malformed data files.
#define GSSL_ERR_DATA 2

// Failures during training or evaluation, including non-finite losses.
#define GSSL_ERR_RUNTIME 3

// A null pointer, invalid UTF-8 or an unknown enumeration value.
#define GSSL_ERR_ARGUMENT 4

// An internal panic was caught at the boundary.
#define GSSL_ERR_PANIC 5

#define GSSL_TASK_DEFAULT -1

#define GSSL_TASK_NODE_CLF 0

#define GSSL_TASK_GRAPH_CLF 1

#define GSSL_TASK_CLUSTER 2

#define GSSL_TASK_SEARCH 3

#define GSSL_FORMAT_BINARY 0

#define GSSL_FORMAT_CSV 1

// A parsed and validated run configuration.
typedef struct GsslConfig GsslConfig;

// A loaded node graph or graph collection.
typedef struct GsslDataset GsslDataset;

// A table of embeddings with one row per node or graph.
typedef struct GsslEmbeddings GsslEmbeddings;

// A model built from a configuration, trained or restored from a checkpoint.
typedef struct GsslModel GsslModel;

// Summary of a training run.
typedef struct GsslTrainSummary {
  size_t epochs_run;
  // 1-based epoch whose parameters were kept.
  size_t best_epoch;
  double best_loss;
  bool stopped_early;
} GsslTrainSummary;

// Headline numbers of an evaluation; the full result is available as JSON.
typedef struct GsslEvalSummary {
  double mean;
  double std;
  size_t n_folds;
} GsslEvalSummary;

// Library version as a static nul-terminated string.
const char *gssl_version(void);

// Message of the calling thread's last failure, or null if none occurred.
const char *gssl_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void gssl_string_free(char *s);

// Parses configuration JSON text.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
int32_t gssl_config_parse(const char *json, struct GsslConfig **out);

// Reads and parses a configuration file.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
int32_t gssl_config_load(const char *path, struct GsslConfig **out);

// Canonical JSON of a configuration, with every default filled in.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable. Free the string with `gssl_string_free`.
int32_t gssl_config_to_json(const struct GsslConfig *cfg, char **out);

// Replaces the configuration's seed.
//
// # Safety
// `cfg` must be a live handle.
int32_t gssl_config_set_seed(struct GsslConfig *cfg, uint64_t seed);

// Replaces the directory datasets are looked up in.
//
// # Safety
// `cfg` must be a live handle; `root` a nul-terminated string.
int32_t gssl_config_set_data_root(struct GsslConfig *cfg, const char *root);

// # Safety
// `cfg` must be null or a handle not yet freed.
void gssl_config_free(struct GsslConfig *cfg);

// Loads the configured dataset, or generates it for the built-in demo name.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
int32_t gssl_dataset_load(const struct GsslConfig *cfg, struct GsslDataset **out);

// Number of items embedded for the dataset: nodes of a graph, or graphs of a collection.
//
// # Safety
// `data` must be a live handle; `n_items` and `n_features` must be writable.
int32_t gssl_dataset_shape(const struct GsslDataset *data, size_t *n_items, size_t *n_features);

// # Safety
// `data` must be null or a handle not yet freed.
void gssl_dataset_free(struct GsslDataset *data);

// Pretrains the configured method on `data`. `summary` may be null.
//
// # Safety
// `cfg` and `data` must be live handles; `out` must be writable; `summary` null or writable.
int32_t gssl_pretrain(const struct GsslConfig *cfg,
                      const struct GsslDataset *data,
                      struct GsslModel **out,
                      struct GsslTrainSummary *summary);

// Rebuilds the configured model for `data` and loads a checkpoint into it.
//
// # Safety
// `cfg` and `data` must be live handles; `path` a nul-terminated string; `out` writable.
int32_t gssl_model_load(const struct GsslConfig *cfg,
                        const struct GsslDataset *data,
                        const char *path,
                        struct GsslModel **out);

// Writes the model's parameters as a checkpoint file.
//
// # Safety
// `model` must be a live handle; `path` a nul-terminated string.
int32_t gssl_model_save(const struct GsslModel *model, const char *path);

// # Safety
// `model` must be null or a handle not yet freed.
void gssl_model_free(struct GsslModel *model);

// Embeds every node (or graph) of `data` with the model.
//
// # Safety
// `model` and `data` must be live handles; `out` writable.
int32_t gssl_embed(const struct GsslModel *model,
                   const struct GsslDataset *data,
                   struct GsslEmbeddings **out);

// Reads an embedding file in the given `GSSL_FORMAT_*` format.
//
// # Safety
// `path` must be a nul-terminated string; `out` writable.
int32_t gssl_embeddings_import(const char *path, int32_t format, struct GsslEmbeddings **out);

// Writes embeddings in the given `GSSL_FORMAT_*` format.
//
// # Safety
// `emb` must be a live handle; `path` a nul-terminated string.
int32_t gssl_embeddings_export(const struct GsslEmbeddings *emb, const char *path, int32_t format);

// Rows and columns of the table.
//
// # Safety
// `emb` must be a live handle; `n` and `d` writable.
int32_t gssl_embeddings_shape(const struct GsslEmbeddings *emb, size_t *n, size_t *d);

// Copies the values row-major into `values` (capacity `len`, at least n·d)
// and, when `ids` is not null, the row ids into `ids` (at least n).
//
// # Safety
// `emb` must be a live handle; `values` must hold `len` floats; `ids` null or holding n entries.
int32_t gssl_embeddings_copy(const struct GsslEmbeddings *emb,
                             float *values,
                             size_t len,
                             uint64_t *ids);

// # Safety
// `emb` must be null or a handle not yet freed.
void gssl_embeddings_free(struct GsslEmbeddings *emb);

// Scores embeddings on a `GSSL_TASK_*` task with the configured evaluator.
// `summary` and `json` may each be null; a returned JSON string is freed with `gssl_string_free`.
//
// # Safety
// `cfg`, `data` and `emb` must be live handles; `summary` and `json` null or writable.
int32_t gssl_evaluate(const struct GsslConfig *cfg,
                      const struct GsslDataset *data,
                      const struct GsslEmbeddings *emb,
                      int32_t task,
                      struct GsslEvalSummary *summary,
                      char **json);

// Pretrains, embeds and evaluates in one call, writing all artifacts into
// `out_dir`. `json` receives the result document when not null.
//
// # Safety
// `cfg` must be a live handle; `out_dir` a nul-terminated string; `json` null or writable.
int32_t gssl_reproduce(const struct GsslConfig *cfg,
                       const char *out_dir,
                       int32_t task,
                       char **json);

#endif  /* GSSL_H */
