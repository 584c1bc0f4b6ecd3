#ifndef BELIEFKIT_H
#define BELIEFKIT_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum BkStatus {
  BK_STATUS_OK = 0,
  BK_STATUS_NULL_POINTER = 1,
  BK_STATUS_INVALID_UTF8 = 2,
  BK_STATUS_IO = 3,
  BK_STATUS_PARSE = 4,
  BK_STATUS_CONFIG = 5,
  BK_STATUS_INVALID = 6,
  BK_STATUS_INCOMPATIBLE = 7,
  BK_STATUS_NUMERIC = 8,
  BK_STATUS_PANIC = 9,
} BkStatus;

/**
 * A trained editor network.
 */
typedef struct BkEditor BkEditor;

/**
 * A task model.
 */
typedef struct BkModel BkModel;

/**
 * One split of a belief store.
 */
typedef struct BkStore BkStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *bk_last_error(void);

/**
 * Static, NUL-terminated library version.
 */
const char *bk_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum BkStatus bk_model_load(const char *path, struct BkModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum BkStatus bk_model_save(const struct BkModel *model, const char *path);

/**
 * Writes the model's output for a whitespace-tokenized input.
 *
 * # Safety
 * `model` must come from this library; `input` must be NUL-terminated.
 */
enum BkStatus bk_model_predict(const struct BkModel *model, const char *input, char **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum BkStatus bk_editor_load(const char *path, struct BkEditor **out);

/**
 * Applies one editor update with `k` inner steps; the input model is unchanged.
 *
 * # Safety
 * Handles must come from this library; strings must be NUL-terminated.
 */
enum BkStatus bk_model_edit(const struct BkModel *model,
                            const struct BkEditor *editor,
                            const char *input,
                            const char *desired,
                            size_t k,
                            struct BkModel **out);

/**
 * Applies one optimizer-baseline update. `optimizer` is `adamw`, `sgd` or `rmsprop`.
 *
 * # Safety
 * `model` must come from this library; strings must be NUL-terminated.
 */
enum BkStatus bk_model_edit_baseline(const struct BkModel *model,
                                     const char *optimizer,
                                     double lr,
                                     size_t max_steps,
                                     const char *input,
                                     const char *desired,
                                     struct BkModel **out);

/**
 * Loads one JSONL store split. `split` is `train`, `dev` or `test`.
 *
 * # Safety
 * Strings must be NUL-terminated and `out` a writable pointer.
 */
enum BkStatus bk_store_load(const char *path, const char *split, struct BkStore **out);

/**
 * Record count, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or come from this library.
 */
size_t bk_store_len(const struct BkStore *store);

/**
 * Runs the sequential update protocol and writes the summary as JSON. A
 * null `editor` evaluates the no-op updater.
 *
 * # Safety
 * Handles must be null where allowed or come from this library.
 */
enum BkStatus bk_evaluate(const struct BkModel *model,
                          const struct BkEditor *editor,
                          const struct BkStore *store,
                          size_t r_test,
                          size_t k,
                          uint64_t seed,
                          char **out_json);

/**
 * # Safety
 * `model` must be null or come from this library, and not be used again.
 */
void bk_model_free(struct BkModel *model);

/**
 * # Safety
 * `editor` must be null or come from this library, and not be used again.
 */
void bk_editor_free(struct BkEditor *editor);

/**
 * # Safety
 * `store` must be null or come from this library, and not be used again.
 */
void bk_store_free(struct BkStore *store);

/**
 * # Safety
 * `s` must be null or a string returned by this library, and not be used again.
 */
void bk_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BELIEFKIT_H */
