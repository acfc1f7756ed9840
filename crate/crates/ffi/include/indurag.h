#ifndef INDURAG_H
#define INDURAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IndStatus {
  IND_STATUS_OK = 0,
  IND_STATUS_NULL_ARGUMENT = 1,
  IND_STATUS_INVALID_UTF8 = 2,
  IND_STATUS_INVALID_JSON = 3,
  IND_STATUS_CONFIG = 4,
  IND_STATUS_INGEST = 5,
  IND_STATUS_NOT_FOUND = 6,
  IND_STATUS_EMPTY_QUERY = 7,
  IND_STATUS_UNAVAILABLE = 8,
  IND_STATUS_INTERNAL = 9,
  IND_STATUS_PANIC = 10,
} IndStatus;

/**
 * Opaque engine handle.
 */
typedef struct IndEngine IndEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ind_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next `ind_*` call on the same thread.
 */
const char *ind_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void ind_string_free(char *s);

/**
 * Open an engine from engine configuration JSON; NULL means defaults.
 *
 * # Safety
 * `config_json` must be NULL or a NUL-terminated string; `out` must be a
 * valid pointer.
 */
enum IndStatus ind_engine_open(const char *config_json, struct IndEngine **out);

/**
 * Open an engine from a TOML or JSON service configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum IndStatus ind_engine_open_file(const char *path, struct IndEngine **out);

/**
 * # Safety
 * `engine` must be NULL or a handle from `ind_engine_open*`, not yet freed.
 */
void ind_engine_free(struct IndEngine *engine);

/**
 * Ingest one document. `format` is `markdown` (default when NULL) or
 * `plain`; `metadata_json` needs at least a `title`. `out_report_json`
 * may be NULL.
 *
 * # Safety
 * Pointers must be valid NUL-terminated strings or NULL where allowed.
 */
enum IndStatus ind_ingest(const struct IndEngine *engine,
                          const char *text_ptr,
                          const char *format,
                          const char *metadata_json,
                          char **out_report_json);

/**
 * # Safety
 * `doc_id` must be a NUL-terminated string; `out_removed` may be NULL.
 */
enum IndStatus ind_remove_document(const struct IndEngine *engine,
                                   const char *doc_id,
                                   size_t *out_removed);

/**
 * # Safety
 * `out_count` must be a valid pointer.
 */
enum IndStatus ind_index_count(const struct IndEngine *engine, size_t *out_count);

/**
 * Top-`k` chunks as a JSON array of
 * `{doc_id, chunk_id, title, heading_path, text, score}`.
 *
 * # Safety
 * `query` must be a NUL-terminated string; `out_json` a valid pointer.
 */
enum IndStatus ind_search(const struct IndEngine *engine,
                          const char *query,
                          size_t k,
                          char **out_json);

/**
 * # Safety
 * `out_session_id` must be a valid pointer.
 */
enum IndStatus ind_session_create(const struct IndEngine *engine, char **out_session_id);

/**
 * The session with its turns as JSON.
 *
 * # Safety
 * `session_id` must be a NUL-terminated string; `out_json` a valid pointer.
 */
enum IndStatus ind_session_get(const struct IndEngine *engine,
                               const char *session_id,
                               char **out_json);

/**
 * Deleting an unknown session succeeds.
 *
 * # Safety
 * `session_id` must be a NUL-terminated string.
 */
enum IndStatus ind_session_delete(const struct IndEngine *engine, const char *session_id);

/**
 * Answer a query within a session. The JSON result carries `answer`,
 * `citations` (`doc_id`, `chunk_id`, `title`), `refused`, `tools_used`,
 * `agents_used` and `agent_failures`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_json` a valid pointer.
 */
enum IndStatus ind_query(const struct IndEngine *engine,
                         const char *session_id,
                         const char *query,
                         char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INDURAG_H */
