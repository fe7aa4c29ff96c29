#ifndef DELIB_H
#define DELIB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DelibStatus {
  DELIB_STATUS_OK = 0,
  DELIB_STATUS_INVALID_ARGUMENT = 1,
  DELIB_STATUS_NOT_FOUND = 2,
  DELIB_STATUS_INVARIANT = 3,
  DELIB_STATUS_CONFLICT = 4,
  DELIB_STATUS_UNAUTHORIZED = 5,
  DELIB_STATUS_FORBIDDEN = 6,
  DELIB_STATUS_UPSTREAM = 7,
  DELIB_STATUS_INTERNAL = 8,
  DELIB_STATUS_PANIC = 9,
} DelibStatus;

/**
 * Opaque platform handle.
 */
typedef struct DelibPlatform DelibPlatform;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens a platform. `config_toml` may be null for an in-memory platform with
 * the deterministic mock gateway.
 *
 * # Safety
 * `config_toml` is null or a NUL-terminated string; `out` is writable.
 */
enum DelibStatus delib_platform_open(const char *config_toml, struct DelibPlatform **out);

/**
 * # Safety
 * `p` is null or a handle from `delib_platform_open`, freed at most once.
 */
void delib_platform_free(struct DelibPlatform *p);

/**
 * # Safety
 * `s` is null or a string returned by this library, freed at most once.
 */
void delib_string_free(char *s);

/**
 * JSON error body of the last failed call on this thread, or null. Owned by
 * the library; valid until the next call on this thread.
 */
const char *delib_last_error(void);

const char *delib_version(void);

/**
 * Sequence number of the last logged record, 0 for a null handle.
 *
 * # Safety
 * `p` is null or a live handle.
 */
uint64_t delib_seq(const struct DelibPlatform *p);

/**
 * Applies one command given as `{"kind": ..., "payload": ...}` and returns
 * the outcome JSON.
 *
 * # Safety
 * Pointers are valid; strings NUL-terminated.
 */
enum DelibStatus delib_execute(const struct DelibPlatform *p,
                               const char *command_json,
                               char **out_json);

/**
 * # Safety
 * Pointers are valid; strings NUL-terminated.
 */
enum DelibStatus delib_create_discussion(const struct DelibPlatform *p,
                                         const char *title,
                                         const char *focal_question,
                                         const char *author,
                                         char **out_id);

/**
 * Uploads a transcript (`{event_title, language, segments}`) and opens an
 * import session into `discussion_id`. Returns `{transcript_id, session_id}`.
 *
 * # Safety
 * Pointers are valid; strings NUL-terminated.
 */
enum DelibStatus delib_ingest_transcript(const struct DelibPlatform *p,
                                         const char *transcript_json,
                                         const char *discussion_id,
                                         const char *actor,
                                         char **out_json);

/**
 * Runs the classifier over an uploaded session; returns the session JSON.
 *
 * # Safety
 * Pointers are valid; strings NUL-terminated.
 */
enum DelibStatus delib_analyze(const struct DelibPlatform *p,
                               const char *session_id,
                               const char *actor,
                               char **out_json);

/**
 * # Safety
 * Pointers are valid; strings NUL-terminated.
 */
enum DelibStatus delib_clusters(const struct DelibPlatform *p,
                                const char *discussion_id,
                                uint32_t k,
                                char **out_json);

/**
 * Distills and records recommendations at `k`. A negative threshold selects
 * the default.
 *
 * # Safety
 * Pointers are valid; strings NUL-terminated.
 */
enum DelibStatus delib_distill(const struct DelibPlatform *p,
                               const char *discussion_id,
                               uint32_t k,
                               double threshold,
                               char **out_json);

/**
 * `style` is executive, analytical or narrative. With `markdown` nonzero the
 * result is Markdown rather than JSON.
 *
 * # Safety
 * Pointers are valid; strings NUL-terminated.
 */
enum DelibStatus delib_report(const struct DelibPlatform *p,
                              const char *discussion_id,
                              const char *style,
                              int32_t markdown,
                              char **out);

/**
 * Records one reflection `{event_id, participant, card_id, t_ms}`; returns
 * admission, alerts and drafted prompts.
 *
 * # Safety
 * Pointers are valid; strings NUL-terminated.
 */
enum DelibStatus delib_reflect(const struct DelibPlatform *p,
                               const char *event_json,
                               char **out_json);

/**
 * Audience snapshot when `facilitator` is zero, facilitator snapshot otherwise.
 *
 * # Safety
 * Pointers are valid; strings NUL-terminated.
 */
enum DelibStatus delib_event_snapshot(const struct DelibPlatform *p,
                                      const char *event_id,
                                      int32_t facilitator,
                                      char **out_json);

/**
 * Integrity violations as a JSON array of strings; empty when clean.
 *
 * # Safety
 * Pointers are valid.
 */
enum DelibStatus delib_verify(const struct DelibPlatform *p, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELIB_H */
