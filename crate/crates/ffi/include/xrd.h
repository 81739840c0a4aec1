#ifndef XRD_H
#define XRD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum XrdStatus {
  XRD_STATUS_OK = 0,
  XRD_STATUS_NULL_POINTER = 1,
  XRD_STATUS_INVALID_ARGUMENT = 2,
  XRD_STATUS_CONFIG = 3,
  XRD_STATUS_BUFFER_TOO_SMALL = 4,
  XRD_STATUS_INTERNAL = 5,
} XrdStatus;

// Opaque simulator handle.
typedef struct XrdWorld XrdWorld;

// Aggregate counts of one simulated round.
typedef struct XrdRoundSummary {
  uint64_t round;
  uint64_t active_conversations;
  uint64_t delivered_conversations;
  uint64_t failed_conversations;
  uint64_t loopbacks_sent;
  uint64_t loopbacks_returned;
  uint64_t detections;
  uint64_t aborted_chains;
} XrdRoundSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Owned by the library.
const char *xrd_last_error(void);

// Smallest chain length `k` with `n · f^k < 2^-lambda`.
//
// # Safety
// `out_k` must be null or valid for writes.
enum XrdStatus xrd_compute_chain_length(double f, uint64_t n, uint32_t lambda, uint32_t *out_k);

// Smallest `ell` with `ell(ell+1)/2 >= n`.
uint32_t xrd_compute_ell(uint32_t n);

// Writes the chain set of `group` into `out` (capacity `cap`) and its length
// into `out_len`. With too little room, only `out_len` is written.
//
// # Safety
// `out` must be valid for `cap` writes unless `cap` is 0; `out_len` must be valid.
enum XrdStatus xrd_chains_for_group(uint32_t group,
                                    uint32_t ell,
                                    uint32_t n,
                                    uint32_t *out,
                                    size_t cap,
                                    size_t *out_len);

// The chain two groups meet on.
//
// # Safety
// `out_chain` must be valid for writes.
enum XrdStatus xrd_intersect_chain(uint32_t group_a,
                                   uint32_t group_b,
                                   uint32_t ell,
                                   uint32_t n,
                                   uint32_t *out_chain);

// Monte-Carlo fraction of conversations whose chain contains a failed server.
//
// # Safety
// `out_fraction` must be valid for writes.
enum XrdStatus xrd_availability_sim(uint32_t servers,
                                    uint32_t k,
                                    double q,
                                    uint64_t trials,
                                    uint64_t seed,
                                    double *out_fraction);

// Builds a world from a TOML configuration.
//
// # Safety
// `config_toml` must be a valid NUL-terminated string; `out_world` must be valid.
enum XrdStatus xrd_world_new(const char *config_toml, struct XrdWorld **out_world);

// Runs the next round.
//
// # Safety
// `world` must come from [`xrd_world_new`]; `out` must be null or valid for writes.
enum XrdStatus xrd_world_run_round(struct XrdWorld *world, struct XrdRoundSummary *out);

// The last round's full report as one line of JSON; free with [`xrd_string_free`].
//
// # Safety
// `world` must come from [`xrd_world_new`]; `out_json` must be valid for writes.
enum XrdStatus xrd_world_last_report_json(const struct XrdWorld *world, char **out_json);

// Releases a world. Null is ignored.
//
// # Safety
// `world` must be null or come from [`xrd_world_new`] and not be freed already.
void xrd_world_free(struct XrdWorld *world);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or come from this library and not be freed already.
void xrd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XRD_H */
