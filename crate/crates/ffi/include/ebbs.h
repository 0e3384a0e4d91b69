#ifndef EBBS_H
#define EBBS_H

#include <stdbool.h>
#include <stddef.h>

// Result code of every exported function.
typedef enum EbbsStatus {
  EBBS_STATUS_OK = 0,
  // A required pointer argument was null.
  EBBS_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  EBBS_STATUS_INVALID_UTF8 = 2,
  // Bad settings, unknown path or language pair.
  EBBS_STATUS_CONFIG = 3,
  // Malformed input, unknown tokens or an unusable registry file.
  EBBS_STATUS_DATA = 4,
  // A panic was caught at the boundary.
  EBBS_STATUS_INTERNAL = 5,
} EbbsStatus;

typedef enum EbbsVoting {
  EBBS_VOTING_TOP_Z_SUM = 0,
  EBBS_VOTING_TOTAL_SUM = 1,
  EBBS_VOTING_MAX = 2,
  EBBS_VOTING_ZERO_ONE = 3,
} EbbsVoting;

typedef enum EbbsFinalScore {
  EBBS_FINAL_SCORE_TALLY = 0,
  EBBS_FINAL_SCORE_COMPONENT_MEAN = 1,
} EbbsFinalScore;

// Opaque handle to a loaded model registry.
typedef struct EbbsRegistry EbbsRegistry;

// Decoding settings. Obtain defaults from [`ebbs_decode_config_default`].
typedef struct EbbsDecodeConfig {
  size_t lower_beam;
  size_t upper_beam;
  double max_len_factor;
  size_t max_len_offset;
  bool length_normalize;
} EbbsDecodeConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a
// successful one. The pointer stays valid until the next call on the same
// thread.
const char *ebbs_last_error_message(void);

struct EbbsDecodeConfig ebbs_decode_config_default(void);

// Loads a registry manifest. Scorer files named in it resolve relative to
// the manifest's directory.
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for a write.
enum EbbsStatus ebbs_registry_load(const char *path, struct EbbsRegistry **out);

// # Safety
// `registry` must be null or a handle from [`ebbs_registry_load`] that has
// not been freed.
void ebbs_registry_free(struct EbbsRegistry *registry);

// # Safety
// `s` must be null or a string returned by this library.
void ebbs_string_free(char *s);

// Translates one input along a single path (`"direct"` or `"pivot:<lang>"`).
// `input_json` is a JSON array of source tokens. On success `*out_json`
// receives an object with `src`, `hyp`, `score`, `log_score`, `steps`,
// `forced_stop` and, for pivots, `intermediate`.
//
// # Safety
// All pointers must be valid; strings NUL-terminated.
enum EbbsStatus ebbs_translate(const struct EbbsRegistry *registry,
                               const char *src,
                               const char *tgt,
                               const char *path,
                               const char *input_json,
                               const struct EbbsDecodeConfig *config,
                               char **out_json);

// Ensemble decoding over a comma-separated list of paths, e.g.
// `"direct,pivot:en"`. Output format as for [`ebbs_translate`].
//
// # Safety
// All pointers must be valid; strings NUL-terminated.
enum EbbsStatus ebbs_ensemble_decode(const struct EbbsRegistry *registry,
                                     const char *src,
                                     const char *tgt,
                                     const char *paths,
                                     const char *input_json,
                                     const struct EbbsDecodeConfig *config,
                                     enum EbbsVoting voting,
                                     enum EbbsFinalScore final_score,
                                     char **out_json);

// Sentence BLEU in `[0, 1]` between two JSON arrays of token strings.
// An empty hypothesis scores 0; an empty reference is a data error.
//
// # Safety
// Strings must be NUL-terminated and `out` valid for a write.
enum EbbsStatus ebbs_sentence_bleu(const char *hyp_json, const char *ref_json, double *out);

// Minimum-Bayes-risk selection over a JSON array of candidates, each an
// array of token strings.
//
// # Safety
// `candidates_json` must be NUL-terminated; `out_index` and `out_utility`
// valid for writes.
enum EbbsStatus ebbs_mbr_select(const char *candidates_json,
                                size_t *out_index,
                                double *out_utility);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EBBS_H */
