#ifndef HLC_H
#define HLC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Bit flags for [`hlc_simulate`].
 */
#define HLC_SMEARING 1

#define HLC_RECRUITMENT 2

/*
 Result codes of every fallible call.
 */
typedef enum HlcStatus {
  HLC_STATUS_OK = 0,
  /*
   A pointer was null, a string was not UTF-8 or a value was out of range.
   */
  HLC_STATUS_INVALID_ARGUMENT = 1,
  /*
   A file could not be read.
   */
  HLC_STATUS_IO = 2,
  /*
   A file or string was malformed.
   */
  HLC_STATUS_FORMAT = 3,
  /*
   The buffer sample rate is not supported.
   */
  HLC_STATUS_UNSUPPORTED_RATE = 4,
  /*
   The buffer is too short for the requested analysis.
   */
  HLC_STATUS_INPUT_TOO_SHORT = 5,
  /*
   The audiogram cannot be simulated.
   */
  HLC_STATUS_INVALID_AUDIOGRAM = 6,
  /*
   Any other library error, including caught panics.
   */
  HLC_STATUS_INTERNAL = 7,
} HlcStatus;

/*
 Audiogram at the eight standard frequencies.
 */
typedef struct HlcAudiogram HlcAudiogram;

/*
 Hearing-loss model.
 */
typedef struct HlcModel HlcModel;

/*
 Compensation network parameters.
 */
typedef struct HlcParams HlcParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Valid until the
 next call on the same thread.
 */
const char *hlc_last_error(void);

/*
 Library version as a static string.
 */
const char *hlc_version(void);

/*
 Builds the default hearing-loss model.

 # Safety
 `out` must be a valid pointer.
 */
enum HlcStatus hlc_model_new(struct HlcModel **out);

/*
 # Safety
 `model` must come from [`hlc_model_new`] or be null.
 */
void hlc_model_free(struct HlcModel *model);

/*
 Looks up a standard audiogram (`N1`..`N6`, `S1`..`S3`).

 # Safety
 `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HlcStatus hlc_audiogram_standard(const char *name, struct HlcAudiogram **out);

/*
 Builds an audiogram from thresholds in dB HL at 250, 500, 1k, 2k, 3k, 4k,
 6k and 8k Hz.

 # Safety
 `label` must be a NUL-terminated string, `thresholds` must point to eight
 values and `out` must be a valid pointer.
 */
enum HlcStatus hlc_audiogram_new(const char *label,
                                 const double *thresholds,
                                 struct HlcAudiogram **out);

/*
 # Safety
 `audiogram` must come from an audiogram constructor or be null.
 */
void hlc_audiogram_free(struct HlcAudiogram *audiogram);

/*
 Reads a parameter JSON file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HlcStatus hlc_params_read(const char *path, struct HlcParams **out);

/*
 Parses parameters from a JSON string.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HlcStatus hlc_params_from_json(const char *json, struct HlcParams **out);

/*
 # Safety
 `params` must come from a parameter constructor or be null.
 */
void hlc_params_free(struct HlcParams *params);

/*
 Runs the hearing-loss model on `len` samples; `components` is a mask of
 [`HLC_SMEARING`] and [`HLC_RECRUITMENT`]. Writes `len` samples to `out`.

 # Safety
 Handles must be valid; `input` and `out` must hold `len` samples.
 */
enum HlcStatus hlc_simulate(const struct HlcModel *model,
                            const struct HlcAudiogram *audiogram,
                            uint32_t components,
                            const double *input,
                            size_t len,
                            uint32_t rate,
                            double *out);

/*
 Applies compensation to `len` samples. `audiogram` may be null unless the
 parameters are listener-independent. Writes `len` samples to `out`.

 # Safety
 `params` must be valid, `audiogram` valid or null; `input` and `out` must
 hold `len` samples.
 */
enum HlcStatus hlc_compensate(const struct HlcParams *params,
                              const struct HlcAudiogram *audiogram,
                              const double *input,
                              size_t len,
                              uint32_t rate,
                              double *out);

/*
 STOI of `reference` against `processed` plus threshold noise
 `offset_db` below the hearing threshold, drawn from `seed`.

 # Safety
 Both buffers must hold `len` samples and `score` must be a valid pointer.
 */
enum HlcStatus hlc_stoi_thr(const double *reference,
                            const double *processed,
                            size_t len,
                            uint32_t rate,
                            double offset_db,
                            uint64_t seed,
                            double *score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HLC_H */
