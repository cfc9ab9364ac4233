#ifndef BWQ_H
#define BWQ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum BwqStatus {
  BWQ_STATUS_OK = 0,
  BWQ_STATUS_NULL_POINTER = 1,
  BWQ_STATUS_INVALID_UTF8 = 2,
  BWQ_STATUS_CONFIG = 3,
  BWQ_STATUS_MODEL = 4,
  BWQ_STATUS_LAYOUT = 5,
  BWQ_STATUS_IO = 6,
  BWQ_STATUS_INTERNAL = 7,
} BwqStatus;

// A loaded quantized model.
typedef struct BwqModel BwqModel;

// Result of one simulated inference.
typedef struct BwqReport BwqReport;

// Dynamic energy of a simulated inference, in joules.
typedef struct BwqEnergy {
  double adc;
  double dac;
  double array;
  double buffer;
  double sa;
  double ctrl;
  double total;
} BwqEnergy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the calling thread's most recent failure, or NULL after a
// success. Valid until the next call on this thread.
const char *bwq_last_error(void);

// Library version as a static NUL-terminated string.
const char *bwq_version(void);

// Parse a model from JSON text.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum BwqStatus bwq_model_from_json(const char *json, struct BwqModel **out);

// Load a model file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum BwqStatus bwq_model_load(const char *path, struct BwqModel **out);

// Release a model. NULL is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void bwq_model_free(struct BwqModel *model);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum BwqStatus bwq_model_layer_count(const struct BwqModel *model, size_t *out);

// Weight compression over 32-bit weights and activation compression over
// 32-bit activations (using the narrowest layer).
//
// # Safety
// `model` must be a live handle; both outputs must be writable.
enum BwqStatus bwq_model_compression(const struct BwqModel *model, double *weight, double *act);

// Size of the per-block bitwidth table in bytes.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum BwqStatus bwq_model_lut_bytes(const struct BwqModel *model, uint64_t *out);

// OU utilization under `scheme` ("aware", "consecutive" or "same-ou") on
// the default crossbar with the model's OU size.
//
// # Safety
// `model` must be a live handle; `scheme` NUL-terminated; `out` writable.
enum BwqStatus bwq_model_utilization(const struct BwqModel *model, const char *scheme, double *out);

// Simulate one inference over seeded random activations and check it
// against the integer reference. `config_json` may be NULL for defaults.
//
// # Safety
// `model` must be a live handle; `config_json` NULL or NUL-terminated;
// `out` writable.
enum BwqStatus bwq_simulate(const struct BwqModel *model,
                            const char *config_json,
                            uint64_t seed,
                            struct BwqReport **out);

// Release a report. NULL is ignored.
//
// # Safety
// `report` must come from this library and not be used afterwards.
void bwq_report_free(struct BwqReport *report);

// Total OU activations and end-to-end latency in seconds.
//
// # Safety
// `report` must be a live handle; both outputs must be writable.
enum BwqStatus bwq_report_cycles(const struct BwqReport *report,
                                 uint64_t *cycles,
                                 double *latency_s);

// # Safety
// `report` must be a live handle; `out` must be writable.
enum BwqStatus bwq_report_energy(const struct BwqReport *report, struct BwqEnergy *out);

// Whether the simulated outputs equalled the integer reference.
//
// # Safety
// `report` must be a live handle; `out` must be writable.
enum BwqStatus bwq_report_verified(const struct BwqReport *report, bool *out);

// Per-layer CSV report; release the string with [`bwq_string_free`].
//
// # Safety
// `report` must be a live handle; `out` must be writable.
enum BwqStatus bwq_report_to_csv(const struct BwqReport *report, char **out);

// Release a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void bwq_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BWQ_H */
