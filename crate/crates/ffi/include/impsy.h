#ifndef IMPSY_H
#define IMPSY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ImpsyStatus {
  IMPSY_STATUS_OK = 0,
  IMPSY_STATUS_NULL_POINTER = 1,
  IMPSY_STATUS_INVALID_ARGUMENT = 2,
  IMPSY_STATUS_IO = 3,
  IMPSY_STATUS_CHECKSUM = 4,
  IMPSY_STATUS_INVALID_WEIGHTS = 5,
  IMPSY_STATUS_DIMENSION_MISMATCH = 6,
  IMPSY_STATUS_BUFFER_TOO_SMALL = 7,
  IMPSY_STATUS_INVALID_CONFIG = 8,
  IMPSY_STATUS_INVALID_OSC_ADDRESS = 9,
  IMPSY_STATUS_INTERNAL = 10,
} ImpsyStatus;

typedef enum ImpsyMidiKind {
  IMPSY_MIDI_KIND_NOTE_ON = 0,
  IMPSY_MIDI_KIND_NOTE_OFF = 1,
  IMPSY_MIDI_KIND_CONTROL_CHANGE = 2,
  IMPSY_MIDI_KIND_OTHER = 3,
} ImpsyMidiKind;

/**
 * Recurrent state plus sampling settings over a shared model. Safe to
 * free the model while generators are alive.
 */
typedef struct ImpsyGenerator ImpsyGenerator;

/**
 * Opaque trained network parameters.
 */
typedef struct ImpsyModel ImpsyModel;

/**
 * Streaming MIDI byte parser with an internal queue of decoded messages.
 */
typedef struct ImpsyParser ImpsyParser;

typedef struct ImpsyShape {
  uint32_t dimension;
  uint32_t layers;
  uint32_t hidden;
  uint32_t mixtures;
} ImpsyShape;

/**
 * One decoded MIDI message. `raw` holds the canonical bytes (running
 * status expanded); MIDI 1.0 messages the parser emits fit in three.
 */
typedef struct ImpsyMidiMessage {
  enum ImpsyMidiKind kind;
  uint8_t channel;
  uint8_t data1;
  uint8_t data2;
  uint8_t raw_len;
  uint8_t raw[3];
} ImpsyMidiMessage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *impsy_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *impsy_version(void);

/**
 * Load a weight file.
 */
enum ImpsyStatus impsy_model_load(const char *path, struct ImpsyModel **out);

/**
 * Decode weight-file bytes held in memory.
 */
enum ImpsyStatus impsy_model_from_bytes(const uint8_t *bytes, size_t len, struct ImpsyModel **out);

/**
 * A freshly initialized (untrained) model.
 */
enum ImpsyStatus impsy_model_random(struct ImpsyShape shape,
                                    uint64_t seed,
                                    struct ImpsyModel **out);

enum ImpsyStatus impsy_model_save(const struct ImpsyModel *model, const char *path);

enum ImpsyStatus impsy_model_shape(const struct ImpsyModel *model, struct ImpsyShape *out);

void impsy_model_free(struct ImpsyModel *model);

enum ImpsyStatus impsy_generator_new(const struct ImpsyModel *model,
                                     uint64_t seed,
                                     double pi_temp,
                                     double sigma_temp,
                                     double dt_max,
                                     struct ImpsyGenerator **out);

/**
 * Feed an observed frame (`dim` values in [0, 1] and its dt) to the
 * network without sampling.
 */
enum ImpsyStatus impsy_generator_observe(struct ImpsyGenerator *gen,
                                         const double *values,
                                         size_t dim,
                                         double dt);

/**
 * Sample the next frame into `values` (capacity `cap`) and `dt`.
 */
enum ImpsyStatus impsy_generator_next(struct ImpsyGenerator *gen,
                                      double *values,
                                      size_t cap,
                                      double *dt);

/**
 * Back to the zero state; the random stream continues.
 */
enum ImpsyStatus impsy_generator_reset(struct ImpsyGenerator *gen);

void impsy_generator_free(struct ImpsyGenerator *gen);

enum ImpsyStatus impsy_parser_new(struct ImpsyParser **out);

/**
 * Push raw bytes; any chunking of a stream yields the same messages.
 */
enum ImpsyStatus impsy_parser_feed(struct ImpsyParser *p, const uint8_t *bytes, size_t len);

/**
 * Pop the next decoded message. `*has_message` is set to 0 when the
 * queue is empty.
 */
enum ImpsyStatus impsy_parser_next(struct ImpsyParser *p,
                                   struct ImpsyMidiMessage *out,
                                   uint8_t *has_message);

/**
 * Stray data bytes discarded so far.
 */
uint64_t impsy_parser_dropped(const struct ImpsyParser *p);

void impsy_parser_free(struct ImpsyParser *p);

/**
 * Serialize with an explicit status byte.
 */
enum ImpsyStatus impsy_midi_serialize(const struct ImpsyMidiMessage *msg,
                                      uint8_t *out,
                                      size_t cap,
                                      size_t *out_len);

enum ImpsyStatus impsy_osc_encode(const char *address,
                                  const float *args,
                                  size_t n_args,
                                  uint8_t *out,
                                  size_t cap,
                                  size_t *out_len);

/**
 * Validate a JSON config document. On failure the last error lists
 * every violation, one per line.
 */
enum ImpsyStatus impsy_config_validate(const char *json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMPSY_H */
