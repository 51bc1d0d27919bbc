/*
 * misode - multi-instance symbolic regression for ODE systems.
 *
 * C interface over the core library: corpus generation, training, prediction,
 * evaluation, reporting and the invariant self-test. Heavyweight objects are
 * exposed as opaque handles; every call returns a status code and leaves a
 * human-readable message in misode_last_error() on failure.
 */
#ifndef MISODE_H
#define MISODE_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#ifndef MISODE_API
#define MISODE_API __attribute__((visibility("default")))
#endif

typedef enum misode_status {
  MISODE_OK = 0,
  MISODE_ERR_CONFIG = 2, /* malformed or inconsistent configuration */
  MISODE_ERR_DATA = 3,   /* unreadable / invalid data artifacts */
  MISODE_ERR_RUNTIME = 4 /* execution failure (divergence stall, ...) */
} misode_status;

MISODE_API const char* misode_version(void);

/* Message for the most recent failure on the calling thread. */
MISODE_API const char* misode_last_error(void);

/*
 * Pipeline entry points. Each takes a JSON configuration document; the CLI
 * manual page and README describe the accepted keys per command.
 */
MISODE_API misode_status misode_datagen(const char* config_json);
MISODE_API misode_status misode_train(const char* config_json);
MISODE_API misode_status misode_predict(const char* config_json);
MISODE_API misode_status misode_eval(const char* config_json);
MISODE_API misode_status misode_report(const char* config_json);

/* Runs the invariant suite, printing one line per check to stdout.
 * *failures (optional) receives the number of failing checks. */
MISODE_API misode_status misode_selftest(int* failures);

/* Writes the vocabulary, one token per line, id = line number. */
MISODE_API misode_status misode_dump_vocab(const char* path);

/* ---- opaque handles ---------------------------------------------------- */

typedef struct misode_corpus misode_corpus;
typedef struct misode_model misode_model;

MISODE_API misode_status misode_corpus_open(const char* path, misode_corpus** out);
MISODE_API size_t misode_corpus_size(const misode_corpus* corpus);
/* Human-readable rendering ("dx0/dt = ...") of record `index`. */
MISODE_API misode_status misode_corpus_render(const misode_corpus* corpus, size_t index,
                                              char* buf, size_t buflen);
MISODE_API void misode_corpus_close(misode_corpus* corpus);

MISODE_API misode_status misode_model_open(const char* path, misode_model** out);
/* Model configuration as JSON. */
MISODE_API misode_status misode_model_config(const misode_model* model, char* buf, size_t buflen);
/* Runs the full prediction pipeline on one corpus record; writes a JSON
 * object {"ok":...,"infix":...,"rms":...} into buf. options_json accepts the
 * same keys as the predict command's beam/rescale options ("{}" for defaults). */
MISODE_API misode_status misode_model_predict(const misode_model* model,
                                              const misode_corpus* corpus, size_t index,
                                              const char* options_json, char* buf, size_t buflen);
MISODE_API void misode_model_close(misode_model* model);

#ifdef __cplusplus
}
#endif

#endif /* MISODE_H */
