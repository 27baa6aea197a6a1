#ifndef DIFFREC_H
#define DIFFREC_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
    DIFFREC_OK = 0,
    DIFFREC_ERR_INVALID = 1, /* bad config, arguments, or input data */
    DIFFREC_ERR_RUNTIME = 2  /* execution failure */
} diffrec_status;

/* Library version string; static storage. */
const char* diffrec_version(void);

/* Default configuration as a JSON document. Free with diffrec_string_free. */
char* diffrec_default_config(void);

void diffrec_string_free(char* s);

/* A configured run. Build one, adjust its config, execute subcommands
 * against it. Not thread-safe; use one handle per thread. */
typedef struct diffrec_run diffrec_run;

diffrec_run* diffrec_run_create(void);
void diffrec_run_destroy(diffrec_run* run);

/* Replaces the config with the JSON document at `path`. */
diffrec_status diffrec_run_load_config(diffrec_run* run, const char* path);

/* Applies one dotted override, e.g. "train.lr=0.003". The value is parsed
 * as JSON when possible and treated as a string otherwise. */
diffrec_status diffrec_run_set(diffrec_run* run, const char* assignment);

/* Sets a dotted key to a string value verbatim (no JSON parsing). */
diffrec_status diffrec_run_set_string(diffrec_run* run, const char* key, const char* value);

/* Executes a subcommand: synth-data, train-tokenizer, tokenize, train,
 * evaluate, decode, or ablate. */
diffrec_status diffrec_run_execute(diffrec_run* run, const char* subcommand);

/* Text output of the last execute; valid until the next call on the handle. */
const char* diffrec_run_output(const diffrec_run* run);

/* Message for the last failed call; empty when the last call succeeded. */
const char* diffrec_run_error(const diffrec_run* run);

#ifdef __cplusplus
}
#endif

#endif /* DIFFREC_H */
