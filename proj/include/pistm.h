/* C interface to the flow-surrogate library. All functions return a status
 * code; on failure the thread-local error message and category describe what
 * went wrong. Strings returned through char** out-parameters are owned by the
 * caller and must be released with pistm_string_free. */
#ifndef PISTM_H
#define PISTM_H

#include <stddef.h>
#include <stdint.h>

#ifndef PISTM_API
#if defined(_WIN32)
#ifdef PISTM_BUILD
#define PISTM_API __declspec(dllexport)
#else
#define PISTM_API __declspec(dllimport)
#endif
#else
#define PISTM_API __attribute__((visibility("default")))
#endif
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pistm_status {
  PISTM_OK = 0,
  PISTM_ERR_CONTRACT = 1,   /* invalid arguments or broken invariants */
  PISTM_ERR_SHAPE = 2,      /* mismatched tensor or grid dimensions */
  PISTM_ERR_IO = 3,         /* missing, malformed, or corrupt artifacts */
  PISTM_ERR_NUMERIC = 4,    /* linear algebra failure */
  PISTM_ERR_SIMULATION = 5, /* lattice instability or regime violation */
  PISTM_ERR_TRAINING = 6,   /* optimization diverged */
  PISTM_ERR_INTERNAL = 7,
} pistm_status;

/* Library version, static storage. */
PISTM_API const char* pistm_version(void);

/* Thread-local description of the most recent failure on this thread. The
 * category is a stable machine-readable token (e.g. "io.missing_input");
 * both remain valid until the next call on the same thread. */
PISTM_API const char* pistm_last_error_message(void);
PISTM_API const char* pistm_last_error_category(void);

PISTM_API void pistm_string_free(char* s);

/* Default experiment configuration as a JSON document. Every key accepted by
 * pistm_experiment_create appears here with its default value. */
PISTM_API pistm_status pistm_default_config(char** json_out);

/* Latin hypercube draw: n values over (lo, hi), one per equal-width stratum,
 * order shuffled by the seed. out must hold n doubles. */
PISTM_API pistm_status pistm_lhs_sample(size_t n, double lo, double hi, uint64_t seed,
                                        double* out);

/* ---- staged experiment ------------------------------------------------
 * An experiment lives in a directory and runs as resumable stages, each
 * leaving a stage.json manifest keyed by the content of its inputs and
 * config. Finished stages are skipped on rerun. */
typedef struct pistm_experiment pistm_experiment;

/* Creates (or reconfigures) an experiment. config_json may be NULL or "{}"
 * for defaults; unknown keys are rejected. */
PISTM_API pistm_status pistm_experiment_create(const char* dir, const char* config_json,
                                               pistm_experiment** out);
/* Opens an existing experiment from its config.json. */
PISTM_API pistm_status pistm_experiment_open(const char* dir, pistm_experiment** out);
PISTM_API void pistm_experiment_close(pistm_experiment* exp);

/* Stage names: doe, simulate, train-kae, forecast, train-rom, train-gp,
 * predict, evaluate. did_work (optional) is set to 1 if the stage ran and 0
 * if it was already up to date. */
PISTM_API pistm_status pistm_experiment_run_stage(pistm_experiment* exp, const char* stage,
                                                  int* did_work);
PISTM_API pistm_status pistm_experiment_run_all(pistm_experiment* exp);

/* Error and timing report of a completed experiment, as the two CSV
 * documents produced by the evaluate stage. Either out may be NULL. */
PISTM_API pistm_status pistm_experiment_report(pistm_experiment* exp, char** metrics_csv_out,
                                               char** timing_csv_out);

/* Walks every stage manifest and verifies artifact integrity and data
 * hygiene: no training-role stage may consume test-condition data or any
 * frame at or after the prediction window start. Returns JSON
 * {"artifacts": n, "ok": bool, "violations": [{"artifact","message"}]}. */
PISTM_API pistm_status pistm_experiment_audit(pistm_experiment* exp, char** report_json);

/* ---- standalone operations --------------------------------------------
 * Path-oriented building blocks matching the experiment stages. Sequence
 * artifacts are checkpoint directories created by pistm_simulate,
 * pistm_forecast, or pistm_predict. */

/* Stratified condition design. config_json keys: n, lo, hi, test, seed. */
PISTM_API pistm_status pistm_doe(const char* config_json, const char* out_file);

/* Lattice flow solve recorded as a sequence artifact. config_json keys:
 * height, width, reynolds, warmup, interval, snapshots, t_start, u_in,
 * seed. */
PISTM_API pistm_status pistm_simulate(const char* config_json, const char* out_dir);

/* Trains the per-condition forecaster on the sequence at data_dir.
 * config_json keys: kappa, hidden, lambda, weight_id, weight_fwd,
 * weight_bwd, weight_con, epochs, batch, learning_rate, seed. */
PISTM_API pistm_status pistm_train_kae(const char* data_dir, const char* config_json,
                                       const char* out_dir);

/* Rolls the forecaster k steps forward from the last frame of the sequence
 * at history_dir, writing a k+1 frame sequence starting right after it. */
PISTM_API pistm_status pistm_forecast(const char* model_dir, const char* history_dir, long k,
                                      const char* out_dir);

/* Trains the shared field compressor on every sequence artifact found in
 * the immediate subdirectories of data_dir (each must record its
 * condition). Writes the model plus latents.csv into out_dir. config_json
 * keys: code_dim, channels, epochs, batch, learning_rate, seed,
 * validation_fraction. */
PISTM_API pistm_status pistm_train_rom(const char* data_dir, const char* config_json,
                                       const char* out_dir);

/* Fits the per-latent-dimension regressors on a latents.csv table.
 * config_json keys: starts, iterations, learning_rate, seed,
 * time_as_input. */
PISTM_API pistm_status pistm_train_gp(const char* latents_csv, const char* config_json,
                                      const char* out_dir);

/* Emulates frames t .. t+horizon at an unseen condition from the trained
 * compressor and regressors. No simulation or training happens here.
 * extrapolated (optional) is set to 1 when re falls outside the training
 * range. */
PISTM_API pistm_status pistm_predict(const char* rom_dir, const char* gp_dir, double re, long t,
                                     size_t horizon, const char* out_dir, int* extrapolated);

/* Per-timestep relative errors of an emulated sequence against the truth
 * and reference forecast sequences over frames t .. t+horizon, written as a
 * metrics CSV. */
PISTM_API pistm_status pistm_evaluate_condition(const char* truth_dir, const char* koopman_dir,
                                                const char* emulated_dir, double re, long t,
                                                size_t horizon, const char* out_csv);

/* Renders frame t of the sequence at seq_dir as a binary P6 pixmap scaled
 * over the frame's own range. When diff_seq_dir is non-NULL the absolute
 * difference against its frame t is rendered instead. min_out / max_out
 * (optional) receive the rendered value range. */
PISTM_API pistm_status pistm_render(const char* seq_dir, long t, const char* diff_seq_dir,
                                    const char* out_path, double* min_out, double* max_out);

#ifdef __cplusplus
}
#endif

#endif /* PISTM_H */
