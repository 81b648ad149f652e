/* C interface to the try-on video diffusion lab: configuration, synthetic
 * data generation, progressive training, guided sampling, and checkpoint
 * scoring. All entry points are thread-compatible (distinct handles may be
 * used from distinct threads); error messages are per-thread. */
#ifndef VTON_H
#define VTON_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes returned by every fallible entry point. */
typedef enum vton_status {
    VTON_OK = 0,
    VTON_ERR_INVALID_ARGUMENT = 1, /* caller passed something unusable */
    VTON_ERR_INVALID_STATE = 2,    /* operation conflicts with object state */
    VTON_ERR_IO = 3,               /* filesystem or serialization failure */
    VTON_ERR_CONFIG = 4,           /* configuration rejected on load/validate */
    VTON_ERR_NUMERIC = 5,          /* non-finite or ill-conditioned numerics */
    VTON_ERR_INTERNAL = 6          /* anything the taxonomy does not cover */
} vton_status;

/* Stable identifier for a status code, e.g. "VTON_ERR_CONFIG". */
const char* vton_status_name(vton_status status);

/* Message describing the calling thread's most recent failure; "" if the
 * last call on this thread succeeded. Valid until the thread's next call
 * into the library. */
const char* vton_last_error(void);

/* Library version string. */
const char* vton_version(void);

/* Frees a string returned through a char** out-parameter. NULL is a no-op. */
void vton_string_free(char* s);

/* ---- run configuration ------------------------------------------------ */

/* Opaque, immutable run configuration: model architecture, diffusion
 * schedule, training plan, sampling defaults, dataset geometry, eval setup,
 * and the experiment seed. Loading validates cross-module consistency and
 * rejects unknown keys. */
typedef struct vton_config vton_config;

vton_status vton_config_load(const char* path, vton_config** out);

/* The built-in desk-scale preset (runs in minutes on a CPU). */
vton_status vton_config_default(vton_config** out);

/* Canonical JSON serialization; loading it back yields an identical config. */
vton_status vton_config_json(const vton_config* cfg, char** out_json);

void vton_config_free(vton_config* cfg);

/* ---- checkpoints ------------------------------------------------------- */

/* Opaque handle to a loaded checkpoint (model weights + training phase). */
typedef struct vton_model vton_model;

vton_status vton_model_open(const char* checkpoint_dir, vton_model** out);

/* JSON object: {"phase", "frame_length", "temporal", "temporal_resampling",
 * "prediction_target", "checkpoint_hash"}. The hash is a hex string covering
 * every file in the checkpoint directory. */
vton_status vton_model_info(const vton_model* m, char** out_json);

void vton_model_close(vton_model* m);

/* ---- pipeline commands ------------------------------------------------- */

/* Generates the synthetic dataset described by cfg into out_dir.
 * num_scenes >= 0 overrides the config's scene count; seed >= 0 overrides
 * the config's seed. workers >= 1 parallelizes scene generation without
 * changing the bytes written. out_summary_json (optional) receives
 * {"num_scenes", "frames", "height", "width", "seed"}. */
vton_status vton_generate_data(const vton_config* cfg, const char* out_dir, int64_t num_scenes,
                               int64_t seed, int32_t workers, char** out_summary_json);

/* Runs the config's training plan against the dataset in data_dir, writing
 * one checkpoint directory per phase under out_dir plus a JSON-lines metrics
 * log per phase. phase (optional) restricts the run to that single named
 * phase; any phase after the first additionally needs resume_checkpoint
 * pointing at its predecessor. resume_checkpoint (optional) continues a
 * previous run from that checkpoint. out_checkpoints_json (optional)
 * receives a JSON array of the checkpoint directories written. */
vton_status vton_train(const vton_config* cfg, const char* data_dir, const char* out_dir,
                       const char* phase, const char* resume_checkpoint,
                       char** out_checkpoints_json);

/* Samples a try-on video: the person comes from frames 0..frames-1 of
 * dataset scene person_scene, the garment from frame garment_frame of scene
 * garment_scene. weights (NULL for all ones) are the four guidance weights
 * in the order unconditional, +pose, +garment, fully-conditional; steps <= 0
 * uses the 1000-step default. Writes video.npy, frames/frame_*.ppm and
 * metadata.json into out_dir; identical invocations write identical bytes. */
vton_status vton_sample(const vton_model* m, const char* data_dir, int64_t person_scene,
                        int64_t garment_scene, int64_t garment_frame, int64_t frames,
                        const double weights[4], int64_t steps, uint64_t seed,
                        const char* out_dir);

/* Scores checkpoints on frame realism, video realism, and garment fidelity
 * against the dataset in data_dir, sharing person/garment pairs and seeds
 * across checkpoints. Writes a JSON table to out_json_path and an aligned
 * text table to out_text_path. cfg (NULL for the desk preset) supplies the
 * eval parameters; workers >= 1 parallelizes feature extraction only. */
vton_status vton_evaluate(const vton_config* cfg, const char* const* checkpoint_dirs,
                          size_t num_checkpoints, const char* data_dir,
                          const char* out_json_path, const char* out_text_path, int32_t workers);

#ifdef __cplusplus
}
#endif

#endif /* VTON_H */
