#ifndef VTALAB_H
#define VTALAB_H

#include <stddef.h>
#include <stdint.h>

/**
 * An ordered collection of rendered scenes.
 */
typedef struct VtaDataset VtaDataset;

/**
 * A trained denoiser with the codec and configuration it runs under.
 */
typedef struct VtaModel VtaModel;

/**
 * A rendered scene: script, caption and waveform.
 */
typedef struct VtaScene VtaScene;

typedef int32_t VtaStatus;

#define VTA_OK 0

#define VTA_ERR_NULL 1

#define VTA_ERR_CONFIG 2

#define VTA_ERR_DATA 3

#define VTA_ERR_NUMERIC 4

#define VTA_ERR_PANIC 5

/**
 * The caller's buffer is too small; the required length was still written.
 */
#define VTA_ERR_BUFFER 6

#define VTA_ERR_UTF8 7

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *vta_last_error(void);

/**
 * Draws and renders one scene. `sample_rate_hz` of 0 keeps the default rate.
 *
 * # Safety
 * `out` must be writable.
 */
VtaStatus vta_scene_generate(uint64_t seed, uint32_t sample_rate_hz, VtaScene **out);

/**
 * # Safety
 * `scene` must be a live handle; `out` must be writable.
 */
VtaStatus vta_scene_sample_count(const VtaScene *scene, uintptr_t *out);

/**
 * # Safety
 * `scene` must be a live handle; `out` must be writable.
 */
VtaStatus vta_scene_sample_rate(const VtaScene *scene, uint32_t *out);

/**
 * Copies the waveform into `buf`. `needed`, if non-null, receives the sample count.
 *
 * # Safety
 * `scene` must be a live handle; `buf` must hold `capacity` floats.
 */
VtaStatus vta_scene_copy_audio(const VtaScene *scene,
                               float *buf,
                               uintptr_t capacity,
                               uintptr_t *needed);

/**
 * Copies the NUL-terminated caption into `buf`. `needed` includes the terminator.
 *
 * # Safety
 * `scene` must be a live handle; `buf` must hold `capacity` bytes.
 */
VtaStatus vta_scene_caption(const VtaScene *scene,
                            char *buf,
                            uintptr_t capacity,
                            uintptr_t *needed);

/**
 * # Safety
 * `scene` must be null or a handle not yet freed.
 */
void vta_scene_free(VtaScene *scene);

/**
 * Renders `n` scenes from `base_seed`. `sample_rate_hz` of 0 keeps the default rate.
 *
 * # Safety
 * `out` must be writable.
 */
VtaStatus vta_dataset_synth(uintptr_t n,
                            uint64_t base_seed,
                            uint32_t sample_rate_hz,
                            VtaDataset **out);

/**
 * Writes the dataset directory layout under `dir`.
 *
 * # Safety
 * `dataset` must be a live handle; `dir` a NUL-terminated path.
 */
VtaStatus vta_dataset_save(const VtaDataset *dataset, const char *dir);

/**
 * # Safety
 * `dir` must be a NUL-terminated path; `out` must be writable.
 */
VtaStatus vta_dataset_load(const char *dir, VtaDataset **out);

/**
 * # Safety
 * `dataset` must be a live handle; `out` must be writable.
 */
VtaStatus vta_dataset_len(const VtaDataset *dataset, uintptr_t *out);

/**
 * Copies scene `index` into a new scene handle.
 *
 * # Safety
 * `dataset` must be a live handle; `out` must be writable.
 */
VtaStatus vta_dataset_scene(const VtaDataset *dataset, uintptr_t index, VtaScene **out);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void vta_dataset_free(VtaDataset *dataset);

/**
 * Loads a model checkpoint and the `vae.ckpt` beside it. `config` may be
 * null for defaults; it must describe the run the checkpoint came from.
 *
 * # Safety
 * `checkpoint` must be a NUL-terminated path, `config` null or one; `out` writable.
 */
VtaStatus vta_model_load(const char *checkpoint, const char *config, VtaModel **out);

/**
 * Generates audio for `scene`'s script. The output has the scene's sample count.
 *
 * # Safety
 * Both handles must be live; `buf` must hold `capacity` floats.
 */
VtaStatus vta_model_generate(const VtaModel *model,
                             const VtaScene *scene,
                             float *buf,
                             uintptr_t capacity,
                             uintptr_t *needed);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void vta_model_free(VtaModel *model);

/**
 * AV-Align between sorted onset times (seconds) and video peak times.
 *
 * # Safety
 * `audio` and `video` must hold `n_audio` and `n_video` doubles; `out` writable.
 */
VtaStatus vta_av_align(const double *audio,
                       uintptr_t n_audio,
                       const double *video,
                       uintptr_t n_video,
                       double window_s,
                       double *out);

/**
 * Fréchet distance between two row-major sets of `dim`-wide vectors.
 *
 * # Safety
 * `a` and `b` must hold `n_a * dim` and `n_b * dim` doubles; `out` writable.
 */
VtaStatus vta_frechet_distance(const double *a,
                               uintptr_t n_a,
                               const double *b,
                               uintptr_t n_b,
                               uintptr_t dim,
                               double *out);

/**
 * Runs the command-line front end in-process and returns its exit code.
 * `argv[0]` is the program name.
 *
 * # Safety
 * `argv` must hold `argc` NUL-terminated strings.
 */
int32_t vta_cli_run(int32_t argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VTALAB_H */
