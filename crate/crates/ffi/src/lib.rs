//! C ABI over the vtalab core.
//!
//! Every entry point returns a [`VtaStatus`]; on failure the message is kept
//! per thread and read back with [`vta_last_error`]. Handles are opaque and
//! owned by the caller until passed to the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use vtalab::codec::vae::Vae;
use vtalab::config::ExperimentConfig;
use vtalab::dataset::{load_dataset, save_dataset};
use vtalab::diffusion::Denoiser;
use vtalab::matrix::Matrix;
use vtalab::metrics::{av_align, frechet_distance, EmbeddingSet, OnsetList, Source};
use vtalab::pipeline::Context;
use vtalab::scene::{generate_dataset, generate_scene, GenerationBounds, Scene};
use vtalab::Error;

pub type VtaStatus = i32;

pub const VTA_OK: VtaStatus = 0;
pub const VTA_ERR_NULL: VtaStatus = 1;
pub const VTA_ERR_CONFIG: VtaStatus = 2;
pub const VTA_ERR_DATA: VtaStatus = 3;
pub const VTA_ERR_NUMERIC: VtaStatus = 4;
pub const VTA_ERR_PANIC: VtaStatus = 5;
/// The caller's buffer is too small; the required length was still written.
pub const VTA_ERR_BUFFER: VtaStatus = 6;
pub const VTA_ERR_UTF8: VtaStatus = 7;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(VtaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => VTA_ERR_CONFIG,
            Error::Sampling { .. } | Error::Training { .. } | Error::Metric(_) => VTA_ERR_NUMERIC,
            _ => VTA_ERR_DATA,
        };
        Failure(code, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VtaStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VTA_OK,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("panic: {msg}"));
            VTA_ERR_PANIC
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(VTA_ERR_NULL, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: caller guarantees `p` is null or a live handle of type T.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller guarantees `p` is null or writable.
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and NUL-terminated by contract.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(VTA_ERR_UTF8, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: `p` points to `len` readable elements by contract.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

/// Copies `src` into `dst` when it fits; always reports the needed length.
unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, capacity: usize, needed: *mut usize) -> Result<(), Failure> {
    if let Some(n) = unsafe { needed.as_mut() } {
        *n = src.len();
    }
    if capacity < src.len() {
        return Err(Failure(
            VTA_ERR_BUFFER,
            format!("buffer holds {capacity} elements, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if dst.is_null() {
            return Err(null("buffer"));
        }
        // SAFETY: `dst` has room for `capacity >= src.len()` elements.
        unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len()) };
    }
    Ok(())
}

fn bounds(sample_rate_hz: u32) -> GenerationBounds {
    if sample_rate_hz == 0 {
        GenerationBounds::default()
    } else {
        GenerationBounds { sample_rate_hz, ..GenerationBounds::default() }
    }
}

/// Message of the last failed call on this thread, or null after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn vta_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// A rendered scene: script, caption and waveform.
pub struct VtaScene(Scene);

/// Draws and renders one scene. `sample_rate_hz` of 0 keeps the default rate.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vta_scene_generate(seed: u64, sample_rate_hz: u32, out: *mut *mut VtaScene) -> VtaStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let script = generate_scene(seed, &bounds(sample_rate_hz))?;
        *out = Box::into_raw(Box::new(VtaScene(Scene::render(script))));
        Ok(())
    })
}

/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vta_scene_sample_count(scene: *const VtaScene, out: *mut usize) -> VtaStatus {
    guard(|| {
        let scene = unsafe { as_ref(scene, "scene") }?;
        *unsafe { out_ptr(out, "out") }? = scene.0.waveform.len();
        Ok(())
    })
}

/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vta_scene_sample_rate(scene: *const VtaScene, out: *mut u32) -> VtaStatus {
    guard(|| {
        let scene = unsafe { as_ref(scene, "scene") }?;
        *unsafe { out_ptr(out, "out") }? = scene.0.script.sample_rate_hz;
        Ok(())
    })
}

/// Copies the waveform into `buf`. `needed`, if non-null, receives the sample count.
///
/// # Safety
/// `scene` must be a live handle; `buf` must hold `capacity` floats.
#[no_mangle]
pub unsafe extern "C" fn vta_scene_copy_audio(
    scene: *const VtaScene,
    buf: *mut f32,
    capacity: usize,
    needed: *mut usize,
) -> VtaStatus {
    guard(|| {
        let scene = unsafe { as_ref(scene, "scene") }?;
        unsafe { copy_out(&scene.0.waveform, buf, capacity, needed) }
    })
}

/// Copies the NUL-terminated caption into `buf`. `needed` includes the terminator.
///
/// # Safety
/// `scene` must be a live handle; `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn vta_scene_caption(
    scene: *const VtaScene,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> VtaStatus {
    guard(|| {
        let scene = unsafe { as_ref(scene, "scene") }?;
        let mut bytes: Vec<c_char> = scene.0.script.caption.bytes().map(|b| b as c_char).collect();
        bytes.push(0);
        unsafe { copy_out(&bytes, buf, capacity, needed) }
    })
}

/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vta_scene_free(scene: *mut VtaScene) {
    if !scene.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(scene) });
    }
}

/// An ordered collection of rendered scenes.
pub struct VtaDataset(Vec<Scene>);

/// Renders `n` scenes from `base_seed`. `sample_rate_hz` of 0 keeps the default rate.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vta_dataset_synth(
    n: usize,
    base_seed: u64,
    sample_rate_hz: u32,
    out: *mut *mut VtaDataset,
) -> VtaStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        if n == 0 {
            return Err(Failure(VTA_ERR_CONFIG, "dataset must hold at least one scene".into()));
        }
        let scenes = generate_dataset(n, base_seed, &bounds(sample_rate_hz))?;
        *out = Box::into_raw(Box::new(VtaDataset(scenes)));
        Ok(())
    })
}

/// Writes the dataset directory layout under `dir`.
///
/// # Safety
/// `dataset` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn vta_dataset_save(dataset: *const VtaDataset, dir: *const c_char) -> VtaStatus {
    guard(|| {
        let dataset = unsafe { as_ref(dataset, "dataset") }?;
        let dir = unsafe { path_arg(dir, "dir") }?;
        save_dataset(&dataset.0, &dir)?;
        Ok(())
    })
}

/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vta_dataset_load(dir: *const c_char, out: *mut *mut VtaDataset) -> VtaStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let dir = unsafe { path_arg(dir, "dir") }?;
        *out = Box::into_raw(Box::new(VtaDataset(load_dataset(&dir)?)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vta_dataset_len(dataset: *const VtaDataset, out: *mut usize) -> VtaStatus {
    guard(|| {
        let dataset = unsafe { as_ref(dataset, "dataset") }?;
        *unsafe { out_ptr(out, "out") }? = dataset.0.len();
        Ok(())
    })
}

/// Copies scene `index` into a new scene handle.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vta_dataset_scene(
    dataset: *const VtaDataset,
    index: usize,
    out: *mut *mut VtaScene,
) -> VtaStatus {
    guard(|| {
        let dataset = unsafe { as_ref(dataset, "dataset") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let scene = dataset.0.get(index).ok_or_else(|| {
            Failure(VTA_ERR_DATA, format!("index {index} out of range for {} scenes", dataset.0.len()))
        })?;
        *out = Box::into_raw(Box::new(VtaScene(scene.clone())));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vta_dataset_free(dataset: *mut VtaDataset) {
    if !dataset.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// A trained denoiser with the codec and configuration it runs under.
pub struct VtaModel {
    ctx: Context,
    model: Denoiser,
}

/// Loads a model checkpoint and the `vae.ckpt` beside it. `config` may be
/// null for defaults; it must describe the run the checkpoint came from.
///
/// # Safety
/// `checkpoint` must be a NUL-terminated path, `config` null or one; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vta_model_load(
    checkpoint: *const c_char,
    config: *const c_char,
    out: *mut *mut VtaModel,
) -> VtaStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let checkpoint = unsafe { path_arg(checkpoint, "checkpoint") }?;
        let cfg = if config.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::load(&unsafe { path_arg(config, "config") }?)?
        };
        let model = Denoiser::load(&checkpoint)?;
        let vae = Vae::load(&checkpoint.parent().unwrap_or(Path::new(".")).join("vae.ckpt"))?;
        let ctx = Context::new(cfg, vae)?;
        *out = Box::into_raw(Box::new(VtaModel { ctx, model }));
        Ok(())
    })
}

/// Generates audio for `scene`'s script. The output has the scene's sample count.
///
/// # Safety
/// Both handles must be live; `buf` must hold `capacity` floats.
#[no_mangle]
pub unsafe extern "C" fn vta_model_generate(
    model: *const VtaModel,
    scene: *const VtaScene,
    buf: *mut f32,
    capacity: usize,
    needed: *mut usize,
) -> VtaStatus {
    guard(|| {
        let model = unsafe { as_ref(model, "model") }?;
        let scene = unsafe { as_ref(scene, "scene") }?;
        let (wave, _) = model.ctx.generate(&model.model, &scene.0.script)?;
        unsafe { copy_out(&wave, buf, capacity, needed) }
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vta_model_free(model: *mut VtaModel) {
    if !model.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// AV-Align between sorted onset times (seconds) and video peak times.
///
/// # Safety
/// `audio` and `video` must hold `n_audio` and `n_video` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vta_av_align(
    audio: *const f64,
    n_audio: usize,
    video: *const f64,
    n_video: usize,
    window_s: f64,
    out: *mut f64,
) -> VtaStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let a = OnsetList::new(unsafe { slice_arg(audio, n_audio, "audio") }?.to_vec())?;
        let v = OnsetList::new(unsafe { slice_arg(video, n_video, "video") }?.to_vec())?;
        *out = av_align(&a, &v, window_s)?;
        Ok(())
    })
}

/// Fréchet distance between two row-major sets of `dim`-wide vectors.
///
/// # Safety
/// `a` and `b` must hold `n_a * dim` and `n_b * dim` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vta_frechet_distance(
    a: *const f64,
    n_a: usize,
    b: *const f64,
    n_b: usize,
    dim: usize,
    out: *mut f64,
) -> VtaStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let len = |n: usize| {
            n.checked_mul(dim).ok_or_else(|| Failure(VTA_ERR_DATA, "set size overflows".into()))
        };
        let a = unsafe { slice_arg(a, len(n_a)?, "a") }?;
        let b = unsafe { slice_arg(b, len(n_b)?, "b") }?;
        let a = EmbeddingSet::new(Matrix::from_vec(n_a, dim, a.to_vec()), Source::Generated);
        let b = EmbeddingSet::new(Matrix::from_vec(n_b, dim, b.to_vec()), Source::Reference);
        *out = frechet_distance(&a, &b)?;
        Ok(())
    })
}

/// Runs the command-line front end in-process and returns its exit code.
/// `argv[0]` is the program name.
///
/// # Safety
/// `argv` must hold `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn vta_cli_run(argc: i32, argv: *const *const c_char) -> i32 {
    let mut code = 0;
    let status = guard(|| {
        let n = usize::try_from(argc).map_err(|_| Failure(VTA_ERR_DATA, "argc is negative".into()))?;
        let ptrs = unsafe { slice_arg(argv, n, "argv") }?;
        let mut args = Vec::with_capacity(n);
        for (i, &p) in ptrs.iter().enumerate() {
            args.push(unsafe { path_arg(p, &format!("argv[{i}]")) }?.into_os_string());
        }
        code = vtalab::cli::main_with_args(args);
        Ok(())
    });
    if status == VTA_OK { code } else { status }
}
