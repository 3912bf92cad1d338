//! C interface to the rkmoe pipeline.
//!
//! Objects are opaque handles created by `rk_*_new`/`rk_*_generate`-style
//! functions and released with the matching `rk_*_free`. Every fallible
//! function returns an [`RkStatus`]; on failure the message is available
//! from [`rk_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rkmoe::eval::{compute_metrics, idw_interpolate, Arm};
use rkmoe::kan::{evaluate_coarse, fit_scene, KanConfig, KanNetwork};
use rkmoe::priors::{assemble_prior_tensor, depth_map, DEFAULT_TAU_MAX};
use rkmoe::refiner::{refine, RefinerConfig, RefinerNet};
use rkmoe::scene::{generate_scene, sample_observations, simulate_radiomap, ObservationSet, PropagationParams, RadioScene, Radiomap, SceneSpec};
use rkmoe::tensor::checkpoint::Checkpoint;
use rkmoe::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Diverged = 5,
    Singular = 6,
    Config = 7,
    Format = 8,
    Io = 9,
    Panic = 10,
}

impl From<&Error> for RkStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) => RkStatus::Shape,
            Error::InvalidArgument(_) => RkStatus::InvalidArgument,
            Error::NonFinite(_) => RkStatus::NonFinite,
            Error::Diverged { .. } => RkStatus::Diverged,
            Error::Singular(_) => RkStatus::Singular,
            Error::Config { .. } => RkStatus::Config,
            Error::Format(_) => RkStatus::Format,
            Error::Io(_) => RkStatus::Io,
        }
    }
}

/// A scene together with its ground-truth radiomap.
pub struct RkScene {
    scene: RadioScene,
    truth: Radiomap,
}

/// Sparse observations of a scene.
pub struct RkObservations {
    obs: ObservationSet,
}

/// A dense radiomap (estimate or ground truth).
pub struct RkMap {
    map: Radiomap,
}

/// A fitted coarse-prior network.
pub struct RkKan {
    net: KanNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Status(RkStatus, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Status(RkStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(RkStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics to a status and the thread's
/// last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RkStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            RkStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: caller passes either null or a live handle from this library.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller passes either null or a writable location.
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null, NUL-terminated per the interface contract.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::Status(RkStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: p came from `boxed` and is released once.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Message of the last failed call on this thread (empty if none). The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn rk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a scene of `height × width` cells with `bands` frequencies
/// taken from `frequencies_hz`, using default building and propagation
/// settings.
///
/// # Safety
/// `frequencies_hz` must point to `bands` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_scene_generate(
    height: usize,
    width: usize,
    frequencies_hz: *const f64,
    bands: usize,
    seed: u64,
    out: *mut *mut RkScene,
) -> RkStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        if frequencies_hz.is_null() || bands == 0 {
            return Err(null("frequencies_hz"));
        }
        // SAFETY: caller guarantees `bands` readable doubles.
        let freqs = unsafe { std::slice::from_raw_parts(frequencies_hz, bands) }.to_vec();
        let spec = SceneSpec { height, width, frequencies_hz: freqs, ..SceneSpec::default() };
        let scene = generate_scene(&spec, seed)?;
        let truth = simulate_radiomap(&scene, &PropagationParams::default())?;
        *out = boxed(RkScene { scene, truth });
        Ok(())
    })
}

/// Loads an RKM1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_scene_load(path: *const c_char, out: *mut *mut RkScene) -> RkStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        let (scene, truth) = rkmoe::dataset::load_scene(&unsafe { path_arg(path, "path") }?)?;
        *out = boxed(RkScene { scene, truth });
        Ok(())
    })
}

/// Writes an RKM1 file.
///
/// # Safety
/// `scene` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rk_scene_save(scene: *const RkScene, path: *const c_char) -> RkStatus {
    guard(|| {
        let s = unsafe { deref(scene, "scene") }?;
        rkmoe::dataset::save_scene(&unsafe { path_arg(path, "path") }?, &s.scene, &s.truth)?;
        Ok(())
    })
}

/// Grid size and band count of a scene.
///
/// # Safety
/// `scene` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_scene_dims(scene: *const RkScene, height: *mut usize, width: *mut usize, bands: *mut usize) -> RkStatus {
    guard(|| {
        let s = unsafe { deref(scene, "scene") }?;
        *unsafe { out_ptr(height, "height") }? = s.scene.height();
        *unsafe { out_ptr(width, "width") }? = s.scene.width();
        *unsafe { out_ptr(bands, "bands") }? = s.scene.spec.bands();
        Ok(())
    })
}

/// Copy of the ground-truth radiomap.
///
/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_scene_truth(scene: *const RkScene, out: *mut *mut RkMap) -> RkStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        let s = unsafe { deref(scene, "scene") }?;
        *out = boxed(RkMap { map: s.truth.clone() });
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rk_scene_free(scene: *mut RkScene) {
    unsafe { free(scene) }
}

/// Samples `ratio · H · W` cells (at least one) of the ground truth.
///
/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_observations_sample(scene: *const RkScene, ratio: f64, seed: u64, out: *mut *mut RkObservations) -> RkStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        let s = unsafe { deref(scene, "scene") }?;
        *out = boxed(RkObservations { obs: sample_observations(&s.truth, ratio, seed)? });
        Ok(())
    })
}

/// Observations per band.
///
/// # Safety
/// `obs` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rk_observations_count(obs: *const RkObservations) -> usize {
    // SAFETY: null or live handle per the contract.
    unsafe { obs.as_ref() }.map_or(0, |o| o.obs.bands.first().map_or(0, |b| b.cells.len()))
}

/// # Safety
/// `obs` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rk_observations_free(obs: *mut RkObservations) {
    unsafe { free(obs) }
}

/// Fits the coarse-prior network with default hyperparameters; `epochs`
/// of zero keeps the default epoch count.
///
/// # Safety
/// `scene` and `obs` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_kan_fit(
    scene: *const RkScene,
    obs: *const RkObservations,
    epochs: usize,
    seed: u64,
    out: *mut *mut RkKan,
) -> RkStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        let s = unsafe { deref(scene, "scene") }?;
        let o = unsafe { deref(obs, "obs") }?;
        let mut cfg = KanConfig::default();
        if epochs > 0 {
            cfg.epochs = epochs;
        }
        *out = boxed(RkKan { net: fit_scene(&cfg, &s.scene, &o.obs, seed)?.network });
        Ok(())
    })
}

/// Dense coarse prior of a fitted network over a scene.
///
/// # Safety
/// `kan` and `scene` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_kan_coarse(kan: *const RkKan, scene: *const RkScene, out: *mut *mut RkMap) -> RkStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        let k = unsafe { deref(kan, "kan") }?;
        let s = unsafe { deref(scene, "scene") }?;
        *out = boxed(RkMap { map: evaluate_coarse(&k.net, &s.scene)? });
        Ok(())
    })
}

/// Saves a fitted network as an RKCK checkpoint.
///
/// # Safety
/// `kan` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rk_kan_save(kan: *const RkKan, path: *const c_char) -> RkStatus {
    guard(|| {
        let k = unsafe { deref(kan, "kan") }?;
        k.net.to_checkpoint().save(&unsafe { path_arg(path, "path") }?)?;
        Ok(())
    })
}

/// # Safety
/// `kan` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rk_kan_free(kan: *mut RkKan) {
    unsafe { free(kan) }
}

/// End-to-end estimate: fits the coarse prior, then refines it with the
/// refiner checkpoint at `refiner_path`, or with a freshly initialized
/// refiner (whose output equals the coarse prior) when the path is null.
///
/// # Safety
/// `scene` and `obs` must be live handles, `refiner_path` null or a
/// NUL-terminated string, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rk_estimate(
    scene: *const RkScene,
    obs: *const RkObservations,
    refiner_path: *const c_char,
    seed: u64,
    out: *mut *mut RkMap,
) -> RkStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        let s = unsafe { deref(scene, "scene") }?;
        let o = unsafe { deref(obs, "obs") }?;
        let net = fit_scene(&KanConfig::default(), &s.scene, &o.obs, seed)?.network;
        let coarse = evaluate_coarse(&net, &s.scene)?;
        let refiner = if refiner_path.is_null() {
            let (b, h, w) = (s.scene.spec.bands(), s.scene.height(), s.scene.width());
            RefinerNet::new(Arm::Full.refiner_config(&RefinerConfig::default(), b, h, w), seed)?
        } else {
            RefinerNet::from_checkpoint(&Checkpoint::load(&unsafe { path_arg(refiner_path, "refiner_path") }?)?)?
        };
        let depth = depth_map(&s.scene, DEFAULT_TAU_MAX)?;
        let prior = assemble_prior_tensor(&coarse, &o.obs, &s.scene, &depth)?;
        *out = boxed(RkMap { map: refine(&refiner, &prior, &coarse)? });
        Ok(())
    })
}

/// Inverse-distance-weighted (power 2) interpolation of the observations.
///
/// # Safety
/// `obs` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_idw(obs: *const RkObservations, out: *mut *mut RkMap) -> RkStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        let o = unsafe { deref(obs, "obs") }?;
        *out = boxed(RkMap { map: idw_interpolate(&o.obs, 2.0)? });
        Ok(())
    })
}

/// Grid size and band count of a map.
///
/// # Safety
/// `map` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_map_dims(map: *const RkMap, height: *mut usize, width: *mut usize, bands: *mut usize) -> RkStatus {
    guard(|| {
        let m = unsafe { deref(map, "map") }?;
        *unsafe { out_ptr(height, "height") }? = m.map.height();
        *unsafe { out_ptr(width, "width") }? = m.map.width();
        *unsafe { out_ptr(bands, "bands") }? = m.map.bands();
        Ok(())
    })
}

/// Copies one band (row-major, `H·W` values in `[0, 1]`) into `buffer`,
/// which must hold `len ≥ H·W` doubles.
///
/// # Safety
/// `map` must be a live handle and `buffer` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rk_map_copy_band(map: *const RkMap, band: usize, buffer: *mut f64, len: usize) -> RkStatus {
    guard(|| {
        let m = unsafe { deref(map, "map") }?;
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        if band >= m.map.bands() {
            return Err(Failure::Status(RkStatus::InvalidArgument, format!("band {band} out of range")));
        }
        let src = m.map.band(band);
        if len < src.len() {
            return Err(Failure::Status(RkStatus::Shape, format!("buffer holds {len} values, band has {}", src.len())));
        }
        // SAFETY: caller guarantees `len ≥ src.len()` writable doubles.
        unsafe { std::slice::from_raw_parts_mut(buffer, src.len()) }.copy_from_slice(src);
        Ok(())
    })
}

/// Band-averaged NMSE and MSE of `estimate` against `truth`.
///
/// # Safety
/// Both maps must be live handles; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_metrics(estimate: *const RkMap, truth: *const RkMap, nmse: *mut f64, mse: *mut f64) -> RkStatus {
    guard(|| {
        let e = unsafe { deref(estimate, "estimate") }?;
        let t = unsafe { deref(truth, "truth") }?;
        let r = compute_metrics(&e.map, &t.map)?;
        *unsafe { out_ptr(nmse, "nmse") }? = r.nmse_mean;
        *unsafe { out_ptr(mse, "mse") }? = r.mse_mean;
        Ok(())
    })
}

/// # Safety
/// `map` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rk_map_free(map: *mut RkMap) {
    unsafe { free(map) }
}
