//! C ABI over the `hollownerf` engine.
//!
//! Models are opaque `HnModel` handles created by `hn_model_new` or
//! `hn_model_load` and released with `hn_model_free`. Every fallible call
//! returns an `HnStatus`; on failure `hn_last_error` describes the most recent
//! error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hollownerf::config::{merge_json, RunConfig};
use hollownerf::hash_encoding::hash_index;
use hollownerf::model::{NerfModel, RenderOptions, UnitCubeMap};
use hollownerf::render::{Camera, Mat4};
use hollownerf::scene_io::dataset::{DEFAULT_FAR, DEFAULT_NEAR};
use hollownerf::scene_io::{load_checkpoint, save_checkpoint, Checkpoint};
use hollownerf::trainer::gate_alpha;
use hollownerf::Error;

/// Result codes. Values are stable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HnStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Usage = 3,
    Numerical = 4,
    Integrity = 5,
    Load = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Trainable parameter totals.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HnParamCount {
    pub hashgrid: u64,
    pub mlp: u64,
    pub saliency: u64,
    pub total: u64,
}

/// Opaque model handle.
pub struct HnModel {
    ck: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HnStatus {
    match e {
        Error::Config(_) => HnStatus::Config,
        Error::Usage(_) => HnStatus::Usage,
        Error::Numerical(_) => HnStatus::Numerical,
        Error::Integrity(_) => HnStatus::Integrity,
        Error::Load(_) => HnStatus::Load,
        Error::Io { .. } => HnStatus::Io,
    }
}

fn fail(status: HnStatus, msg: impl Into<String>) -> HnStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), HnStatus>) -> HnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HnStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(HnStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: hollownerf::Result<T>) -> Result<T, HnStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, HnStatus> {
    if p.is_null() {
        return Err(fail(HnStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(HnStatus::Usage, "path is not valid UTF-8"))
}

unsafe fn model_ref<'a>(m: *const HnModel) -> Result<&'a HnModel, HnStatus> {
    m.as_ref().ok_or_else(|| fail(HnStatus::NullPointer, "model handle is null"))
}

/// Message for the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Fresh model. `config_json` may be NULL for the desk preset; otherwise
/// its fields are merged over the desk preset.
///
/// # Safety
/// `config_json` must be NULL or a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hn_model_new(config_json: *const c_char, seed: u64, out: *mut *mut HnModel) -> HnStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(HnStatus::NullPointer, "out is null"));
        }
        let mut cfg = RunConfig::desk();
        if !config_json.is_null() {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| fail(HnStatus::Usage, "config is not valid UTF-8"))?;
            let patch: serde_json::Value =
                serde_json::from_str(text).map_err(|e| fail(HnStatus::Config, e.to_string()))?;
            let mut v = cfg.to_value();
            merge_json(&mut v, patch);
            cfg = lift(RunConfig::from_value(v))?;
        }
        cfg.train.seed = seed;
        lift(cfg.validate())?;
        let model = lift(NerfModel::new(cfg.model, seed))?;
        let ck = Checkpoint {
            config: cfg,
            pruner: cfg.pruner,
            model,
            step: 0,
            epoch: 0,
            moments: None,
        };
        *out = Box::into_raw(Box::new(HnModel { ck }));
        Ok(())
    })
}

/// Loads a checkpoint.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hn_model_load(path: *const c_char, out: *mut *mut HnModel) -> HnStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(HnStatus::NullPointer, "out is null"));
        }
        let path = path_arg(path)?;
        let ck = lift(load_checkpoint(path))?;
        *out = Box::into_raw(Box::new(HnModel { ck }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hn_model_free(model: *mut HnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the model as a checkpoint.
///
/// # Safety
/// `model` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn hn_model_save(model: *const HnModel, path: *const c_char) -> HnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = path_arg(path)?;
        lift(save_checkpoint(&m.ck, path))
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hn_model_param_count(model: *const HnModel, out: *mut HnParamCount) -> HnStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(fail(HnStatus::NullPointer, "out is null"));
        }
        let c = lift(m.ck.config.model.param_count())?;
        *out = HnParamCount {
            hashgrid: c.hashgrid as u64,
            mlp: c.mlp as u64,
            saliency: c.saliency as u64,
            total: c.total as u64,
        };
        Ok(())
    })
}

/// Renders a `width x height` RGB image (row-major, 3 floats per pixel) from
/// a row-major 4x4 camera-to-world `pose`.
///
/// # Safety
/// `model` must be a live handle, `pose` must point to 16 doubles and `out`
/// to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn hn_model_render(
    model: *const HnModel,
    pose: *const f64,
    width: u32,
    height: u32,
    camera_angle_x: f64,
    out: *mut f32,
    out_len: usize,
) -> HnStatus {
    guard(|| {
        let m = model_ref(model)?;
        if pose.is_null() || out.is_null() {
            return Err(fail(HnStatus::NullPointer, "pose or output buffer is null"));
        }
        let need = width as usize * height as usize * 3;
        if out_len < need {
            return Err(fail(HnStatus::BufferTooSmall, format!("need {need} floats, got {out_len}")));
        }
        let flat = std::slice::from_raw_parts(pose, 16);
        let mut mat: Mat4 = [[0.0; 4]; 4];
        for (r, row) in mat.iter_mut().enumerate() {
            row.copy_from_slice(&flat[r * 4..r * 4 + 4]);
        }
        let cam = lift(Camera::from_angle_x(width, height, camera_angle_x, mat))?;
        let cfg = &m.ck.config;
        let opts = RenderOptions {
            samples_per_ray: cfg.render.samples_per_ray,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
            background: cfg.render.background,
            alpha: gate_alpha(cfg, m.ck.epoch),
            skip_threshold: cfg.render.skip_threshold,
            clip_plane: None,
            chunk_rays: cfg.render.chunk_rays,
        };
        let img = lift(m.ck.model.render_image(&cam, &UnitCubeMap::default(), &opts))?;
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(&img.data);
        Ok(())
    })
}

/// Saliency grid resolution `T`, or 0 when the model has none.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hn_model_saliency_resolution(model: *const HnModel, out: *mut u32) -> HnStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(fail(HnStatus::NullPointer, "out is null"));
        }
        *out = m.ck.model.saliency.as_ref().map_or(0, |s| s.resolution as u32);
        Ok(())
    })
}

/// Writes the `T x T` saliency weights of the plane `axis = index` into
/// `out` (row-major).
///
/// # Safety
/// `model` must be a live handle and `out` must point to `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn hn_model_saliency_slice(
    model: *const HnModel,
    axis: u32,
    index: u32,
    out: *mut f32,
    out_len: usize,
) -> HnStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(fail(HnStatus::NullPointer, "output buffer is null"));
        }
        let grid = m
            .ck
            .model
            .saliency
            .as_ref()
            .ok_or_else(|| fail(HnStatus::Usage, "model has no saliency grid"))?;
        let img = lift(grid.slice_export(axis as usize, index as usize))?;
        if out_len < img.data.len() {
            return Err(fail(
                HnStatus::BufferTooSmall,
                format!("need {} floats, got {out_len}", img.data.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, img.data.len()).copy_from_slice(&img.data);
        Ok(())
    })
}

/// Spatial hash of an integer lattice corner into a power-of-two table.
/// Returns `UINT64_MAX` when `table_size` is not a power of two.
#[no_mangle]
pub extern "C" fn hn_hash_index(x: u32, y: u32, z: u32, table_size: u64) -> u64 {
    if !table_size.is_power_of_two() || table_size > usize::MAX as u64 {
        return u64::MAX;
    }
    hash_index([x, y, z], table_size as usize) as u64
}
