//! C ABI over `hmb-core`.
//!
//! Every fallible call returns an [`HmbStatus`]; on failure the message is
//! available from [`hmb_last_error`] on the same thread. Handles are opaque
//! and must be released with their `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hmb_core::{
    classify_asf, classify_sf, heat_map_from_trajectories, load_model, ActivityModel, Coefficient, GridSpec, HeatMap,
    HeatParams, HmbError, KernelConfig, TrackPoint, Trajectory,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    GridMismatch = 5,
    NoHeatSources = 6,
    Unclassifiable = 7,
    CorruptModel = 8,
    Panic = 99,
}

/// One tracked position. Points of the same `object` form a trajectory and
/// must have strictly increasing frames.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HmbPoint {
    pub object: u32,
    pub frame: i64,
    pub x: f64,
    pub y: f64,
}

/// Heat parameters. An infinite `k_t` or `k_p` selects the limit case.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HmbHeatParams {
    pub k_t: f64,
    pub k_p: f64,
    pub c: f64,
}

pub struct HmbHeatMap(HeatMap);

pub struct HmbModel {
    model: ActivityModel,
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &HmbError) -> HmbStatus {
    match e {
        HmbError::Io { .. } => HmbStatus::Io,
        HmbError::Parse { .. } | HmbError::NoRecords => HmbStatus::Parse,
        HmbError::GridMismatch => HmbStatus::GridMismatch,
        HmbError::NoHeatSources => HmbStatus::NoHeatSources,
        HmbError::Unclassifiable(_) => HmbStatus::Unclassifiable,
        HmbError::CorruptModel(_) | HmbError::ModelVersion { .. } => HmbStatus::CorruptModel,
        _ => HmbStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (HmbStatus, String)>) -> HmbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HmbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside hmb".into());
            HmbStatus::Panic
        }
    }
}

fn core_err(e: HmbError) -> (HmbStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (HmbStatus, String) {
    (HmbStatus::NullPointer, format!("{what} is null"))
}

fn coefficient(v: f64) -> Coefficient {
    if v == f64::INFINITY {
        Coefficient::Infinite
    } else {
        Coefficient::Finite(v)
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hmb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn hmb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn hmb_heat_params_default() -> HmbHeatParams {
    let d = HeatParams::default();
    let f = |c: Coefficient| c.finite().unwrap_or(f64::INFINITY);
    HmbHeatParams {
        k_t: f(d.k_t),
        k_p: f(d.k_p),
        c: d.c,
    }
}

/// Builds the heat map of `n_points` tracked positions at the last frame.
///
/// # Safety
/// `points` must reference `n_points` readable values, `params` may be null
/// for defaults, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hmb_heatmap_from_points(
    scene_width: u32,
    scene_height: u32,
    patch_size: u32,
    points: *const HmbPoint,
    n_points: usize,
    params: *const HmbHeatParams,
    out: *mut *mut HmbHeatMap,
) -> HmbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if points.is_null() && n_points > 0 {
            return Err(null("points"));
        }
        let grid = GridSpec::new(scene_width, scene_height, patch_size).map_err(core_err)?;
        let mut heat = HeatParams::default();
        if let Some(p) = params.as_ref() {
            heat.k_t = coefficient(p.k_t);
            heat.k_p = coefficient(p.k_p);
            heat.c = p.c;
        }
        let pts = if n_points == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(points, n_points)
        };
        let mut objects: Vec<(u32, Vec<TrackPoint>)> = Vec::new();
        for p in pts {
            match objects.iter_mut().find(|o| o.0 == p.object) {
                Some(o) => o.1.push(TrackPoint::new(p.frame, p.x, p.y)),
                None => objects.push((p.object, vec![TrackPoint::new(p.frame, p.x, p.y)])),
            }
        }
        let trajs = objects
            .into_iter()
            .map(|(id, pts)| Trajectory::new(id.to_string(), pts))
            .collect::<Result<Vec<_>, _>>()
            .map_err(core_err)?;
        let hm = heat_map_from_trajectories(&trajs, &grid, &heat, None).map_err(core_err)?;
        *out = Box::into_raw(Box::new(HmbHeatMap(hm)));
        Ok(())
    })
}

/// # Safety
/// `hm` must be a live handle; `cols` and `rows` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hmb_heatmap_dims(hm: *const HmbHeatMap, cols: *mut usize, rows: *mut usize) -> HmbStatus {
    guard(|| {
        let hm = hm.as_ref().ok_or_else(|| null("heat map"))?;
        if cols.is_null() || rows.is_null() {
            return Err(null("output"));
        }
        *cols = hm.0.cols();
        *rows = hm.0.rows();
        Ok(())
    })
}

/// Copies the row-major surface into `buf`, which must hold `cols * rows`
/// values.
///
/// # Safety
/// `hm` must be a live handle and `buf` must reference `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn hmb_heatmap_values(hm: *const HmbHeatMap, buf: *mut f64, len: usize) -> HmbStatus {
    guard(|| {
        let hm = hm.as_ref().ok_or_else(|| null("heat map"))?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let v = &hm.0.values;
        if len < v.len() {
            return Err((
                HmbStatus::InvalidArgument,
                format!("buffer holds {len} values, surface has {}", v.len()),
            ));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// # Safety
/// `hm` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hmb_heatmap_free(hm: *mut HmbHeatMap) {
    if !hm.is_null() {
        drop(Box::from_raw(hm));
    }
}

/// Loads a model file written by `hmb train`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hmb_model_load(path: *const c_char, out: *mut *mut HmbModel) -> HmbStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (HmbStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let model = load_model(path).map_err(core_err)?;
        let labels = model
            .labels()
            .into_iter()
            .map(|l| CString::new(l).expect("labels come from CSV text"))
            .collect();
        *out = Box::into_raw(Box::new(HmbModel { model, labels }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hmb_model_free(model: *mut HmbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of labels, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hmb_model_label_count(model: *const HmbModel) -> usize {
    model.as_ref().map_or(0, |m| m.labels.len())
}

/// Label `index`, owned by the model, or null when out of range.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hmb_model_label(model: *const HmbModel, index: usize) -> *const c_char {
    model
        .as_ref()
        .and_then(|m| m.labels.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

fn write_result(model: &HmbModel, label: &str, score: f64, index: *mut usize, out_score: *mut f64) {
    let i = model.labels.iter().position(|l| l.to_bytes() == label.as_bytes());
    // SAFETY: callers checked both pointers for null.
    unsafe {
        *index = i.expect("classifier returns model labels");
        *out_score = score;
    }
}

/// Adaptive surface fitting with `w` voting neighbors. A `sigma` of 0 or
/// less uses the model's kernel width.
///
/// # Safety
/// Handles must be live; `label_index` and `score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hmb_classify_asf(
    model: *const HmbModel,
    hm: *const HmbHeatMap,
    w: usize,
    sigma: f64,
    label_index: *mut usize,
    score: *mut f64,
) -> HmbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let hm = hm.as_ref().ok_or_else(|| null("heat map"))?;
        if label_index.is_null() || score.is_null() {
            return Err(null("output"));
        }
        let kc = KernelConfig {
            w,
            sigma: if sigma > 0.0 { sigma } else { m.model.sigma },
        };
        let c = classify_asf(&hm.0, &m.model, &kc).map_err(core_err)?;
        write_result(m, &c.label, c.score, label_index, score);
        Ok(())
    })
}

/// Surface fitting against the standard surfaces; `score` is the distance
/// to the winner.
///
/// # Safety
/// Handles must be live; `label_index` and `score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hmb_classify_sf(
    model: *const HmbModel,
    hm: *const HmbHeatMap,
    label_index: *mut usize,
    score: *mut f64,
) -> HmbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let hm = hm.as_ref().ok_or_else(|| null("heat map"))?;
        if label_index.is_null() || score.is_null() {
            return Err(null("output"));
        }
        let c = classify_sf(&hm.0, &m.model).map_err(core_err)?;
        write_result(m, &c.label, c.score, label_index, score);
        Ok(())
    })
}
