//! C ABI over the calibration toolkit.
//!
//! Objects are opaque handles created and released by paired functions.
//! Every fallible call returns an [`LgcStatus`]; the message of the most
//! recent failure on the calling thread is available from
//! [`lgc_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lidar_gins_calib::cloud::PointCloud;
use lidar_gins_calib::dataset::{load_dataset, Dataset};
use lidar_gins_calib::metrics::evaluate_map;
use lidar_gins_calib::pipeline::{calibrate_dataset, jacobian_suite, CalibrationReport, PipelineConfig};
use lidar_gins_calib::simgen::{generate_dataset, write_dataset, SimSettings};
use lidar_gins_calib::Error;
use nalgebra::Vector3;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LgcStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Dataset = 3,
    Numerical = 4,
    InvalidArgument = 5,
    Panic = 6,
}

impl From<&Error> for LgcStatus {
    fn from(e: &Error) -> Self {
        match e.exit_code() {
            2 => LgcStatus::Config,
            3 => LgcStatus::Dataset,
            _ => LgcStatus::Numerical,
        }
    }
}

/// Rigid transform as translation and unit quaternion `(x, y, z, w)`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LgcPose {
    pub translation: [f64; 3],
    pub quaternion: [f64; 4],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LgcMapMetrics {
    pub mme: f64,
    pub mpv: f64,
    pub n_points_evaluated: usize,
    pub n_points: usize,
    pub radius: f64,
}

pub struct LgcDataset(Dataset);
pub struct LgcConfig(PipelineConfig);
pub struct LgcReport(CalibrationReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), LgcStatus>) -> LgcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LgcStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            LgcStatus::Panic
        }
    }
}

fn fail(e: Error) -> LgcStatus {
    let s = LgcStatus::from(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> LgcStatus {
    set_error(format!("{what} is null"));
    LgcStatus::NullArgument
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, LgcStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not UTF-8"));
        LgcStatus::InvalidArgument
    })
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn lgc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

fn sim_settings(seed: u64, zero_noise: bool) -> SimSettings {
    SimSettings {
        seed,
        zero_noise,
        ..SimSettings::default()
    }
}

/// Writes the default two-sensor synthetic dataset to `out_dir`.
///
/// # Safety
/// `out_dir` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lgc_simulate(seed: u64, zero_noise: bool, out_dir: *const c_char) -> LgcStatus {
    guard(|| {
        let dir = str_arg(out_dir, "out_dir")?;
        let cfg = sim_settings(seed, zero_noise).to_sim_config().map_err(fail)?;
        write_dataset(&cfg, dir).map_err(fail)?;
        Ok(())
    })
}

/// Generates the default two-sensor synthetic dataset in memory.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn lgc_dataset_simulate(seed: u64, zero_noise: bool, out: *mut *mut LgcDataset) -> LgcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = sim_settings(seed, zero_noise).to_sim_config().map_err(fail)?;
        let ds = generate_dataset(&cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(LgcDataset(ds)));
        Ok(())
    })
}

/// Loads a dataset directory.
///
/// # Safety
/// `dir` must be a valid NUL-terminated string and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn lgc_dataset_load(dir: *const c_char, out: *mut *mut LgcDataset) -> LgcStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = load_dataset(dir).map_err(fail)?;
        *out = Box::into_raw(Box::new(LgcDataset(ds)));
        Ok(())
    })
}

/// Number of sensors, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lgc_dataset_sensor_count(ds: *const LgcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.sensors.len())
}

/// # Safety
/// `ds` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lgc_dataset_free(ds: *mut LgcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Default pipeline configuration.
#[no_mangle]
pub extern "C" fn lgc_config_new() -> *mut LgcConfig {
    Box::into_raw(Box::new(LgcConfig(PipelineConfig::default())))
}

/// Sets one `key = value` entry.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn lgc_config_set(cfg: *mut LgcConfig, key: *const c_char, value: *const c_char) -> LgcStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        cfg.0.set(key, value).map_err(fail)
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lgc_config_free(cfg: *mut LgcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the pipeline on a dataset.
///
/// # Safety
/// `ds` and `cfg` must be live handles and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn lgc_calibrate(
    ds: *const LgcDataset,
    cfg: *const LgcConfig,
    out: *mut *mut LgcReport,
) -> LgcStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let report = calibrate_dataset(&ds.0, &cfg.0).map_err(fail)?;
        *out = Box::into_raw(Box::new(LgcReport(report)));
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lgc_report_sensor_count(report: *const LgcReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.sensors.len())
}

/// Final GINS-from-LiDAR extrinsic of sensor `index`.
///
/// # Safety
/// `report` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn lgc_report_extrinsic(report: *const LgcReport, index: usize, out: *mut LgcPose) -> LgcStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let t = r.0.g_lm.get(index).ok_or_else(|| {
            set_error(format!("sensor index {index} out of range"));
            LgcStatus::InvalidArgument
        })?;
        let tr = t.translation;
        *out = LgcPose {
            translation: [tr.x, tr.y, tr.z],
            quaternion: t.quaternion_xyzw(),
        };
        Ok(())
    })
}

/// Key-value report text; release with [`lgc_string_free`]. Null on a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lgc_report_key_values(report: *const LgcReport) -> *mut c_char {
    match report.as_ref() {
        Some(r) => CString::new(r.0.to_key_value_text()).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `report` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lgc_report_free(report: *mut LgcReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lgc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// MME and MPV of `n` points stored as `x y z` triples.
///
/// # Safety
/// `xyz` must be valid for `3 * n` reads and `out` for a write.
#[no_mangle]
pub unsafe extern "C" fn lgc_map_metrics(xyz: *const f64, n: usize, radius: f64, out: *mut LgcMapMetrics) -> LgcStatus {
    guard(|| {
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let raw = std::slice::from_raw_parts(xyz, 3 * n);
        let cloud = PointCloud::new(raw.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect());
        let m = evaluate_map(&cloud, radius).map_err(fail)?;
        *out = LgcMapMetrics {
            mme: m.mme,
            mpv: m.mpv,
            n_points_evaluated: m.n_points_evaluated,
            n_points: m.n_points,
            radius: m.radius,
        };
        Ok(())
    })
}

/// Largest finite-difference Jacobian error over every factor family.
///
/// # Safety
/// `max_error` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn lgc_jacobian_check(configurations: usize, seed: u64, max_error: *mut f64) -> LgcStatus {
    guard(|| {
        let out = max_error.as_mut().ok_or_else(|| null("max_error"))?;
        let r = jacobian_suite(configurations, seed).map_err(fail)?;
        *out = r.iter().map(|c| c.max_error).fold(0.0, f64::max);
        Ok(())
    })
}
