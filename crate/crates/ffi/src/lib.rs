//! C interface to the sampler.
//!
//! Every function returns an [`HvffbsStatus`]; on failure the message is
//! available from [`hvffbs_last_error`] on the same thread. Handles are opaque
//! and must be released with [`hvffbs_sampler_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::DVector;

use hvffbs::config::ExperimentConfig;
use hvffbs::eval::crps;
use hvffbs::experiment::{build_grid, build_ordering, build_problem, Problem, Sampler};
use hvffbs::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HvffbsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    Numerical = 3,
    BufferTooSmall = 4,
    InvalidState = 5,
    Panic = 6,
    InvalidArgument = 7,
}

/// Opaque sampler handle.
pub struct HvSampler {
    config: ExperimentConfig,
    problem: Option<Problem>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

type Outcome = Result<(), (HvffbsStatus, String)>;

fn classify(e: Error) -> (HvffbsStatus, String) {
    let status = match &e {
        Error::Config { .. } | Error::Parse { .. } => HvffbsStatus::InvalidConfig,
        e if e.is_numerical() => HvffbsStatus::Numerical,
        _ => HvffbsStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn guard(f: impl FnOnce() -> Outcome) -> HvffbsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HvffbsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HvffbsStatus::Panic
        }
    }
}

fn null() -> (HvffbsStatus, String) {
    (HvffbsStatus::NullPointer, "null pointer argument".into())
}

unsafe fn sampler_ref<'a>(s: *const HvSampler) -> Result<&'a HvSampler, (HvffbsStatus, String)> {
    s.as_ref().ok_or_else(null)
}

fn problem(s: &HvSampler) -> Result<&Problem, (HvffbsStatus, String)> {
    s.problem
        .as_ref()
        .ok_or_else(|| (HvffbsStatus::InvalidState, "no data yet; call hvffbs_sampler_simulate first".into()))
}

unsafe fn out_buffer<'a>(out: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], (HvffbsStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    if len < needed {
        return Err((HvffbsStatus::BufferTooSmall, format!("buffer holds {len} values, {needed} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(out, needed))
}

/// Creates a sampler from configuration text (empty text uses the defaults).
///
/// # Safety
/// `config_text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hvffbs_sampler_new(config_text: *const c_char, out: *mut *mut HvSampler) -> HvffbsStatus {
    guard(|| {
        if config_text.is_null() || out.is_null() {
            return Err(null());
        }
        let text = CStr::from_ptr(config_text)
            .to_str()
            .map_err(|_| (HvffbsStatus::InvalidConfig, "configuration is not UTF-8".to_string()))?;
        let config = ExperimentConfig::parse(text).map_err(classify)?;
        *out = Box::into_raw(Box::new(HvSampler { config, problem: None }));
        Ok(())
    })
}

/// Releases a sampler; null is ignored.
///
/// # Safety
/// `s` must come from [`hvffbs_sampler_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hvffbs_sampler_free(s: *mut HvSampler) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of grid points.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hvffbs_sampler_state_dim(s: *const HvSampler, out: *mut usize) -> HvffbsStatus {
    guard(|| {
        let s = sampler_ref(s)?;
        let out = out.as_mut().ok_or_else(null)?;
        *out = s.config.model.rows * s.config.model.cols;
        Ok(())
    })
}

/// Number of data time points.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hvffbs_sampler_horizon(s: *const HvSampler, out: *mut usize) -> HvffbsStatus {
    guard(|| {
        let s = sampler_ref(s)?;
        let out = out.as_mut().ok_or_else(null)?;
        *out = s.config.model.horizon;
        Ok(())
    })
}

/// Maximum number of nonzeros per row of the configured pattern.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hvffbs_sampler_pattern_max_row(s: *const HvSampler, out: *mut usize) -> HvffbsStatus {
    guard(|| {
        let s = sampler_ref(s)?;
        let out = out.as_mut().ok_or_else(null)?;
        let grid = build_grid(&s.config.model).map_err(classify)?;
        *out = build_ordering(&s.config.method, s.config.method.pattern, &grid)
            .map_err(classify)?
            .pattern
            .max_row_nnz();
        Ok(())
    })
}

/// Sparsity pattern of the configured method in text form. Release the
/// string with [`hvffbs_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hvffbs_sampler_pattern_text(s: *const HvSampler, out: *mut *mut c_char) -> HvffbsStatus {
    guard(|| {
        let s = sampler_ref(s)?;
        if out.is_null() {
            return Err(null());
        }
        let grid = build_grid(&s.config.model).map_err(classify)?;
        let text = build_ordering(&s.config.method, s.config.method.pattern, &grid)
            .map_err(classify)?
            .pattern
            .to_text();
        *out = CString::new(text).unwrap_or_default().into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hvffbs_string_free(p: *mut c_char) {
    if !p.is_null() {
        drop(CString::from_raw(p));
    }
}

/// Simulates the true trajectory and observations for `seed`.
///
/// # Safety
/// `s` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn hvffbs_sampler_simulate(s: *mut HvSampler, seed: u64) -> HvffbsStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(null)?;
        s.problem = Some(build_problem(&s.config.model, seed).map_err(classify)?);
        Ok(())
    })
}

/// Copies the true states `x_1..x_T` (time-major, `T * n` values).
///
/// # Safety
/// `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn hvffbs_sampler_truth(s: *const HvSampler, out: *mut f64, len: usize) -> HvffbsStatus {
    guard(|| {
        let p = problem(sampler_ref(s)?)?;
        let states = p.states();
        let n = p.grid.len();
        let buf = out_buffer(out, len, states.len() * n)?;
        for (t, x) in states.iter().enumerate() {
            buf[t * n..(t + 1) * n].copy_from_slice(x.as_slice());
        }
        Ok(())
    })
}

/// Draws `n_samples` trajectories given the simulated data and writes them
/// sample-major, then time, then grid index (`n_samples * T * n` values).
///
/// # Safety
/// `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn hvffbs_sampler_draw(
    s: *const HvSampler,
    n_samples: usize,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> HvffbsStatus {
    guard(|| {
        let s = sampler_ref(s)?;
        let p = problem(s)?;
        if n_samples == 0 {
            return Err((HvffbsStatus::InvalidArgument, "n_samples must be at least 1".into()));
        }
        let n = p.grid.len();
        let t_max = p.model.horizon();
        let buf = out_buffer(out, len, n_samples * t_max * n)?;
        let sampler = Sampler::new(&s.config, s.config.method.pattern, p).map_err(classify)?;
        let draws = sampler.sample(p.observations(), n_samples, seed).map_err(classify)?;
        for (k, d) in draws.iter().enumerate() {
            for (t, x) in d.iter().enumerate() {
                let at = (k * t_max + t) * n;
                buf[at..at + n].copy_from_slice(x.as_slice());
            }
        }
        Ok(())
    })
}

/// Ensemble CRPS of `n_members` vectors of length `dim` (member-major)
/// against `target`.
///
/// # Safety
/// `members` must hold `n_members * dim` values and `target` `dim` values.
#[no_mangle]
pub unsafe extern "C" fn hvffbs_crps(
    members: *const f64,
    n_members: usize,
    dim: usize,
    target: *const f64,
    out: *mut f64,
) -> HvffbsStatus {
    guard(|| {
        if members.is_null() || target.is_null() || out.is_null() {
            return Err(null());
        }
        let m = std::slice::from_raw_parts(members, n_members * dim);
        let ens: Vec<DVector<f64>> = m.chunks(dim.max(1)).take(n_members).map(DVector::from_column_slice).collect();
        let target = DVector::from_column_slice(std::slice::from_raw_parts(target, dim));
        *out = crps(&ens, &target).map_err(classify)?;
        Ok(())
    })
}

/// Message of the last failure on this thread (empty after a success).
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn hvffbs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hvffbs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
