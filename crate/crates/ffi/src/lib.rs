//! C ABI over `ddlab`: pmfs, forward propagation, correlation metrics and
//! convergence sweeps behind opaque handles.
//!
//! Every fallible call returns a `DdlabStatus`; on failure the message is
//! kept per thread and read back with `ddlab_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ddlab::experiments::{run_convergence_sweep, ExperimentConfig, SweepResult};
use ddlab::forward::{propagate_forward, NoiseKind};
use ddlab::info_metrics::{correlations_direct, correlations_quadrature, kl};
use ddlab::state_space::DensePmf;
use ddlab::targets::{build, DistributionSpec};
use ddlab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Resource = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdlabNoiseKind {
    Uniform = 0,
    Masking = 1,
}

impl From<DdlabNoiseKind> for NoiseKind {
    fn from(k: DdlabNoiseKind) -> Self {
        match k {
            DdlabNoiseKind::Uniform => NoiseKind::Uniform,
            DdlabNoiseKind::Masking => NoiseKind::Masking,
        }
    }
}

/// Opaque probability mass function over a product state space.
pub struct DdlabPmf {
    inner: DensePmf,
}

/// Opaque experiment configuration.
pub struct DdlabConfig {
    inner: ExperimentConfig,
}

/// Opaque result of a convergence sweep.
pub struct DdlabSweep {
    inner: SweepResult,
}

/// ℬ, 𝒞 and 𝒟 of a law, with quadrature error estimates for 𝒟.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DdlabCorrelations {
    pub dual_total_correlation: f64,
    pub total_correlation: f64,
    pub effective_total_correlation: f64,
    pub effective_error: f64,
}

/// One row of a sweep. `kl` is +∞ when the output misses data support.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DdlabSweepRow {
    pub n: usize,
    pub kl: f64,
    pub tv: f64,
    pub eps_score: f64,
    pub kappa_eff: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> DdlabStatus {
    match e {
        Error::Config(_) | Error::Parse(_) => DdlabStatus::Config,
        Error::Domain(_) | Error::Validation(_) | Error::Unsupported(_) => DdlabStatus::InvalidArgument,
        Error::SingularScore(_) | Error::Quadrature(_) => DdlabStatus::Numerical,
        Error::Resource(_) => DdlabStatus::Resource,
        Error::Io(_) => DdlabStatus::Io,
    }
}

/// Runs `f`, mapping errors and panics to a status and recording the message.
fn guard(f: impl FnOnce() -> Result<(), (DdlabStatus, String)>) -> DdlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdlabStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside ddlab");
            DdlabStatus::Panic
        }
    }
}

fn lib<T>(r: ddlab::Result<T>) -> Result<T, (DdlabStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (DdlabStatus, String) {
    (DdlabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, (DdlabStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (DdlabStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (DdlabStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

fn json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, (DdlabStatus, String)> {
    serde_json::from_str(text).map_err(|e| (DdlabStatus::Config, e.to_string()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ddlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated) and returns its full length in bytes, without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn ddlab_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a target law from a JSON `DistributionSpec`, e.g.
/// `{"type": "xor", "d": 4}`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ddlab_pmf_from_spec(spec_json: *const c_char, out: *mut *mut DdlabPmf) -> DdlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec: DistributionSpec = json(str_arg(spec_json, "spec_json")?)?;
        let inner = lib(build(&spec))?;
        *out = Box::into_raw(Box::new(DdlabPmf { inner }));
        Ok(())
    })
}

/// Builds a law over {0..vocab_size−1}^dim from `len = vocab_size^dim`
/// masses in mixed-radix order (coordinate 0 varies fastest).
///
/// # Safety
/// `mass` must be valid for `len` reads; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ddlab_pmf_from_mass(
    dim: usize,
    vocab_size: usize,
    mass: *const f64,
    len: usize,
    out: *mut *mut DdlabPmf,
) -> DdlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if mass.is_null() {
            return Err(null("mass"));
        }
        let alphabet = lib(ddlab::state_space::Alphabet::plain(vocab_size))?;
        let space = lib(ddlab::state_space::StateSpace::new(dim, alphabet))?;
        if space.len() != len {
            return Err((
                DdlabStatus::InvalidArgument,
                format!("expected {} masses, got {len}", space.len()),
            ));
        }
        let inner = lib(DensePmf::new(space, std::slice::from_raw_parts(mass, len).to_vec()))?;
        *out = Box::into_raw(Box::new(DdlabPmf { inner }));
        Ok(())
    })
}

/// # Safety
/// `pmf` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddlab_pmf_free(pmf: *mut DdlabPmf) {
    if !pmf.is_null() {
        drop(Box::from_raw(pmf));
    }
}

/// Number of states, or 0 for a null handle.
///
/// # Safety
/// `pmf` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddlab_pmf_len(pmf: *const DdlabPmf) -> usize {
    pmf.as_ref().map_or(0, |p| p.inner.space().len())
}

/// Coordinates and vocabulary size (without MASK) of the law.
///
/// # Safety
/// `pmf` must be a live handle; `dim` and `vocab_size` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ddlab_pmf_shape(
    pmf: *const DdlabPmf,
    dim: *mut usize,
    vocab_size: *mut usize,
    has_mask: *mut bool,
) -> DdlabStatus {
    guard(|| {
        let p = handle(pmf, "pmf")?;
        if dim.is_null() || vocab_size.is_null() || has_mask.is_null() {
            return Err(null("output pointer"));
        }
        *dim = p.inner.space().dim();
        *vocab_size = p.inner.space().vocab_size();
        *has_mask = p.inner.space().alphabet().mask().is_some();
        Ok(())
    })
}

/// Copies the masses into `out`, which must hold `ddlab_pmf_len` values.
///
/// # Safety
/// `pmf` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ddlab_pmf_mass(pmf: *const DdlabPmf, out: *mut f64, len: usize) -> DdlabStatus {
    guard(|| {
        let p = handle(pmf, "pmf")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mass = p.inner.mass();
        if len < mass.len() {
            return Err((DdlabStatus::InvalidArgument, format!("buffer holds {len}, need {}", mass.len())));
        }
        ptr::copy_nonoverlapping(mass.as_ptr(), out, mass.len());
        Ok(())
    })
}

/// Forward marginal q_t of the law under the given noise; a new handle.
/// Masking results live on the alphabet with MASK as the last symbol.
///
/// # Safety
/// `pmf` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ddlab_pmf_propagate(
    pmf: *const DdlabPmf,
    kind: DdlabNoiseKind,
    t: f64,
    out: *mut *mut DdlabPmf,
) -> DdlabStatus {
    guard(|| {
        let p = handle(pmf, "pmf")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = lib(propagate_forward(&p.inner, kind.into(), t))?;
        *out = Box::into_raw(Box::new(DdlabPmf { inner }));
        Ok(())
    })
}

/// KL(p ‖ q); writes +∞ when p is not absolutely continuous w.r.t. q.
///
/// # Safety
/// `p`, `q` must be live handles; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ddlab_kl(p: *const DdlabPmf, q: *const DdlabPmf, out: *mut f64) -> DdlabStatus {
    guard(|| {
        let (p, q) = (handle(p, "p")?, handle(q, "q")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lib(kl(&p.inner, &q.inner))?.as_f64();
        Ok(())
    })
}

/// ℬ and 𝒞 by enumeration, 𝒟 by quadrature at relative tolerance `rel_tol`.
///
/// # Safety
/// `pmf` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ddlab_correlations(
    pmf: *const DdlabPmf,
    rel_tol: f64,
    out: *mut DdlabCorrelations,
) -> DdlabStatus {
    guard(|| {
        let p = handle(pmf, "pmf")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (b, c) = lib(correlations_direct(&p.inner))?;
        let prof = lib(correlations_quadrature(&p.inner, "ffi", rel_tol))?;
        *out = DdlabCorrelations {
            dual_total_correlation: b,
            total_correlation: c,
            effective_total_correlation: prof.d_quad.value,
            effective_error: prof.d_quad.error,
        };
        Ok(())
    })
}

/// Parses and validates an experiment config given as JSON.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ddlab_config_from_json(
    config_json: *const c_char,
    out: *mut *mut DdlabConfig,
) -> DdlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner: ExperimentConfig = json(str_arg(config_json, "config_json")?)?;
        lib(inner.validate())?;
        *out = Box::into_raw(Box::new(DdlabConfig { inner }));
        Ok(())
    })
}

/// Loads a TOML (or `.json`) config file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ddlab_config_load(path: *const c_char, out: *mut *mut DdlabConfig) -> DdlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = lib(ExperimentConfig::load(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(DdlabConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddlab_config_free(config: *mut DdlabConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the convergence sweep of `config`. Rows that fail are left out of the
/// result; their count is reported by `ddlab_sweep_failures`.
///
/// # Safety
/// `config` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ddlab_sweep_run(config: *const DdlabConfig, out: *mut *mut DdlabSweep) -> DdlabStatus {
    guard(|| {
        let c = handle(config, "config")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = lib(run_convergence_sweep(&c.inner))?;
        *out = Box::into_raw(Box::new(DdlabSweep { inner }));
        Ok(())
    })
}

/// # Safety
/// `sweep` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddlab_sweep_free(sweep: *mut DdlabSweep) {
    if !sweep.is_null() {
        drop(Box::from_raw(sweep));
    }
}

/// # Safety
/// `sweep` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddlab_sweep_len(sweep: *const DdlabSweep) -> usize {
    sweep.as_ref().map_or(0, |s| s.inner.rows.len())
}

/// # Safety
/// `sweep` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddlab_sweep_failures(sweep: *const DdlabSweep) -> usize {
    sweep.as_ref().map_or(0, |s| s.inner.failures.len())
}

/// # Safety
/// `sweep` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ddlab_sweep_row(sweep: *const DdlabSweep, index: usize, out: *mut DdlabSweepRow) -> DdlabStatus {
    guard(|| {
        let s = handle(sweep, "sweep")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = s.inner.rows.get(index).ok_or_else(|| {
            (
                DdlabStatus::InvalidArgument,
                format!("row {index} out of range ({} rows)", s.inner.rows.len()),
            )
        })?;
        *out = DdlabSweepRow {
            n: r.n,
            kl: r.kl.as_f64(),
            tv: r.tv,
            eps_score: r.eps_score,
            kappa_eff: r.kappa_eff,
        };
        Ok(())
    })
}
