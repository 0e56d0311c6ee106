//! C ABI for the `fisher-mala` crate.
//!
//! Objects cross the boundary as opaque handles (`FmPrecond`, `FmChain`)
//! that the caller releases with the matching `*_free` function. Every
//! fallible call returns an [`FmStatus`]; on failure a description is
//! available from [`fm_last_error`] on the same thread.
//!
//! Matrices are exchanged as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fisher_mala::config::ExperimentConfig;
use fisher_mala::diagnostics;
use fisher_mala::experiments::{ExperimentError, Problem};
use fisher_mala::linalg::{Matrix, SqrtPreconditioner};
use fisher_mala::persist::{self, PersistError};
use fisher_mala::samplers::{run_chain, ChainRecord, SamplerKind};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The configuration text did not parse or validate.
    Config = 3,
    Io = 4,
    /// A chain file failed its checksum or structural checks.
    Corrupt = 5,
    /// Sampling or numerical failure.
    Runtime = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Sampler selector for [`fm_run_config`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmSampler {
    FisherMala = 0,
    AdaMala = 1,
    Mala = 2,
    Pcn = 3,
}

impl From<FmSampler> for SamplerKind {
    fn from(s: FmSampler) -> Self {
        match s {
            FmSampler::FisherMala => SamplerKind::FisherMala,
            FmSampler::AdaMala => SamplerKind::AdaMala,
            FmSampler::Mala => SamplerKind::Mala,
            FmSampler::Pcn => SamplerKind::Pcn,
        }
    }
}

/// Square-root Fisher preconditioner `M = R Rᵀ`.
pub struct FmPrecond {
    inner: SqrtPreconditioner,
}

/// A chain: every iteration's state plus acceptance and phase bookkeeping.
pub struct FmChain {
    record: ChainRecord,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: FmStatus, msg: impl Into<String>) -> FmStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> FmStatus) -> FmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            fail(FmStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn persist_status(e: &PersistError) -> FmStatus {
    match e {
        PersistError::Io { .. } => FmStatus::Io,
        _ => FmStatus::Corrupt,
    }
}

fn experiment_status(e: &ExperimentError) -> FmStatus {
    match e {
        ExperimentError::Config(_) => FmStatus::Config,
        ExperimentError::Persist(p) => persist_status(p),
        _ => FmStatus::Runtime,
    }
}

/// # Safety
/// `p` must be null or point to `len` readable doubles.
unsafe fn slice<'a>(p: *const f64, len: usize) -> Option<&'a [f64]> {
    if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

/// # Safety
/// `p` must be null or point to `len` writable doubles.
unsafe fn slice_mut<'a>(p: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(p, len))
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn string<'a>(s: *const c_char) -> Result<&'a str, FmStatus> {
    if s.is_null() {
        return Err(fail(FmStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        fail(
            FmStatus::InvalidArgument,
            "string argument is not valid UTF-8",
        )
    })
}

fn copy_out(src: &[f64], dst: Option<&mut [f64]>, what: &str) -> FmStatus {
    match dst {
        None => fail(
            FmStatus::NullPointer,
            format!("{what}: output buffer is null"),
        ),
        Some(d) if d.len() != src.len() => fail(
            FmStatus::InvalidArgument,
            format!(
                "{what}: buffer holds {} values, need {}",
                d.len(),
                src.len()
            ),
        ),
        Some(d) => {
            d.copy_from_slice(src);
            FmStatus::Ok
        }
    }
}

/// Message for the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Starts a preconditioner from the first signal `s1` (length `dim`) with damping `lambda`.
///
/// # Safety
/// `s1` must point to `dim` doubles and `out` to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn fm_precond_new(
    s1: *const f64,
    dim: usize,
    lambda: f64,
    out: *mut *mut FmPrecond,
) -> FmStatus {
    guard(|| {
        if out.is_null() {
            return fail(FmStatus::NullPointer, "fm_precond_new: out is null");
        }
        let Some(s) = slice(s1, dim) else {
            return fail(FmStatus::NullPointer, "fm_precond_new: s1 is null");
        };
        if dim == 0 || !s.iter().all(|v| v.is_finite()) {
            return fail(
                FmStatus::InvalidArgument,
                "fm_precond_new: need dim > 0 and a finite signal",
            );
        }
        match SqrtPreconditioner::init(s, lambda) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(FmPrecond { inner }));
                FmStatus::Ok
            }
            Err(e) => fail(FmStatus::InvalidArgument, format!("fm_precond_new: {e}")),
        }
    })
}

/// Rank-one update with signal `s` of length `dim`.
///
/// # Safety
/// `p` must be a live handle and `s` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_precond_update(
    p: *mut FmPrecond,
    s: *const f64,
    dim: usize,
) -> FmStatus {
    guard(|| {
        let Some(p) = p.as_mut() else {
            return fail(FmStatus::NullPointer, "fm_precond_update: handle is null");
        };
        let Some(s) = slice(s, dim) else {
            return fail(FmStatus::NullPointer, "fm_precond_update: signal is null");
        };
        if dim != p.inner.dim() {
            return fail(
                FmStatus::InvalidArgument,
                format!(
                    "fm_precond_update: signal has length {dim}, preconditioner has dimension {}",
                    p.inner.dim()
                ),
            );
        }
        if !s.iter().all(|v| v.is_finite()) {
            return fail(
                FmStatus::InvalidArgument,
                "fm_precond_update: signal is not finite",
            );
        }
        p.inner.update(s);
        FmStatus::Ok
    })
}

/// Dimension of the preconditioner, 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fm_precond_dim(p: *const FmPrecond) -> usize {
    p.as_ref().map_or(0, |p| p.inner.dim())
}

/// Writes `M = R Rᵀ` row-major into `out` (`len` must be `dim²`).
///
/// # Safety
/// `p` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_precond_matrix(
    p: *const FmPrecond,
    out: *mut f64,
    len: usize,
) -> FmStatus {
    guard(|| {
        let Some(p) = p.as_ref() else {
            return fail(FmStatus::NullPointer, "fm_precond_matrix: handle is null");
        };
        copy_out(
            p.inner.covariance().as_slice(),
            slice_mut(out, len),
            "fm_precond_matrix",
        )
    })
}

/// Writes `M v` into `out`; both vectors have length `dim`.
///
/// # Safety
/// `p` must be a live handle; `v` and `out` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_precond_apply(
    p: *const FmPrecond,
    v: *const f64,
    out: *mut f64,
    dim: usize,
) -> FmStatus {
    guard(|| {
        let Some(p) = p.as_ref() else {
            return fail(FmStatus::NullPointer, "fm_precond_apply: handle is null");
        };
        let Some(v) = slice(v, dim) else {
            return fail(FmStatus::NullPointer, "fm_precond_apply: input is null");
        };
        if dim != p.inner.dim() {
            return fail(
                FmStatus::InvalidArgument,
                "fm_precond_apply: dimension mismatch",
            );
        }
        copy_out(
            &p.inner.precondition(v),
            slice_mut(out, dim),
            "fm_precond_apply",
        )
    })
}

/// Releases a preconditioner; null is ignored.
///
/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_precond_free(p: *mut FmPrecond) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// ESS of an `n × dim` row-major sample matrix at maximum lag `lag`.
///
/// Writes per-coordinate ESS into `ess_out` (length `dim`) and, if
/// `monolithic_out` is not null, `n / τ_max` into it.
///
/// # Safety
/// `samples` must point to `n·dim` doubles, `ess_out` to `dim` writable
/// doubles and `monolithic_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn fm_ess(
    samples: *const f64,
    n: usize,
    dim: usize,
    lag: usize,
    ess_out: *mut f64,
    monolithic_out: *mut f64,
) -> FmStatus {
    guard(|| {
        let Some(data) = n.checked_mul(dim).and_then(|len| slice(samples, len)) else {
            return fail(
                FmStatus::NullPointer,
                "fm_ess: samples are null or too large",
            );
        };
        let m = match Matrix::from_row_major(n, dim, data.to_vec()) {
            Ok(m) => m,
            Err(e) => return fail(FmStatus::InvalidArgument, format!("fm_ess: {e}")),
        };
        let rep = match diagnostics::ess(&m, lag) {
            Ok(r) => r,
            Err(e) => return fail(FmStatus::InvalidArgument, format!("fm_ess: {e}")),
        };
        let status = copy_out(&rep.ess, slice_mut(ess_out, dim), "fm_ess");
        if status == FmStatus::Ok && !monolithic_out.is_null() {
            *monolithic_out = rep.monolithic;
        }
        status
    })
}

/// Runs one chain of `sampler` for the experiment described by the TOML
/// text `config`, using the seed of replicate `replicate`.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fm_run_config(
    config: *const c_char,
    sampler: FmSampler,
    replicate: usize,
    out: *mut *mut FmChain,
) -> FmStatus {
    guard(|| {
        if out.is_null() {
            return fail(FmStatus::NullPointer, "fm_run_config: out is null");
        }
        let text = match string(config) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg = match ExperimentConfig::from_toml_str(text) {
            Ok(c) => c,
            Err(e) => return fail(FmStatus::Config, e.to_string()),
        };
        let problem = match Problem::build(&cfg) {
            Ok(p) => p,
            Err(e) => return fail(experiment_status(&e), e.to_string()),
        };
        let kind = SamplerKind::from(sampler);
        let target = problem.target(kind);
        match run_chain(
            kind,
            target.as_ref(),
            &cfg.chain,
            cfg.chain_seed(kind, replicate),
        ) {
            Ok(run) => {
                *out = Box::into_raw(Box::new(FmChain { record: run.record }));
                FmStatus::Ok
            }
            Err(e) => fail(FmStatus::Runtime, format!("{kind}: {e}")),
        }
    })
}

/// Loads a chain file written by the `fisher-mala` tools.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fm_chain_read(path: *const c_char, out: *mut *mut FmChain) -> FmStatus {
    guard(|| {
        if out.is_null() {
            return fail(FmStatus::NullPointer, "fm_chain_read: out is null");
        }
        let path = match string(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match persist::read_chain(Path::new(path)) {
            Ok((_, record)) => {
                *out = Box::into_raw(Box::new(FmChain { record }));
                FmStatus::Ok
            }
            Err(e) => fail(persist_status(&e), e.to_string()),
        }
    })
}

/// Writes a chain in the binary chain format.
///
/// # Safety
/// `chain` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fm_chain_write(chain: *const FmChain, path: *const c_char) -> FmStatus {
    guard(|| {
        let Some(c) = chain.as_ref() else {
            return fail(FmStatus::NullPointer, "fm_chain_write: handle is null");
        };
        let path = match string(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match persist::write_chain(Path::new(path), &c.record, None) {
            Ok(()) => FmStatus::Ok,
            Err(e) => fail(persist_status(&e), e.to_string()),
        }
    })
}

/// Total number of stored iterations, 0 for a null handle.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fm_chain_len(chain: *const FmChain) -> usize {
    chain.as_ref().map_or(0, |c| c.record.len())
}

/// State dimension, 0 for a null handle.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fm_chain_dim(chain: *const FmChain) -> usize {
    chain.as_ref().map_or(0, |c| c.record.dim)
}

/// Index of the first collection-phase iteration, 0 for a null handle.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fm_chain_burn_in(chain: *const FmChain) -> usize {
    chain.as_ref().map_or(0, |c| c.record.marks.burn_in_end)
}

/// Copies all states (`len × dim`, row-major) into `out`; `n` must equal `len·dim`.
///
/// # Safety
/// `chain` must be a live handle and `out` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_chain_samples(
    chain: *const FmChain,
    out: *mut f64,
    n: usize,
) -> FmStatus {
    guard(|| {
        let Some(c) = chain.as_ref() else {
            return fail(FmStatus::NullPointer, "fm_chain_samples: handle is null");
        };
        copy_out(&c.record.samples, slice_mut(out, n), "fm_chain_samples")
    })
}

/// Collection-phase posterior mean into `out` (length `dim`).
///
/// # Safety
/// `chain` must be a live handle and `out` must point to `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fm_chain_posterior_mean(
    chain: *const FmChain,
    out: *mut f64,
    dim: usize,
) -> FmStatus {
    guard(|| {
        let Some(c) = chain.as_ref() else {
            return fail(
                FmStatus::NullPointer,
                "fm_chain_posterior_mean: handle is null",
            );
        };
        copy_out(
            &c.record.posterior_mean(),
            slice_mut(out, dim),
            "fm_chain_posterior_mean",
        )
    })
}

/// Collection-phase acceptance rate.
///
/// # Safety
/// `chain` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fm_chain_acceptance_rate(
    chain: *const FmChain,
    out: *mut f64,
) -> FmStatus {
    guard(|| {
        let Some(c) = chain.as_ref() else {
            return fail(
                FmStatus::NullPointer,
                "fm_chain_acceptance_rate: handle is null",
            );
        };
        if out.is_null() {
            return fail(
                FmStatus::NullPointer,
                "fm_chain_acceptance_rate: out is null",
            );
        }
        *out = c.record.collection_acceptance_rate();
        FmStatus::Ok
    })
}

/// Releases a chain; null is ignored.
///
/// # Safety
/// `chain` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fm_chain_free(chain: *mut FmChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}
