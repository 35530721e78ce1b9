//! C interface to `hero-core`.
//!
//! Models are opaque handles created by `hero_model_load` and released with
//! `hero_model_free`. Every fallible call returns a `HeroStatus`; on failure
//! the message is kept per thread and can be copied out with
//! `hero_last_error`. Panics never cross the boundary and are reported as
//! `HERO_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hero_core::feedback::{success_rate, OracleSpec};
use hero_core::noise_refine::concentration_diagnostic;
use hero_core::orchestrator::{generate_samples, load_model, LoadedModel};
use hero_core::HeroError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeroStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    BufferTooSmall = 5,
    Internal = 6,
    Panic = 7,
}

/// A loaded denoiser together with its schedule, sampler settings and, for
/// fine-tuned runs, the refined noise prior.
pub struct HeroModel {
    inner: LoadedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &HeroError) -> HeroStatus {
    match err {
        HeroError::InvalidArgument(_) | HeroError::Empty(_) | HeroError::Shape { .. } => {
            HeroStatus::InvalidArgument
        }
        HeroError::Io(_) => HeroStatus::Io,
        HeroError::Checkpoint(_) | HeroError::Json(_) | HeroError::CorruptLog { .. } => {
            HeroStatus::Checkpoint
        }
        _ => HeroStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (HeroStatus, String)>) -> HeroStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HeroStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside hero-core");
            HeroStatus::Panic
        }
    }
}

fn core<T>(r: hero_core::Result<T>) -> Result<T, (HeroStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (HeroStatus, String) {
    (HeroStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (HeroStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (HeroStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

/// Loads a run directory (with `checkpoint.json`) or a pretrained model
/// directory (with `model.json`).
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hero_model_load(dir: *const c_char, out: *mut *mut HeroModel) -> HeroStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let dir = str_arg(dir, "dir")?;
        let inner = core(load_model(Path::new(dir)))?;
        *out = Box::into_raw(Box::new(HeroModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `hero_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hero_model_free(model: *mut HeroModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sample dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hero_model_dim(model: *const HeroModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.net.config.dim)
}

/// Whether the model carries a refined noise prior (fine-tuned runs do).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hero_model_has_refined_prior(model: *const HeroModel) -> bool {
    model.as_ref().is_some_and(|m| m.inner.prior.is_some())
}

fn sample(m: &HeroModel, n: usize, seed: u64, refined: bool) -> Result<Vec<Vec<f64>>, (HeroStatus, String)> {
    let prior = match (refined, &m.inner.prior) {
        (false, _) => None,
        (true, Some(p)) => Some(p),
        (true, None) => {
            return Err((
                HeroStatus::InvalidArgument,
                "model has no refined prior".into(),
            ))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = &m.inner;
    core(generate_samples(&m.net, &m.schedule, &m.sampler, prior, m.condition, n, &mut rng))
}

/// Draws `n` samples into `out` as `n * dim` row-major values.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hero_model_sample(
    model: *const HeroModel,
    n: usize,
    seed: u64,
    refined_prior: bool,
    out: *mut f64,
    out_len: usize,
) -> HeroStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let need = n * m.inner.net.config.dim;
        if out_len < need {
            return Err((
                HeroStatus::BufferTooSmall,
                format!("need {need} values, buffer holds {out_len}"),
            ));
        }
        let rows = sample(m, n, seed, refined_prior)?;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (chunk, row) in dst.chunks_exact_mut(m.inner.net.config.dim).zip(&rows) {
            chunk.copy_from_slice(row);
        }
        Ok(())
    })
}

/// Fraction of `n` fresh samples accepted by the named oracle
/// (`mode-0` .. `mode-7`, `upper-half`, `bright-center`, `accept-all`).
///
/// # Safety
/// `oracle` must be a NUL-terminated string and `out_rate` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hero_model_evaluate(
    model: *const HeroModel,
    oracle: *const c_char,
    n: usize,
    seed: u64,
    refined_prior: bool,
    out_rate: *mut f64,
) -> HeroStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out_rate.is_null() {
            return Err(null("out_rate"));
        }
        let oracle = core(OracleSpec::named(str_arg(oracle, "oracle")?))?;
        let rows = sample(m, n, seed, refined_prior)?;
        *out_rate = core(success_rate(&rows, &oracle))?;
        Ok(())
    })
}

/// Fraction of refined-prior draws in dimension `dim` with
/// `|y| / sqrt(dim)` inside `[1 - sqrt(eps0_sq), 1 + sqrt(eps0_sq)]`.
///
/// # Safety
/// `out_fraction` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hero_concentration(
    dim: usize,
    eps0_sq: f64,
    n: usize,
    components: usize,
    seed: u64,
    out_fraction: *mut f64,
) -> HeroStatus {
    guard(|| {
        if out_fraction.is_null() {
            return Err(null("out_fraction"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let report = core(concentration_diagnostic(dim, eps0_sq, n, components, &mut rng))?;
        *out_fraction = report.fraction;
        Ok(())
    })
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the full message
/// length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hero_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hero_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
