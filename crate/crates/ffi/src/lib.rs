//! C ABI over the toy and hypercube targets, the samplers and the facet update.
//!
//! Every function returns a [`VmStatus`]. On failure a description is kept per
//! thread and can be read with [`vm_last_error_message`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voronoi_mcmc::diagnostics::js_divergence;
use voronoi_mcmc::samplers::{initial_state, step};
use voronoi_mcmc::{
    refract_reflect, Algorithm, ChainState, Error, RefractionForm, SamplerConfig, VoronoiMeasureSpec,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BoundaryPoint = 3,
    OutsideBox = 4,
    TooManyEvents = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VmAlgorithm {
    Hmc = 0,
    Langevin = 1,
    ProjectedLangevin = 2,
    Svs = 3,
}

impl From<VmAlgorithm> for Algorithm {
    fn from(a: VmAlgorithm) -> Self {
        match a {
            VmAlgorithm::Hmc => Algorithm::Hmc,
            VmAlgorithm::Langevin => Algorithm::Langevin,
            VmAlgorithm::ProjectedLangevin => Algorithm::ProjectedLangevin,
            VmAlgorithm::Svs => Algorithm::Svs,
        }
    }
}

/// A Voronoi measure over a categorical toy target.
pub struct VmSpec {
    inner: VoronoiMeasureSpec,
}

/// A single chain with its own copy of the measure and its own RNG.
pub struct VmChain {
    spec: VoronoiMeasureSpec,
    config: SamplerConfig,
    state: ChainState,
    rng: ChaCha8Rng,
    t: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> VmStatus {
    match err {
        Error::BoundaryPoint => VmStatus::BoundaryPoint,
        Error::OutsideBox => VmStatus::OutsideBox,
        Error::TooManyEvents { .. } => VmStatus::TooManyEvents,
        Error::Chain { source, .. } => status_of(source),
        Error::Check(_) | Error::EmptyStream => VmStatus::Internal,
        _ => VmStatus::InvalidArgument,
    }
}

struct Fail(VmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(VmStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> VmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => VmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            VmStatus::Internal
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Fail> {
    if got != want {
        return Err(Fail(
            VmStatus::InvalidArgument,
            format!("{what} has length {got}, expected {want}"),
        ));
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vm_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains a nul byte"),
    };
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

unsafe fn new_spec(
    build: impl FnOnce(&[f64]) -> voronoi_mcmc::Result<VoronoiMeasureSpec>,
    probs: *const f64,
    n_probs: usize,
    out: *mut *mut VmSpec,
) -> VmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let probs = unsafe { input(probs, n_probs, "probs")? };
        let inner = build(probs)?;
        unsafe { *out = Box::into_raw(Box::new(VmSpec { inner })) };
        Ok(())
    })
}

/// Four-cell square target in `[-2, 2]^2`. `n_probs` must be 4.
///
/// # Safety
/// `probs` must point to `n_probs` doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn vm_toy_spec_new(
    probs: *const f64,
    n_probs: usize,
    temperature: f64,
    out: *mut *mut VmSpec,
) -> VmStatus {
    unsafe { new_spec(|p| VoronoiMeasureSpec::toy(p, temperature), probs, n_probs, out) }
}

/// `2^k` cells centered on `{-1, 1}^k` in `[-2, 2]^k`. `n_probs` must be `2^k`.
///
/// # Safety
/// `probs` must point to `n_probs` doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn vm_hypercube_spec_new(
    k: usize,
    probs: *const f64,
    n_probs: usize,
    temperature: f64,
    out: *mut *mut VmSpec,
) -> VmStatus {
    unsafe { new_spec(|p| VoronoiMeasureSpec::hypercube(k, p, temperature), probs, n_probs, out) }
}

/// # Safety
/// `spec` must come from a `vm_*_spec_new` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vm_spec_free(spec: *mut VmSpec) {
    if !spec.is_null() {
        drop(unsafe { Box::from_raw(spec) });
    }
}

/// Dimension of the state space.
///
/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vm_spec_dim(spec: *const VmSpec, out: *mut usize) -> VmStatus {
    guard(|| {
        let spec = unsafe { spec.as_ref() }.ok_or_else(|| null("spec"))?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = spec.inner.state_dim();
        Ok(())
    })
}

/// Potential energy at `x` (`+inf` outside the box) and, if `out_cell` is not
/// null, the index of the cell containing `x`.
///
/// # Safety
/// `x` must point to `len` doubles; `out` must be writable; `out_cell` may be null.
#[no_mangle]
pub unsafe extern "C" fn vm_spec_potential(
    spec: *const VmSpec,
    x: *const f64,
    len: usize,
    out: *mut f64,
    out_cell: *mut usize,
) -> VmStatus {
    guard(|| {
        let spec = unsafe { spec.as_ref() }.ok_or_else(|| null("spec"))?;
        let x = unsafe { input(x, len, "x")? };
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        check_len(len, spec.inner.state_dim(), "x")?;
        let pv = spec.inner.potential(x)?;
        *out = pv.value;
        if let Some(c) = unsafe { out_cell.as_mut() } {
            *c = pv.cell[0];
        }
        Ok(())
    })
}

/// Gradient of the potential at an interior point `x`, written to `out`.
///
/// # Safety
/// `x` and `out` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vm_spec_gradient(
    spec: *const VmSpec,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> VmStatus {
    guard(|| {
        let spec = unsafe { spec.as_ref() }.ok_or_else(|| null("spec"))?;
        let x = unsafe { input(x, len, "x")? };
        let out = unsafe { output(out, len, "out")? };
        check_len(len, spec.inner.state_dim(), "x")?;
        out.copy_from_slice(&spec.inner.grad_potential(x)?);
        Ok(())
    })
}

/// New chain on a copy of `spec`, started uniformly in the box from `seed`.
/// `disc_fraction` is only read by SVS.
///
/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vm_chain_new(
    spec: *const VmSpec,
    algorithm: VmAlgorithm,
    step_size: f64,
    disc_fraction: f64,
    seed: u64,
    out: *mut *mut VmChain,
) -> VmStatus {
    guard(|| {
        let spec = unsafe { spec.as_ref() }.ok_or_else(|| null("spec"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut config = SamplerConfig::new(algorithm.into(), step_size);
        config.disc_fraction = disc_fraction;
        config.seed = seed;
        config.validate().map_err(|m| Fail(VmStatus::InvalidArgument, m))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = initial_state(&spec.inner, &config, &mut rng)?;
        let chain = VmChain {
            spec: spec.inner.clone(),
            config,
            state,
            rng,
            t: 0,
        };
        unsafe { *out = Box::into_raw(Box::new(chain)) };
        Ok(())
    })
}

/// Advance the chain by `n_steps`. If `out_accepted` is not null it receives
/// the number of accepted transitions.
///
/// # Safety
/// `chain` must be a live handle; `out_accepted` may be null.
#[no_mangle]
pub unsafe extern "C" fn vm_chain_step(chain: *mut VmChain, n_steps: usize, out_accepted: *mut usize) -> VmStatus {
    guard(|| {
        let chain = unsafe { chain.as_mut() }.ok_or_else(|| null("chain"))?;
        let mut accepted = 0;
        for _ in 0..n_steps {
            let res = step(&chain.state, &chain.spec, &chain.config, chain.t, &mut chain.rng)?;
            accepted += res.accepted as usize;
            chain.state = res.next;
            chain.t += 1;
        }
        if let Some(a) = unsafe { out_accepted.as_mut() } {
            *a = accepted;
        }
        Ok(())
    })
}

/// Current position, written to `out` (`len` must equal the state dimension).
///
/// # Safety
/// `chain` must be a live handle and `out` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vm_chain_position(chain: *const VmChain, out: *mut f64, len: usize) -> VmStatus {
    guard(|| {
        let chain = unsafe { chain.as_ref() }.ok_or_else(|| null("chain"))?;
        let out = unsafe { output(out, len, "out")? };
        check_len(len, chain.state.x.len(), "out")?;
        out.copy_from_slice(&chain.state.x);
        Ok(())
    })
}

/// Index of the cell the chain currently occupies.
///
/// # Safety
/// `chain` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vm_chain_cell(chain: *const VmChain, out: *mut usize) -> VmStatus {
    guard(|| {
        let chain = unsafe { chain.as_ref() }.ok_or_else(|| null("chain"))?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = chain.state.cell[0];
        Ok(())
    })
}

/// # Safety
/// `chain` must come from `vm_chain_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vm_chain_free(chain: *mut VmChain) {
    if !chain.is_null() {
        drop(unsafe { Box::from_raw(chain) });
    }
}

/// Momentum after meeting a facet with normal `normal` and potential jump
/// `delta_u` (may be `+inf`). `out_refracted` receives 1 if the particle
/// passed through and 0 if it was reflected; it may be null.
///
/// # Safety
/// `r`, `normal` and `out_r` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vm_refract_reflect(
    r: *const f64,
    normal: *const f64,
    len: usize,
    delta_u: f64,
    out_r: *mut f64,
    out_refracted: *mut i32,
) -> VmStatus {
    guard(|| {
        let r = unsafe { input(r, len, "r")? };
        let normal = unsafe { input(normal, len, "normal")? };
        let out = unsafe { output(out_r, len, "out_r")? };
        let (r2, passed) = refract_reflect(r, normal, delta_u, RefractionForm::UnitDirection)?;
        out.copy_from_slice(&r2);
        if let Some(flag) = unsafe { out_refracted.as_mut() } {
            *flag = passed as i32;
        }
        Ok(())
    })
}

/// Jensen-Shannon divergence in nats between two tables of length `len`.
///
/// # Safety
/// `p` and `q` must each point to `len` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn vm_js_divergence(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> VmStatus {
    guard(|| {
        let p = unsafe { input(p, len, "p")? };
        let q = unsafe { input(q, len, "q")? };
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = js_divergence(p, q)?;
        Ok(())
    })
}
