//! C ABI over the covclebsch solvers.
//!
//! Every fallible call returns a [`CcStatus`]. On failure the message is kept
//! per thread and can be read with [`cc_last_error_message`]. Handles are
//! opaque; each `*_new` has a matching `*_free` that accepts null.
//!
//! Arrays cross the boundary as flat `double` buffers with an explicit length:
//! peakon fields are `[peakon][s]`, strand fields `[s][component]` and
//! matrices row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use covclebsch::cli;
use covclebsch::grid::StrandGrid;
use covclebsch::gstrand::{QuadraticLagrangian, StrandField, StrandSimulation};
use covclebsch::kernels::HelmholtzKernel;
use covclebsch::liealg::{builtin_by_name, AlgebraElement, LieAlgebraSpec};
use covclebsch::peakon::{integrated_hamiltonian, PeakonSimulation, PeakonState};
use covclebsch::{Error, ErrorCategory};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    NearCollision = 5,
    BlowUp = 6,
    Io = 7,
    Numerical = 8,
    Panic = 9,
}

impl From<ErrorCategory> for CcStatus {
    fn from(c: ErrorCategory) -> Self {
        match c {
            ErrorCategory::Parse => CcStatus::Parse,
            ErrorCategory::Validation => CcStatus::Validation,
            ErrorCategory::NearCollision => CcStatus::NearCollision,
            ErrorCategory::BlowUp => CcStatus::BlowUp,
            ErrorCategory::Io => CcStatus::Io,
            ErrorCategory::InvalidArgument => CcStatus::InvalidArgument,
            ErrorCategory::Numerical => CcStatus::Numerical,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CcStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CcStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(format!("{}: {e}", e.category()));
            e.category().into()
        }
        Err(_) => {
            set_error("internal panic".into());
            CcStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return if len == 0 { Ok(&[]) } else { Err(Failure::Null(what)) };
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn out<T>(p: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    p.write(value);
    Ok(())
}

fn need(expected: usize, got: usize) -> Result<(), Failure> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got }.into())
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Short lowercase name of a status code. Never null.
#[no_mangle]
pub extern "C" fn cc_status_name(status: CcStatus) -> *const c_char {
    let s: &'static CStr = match status {
        CcStatus::Ok => c"ok",
        CcStatus::NullPointer => c"null-pointer",
        CcStatus::InvalidArgument => c"invalid-argument",
        CcStatus::Parse => c"parse",
        CcStatus::Validation => c"validation",
        CcStatus::NearCollision => c"near-collision",
        CcStatus::BlowUp => c"blow-up",
        CcStatus::Io => c"io",
        CcStatus::Numerical => c"numerical",
        CcStatus::Panic => c"panic",
    };
    s.as_ptr()
}

// ---------------------------------------------------------------------------
// algebras
// ---------------------------------------------------------------------------

/// Opaque Lie algebra.
pub struct CcAlgebra(LieAlgebraSpec);

/// Builds a built-in algebra by name (`so3`, `se3`, `so4`, `gl2`, ...).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_algebra_builtin(name: *const c_char, out_alg: *mut *mut CcAlgebra) -> CcStatus {
    guard(|| {
        if name.is_null() {
            return Err(Failure::Null("name"));
        }
        let name = CStr::from_ptr(name).to_str().map_err(|_| Error::InvalidArgument("name is not UTF-8".into()))?;
        let alg = builtin_by_name(name)?;
        out(out_alg, Box::into_raw(Box::new(CcAlgebra(alg))), "out_alg")
    })
}

/// # Safety
/// `alg` must be null or a handle from [`cc_algebra_builtin`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_algebra_free(alg: *mut CcAlgebra) {
    if !alg.is_null() {
        drop(Box::from_raw(alg));
    }
}

/// Dimension of the algebra, or 0 for a null handle.
///
/// # Safety
/// `alg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_algebra_dim(alg: *const CcAlgebra) -> usize {
    alg.as_ref().map_or(0, |a| a.0.dim())
}

/// `out = [xi, eta]`; all buffers have `len == dim` entries.
///
/// # Safety
/// Pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_algebra_bracket(
    alg: *const CcAlgebra,
    xi: *const f64,
    eta: *const f64,
    out_buf: *mut f64,
    len: usize,
) -> CcStatus {
    guard(|| {
        let a = &handle(alg, "alg")?.0;
        need(a.dim(), len)?;
        let r = a.bracket(
            &AlgebraElement::new(slice(xi, len, "xi")?.to_vec()),
            &AlgebraElement::new(slice(eta, len, "eta")?.to_vec()),
        )?;
        slice_mut(out_buf, len, "out")?.copy_from_slice(r.as_slice());
        Ok(())
    })
}

/// `out = ad*_xi mu`.
///
/// # Safety
/// Pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_algebra_ad_star(
    alg: *const CcAlgebra,
    xi: *const f64,
    mu: *const f64,
    out_buf: *mut f64,
    len: usize,
) -> CcStatus {
    guard(|| {
        let a = &handle(alg, "alg")?.0;
        need(a.dim(), len)?;
        let r = a.ad_star(
            &AlgebraElement::new(slice(xi, len, "xi")?.to_vec()),
            &AlgebraElement::new(slice(mu, len, "mu")?.to_vec()),
        )?;
        slice_mut(out_buf, len, "out")?.copy_from_slice(r.as_slice());
        Ok(())
    })
}

/// # Safety
/// `alg` must be a live handle and `out_residual` valid.
#[no_mangle]
pub unsafe extern "C" fn cc_algebra_jacobi_residual(alg: *const CcAlgebra, out_residual: *mut f64) -> CcStatus {
    guard(|| {
        let a = &handle(alg, "alg")?.0;
        out(out_residual, a.jacobi_residual(), "out_residual")
    })
}

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------

/// `G(x, y) = exp(-|x - y| / alpha) / (2 alpha)`.
///
/// # Safety
/// `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cc_kernel_eval_1d(alpha: f64, x: f64, y: f64, out_value: *mut f64) -> CcStatus {
    guard(|| {
        let k = HelmholtzKernel::one_d(alpha)?;
        out(out_value, k.eval_1d(x, y), "out_value")
    })
}

// ---------------------------------------------------------------------------
// grids
// ---------------------------------------------------------------------------

/// Periodic strand grid; `n_s == 1` selects the s-independent mode.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CcGrid {
    pub n_s: usize,
    pub s_extent: f64,
    pub dt: f64,
    pub t_end: f64,
}

impl CcGrid {
    fn strand(&self) -> Result<StrandGrid, Failure> {
        Ok(StrandGrid::periodic(self.n_s, self.s_extent, self.dt, self.t_end)?)
    }
}

// ---------------------------------------------------------------------------
// peakon simulations
// ---------------------------------------------------------------------------

/// Opaque peakon strand (or classical peakon system when `n_s == 1`).
pub struct CcPeakonSim(PeakonSimulation);

/// `q` and `m` hold `n_p * grid.n_s` values laid out `[peakon][s]`.
///
/// # Safety
/// `q` and `m` must be valid for `n_p * grid.n_s` doubles; `out_sim` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cc_peakon_new(
    alpha: f64,
    grid: CcGrid,
    n_p: usize,
    q: *const f64,
    m: *const f64,
    history_every: usize,
    out_sim: *mut *mut CcPeakonSim,
) -> CcStatus {
    guard(|| {
        let g = grid.strand()?;
        let kernel = HelmholtzKernel::one_d(alpha)?;
        let len = n_p * g.n_s;
        let rows = |d: &[f64]| d.chunks(g.n_s).map(|c| c.to_vec()).collect::<Vec<_>>();
        let q = rows(slice(q, len, "q")?);
        let m = rows(slice(m, len, "m")?);
        let state = PeakonState::new(g, &kernel, q, m)?;
        let sim = PeakonSimulation::new(kernel, state, history_every)?;
        out(out_sim, Box::into_raw(Box::new(CcPeakonSim(sim))), "out_sim")
    })
}

/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_peakon_free(sim: *mut CcPeakonSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances by `n_steps` RK4 steps.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_peakon_step(sim: *mut CcPeakonSim, n_steps: usize) -> CcStatus {
    guard(|| {
        let s = &mut handle_mut(sim, "sim")?.0;
        for _ in 0..n_steps {
            s.step()?;
        }
        Ok(())
    })
}

/// Time and integrated collective Hamiltonian of the current state.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cc_peakon_observe(
    sim: *const CcPeakonSim,
    out_time: *mut f64,
    out_hamiltonian: *mut f64,
) -> CcStatus {
    guard(|| {
        let s = &handle(sim, "sim")?.0;
        out(out_time, s.time(), "out_time")?;
        out(out_hamiltonian, integrated_hamiltonian(&s.state, &s.kernel), "out_hamiltonian")
    })
}

/// Copies `Q`, `M`, `N` (`[peakon][s]`, `len == n_p * n_s` each). Any output may be null.
///
/// # Safety
/// Non-null outputs must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_peakon_state(
    sim: *const CcPeakonSim,
    q: *mut f64,
    m: *mut f64,
    n: *mut f64,
    len: usize,
) -> CcStatus {
    guard(|| {
        let s = &handle(sim, "sim")?.0.state;
        need(s.n_p * s.grid.n_s, len)?;
        for (dst, src) in [(q, &s.q), (m, &s.mw), (n, &s.nw)] {
            if !dst.is_null() {
                slice_mut(dst, len, "state")?.copy_from_slice(&src.concat());
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// strand simulations
// ---------------------------------------------------------------------------

/// Opaque G-strand simulation.
pub struct CcStrandSim(StrandSimulation);

/// `a_t`, `a_s` are row-major `dim x dim`; `nu`, `gamma` are `[s][component]`.
///
/// # Safety
/// Buffers must be valid for the stated sizes; `alg` must be live.
#[no_mangle]
pub unsafe extern "C" fn cc_strand_new(
    alg: *const CcAlgebra,
    a_t: *const f64,
    a_s: *const f64,
    grid: CcGrid,
    nu: *const f64,
    gamma: *const f64,
    history_every: usize,
    out_sim: *mut *mut CcStrandSim,
) -> CcStatus {
    guard(|| {
        let a = handle(alg, "alg")?.0.clone();
        let d = a.dim();
        let g = grid.strand()?;
        let at = DMatrix::from_row_slice(d, d, slice(a_t, d * d, "a_t")?);
        let as_ = DMatrix::from_row_slice(d, d, slice(a_s, d * d, "a_s")?);
        let lag = QuadraticLagrangian::new(at, as_)?;
        let field = StrandField {
            nu: slice(nu, d * g.n_s, "nu")?.chunks(d).map(|c| AlgebraElement::new(c.to_vec())).collect(),
            gamma: slice(gamma, d * g.n_s, "gamma")?.chunks(d).map(|c| AlgebraElement::new(c.to_vec())).collect(),
        };
        let sim = StrandSimulation::new(a, lag, g, field, history_every)?;
        out(out_sim, Box::into_raw(Box::new(CcStrandSim(sim))), "out_sim")
    })
}

/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_strand_free(sim: *mut CcStrandSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_strand_step(sim: *mut CcStrandSim, n_steps: usize) -> CcStatus {
    guard(|| {
        let s = &mut handle_mut(sim, "sim")?.0;
        for _ in 0..n_steps {
            s.step()?;
        }
        Ok(())
    })
}

/// Time and strand energy of the current state.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cc_strand_observe(sim: *const CcStrandSim, out_time: *mut f64, out_energy: *mut f64) -> CcStatus {
    guard(|| {
        let s = &handle(sim, "sim")?.0;
        out(out_time, s.time(), "out_time")?;
        out(out_energy, s.energy(), "out_energy")
    })
}

/// Copies `nu` and `gamma` (`[s][component]`, `len == n_s * dim` each). Either may be null.
///
/// # Safety
/// Non-null outputs must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_strand_field(sim: *const CcStrandSim, nu: *mut f64, gamma: *mut f64, len: usize) -> CcStatus {
    guard(|| {
        let s = &handle(sim, "sim")?.0;
        need(s.grid.n_s * s.alg.dim(), len)?;
        for (dst, src) in [(nu, &s.field.nu), (gamma, &s.field.gamma)] {
            if !dst.is_null() {
                let flat: Vec<f64> = src.iter().flat_map(|x| x.as_slice().to_vec()).collect();
                slice_mut(dst, len, "field")?.copy_from_slice(&flat);
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// scenario runs
// ---------------------------------------------------------------------------

/// Loads a scenario config file and runs it, writing outputs as the CLI does.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cc_run_config(path: *const c_char) -> CcStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
        cli::run_config_file(Path::new(p))?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_a_status() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, CcStatus::Panic);
        assert!(!cc_last_error_message().is_null());
    }

    #[test]
    fn context_keeps_the_inner_category() {
        let e = Error::BlowUp { step: 3 }.context("chiral_so3");
        assert_eq!(guard(|| Err(e.into())), CcStatus::BlowUp);
        let msg = unsafe { CStr::from_ptr(cc_last_error_message()) }.to_str().unwrap().to_owned();
        assert!(msg.starts_with("blow-up: chiral_so3"), "{msg}");
    }
}
