//! Clebsch representations of strand dynamics on trivial bundles.
//!
//! Three closures are provided, each evolving canonical pairs whose momentum
//! map reproduces the covariant Euler-Poincaré solution:
//!
//! * a linear representation `rho` of the algebra on `V`, with fields `(v, m, n)`;
//! * the coupled double-bracket flow on the adjoint representation, with `(m, w_t, w_s)`;
//! * the SO(N) symmetric rigid-body strand, with `(Q, M, N)` matrices.
//!
//! In every case the s-momentum (`n`, `w_s`, `N`) is slaved to the s-constraint
//! and recomputed at every Runge-Kutta stage; only the t-momentum is evolved.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::grid::{all_finite, rk4_step, StrandGrid};
use crate::gstrand::{apply, interior_s, History, QuadraticLagrangian};
use crate::liealg::{AlgebraElement, LieAlgebraSpec};

/// Relative singular-value cutoff of the minimum-norm constraint solves.
const PINV_RTOL: f64 = 1e-10;

fn min_norm_solve(a: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let smax = a.amax().max(f64::MIN_POSITIVE);
    let svd = a.svd(true, true);
    let x = svd
        .solve(&DVector::from_column_slice(b), PINV_RTOL * smax)
        .map_err(|e| Error::SingularMatrix(e.to_string()))?;
    Ok(x.iter().copied().collect())
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

// ---------------------------------------------------------------------------
// Linear representations
// ---------------------------------------------------------------------------

/// A representation `rho: g -> gl(V)` given by the images of the basis.
#[derive(Clone, Debug)]
pub struct LinearRepSpec {
    pub alg: LieAlgebraSpec,
    pub rep_dim: usize,
    pub rho: Vec<DMatrix<f64>>,
}

pub const HOMOMORPHISM_TOLERANCE: f64 = 1e-10;

impl LinearRepSpec {
    pub fn new(alg: LieAlgebraSpec, rho: Vec<DMatrix<f64>>) -> Result<Self> {
        check_dim(alg.dim(), rho.len())?;
        let rep_dim = rho.first().map(|r| r.nrows()).unwrap_or(0);
        if rep_dim == 0 || rho.iter().any(|r| r.nrows() != rep_dim || r.ncols() != rep_dim) {
            return Err(Error::InvalidArgument("representation matrices must be square and of equal size".into()));
        }
        let rep = Self { alg, rep_dim, rho };
        let res = rep.homomorphism_residual();
        if res > HOMOMORPHISM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "rho is not a Lie algebra homomorphism (residual {res:e})"
            )));
        }
        Ok(rep)
    }

    /// Adjoint representation, `rho(e_i)_{kj} = c^k_{ij}`.
    pub fn adjoint(alg: LieAlgebraSpec) -> Result<Self> {
        let d = alg.dim();
        let rho = (0..d)
            .map(|i| DMatrix::from_fn(d, d, |k, j| alg.constants().get(i, j, k)))
            .collect();
        Self::new(alg, rho)
    }

    /// The matrix representation the algebra was built from.
    pub fn defining(alg: LieAlgebraSpec) -> Result<Self> {
        let rho = alg
            .basis_matrices()
            .ok_or_else(|| Error::InvalidArgument(format!("algebra `{}` has no matrix representation", alg.name())))?
            .to_vec();
        Self::new(alg, rho)
    }

    /// `max_{ij} |rho([e_i, e_j]) - [rho(e_i), rho(e_j)]|`
    pub fn homomorphism_residual(&self) -> f64 {
        let d = self.alg.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let br = self
                    .alg
                    .bracket(&AlgebraElement::basis(d, i), &AlgebraElement::basis(d, j))
                    .expect("basis dims agree");
                let lhs = self.rho_of(br.as_slice());
                let rhs = &self.rho[i] * &self.rho[j] - &self.rho[j] * &self.rho[i];
                worst = worst.max((lhs - rhs).amax());
            }
        }
        worst
    }

    pub fn rho_of(&self, xi: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rep_dim, self.rep_dim);
        for (x, r) in xi.iter().zip(&self.rho) {
            out += r * *x;
        }
        out
    }

    /// `rho(xi) v`
    pub fn act(&self, xi: &[f64], v: &[f64]) -> Vec<f64> {
        let r = self.rho_of(xi);
        (r * DVector::from_column_slice(v)).iter().copied().collect()
    }

    /// Dual action `rho*(xi) p = -rho(xi)^T p`.
    pub fn dual_act(&self, xi: &[f64], p: &[f64]) -> Vec<f64> {
        let r = self.rho_of(xi);
        (-(r.transpose() * DVector::from_column_slice(p))).iter().copied().collect()
    }

    fn diamond_slices(&self, v: &[f64], p: &[f64]) -> AlgebraElement {
        let lowered: Vec<f64> = self
            .rho
            .iter()
            .map(|r| {
                let mut acc = 0.0;
                for a in 0..self.rep_dim {
                    let mut rv = 0.0;
                    for b in 0..self.rep_dim {
                        rv += r[(a, b)] * v[b];
                    }
                    acc += p[a] * rv;
                }
                acc
            })
            .collect();
        self.alg.raise(&lowered)
    }

    /// Matrix of `n -> rho(A^-1 (v <> n)) v`.
    fn constraint_operator(&self, a_inv: &DMatrix<f64>, v: &[f64]) -> DMatrix<f64> {
        let r = self.rep_dim;
        let mut op = DMatrix::zeros(r, r);
        for c in 0..r {
            let mut e = vec![0.0; r];
            e[c] = 1.0;
            let gamma = apply(a_inv, self.diamond_slices(v, &e).as_slice());
            let col = self.act(gamma.as_slice(), v);
            for (row, x) in col.into_iter().enumerate() {
                op[(row, c)] = x;
            }
        }
        op
    }
}

/// Momentum map of the cotangent-lifted action: `kappa(v <> p, eta) = <p, rho(eta) v>`.
pub fn diamond(rep: &LinearRepSpec, v: &[f64], p: &[f64]) -> Result<AlgebraElement> {
    check_dim(rep.rep_dim, v.len())?;
    check_dim(rep.rep_dim, p.len())?;
    Ok(rep.diamond_slices(v, p))
}

/// Fields `v(s)` in `V`, with conjugate momenta `m(s)` (t-direction) and `n(s)` (s-direction).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearStrandState {
    pub v: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub n: Vec<Vec<f64>>,
}

impl LinearStrandState {
    /// Builds a state with `n` solved from the s-constraint.
    pub fn new(
        rep: &LinearRepSpec,
        lag: &QuadraticLagrangian,
        grid: &StrandGrid,
        v: Vec<Vec<f64>>,
        m: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_dim(grid.n_s, v.len())?;
        check_dim(grid.n_s, m.len())?;
        for x in v.iter().chain(&m) {
            check_dim(rep.rep_dim, x.len())?;
        }
        check_dim(rep.alg.dim(), lag.dim())?;
        let flat_v: Vec<f64> = v.concat();
        let n = solve_linear_n(rep, lag, grid, &flat_v)?;
        Ok(Self {
            v,
            m,
            n: n.chunks(rep.rep_dim).map(|c| c.to_vec()).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(&self.m).chain(&self.n).all(|x| all_finite(x))
    }
}

fn solve_linear_n(rep: &LinearRepSpec, lag: &QuadraticLagrangian, grid: &StrandGrid, v: &[f64]) -> Result<Vec<f64>> {
    let r = rep.rep_dim;
    let dv = grid.d_s_blocks(v, r);
    let mut n = vec![0.0; v.len()];
    if grid.is_degenerate() {
        return Ok(n);
    }
    for j in 0..grid.n_s {
        let vj = &v[j * r..(j + 1) * r];
        let op = rep.constraint_operator(lag.a_s_inv(), vj);
        let nj = min_norm_solve(op, &dv[j * r..(j + 1) * r])?;
        n[j * r..(j + 1) * r].copy_from_slice(&nj);
    }
    Ok(n)
}

/// Velocities `(xi, gamma)` recovered from the momentum map at every gridpoint.
pub fn linear_strand_velocities(
    rep: &LinearRepSpec,
    lag: &QuadraticLagrangian,
    state: &LinearStrandState,
) -> (Vec<AlgebraElement>, Vec<AlgebraElement>) {
    let xi = state
        .v
        .iter()
        .zip(&state.m)
        .map(|(v, m)| lag.velocity_t(&rep.diamond_slices(v, m)))
        .collect();
    let gamma = state
        .v
        .iter()
        .zip(&state.n)
        .map(|(v, n)| lag.velocity_s(&rep.diamond_slices(v, n)))
        .collect();
    (xi, gamma)
}

/// One RK4 step of `d/dt v = rho(xi) v`, `d/dt m = -d/ds n + rho*(xi) m + rho*(gamma) n`.
pub fn linear_strand_step(
    rep: &LinearRepSpec,
    lag: &QuadraticLagrangian,
    state: &LinearStrandState,
    grid: &StrandGrid,
) -> Result<LinearStrandState> {
    linear_strand_step_indexed(rep, lag, state, grid, 0)
}

fn linear_strand_step_indexed(
    rep: &LinearRepSpec,
    lag: &QuadraticLagrangian,
    state: &LinearStrandState,
    grid: &StrandGrid,
    index: usize,
) -> Result<LinearStrandState> {
    grid.check_stencil()?;
    check_dim(grid.n_s, state.v.len())?;
    check_dim(rep.alg.dim(), lag.dim())?;
    let r = rep.rep_dim;
    let ns = grid.n_s;
    let half = ns * r;
    let mut y = state.v.concat();
    y.extend(state.m.concat());
    check_dim(2 * half, y.len())?;

    let next = rk4_step(&y, grid.dt, |y| {
        let (v, m) = y.split_at(half);
        let n = solve_linear_n(rep, lag, grid, v)?;
        let dn = grid.d_s_blocks(&n, r);
        let mut rhs = vec![0.0; 2 * half];
        for j in 0..ns {
            let sl = j * r..(j + 1) * r;
            let xi = lag.velocity_t(&rep.diamond_slices(&v[sl.clone()], &m[sl.clone()]));
            let gamma = lag.velocity_s(&rep.diamond_slices(&v[sl.clone()], &n[sl.clone()]));
            let dv = rep.act(xi.as_slice(), &v[sl.clone()]);
            let dm1 = rep.dual_act(xi.as_slice(), &m[sl.clone()]);
            let dm2 = rep.dual_act(gamma.as_slice(), &n[sl.clone()]);
            for c in 0..r {
                rhs[j * r + c] = dv[c];
                rhs[half + j * r + c] = -dn[j * r + c] + dm1[c] + dm2[c];
            }
        }
        Ok(rhs)
    })?;
    if !all_finite(&next) {
        return Err(Error::BlowUp { step: index });
    }
    let (v, m) = next.split_at(half);
    let n = solve_linear_n(rep, lag, grid, v)?;
    let split = |x: &[f64]| x.chunks(r).map(|c| c.to_vec()).collect::<Vec<_>>();
    Ok(LinearStrandState {
        v: split(v),
        m: split(m),
        n: split(&n),
    })
}

/// Integrates to `grid.t_end`, storing every `history_every`-th state.
pub fn run_linear_strand(
    rep: &LinearRepSpec,
    lag: &QuadraticLagrangian,
    initial: LinearStrandState,
    grid: &StrandGrid,
    history_every: usize,
) -> Result<History<LinearStrandState>> {
    run_generic(initial, grid, history_every, |s, i| {
        linear_strand_step_indexed(rep, lag, s, grid, i)
    })
}

/// `max |d/ds v - rho(gamma) v|`
pub fn linear_constraint_residual(
    rep: &LinearRepSpec,
    lag: &QuadraticLagrangian,
    state: &LinearStrandState,
    grid: &StrandGrid,
) -> f64 {
    let r = rep.rep_dim;
    let v = state.v.concat();
    let dv = grid.d_s_blocks(&v, r);
    let (_, gamma) = linear_strand_velocities(rep, lag, state);
    let mut worst = 0.0f64;
    for j in interior_s(grid) {
        let gv = rep.act(gamma[j].as_slice(), &state.v[j]);
        for c in 0..r {
            worst = worst.max((dv[j * r + c] - gv[c]).abs());
        }
    }
    worst
}

/// Recomputes both sides of `dl/dsigma = J(omega)`: `max |A_t xi - v <> m|, |A_s gamma - v <> n|`.
pub fn linear_momentum_map_residual(rep: &LinearRepSpec, lag: &QuadraticLagrangian, state: &LinearStrandState) -> f64 {
    let (xi, gamma) = linear_strand_velocities(rep, lag, state);
    let mut worst = 0.0f64;
    for j in 0..state.v.len() {
        let lhs_t = lag.momentum_t(&xi[j]);
        let lhs_s = lag.momentum_s(&gamma[j]);
        let rhs_t = diamond(rep, &state.v[j], &state.m[j]).expect("state dims checked");
        let rhs_s = diamond(rep, &state.v[j], &state.n[j]).expect("state dims checked");
        worst = worst.max((&lhs_t - &rhs_t).max_abs()).max((&lhs_s - &rhs_s).max_abs());
    }
    worst
}

/// Orbit form of the curvature condition, `max |rho(d/dt gamma - d/ds xi - [xi, gamma]) v|`.
pub fn linear_curvature_residual(
    rep: &LinearRepSpec,
    lag: &QuadraticLagrangian,
    history: &History<LinearStrandState>,
    grid: &StrandGrid,
) -> Result<f64> {
    history.require(3)?;
    let d = rep.alg.dim();
    let vel: Vec<_> = history
        .slices
        .iter()
        .map(|s| linear_strand_velocities(rep, lag, s))
        .collect();
    let mut worst = 0.0f64;
    for i in 1..history.len() - 1 {
        let (xi, gamma) = &vel[i];
        let flat_xi: Vec<f64> = xi.iter().flat_map(|x| x.as_slice().to_vec()).collect();
        let dxi = grid.d_s_blocks(&flat_xi, d);
        for j in interior_s(grid) {
            let dgamma = (&vel[i + 1].1[j] - &vel[i - 1].1[j]).scaled(1.0 / (2.0 * history.dt));
            let br = rep.alg.bracket(&xi[j], &gamma[j])?;
            let curv: Vec<f64> = (0..d).map(|c| dgamma[c] - dxi[j * d + c] - br[c]).collect();
            worst = worst.max(max_abs(&rep.act(&curv, &history.slices[i].v[j])));
        }
    }
    Ok(worst)
}

fn run_generic<S: Clone>(
    initial: S,
    grid: &StrandGrid,
    history_every: usize,
    mut step: impl FnMut(&S, usize) -> Result<S>,
) -> Result<History<S>> {
    grid.validate()?;
    if history_every == 0 {
        return Err(Error::InvalidArgument("history_every must be at least 1".into()));
    }
    let mut history = History::new(grid.dt * history_every as f64, 0.0);
    let mut state = initial;
    history.slices.push(state.clone());
    for i in 1..=grid.n_steps() {
        state = step(&state, i)?;
        if i % history_every == 0 {
            history.slices.push(state.clone());
        }
    }
    Ok(history)
}

// ---------------------------------------------------------------------------
// Coupled double bracket
// ---------------------------------------------------------------------------

/// Adjoint-orbit variable `m` with the two components of `omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct CDBState {
    pub m: Vec<AlgebraElement>,
    pub w_t: Vec<AlgebraElement>,
    pub w_s: Vec<AlgebraElement>,
}

pub const BI_INVARIANCE_TOLERANCE: f64 = 1e-12;

fn require_bi_invariant(alg: &LieAlgebraSpec) -> Result<()> {
    let r = alg.ad_invariance_residual();
    if r > BI_INVARIANCE_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "the double-bracket flow needs an ad-invariant pairing (`{}` has residual {r:e})",
            alg.name()
        )));
    }
    Ok(())
}

impl CDBState {
    /// Builds a state with `w_s` solved from `d/ds m = [[m, w_s], m]`.
    pub fn new(alg: &LieAlgebraSpec, grid: &StrandGrid, m: Vec<AlgebraElement>, w_t: Vec<AlgebraElement>) -> Result<Self> {
        require_bi_invariant(alg)?;
        check_dim(grid.n_s, m.len())?;
        check_dim(grid.n_s, w_t.len())?;
        for x in m.iter().chain(&w_t) {
            check_dim(alg.dim(), x.dim())?;
        }
        let flat_m: Vec<f64> = m.iter().flat_map(|x| x.as_slice().to_vec()).collect();
        let w_s = solve_cdb_ws(alg, grid, &flat_m)?;
        Ok(Self {
            m,
            w_t,
            w_s: w_s.chunks(alg.dim()).map(|c| AlgebraElement::new(c.to_vec())).collect(),
        })
    }

    /// `sigma_mu = [m, w_mu]` at every gridpoint.
    pub fn sigma(&self, alg: &LieAlgebraSpec) -> (Vec<AlgebraElement>, Vec<AlgebraElement>) {
        let br = |a: &AlgebraElement, b: &AlgebraElement| alg.bracket(a, b).expect("state dims checked");
        (
            self.m.iter().zip(&self.w_t).map(|(m, w)| br(m, w)).collect(),
            self.m.iter().zip(&self.w_s).map(|(m, w)| br(m, w)).collect(),
        )
    }
}

fn solve_cdb_ws(alg: &LieAlgebraSpec, grid: &StrandGrid, m: &[f64]) -> Result<Vec<f64>> {
    let d = alg.dim();
    let dm = grid.d_s_blocks(m, d);
    let mut ws = vec![0.0; m.len()];
    if grid.is_degenerate() {
        return Ok(ws);
    }
    let mut inner = vec![0.0; d];
    let mut outer = vec![0.0; d];
    for j in 0..grid.n_s {
        let mj = &m[j * d..(j + 1) * d];
        let mut op = DMatrix::zeros(d, d);
        for c in 0..d {
            let mut e = vec![0.0; d];
            e[c] = 1.0;
            alg.bracket_into(mj, &e, &mut inner);
            alg.bracket_into(&inner, mj, &mut outer);
            for (row, x) in outer.iter().enumerate() {
                op[(row, c)] = *x;
            }
        }
        let w = min_norm_solve(op, &dm[j * d..(j + 1) * d])?;
        ws[j * d..(j + 1) * d].copy_from_slice(&w);
    }
    Ok(ws)
}

/// One RK4 step of `d/dt m = [sigma_t, m]`,
/// `d/dt w_t = -d/ds w_s + [sigma_t, w_t] + [sigma_s, w_s]`, with `sigma_mu = [m, w_mu]`.
pub fn cdb_step(alg: &LieAlgebraSpec, state: &CDBState, grid: &StrandGrid) -> Result<CDBState> {
    cdb_step_indexed(alg, state, grid, 0)
}

fn cdb_step_indexed(alg: &LieAlgebraSpec, state: &CDBState, grid: &StrandGrid, index: usize) -> Result<CDBState> {
    require_bi_invariant(alg)?;
    grid.check_stencil()?;
    check_dim(grid.n_s, state.m.len())?;
    let d = alg.dim();
    let ns = grid.n_s;
    let half = ns * d;
    let mut y: Vec<f64> = state.m.iter().flat_map(|x| x.as_slice().to_vec()).collect();
    y.extend(state.w_t.iter().flat_map(|x| x.as_slice().to_vec()));
    check_dim(2 * half, y.len())?;

    let next = rk4_step(&y, grid.dt, |y| {
        let (m, wt) = y.split_at(half);
        let ws = solve_cdb_ws(alg, grid, m)?;
        let dws = grid.d_s_blocks(&ws, d);
        let mut rhs = vec![0.0; 2 * half];
        let (mut st, mut ss) = (vec![0.0; d], vec![0.0; d]);
        let (mut a, mut b, mut c) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for j in 0..ns {
            let sl = j * d..(j + 1) * d;
            alg.bracket_into(&m[sl.clone()], &wt[sl.clone()], &mut st);
            alg.bracket_into(&m[sl.clone()], &ws[sl.clone()], &mut ss);
            alg.bracket_into(&st, &m[sl.clone()], &mut a);
            alg.bracket_into(&st, &wt[sl.clone()], &mut b);
            alg.bracket_into(&ss, &ws[sl.clone()], &mut c);
            for k in 0..d {
                rhs[j * d + k] = a[k];
                rhs[half + j * d + k] = -dws[j * d + k] + b[k] + c[k];
            }
        }
        Ok(rhs)
    })?;
    if !all_finite(&next) {
        return Err(Error::BlowUp { step: index });
    }
    let (m, wt) = next.split_at(half);
    let ws = solve_cdb_ws(alg, grid, m)?;
    let split = |x: &[f64]| x.chunks(d).map(|c| AlgebraElement::new(c.to_vec())).collect::<Vec<_>>();
    Ok(CDBState {
        m: split(m),
        w_t: split(wt),
        w_s: split(&ws),
    })
}

pub fn run_cdb(alg: &LieAlgebraSpec, initial: CDBState, grid: &StrandGrid, history_every: usize) -> Result<History<CDBState>> {
    run_generic(initial, grid, history_every, |s, i| cdb_step_indexed(alg, s, grid, i))
}

/// `max_j | d/ds m - [sigma_s, m] |`
pub fn cdb_constraint_residual(alg: &LieAlgebraSpec, state: &CDBState, grid: &StrandGrid) -> f64 {
    let d = alg.dim();
    let flat: Vec<f64> = state.m.iter().flat_map(|x| x.as_slice().to_vec()).collect();
    let dm = grid.d_s_blocks(&flat, d);
    let (_, ss) = state.sigma(alg);
    interior_s(grid)
        .into_iter()
        .map(|j| {
            let br = alg.bracket(&ss[j], &state.m[j]).expect("dims checked");
            (0..d).map(|k| (dm[j * d + k] - br[k]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Residual of the implied covariant EP equation `d/dt sigma_t + d/ds sigma_s = 0`
/// (the coadjoint terms vanish for an ad-invariant pairing and the Euclidean metric).
pub fn cdb_divergence_residual(alg: &LieAlgebraSpec, history: &History<CDBState>, grid: &StrandGrid) -> Result<f64> {
    history.require(3)?;
    let d = alg.dim();
    let sig: Vec<_> = history.slices.iter().map(|s| s.sigma(alg)).collect();
    let mut worst = 0.0f64;
    for i in 1..history.len() - 1 {
        let flat: Vec<f64> = sig[i].1.iter().flat_map(|x| x.as_slice().to_vec()).collect();
        let dss = grid.d_s_blocks(&flat, d);
        for j in interior_s(grid) {
            for k in 0..d {
                let dst = (sig[i + 1].0[j][k] - sig[i - 1].0[j][k]) / (2.0 * history.dt);
                worst = worst.max((dst + dss[j * d + k]).abs());
            }
        }
    }
    Ok(worst)
}

/// `max_{i,j} | |m(t_i, s_j)| - |m(0, s_j)| |`
pub fn cdb_norm_drift(history: &History<CDBState>) -> f64 {
    let Some(first) = history.slices.first() else {
        return 0.0;
    };
    let norms0: Vec<f64> = first.m.iter().map(|m| m.dot(m).sqrt()).collect();
    history
        .slices
        .iter()
        .flat_map(|s| s.m.iter().zip(&norms0).map(|(m, n0)| (m.dot(m).sqrt() - n0).abs()))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// SO(N) symmetric rigid-body strands
// ---------------------------------------------------------------------------

/// Configuration `Q(s)` in GL(N) with the conjugate matrices `Mw` (t) and `Nw` (s).
#[derive(Clone, Debug, PartialEq)]
pub struct SymmRigidState {
    pub q: Vec<DMatrix<f64>>,
    pub mw: Vec<DMatrix<f64>>,
    pub nw: Vec<DMatrix<f64>>,
}

/// Per-gridpoint velocities and momenta of a [`SymmRigidState`].
#[derive(Clone, Debug)]
pub struct SymmRigidKinematics {
    /// Coordinates of `U` and `V` in the algebra basis.
    pub u: Vec<AlgebraElement>,
    pub v: Vec<AlgebraElement>,
    /// `P_U = (Q^T M - M^T Q)/2` and `P_V = (Q^T N - N^T Q)/2`.
    pub p_u: Vec<DMatrix<f64>>,
    pub p_v: Vec<DMatrix<f64>>,
}

struct SoNBasis<'a> {
    e: &'a [DMatrix<f64>],
    gram_inv: DMatrix<f64>,
}

impl<'a> SoNBasis<'a> {
    fn new(alg: &'a LieAlgebraSpec) -> Result<Self> {
        let e = alg
            .basis_matrices()
            .ok_or_else(|| Error::InvalidArgument(format!("algebra `{}` has no matrix representation", alg.name())))?;
        if e.iter().any(|m| (m + m.transpose()).amax() > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "symmetric rigid-body strands need an so(N) basis, `{}` is not antisymmetric",
                alg.name()
            )));
        }
        let d = e.len();
        let gram = DMatrix::from_fn(d, d, |i, j| frob(&e[i], &e[j]));
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| Error::SingularMatrix("basis Gram matrix".into()))?;
        Ok(Self { e, gram_inv })
    }

    fn n(&self) -> usize {
        self.e[0].nrows()
    }

    /// Frobenius pairings `<X, E_i>`.
    fn pairings(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.e.iter().map(|e| frob(x, e)).collect()
    }

    /// Coordinates of the Frobenius projection of `x` onto the span of the basis.
    fn project(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let p = DVector::from_vec(self.pairings(x));
        (&self.gram_inv * p).iter().copied().collect()
    }

    /// The matrix whose Frobenius pairings with the basis are `pi`.
    fn covector_from_pairings(&self, pi: &[f64]) -> DMatrix<f64> {
        let c = &self.gram_inv * DVector::from_column_slice(pi);
        self.combine(c.as_slice())
    }

    fn combine(&self, c: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, n);
        for (x, e) in c.iter().zip(self.e) {
            out += e * *x;
        }
        out
    }
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn antisym_part(q: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let qm = q.transpose() * m;
    (&qm - qm.transpose()) * 0.5
}

fn invert(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = q
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("Q is singular".into()))?;
    if !inv.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularMatrix("Q is singular".into()));
    }
    Ok(inv)
}

fn mats_to_flat(ms: &[DMatrix<f64>]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.as_slice().to_vec()).collect()
}

fn flat_to_mats(data: &[f64], n: usize) -> Vec<DMatrix<f64>> {
    data.chunks(n * n).map(|c| DMatrix::from_column_slice(n, n, c)).collect()
}

/// `(V coordinates, Nw)` from the s-constraint `d/ds Q = Q V` and `dl/dV = P_V`.
fn solve_symm_n(
    basis: &SoNBasis,
    lag: &QuadraticLagrangian,
    grid: &StrandGrid,
    q: &[DMatrix<f64>],
) -> Result<(Vec<AlgebraElement>, Vec<DMatrix<f64>>)> {
    let n = basis.n();
    let d = basis.e.len();
    if grid.is_degenerate() {
        return Ok((vec![AlgebraElement::zeros(d)], vec![DMatrix::zeros(n, n)]));
    }
    let dq = flat_to_mats(&grid.d_s_blocks(&mats_to_flat(q), n * n), n);
    let mut vs = Vec::with_capacity(q.len());
    let mut ns = Vec::with_capacity(q.len());
    for (qj, dqj) in q.iter().zip(&dq) {
        let qinv = invert(qj)?;
        let v = AlgebraElement::new(basis.project(&(&qinv * dqj)));
        let pi_v = lag.momentum_s(&v);
        let p_v = basis.covector_from_pairings(pi_v.as_slice());
        ns.push(qinv.transpose() * p_v);
        vs.push(v);
    }
    Ok((vs, ns))
}

/// Velocities and momenta implied by `(Q, Mw, Nw)`.
pub fn symm_rigid_kinematics(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    state: &SymmRigidState,
    grid: &StrandGrid,
) -> Result<SymmRigidKinematics> {
    let basis = SoNBasis::new(alg)?;
    let p_u: Vec<_> = state.q.iter().zip(&state.mw).map(|(q, m)| antisym_part(q, m)).collect();
    let p_v: Vec<_> = state.q.iter().zip(&state.nw).map(|(q, n)| antisym_part(q, n)).collect();
    let u = p_u
        .iter()
        .map(|p| lag.velocity_t(&AlgebraElement::new(basis.pairings(p))))
        .collect();
    let v = if grid.is_degenerate() {
        vec![AlgebraElement::zeros(alg.dim())]
    } else {
        let n = basis.n();
        let dq = flat_to_mats(&grid.d_s_blocks(&mats_to_flat(&state.q), n * n), n);
        state
            .q
            .iter()
            .zip(&dq)
            .map(|(q, dq)| Ok(AlgebraElement::new(basis.project(&(invert(q)? * dq)))))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(SymmRigidKinematics { u, v, p_u, p_v })
}

impl SymmRigidState {
    /// Builds a state with `Nw` slaved to the s-constraint.
    pub fn new(
        alg: &LieAlgebraSpec,
        lag: &QuadraticLagrangian,
        grid: &StrandGrid,
        q: Vec<DMatrix<f64>>,
        mw: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let basis = SoNBasis::new(alg)?;
        check_dim(alg.dim(), lag.dim())?;
        check_dim(grid.n_s, q.len())?;
        check_dim(grid.n_s, mw.len())?;
        let n = basis.n();
        for x in q.iter().chain(&mw) {
            if x.shape() != (n, n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: x.nrows(),
                });
            }
        }
        let (_, nw) = solve_symm_n(&basis, lag, grid, &q)?;
        Ok(Self { q, mw, nw })
    }
}

/// One RK4 step of `d/dt Q = Q U`, `d/dt Mw = -d/ds Nw + Mw U + Nw V`.
pub fn symm_rigid_step(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    state: &SymmRigidState,
    grid: &StrandGrid,
) -> Result<SymmRigidState> {
    symm_rigid_step_indexed(alg, lag, state, grid, 0)
}

fn symm_rigid_step_indexed(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    state: &SymmRigidState,
    grid: &StrandGrid,
    index: usize,
) -> Result<SymmRigidState> {
    let basis = SoNBasis::new(alg)?;
    grid.check_stencil()?;
    check_dim(alg.dim(), lag.dim())?;
    check_dim(grid.n_s, state.q.len())?;
    let n = basis.n();
    let w = n * n;
    let half = grid.n_s * w;
    let mut y = mats_to_flat(&state.q);
    y.extend(mats_to_flat(&state.mw));
    check_dim(2 * half, y.len())?;

    let next = rk4_step(&y, grid.dt, |y| {
        let q = flat_to_mats(&y[..half], n);
        let mw = flat_to_mats(&y[half..], n);
        let (vs, nw) = solve_symm_n(&basis, lag, grid, &q)?;
        let dn = grid.d_s_blocks(&mats_to_flat(&nw), w);
        let mut rhs = Vec::with_capacity(2 * half);
        let mut rhs_m = Vec::with_capacity(half);
        for j in 0..grid.n_s {
            let pi_u = basis.pairings(&antisym_part(&q[j], &mw[j]));
            let u = lag.velocity_t(&AlgebraElement::new(pi_u));
            let uh = basis.combine(u.as_slice());
            let vh = basis.combine(vs[j].as_slice());
            rhs.extend((&q[j] * &uh).as_slice());
            let dm = &mw[j] * &uh + &nw[j] * &vh;
            rhs_m.extend(dm.as_slice().iter().zip(&dn[j * w..(j + 1) * w]).map(|(a, b)| a - b));
        }
        rhs.extend(rhs_m);
        Ok(rhs)
    })?;
    if !all_finite(&next) {
        return Err(Error::BlowUp { step: index });
    }
    let q = flat_to_mats(&next[..half], n);
    let mw = flat_to_mats(&next[half..], n);
    let (_, nw) = solve_symm_n(&basis, lag, grid, &q)?;
    Ok(SymmRigidState { q, mw, nw })
}

pub fn run_symm_rigid(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    initial: SymmRigidState,
    grid: &StrandGrid,
    history_every: usize,
) -> Result<History<SymmRigidState>> {
    run_generic(initial, grid, history_every, |s, i| symm_rigid_step_indexed(alg, lag, s, grid, i))
}

/// Residual of the SO(N)-strand equation
/// `d/dt P_U + d/ds P_V + [U, P_U] + [V, P_V] = 0` over interior slices.
pub fn so_n_strand_residual(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    history: &History<SymmRigidState>,
    grid: &StrandGrid,
) -> Result<f64> {
    history.require(3)?;
    let basis = SoNBasis::new(alg)?;
    let n = basis.n();
    let kin = history
        .slices
        .iter()
        .map(|s| symm_rigid_kinematics(alg, lag, s, grid))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0f64;
    for i in 1..history.len() - 1 {
        let k = &kin[i];
        let dpv = flat_to_mats(&grid.d_s_blocks(&mats_to_flat(&k.p_v), n * n), n);
        for j in interior_s(grid) {
            let dpu = (&kin[i + 1].p_u[j] - &kin[i - 1].p_u[j]) / (2.0 * history.dt);
            let uh = basis.combine(k.u[j].as_slice());
            let vh = basis.combine(k.v[j].as_slice());
            let r = dpu + &dpv[j] + (&uh * &k.p_u[j] - &k.p_u[j] * &uh) + (&vh * &k.p_v[j] - &k.p_v[j] * &vh);
            worst = worst.max(r.amax());
        }
    }
    Ok(worst)
}

/// `max |d/ds Q - Q V|` with `V` the projected velocity.
pub fn symm_rigid_constraint_residual(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    state: &SymmRigidState,
    grid: &StrandGrid,
) -> Result<f64> {
    let basis = SoNBasis::new(alg)?;
    let n = basis.n();
    let kin = symm_rigid_kinematics(alg, lag, state, grid)?;
    if grid.is_degenerate() {
        return Ok(0.0);
    }
    let dq = flat_to_mats(&grid.d_s_blocks(&mats_to_flat(&state.q), n * n), n);
    Ok(interior_s(grid)
        .into_iter()
        .map(|j| (&dq[j] - &state.q[j] * basis.combine(kin.v[j].as_slice())).amax())
        .fold(0.0, f64::max))
}

/// Recomputes both sides of `dl/dU = P_U`, `dl/dV = P_V` in basis pairings.
pub fn symm_rigid_momentum_map_residual(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    state: &SymmRigidState,
    grid: &StrandGrid,
) -> Result<f64> {
    let basis = SoNBasis::new(alg)?;
    let kin = symm_rigid_kinematics(alg, lag, state, grid)?;
    let mut worst = 0.0f64;
    for j in 0..state.q.len() {
        let lhs_u = lag.momentum_t(&kin.u[j]);
        let rhs_u = AlgebraElement::new(basis.pairings(&kin.p_u[j]));
        worst = worst.max((&lhs_u - &rhs_u).max_abs());
        if !grid.is_degenerate() {
            let lhs_v = lag.momentum_s(&kin.v[j]);
            let rhs_v = AlgebraElement::new(basis.pairings(&kin.p_v[j]));
            worst = worst.max((&lhs_v - &rhs_v).max_abs());
        }
    }
    Ok(worst)
}

/// Diagnostics bundle shared by the scenario runners.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClebschResiduals {
    pub constraint: f64,
    pub momentum_map: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liealg::{builtin, hat3, Builtin};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn so3() -> LieAlgebraSpec {
        builtin(Builtin::So3).unwrap()
    }

    fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    }

    #[test]
    fn diamond_examples() {
        let adj = LinearRepSpec::adjoint(so3()).unwrap();
        let d = diamond(&adj, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(d.as_slice(), &[0.0, 0.0, 1.0]);
        assert_eq!(diamond(&adj, &[0.3, 0.1, 0.2], &[0.0; 3]).unwrap().max_abs(), 0.0);

        let def = LinearRepSpec::defining(so3()).unwrap();
        let d = diamond(&def, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((&d - &AlgebraElement::new(vec![0.0, 0.0, 1.0])).max_abs() < 1e-15);
        assert!(diamond(&def, &[1.0, 0.0], &[0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn diamond_is_the_momentum_map_for_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for rep in [
            LinearRepSpec::adjoint(so3()).unwrap(),
            LinearRepSpec::defining(builtin(Builtin::Se3).unwrap()).unwrap(),
            LinearRepSpec::adjoint(builtin(Builtin::SoN(4)).unwrap()).unwrap(),
        ] {
            for _ in 0..200 {
                let v: Vec<f64> = (0..rep.rep_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let p: Vec<f64> = (0..rep.rep_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let dia = diamond(&rep, &v, &p).unwrap();
                for k in 0..rep.alg.dim() {
                    let eta = AlgebraElement::basis(rep.alg.dim(), k);
                    let rv = rep.act(eta.as_slice(), &v);
                    let rhs: f64 = p.iter().zip(&rv).map(|(a, b)| a * b).sum();
                    assert!((rep.alg.pair(&dia, &eta) - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_homomorphism_is_rejected() {
        let mut rho = LinearRepSpec::defining(so3()).unwrap().rho;
        rho[0] *= 2.0;
        assert!(LinearRepSpec::new(so3(), rho).is_err());
    }

    #[test]
    fn zero_v_is_static() {
        let rep = LinearRepSpec::defining(so3()).unwrap();
        let lag = QuadraticLagrangian::chiral(3);
        let grid = StrandGrid::periodic(8, 1.0, 1e-2, 0.1).unwrap();
        let m: Vec<Vec<f64>> = (0..8).map(|j| vec![j as f64, 1.0, -0.5]).collect();
        let s = LinearStrandState::new(&rep, &lag, &grid, vec![vec![0.0; 3]; 8], m).unwrap();
        let next = linear_strand_step(&rep, &lag, &s, &grid).unwrap();
        assert_eq!(next.v, s.v);
        assert_eq!(next.m, s.m);
    }

    fn rk4_ode(y0: &[f64], dt: f64, steps: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut y = y0.to_vec();
        for _ in 0..steps {
            y = rk4_step(&y, dt, |y| Ok(f(y))).unwrap();
        }
        y
    }

    #[test]
    fn s_independent_linear_strand_matches_classical_ep() {
        let rep = LinearRepSpec::defining(so3()).unwrap();
        let a_t = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let lag = QuadraticLagrangian::new(a_t.clone(), -DMatrix::identity(3, 3)).unwrap();
        let grid = StrandGrid::single_point(1e-3, 1.0).unwrap();
        let v0 = vec![0.6, 0.0, 0.8];
        let m0 = vec![0.2, 1.0, -0.4];
        let state = LinearStrandState::new(&rep, &lag, &grid, vec![v0.clone()], vec![m0.clone()]).unwrap();
        let hist = run_linear_strand(&rep, &lag, state, &grid, 1000).unwrap();
        let (xi, _) = linear_strand_velocities(&rep, &lag, hist.last().unwrap());

        // the momentum of the defining rep is v x m; d/dt mu = xi x mu with xi = A_t^-1 mu
        let mu0 = cross(&v0, &m0);
        let inv = [1.0, 0.5, 1.0 / 3.0];
        let mu = rk4_ode(&mu0, 1e-4, 10_000, |mu| {
            let xi = [mu[0] * inv[0], mu[1] * inv[1], mu[2] * inv[2]];
            cross(&xi, mu).to_vec()
        });
        for c in 0..3 {
            assert!((xi[0][c] - mu[c] * inv[c]).abs() < 1e-6);
        }
        assert!(linear_momentum_map_residual(&rep, &lag, hist.last().unwrap()) < 1e-12);
    }

    fn linear_strand_initial(rep: &LinearRepSpec, lag: &QuadraticLagrangian, grid: &StrandGrid) -> LinearStrandState {
        let l = grid.s_extent;
        let v = (0..grid.n_s)
            .map(|j| {
                let th = TAU * grid.s(j) / l;
                let ph = 0.4 * th.sin();
                vec![th.cos() * ph.cos(), th.sin() * ph.cos(), ph.sin()]
            })
            .collect();
        let m = (0..grid.n_s)
            .map(|j| {
                let th = TAU * grid.s(j) / l;
                vec![0.3 * th.cos(), 0.5, 0.2 * (2.0 * th).sin()]
            })
            .collect();
        LinearStrandState::new(rep, lag, grid, v, m).unwrap()
    }

    #[test]
    fn linear_strand_constraint_drift_is_second_order() {
        let rep = LinearRepSpec::defining(so3()).unwrap();
        let lag = QuadraticLagrangian::chiral(3);
        let drift = |level: u32| {
            let grid = StrandGrid::periodic(32, TAU, 0.02, 1.0).unwrap().refined(level);
            let s0 = linear_strand_initial(&rep, &lag, &grid);
            let h = run_linear_strand(&rep, &lag, s0, &grid, 1).unwrap();
            let m = h
                .slices
                .iter()
                .map(|s| linear_constraint_residual(&rep, &lag, s, &grid))
                .fold(0.0, f64::max);
            let curv = linear_curvature_residual(&rep, &lag, &h, &grid).unwrap();
            for s in &h.slices {
                assert!(linear_momentum_map_residual(&rep, &lag, s) < 1e-12);
            }
            (m, curv)
        };
        let (a, b, c) = (drift(0), drift(1), drift(2));
        let o1 = (a.0 / b.0).log2();
        let o2 = (b.0 / c.0).log2();
        assert!(o1 > 1.8 && o2 > 1.8, "constraint orders {o1} {o2}");
        let o = (b.1 / c.1).log2();
        assert!(o > 1.9, "curvature order {o} ({} {} {})", a.1, b.1, c.1);
    }

    fn cdb_initial(alg: &LieAlgebraSpec, grid: &StrandGrid) -> CDBState {
        let l = grid.s_extent;
        let m = (0..grid.n_s)
            .map(|j| {
                let th = TAU * grid.s(j) / l;
                let ph = 0.3 * th.cos();
                AlgebraElement::new(vec![th.cos() * ph.cos(), th.sin() * ph.cos(), ph.sin()])
            })
            .collect();
        let wt = (0..grid.n_s)
            .map(|j| {
                let th = TAU * grid.s(j) / l;
                AlgebraElement::new(vec![0.2 * th.sin(), 0.1, -0.3 * th.cos()])
            })
            .collect();
        CDBState::new(alg, grid, m, wt).unwrap()
    }

    #[test]
    fn parallel_cdb_fields_are_static() {
        let alg = so3();
        let grid = StrandGrid::periodic(8, 1.0, 1e-2, 0.1).unwrap();
        let m = vec![AlgebraElement::new(vec![0.0, 0.0, 1.0]); 8];
        let wt = vec![AlgebraElement::new(vec![0.0, 0.0, -2.0]); 8];
        let s = CDBState::new(&alg, &grid, m, wt).unwrap();
        assert_eq!(cdb_step(&alg, &s, &grid).unwrap(), s);
    }

    #[test]
    fn cdb_rejects_non_invariant_pairing() {
        let alg = builtin(Builtin::Se3).unwrap();
        let grid = StrandGrid::periodic(8, 1.0, 1e-2, 0.1).unwrap();
        let z = vec![AlgebraElement::zeros(6); 8];
        assert!(CDBState::new(&alg, &grid, z.clone(), z).is_err());
    }

    #[test]
    fn cdb_norm_and_divergence() {
        let alg = so3();
        let run = |level: u32, t_end: f64| {
            let grid = StrandGrid::periodic(64, 8.0 * std::f64::consts::PI, 1e-3, t_end)
                .unwrap()
                .refined(level);
            let h = run_cdb(&alg, cdb_initial(&alg, &grid), &grid, 1).unwrap();
            (cdb_norm_drift(&h), h, grid)
        };
        let (drift, h, grid) = run(0, 1.0);
        assert!(drift < 1e-8, "{drift}");
        let c0 = h.slices.iter().map(|s| cdb_constraint_residual(&alg, s, &grid)).fold(0.0, f64::max);
        let d0 = cdb_divergence_residual(&alg, &h, &grid).unwrap();
        let (_, h1, g1) = run(1, 1.0);
        let d1 = cdb_divergence_residual(&alg, &h1, &g1).unwrap();
        let c1 = h1.slices.iter().map(|s| cdb_constraint_residual(&alg, s, &g1)).fold(0.0, f64::max);
        let (_, h2, g2) = run(2, 1.0);
        let d2 = cdb_divergence_residual(&alg, &h2, &g2).unwrap();
        let (o1, o2) = ((d0 / d1).log2(), (d1 / d2).log2());
        assert!(o1 > 1.9 && o2 > 1.9, "{d0} {d1} {d2}");
        assert!((c0 / c1).log2() > 1.9, "{c0} {c1}");
    }

    fn hat_state(grid: &StrandGrid, lag: &QuadraticLagrangian, alg: &LieAlgebraSpec) -> SymmRigidState {
        let l = grid.s_extent;
        let q0 = DMatrix::from_row_slice(3, 3, &[1.2, 0.1, 0.0, -0.2, 0.9, 0.3, 0.0, 0.1, 1.1]);
        let mut q = Vec::new();
        let mut mw = Vec::new();
        for j in 0..grid.n_s {
            let th = TAU * grid.s(j) / l;
            let r = (hat3([0.3 * th.sin(), 0.2, 0.4 * th.cos()]) * 1.0).exp()
                * hat3([0.0, 0.0, 1.0]).scale(th).exp();
            let qj = &q0 * r;
            let m = DMatrix::from_row_slice(3, 3, &[0.1, 0.5 * th.cos(), 0.0, 0.2, 0.0, 0.3, -0.1, 0.4, 0.2 * th.sin()]);
            q.push(qj);
            mw.push(m);
        }
        SymmRigidState::new(alg, lag, grid, q, mw).unwrap()
    }

    #[test]
    fn symmetric_product_is_static() {
        let alg = so3();
        let lag = QuadraticLagrangian::chiral(3);
        let grid = StrandGrid::single_point(1e-2, 1.0).unwrap();
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let s = SymmRigidState::new(&alg, &lag, &grid, vec![q.clone()], vec![q.clone()]).unwrap();
        assert_eq!(symm_rigid_step(&alg, &lag, &s, &grid).unwrap(), s);
    }

    #[test]
    fn classical_mode_matches_rigid_body() {
        let alg = so3();
        let a_t = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let lag = QuadraticLagrangian::new(a_t, -DMatrix::identity(3, 3)).unwrap();
        let grid = StrandGrid::single_point(1e-3, 1.0).unwrap();
        let q = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 1.1, 0.1, 0.3, 0.0, 0.9]);
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 0.4, -0.2, 0.1, 0.0, 0.7, 0.5, -0.3, 0.2]);
        let s0 = SymmRigidState::new(&alg, &lag, &grid, vec![q], vec![m]).unwrap();
        let pi0 = AlgebraElement::new(SoNBasis::new(&alg).unwrap().pairings(&antisym_part(&s0.q[0], &s0.mw[0])));
        let h = run_symm_rigid(&alg, &lag, s0, &grid, 1000).unwrap();
        let k = symm_rigid_kinematics(&alg, &lag, h.last().unwrap(), &grid).unwrap();

        // Euler's equations, d/dt Pi = Pi x Omega
        let inv = [1.0, 0.5, 1.0 / 3.0];
        let pi = rk4_ode(pi0.as_slice(), 1e-4, 10_000, |p| {
            cross(p, &[p[0] * inv[0], p[1] * inv[1], p[2] * inv[2]]).to_vec()
        });
        for c in 0..3 {
            assert!((k.u[0][c] - pi[c] * inv[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn so3_strand_residual_is_second_order() {
        let alg = so3();
        let lag = QuadraticLagrangian::chiral(3);
        let res = |level: u32| {
            let grid = StrandGrid::periodic(32, TAU, 0.02, 0.5).unwrap().refined(level);
            let s0 = hat_state(&grid, &lag, &alg);
            let h = run_symm_rigid(&alg, &lag, s0, &grid, 1).unwrap();
            for s in &h.slices {
                assert!(symm_rigid_momentum_map_residual(&alg, &lag, s, &grid).unwrap() < 1e-12);
            }
            so_n_strand_residual(&alg, &lag, &h, &grid).unwrap()
        };
        let (a, b, c) = (res(0), res(1), res(2));
        let (o1, o2) = ((a / b).log2(), (b / c).log2());
        assert!(o1 > 1.9 && o2 > 1.9, "{a} {b} {c}");
    }

    #[test]
    fn singular_q_is_rejected() {
        let alg = so3();
        let lag = QuadraticLagrangian::chiral(3);
        let grid = StrandGrid::periodic(8, 1.0, 1e-2, 1.0).unwrap();
        let q = vec![DMatrix::zeros(3, 3); 8];
        let m = vec![DMatrix::identity(3, 3); 8];
        assert!(matches!(
            SymmRigidState::new(&alg, &lag, &grid, q, m),
            Err(Error::SingularMatrix(_))
        ));
    }
}
