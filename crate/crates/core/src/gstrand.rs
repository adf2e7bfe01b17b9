//! Method-of-lines solver for G-strands: the covariant Euler-Poincaré equations
//! on (t, s) for a finite-dimensional algebra, evolved together with the
//! zero-curvature condition
//!
//! ```text
//! d/dt (dl/dnu) + ad*_nu dl/dnu + d/ds (dl/dgamma) + ad*_gamma dl/dgamma = 0
//! d/dt gamma - d/ds nu = [nu, gamma]
//! ```
//!
//! The evolved variables are the momentum `m = A_t nu` and `gamma`; `nu` is
//! recovered from `m` at every Runge-Kutta stage.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::grid::{all_finite, rk4_step, Boundary, StrandGrid};
use crate::liealg::{AlgebraElement, LieAlgebraSpec};

/// `l(nu, gamma) = 1/2 <A_t nu, nu> + 1/2 <A_s gamma, gamma>`, pairing through `kappa`.
///
/// `A_s` is usually negative definite (kinetic minus potential); a positive
/// `A_s` makes the strand equations elliptic in (t, s).
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticLagrangian {
    a_t: DMatrix<f64>,
    a_s: DMatrix<f64>,
    a_t_inv: DMatrix<f64>,
    a_s_inv: DMatrix<f64>,
}

impl QuadraticLagrangian {
    pub fn new(a_t: DMatrix<f64>, a_s: DMatrix<f64>) -> Result<Self> {
        let n = a_t.nrows();
        for (name, a) in [("A_t", &a_t), ("A_s", &a_s)] {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: a.ncols(),
                });
            }
            let scale = a.amax().max(1.0);
            if (a - a.transpose()).amax() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
        }
        let invert = |a: &DMatrix<f64>, name: &str| {
            a.clone()
                .try_inverse()
                .filter(|inv| inv.iter().all(|x| x.is_finite()))
                .ok_or_else(|| Error::SingularMatrix(format!("{name} is not invertible")))
        };
        let a_t_inv = invert(&a_t, "A_t")?;
        let a_s_inv = invert(&a_s, "A_s")?;
        Ok(Self {
            a_t,
            a_s,
            a_t_inv,
            a_s_inv,
        })
    }

    /// Principal chiral model, `l = 1/2 |U|^2 - 1/2 |V|^2`.
    pub fn chiral(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim), -DMatrix::identity(dim, dim)).expect("identity is invertible")
    }

    pub fn dim(&self) -> usize {
        self.a_t.nrows()
    }

    pub fn a_t(&self) -> &DMatrix<f64> {
        &self.a_t
    }

    pub fn a_s(&self) -> &DMatrix<f64> {
        &self.a_s
    }

    pub fn a_t_inv(&self) -> &DMatrix<f64> {
        &self.a_t_inv
    }

    pub fn a_s_inv(&self) -> &DMatrix<f64> {
        &self.a_s_inv
    }

    pub fn momentum_t(&self, nu: &AlgebraElement) -> AlgebraElement {
        apply(&self.a_t, nu.as_slice())
    }

    pub fn momentum_s(&self, gamma: &AlgebraElement) -> AlgebraElement {
        apply(&self.a_s, gamma.as_slice())
    }

    pub fn velocity_t(&self, m: &AlgebraElement) -> AlgebraElement {
        apply(&self.a_t_inv, m.as_slice())
    }

    pub fn velocity_s(&self, n: &AlgebraElement) -> AlgebraElement {
        apply(&self.a_s_inv, n.as_slice())
    }

    pub fn lagrangian(&self, alg: &LieAlgebraSpec, nu: &AlgebraElement, gamma: &AlgebraElement) -> f64 {
        0.5 * alg.pair(&self.momentum_t(nu), nu) + 0.5 * alg.pair(&self.momentum_s(gamma), gamma)
    }

    /// Energy density `1/2 <A_t nu, nu> - 1/2 <A_s gamma, gamma>`, conserved on periodic strands.
    pub fn energy_density(&self, alg: &LieAlgebraSpec, nu: &AlgebraElement, gamma: &AlgebraElement) -> f64 {
        0.5 * alg.pair(&self.momentum_t(nu), nu) - 0.5 * alg.pair(&self.momentum_s(gamma), gamma)
    }
}

pub(crate) fn apply(a: &DMatrix<f64>, x: &[f64]) -> AlgebraElement {
    let n = a.nrows();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate() {
            acc += a[(i, j)] * xj;
        }
        *o = acc;
    }
    AlgebraElement::new(out)
}

/// Grid samples of `sigma = nu dt + gamma ds`.
#[derive(Clone, Debug, PartialEq)]
pub struct StrandField {
    pub nu: Vec<AlgebraElement>,
    pub gamma: Vec<AlgebraElement>,
}

impl StrandField {
    pub fn zeros(dim: usize, n_s: usize) -> Self {
        Self {
            nu: vec![AlgebraElement::zeros(dim); n_s],
            gamma: vec![AlgebraElement::zeros(dim); n_s],
        }
    }

    /// Samples `nu(s)` and `gamma(s)` at the gridpoints.
    pub fn from_fn(
        grid: &StrandGrid,
        nu: impl Fn(f64) -> AlgebraElement,
        gamma: impl Fn(f64) -> AlgebraElement,
    ) -> Self {
        Self {
            nu: (0..grid.n_s).map(|j| nu(grid.s(j))).collect(),
            gamma: (0..grid.n_s).map(|j| gamma(grid.s(j))).collect(),
        }
    }

    pub fn n_s(&self) -> usize {
        self.nu.len()
    }

    pub fn check(&self, dim: usize, grid: &StrandGrid) -> Result<()> {
        check_dim(grid.n_s, self.nu.len())?;
        check_dim(grid.n_s, self.gamma.len())?;
        for x in self.nu.iter().chain(&self.gamma) {
            check_dim(dim, x.dim())?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.nu.iter().chain(&self.gamma).all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &StrandField) -> f64 {
        self.nu
            .iter()
            .zip(&other.nu)
            .chain(self.gamma.iter().zip(&other.gamma))
            .map(|(a, b)| (a - b).max_abs())
            .fold(0.0, f64::max)
    }
}

fn flatten(xs: &[AlgebraElement]) -> Vec<f64> {
    xs.iter().flat_map(|x| x.as_slice().iter().copied()).collect()
}

fn unflatten(data: &[f64], dim: usize) -> Vec<AlgebraElement> {
    data.chunks(dim).map(|c| AlgebraElement::new(c.to_vec())).collect()
}

fn check_inputs(alg: &LieAlgebraSpec, lag: Option<&QuadraticLagrangian>, f: &StrandField, grid: &StrandGrid) -> Result<()> {
    grid.check_stencil()?;
    if let Some(lag) = lag {
        check_dim(alg.dim(), lag.dim())?;
    }
    f.check(alg.dim(), grid)
}

/// Pointwise `d/dt (dl/dnu) = -d/ds (dl/dgamma) - ad*_nu dl/dnu - ad*_gamma dl/dgamma`.
pub fn ep_rhs(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    f: &StrandField,
    grid: &StrandGrid,
) -> Result<Vec<AlgebraElement>> {
    check_inputs(alg, Some(lag), f, grid)?;
    let d = alg.dim();
    let nu = flatten(&f.nu);
    let gamma = flatten(&f.gamma);
    let out = ep_rhs_flat(alg, lag, &nu, &gamma, grid);
    Ok(unflatten(&out, d))
}

/// Pointwise `d/dt gamma = d/ds nu + [nu, gamma]`.
pub fn zcc_rhs(alg: &LieAlgebraSpec, f: &StrandField, grid: &StrandGrid) -> Result<Vec<AlgebraElement>> {
    check_inputs(alg, None, f, grid)?;
    let nu = flatten(&f.nu);
    let gamma = flatten(&f.gamma);
    Ok(unflatten(&zcc_rhs_flat(alg, &nu, &gamma, grid), alg.dim()))
}

fn ep_rhs_flat(alg: &LieAlgebraSpec, lag: &QuadraticLagrangian, nu: &[f64], gamma: &[f64], grid: &StrandGrid) -> Vec<f64> {
    let d = alg.dim();
    let n = grid.n_s;
    let mom_t: Vec<f64> = (0..n).flat_map(|j| lag.momentum_t(&slice_el(nu, j, d)).into_vec()).collect();
    let mom_s: Vec<f64> = (0..n).flat_map(|j| lag.momentum_s(&slice_el(gamma, j, d)).into_vec()).collect();
    let dmom_s = grid.d_s_blocks(&mom_s, d);
    let mut out = vec![0.0; n * d];
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for j in 0..n {
        let r = j * d..(j + 1) * d;
        alg.ad_star_into(&nu[r.clone()], &mom_t[r.clone()], &mut a);
        alg.ad_star_into(&gamma[r.clone()], &mom_s[r.clone()], &mut b);
        for c in 0..d {
            out[j * d + c] = -dmom_s[j * d + c] - a[c] - b[c];
        }
    }
    out
}

fn zcc_rhs_flat(alg: &LieAlgebraSpec, nu: &[f64], gamma: &[f64], grid: &StrandGrid) -> Vec<f64> {
    let d = alg.dim();
    let n = grid.n_s;
    let dnu = grid.d_s_blocks(nu, d);
    let mut out = vec![0.0; n * d];
    let mut br = vec![0.0; d];
    for j in 0..n {
        let r = j * d..(j + 1) * d;
        alg.bracket_into(&nu[r.clone()], &gamma[r.clone()], &mut br);
        for c in 0..d {
            out[j * d + c] = dnu[j * d + c] + br[c];
        }
    }
    out
}

fn slice_el(data: &[f64], j: usize, d: usize) -> AlgebraElement {
    AlgebraElement::new(data[j * d..(j + 1) * d].to_vec())
}

fn freeze_fixed_ends(rhs: &mut [f64], grid: &StrandGrid, width: usize) {
    if grid.bc == Boundary::Fixed {
        let n = grid.n_s;
        rhs[..width].iter_mut().for_each(|x| *x = 0.0);
        rhs[(n - 1) * width..].iter_mut().for_each(|x| *x = 0.0);
    }
}

/// One RK4 step of the coupled (momentum, gamma) system.
pub fn step(alg: &LieAlgebraSpec, lag: &QuadraticLagrangian, f: &StrandField, grid: &StrandGrid) -> Result<StrandField> {
    step_indexed(alg, lag, f, grid, 0)
}

fn step_indexed(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    f: &StrandField,
    grid: &StrandGrid,
    index: usize,
) -> Result<StrandField> {
    check_inputs(alg, Some(lag), f, grid)?;
    let d = alg.dim();
    let n = grid.n_s;
    let half = n * d;
    let mut y = Vec::with_capacity(2 * half);
    for nu in &f.nu {
        y.extend(lag.momentum_t(nu).into_vec());
    }
    y.extend(flatten(&f.gamma));

    let next = rk4_step(&y, grid.dt, |y| {
        let nu: Vec<f64> = (0..n)
            .flat_map(|j| lag.velocity_t(&slice_el(&y[..half], j, d)).into_vec())
            .collect();
        let gamma = &y[half..];
        let mut rhs = ep_rhs_flat(alg, lag, &nu, gamma, grid);
        rhs.extend(zcc_rhs_flat(alg, &nu, gamma, grid));
        freeze_fixed_ends(&mut rhs[..half], grid, d);
        freeze_fixed_ends(&mut rhs[half..], grid, d);
        Ok(rhs)
    })?;
    if !all_finite(&next) {
        return Err(Error::BlowUp { step: index });
    }
    Ok(StrandField {
        nu: (0..n).map(|j| lag.velocity_t(&slice_el(&next[..half], j, d))).collect(),
        gamma: unflatten(&next[half..], d),
    })
}

/// `sum_j (1/2 <A_t nu, nu> - 1/2 <A_s gamma, gamma>) ds`
pub fn strand_energy(alg: &LieAlgebraSpec, lag: &QuadraticLagrangian, f: &StrandField, grid: &StrandGrid) -> f64 {
    let w = if grid.is_degenerate() { 1.0 } else { grid.ds() };
    f.nu
        .iter()
        .zip(&f.gamma)
        .map(|(nu, g)| lag.energy_density(alg, nu, g))
        .sum::<f64>()
        * w
}

/// Stored time slices of a run, equally spaced by `dt`.
#[derive(Clone, Debug)]
pub struct History<S> {
    pub dt: f64,
    pub t0: f64,
    pub slices: Vec<S>,
}

impl<S> History<S> {
    pub fn new(dt: f64, t0: f64) -> Self {
        Self {
            dt,
            t0,
            slices: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn last(&self) -> Option<&S> {
        self.slices.last()
    }

    pub(crate) fn require(&self, needed: usize) -> Result<()> {
        if self.slices.len() < needed {
            Err(Error::InsufficientHistory {
                needed,
                have: self.slices.len(),
            })
        } else {
            Ok(())
        }
    }
}

/// A G-strand run that owns its state and records history every `history_every` steps.
#[derive(Clone, Debug)]
pub struct StrandSimulation {
    pub alg: LieAlgebraSpec,
    pub lag: QuadraticLagrangian,
    pub grid: StrandGrid,
    pub field: StrandField,
    pub steps_taken: usize,
    pub history_every: usize,
    pub history: History<StrandField>,
}

impl StrandSimulation {
    pub fn new(
        alg: LieAlgebraSpec,
        lag: QuadraticLagrangian,
        grid: StrandGrid,
        field: StrandField,
        history_every: usize,
    ) -> Result<Self> {
        grid.validate()?;
        check_inputs(&alg, Some(&lag), &field, &grid)?;
        if history_every == 0 {
            return Err(Error::InvalidArgument("history_every must be at least 1".into()));
        }
        let mut history = History::new(grid.dt * history_every as f64, 0.0);
        history.slices.push(field.clone());
        Ok(Self {
            alg,
            lag,
            grid,
            field,
            steps_taken: 0,
            history_every,
            history,
        })
    }

    pub fn time(&self) -> f64 {
        self.steps_taken as f64 * self.grid.dt
    }

    pub fn step(&mut self) -> Result<()> {
        self.field = step_indexed(&self.alg, &self.lag, &self.field, &self.grid, self.steps_taken + 1)?;
        self.steps_taken += 1;
        if self.steps_taken.is_multiple_of(self.history_every) {
            self.history.slices.push(self.field.clone());
        }
        Ok(())
    }

    /// Steps until `t_end`.
    pub fn run(&mut self) -> Result<()> {
        for _ in self.steps_taken..self.grid.n_steps() {
            self.step()?;
        }
        Ok(())
    }

    pub fn energy(&self) -> f64 {
        strand_energy(&self.alg, &self.lag, &self.field, &self.grid)
    }
}

/// Max-norm residuals of the strand equations over a stored history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StrandResiduals {
    pub ep: f64,
    pub zcc: f64,
}

/// Residuals of both strand equations by centered differences in t and s,
/// over interior time slices (and interior s-points for fixed bc).
pub fn residual_report(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    history: &History<StrandField>,
    grid: &StrandGrid,
) -> Result<StrandResiduals> {
    let ep = ep_residual_field(alg, lag, history, grid)?;
    let zcc = zcc_residual(alg, history, grid)?;
    Ok(StrandResiduals {
        ep: ep.iter().fold(0.0, |m, x| m.max(x.abs())),
        zcc,
    })
}

/// Pointwise residual of the strand equation, laid out as
/// `[interior slice][interior s-point][component]`.
pub fn ep_residual_field(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    history: &History<StrandField>,
    grid: &StrandGrid,
) -> Result<Vec<f64>> {
    history.require(3)?;
    let d = alg.dim();
    for f in &history.slices {
        check_inputs(alg, Some(lag), f, grid)?;
    }
    let js = interior_s(grid);
    let mut out = Vec::with_capacity((history.len() - 2) * js.len() * d);
    for i in 1..history.len() - 1 {
        let (prev, cur, next) = (&history.slices[i - 1], &history.slices[i], &history.slices[i + 1]);
        let rhs = ep_rhs_flat(alg, lag, &flatten(&cur.nu), &flatten(&cur.gamma), grid);
        for &j in &js {
            let dm = &lag.momentum_t(&next.nu[j]) - &lag.momentum_t(&prev.nu[j]);
            for c in 0..d {
                out.push(dm[c] / (2.0 * history.dt) - rhs[j * d + c]);
            }
        }
    }
    Ok(out)
}

pub(crate) fn interior_s(grid: &StrandGrid) -> Vec<usize> {
    match grid.bc {
        Boundary::Periodic => (0..grid.n_s).collect(),
        Boundary::Fixed => (1..grid.n_s - 1).collect(),
    }
}

/// Group-valued field recovered from a history by exponential Euler steps.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// `g[i][j]` at history slice `i` and gridpoint `j`.
    pub g: Vec<Vec<DMatrix<f64>>>,
    /// `max |(d/ds g) g^-1 - gamma|` over all slices, centered differences in s.
    pub gamma_mismatch: f64,
}

pub const RECONSTRUCTION_ZCC_TOLERANCE: f64 = 1e-6;

/// Integrates `d/dt g = nu g` with `g <- exp(dt nu) g`, starting from `g0[j]`.
///
/// Refused when the zero-curvature residual of `history` exceeds
/// [`RECONSTRUCTION_ZCC_TOLERANCE`], since `gamma` would then not be `(d/ds g) g^-1`
/// for any `g`.
pub fn reconstruct(
    alg: &LieAlgebraSpec,
    g0: &[DMatrix<f64>],
    history: &History<StrandField>,
    grid: &StrandGrid,
) -> Result<Reconstruction> {
    check_dim(grid.n_s, g0.len())?;
    if alg.basis_matrices().is_none() {
        return Err(Error::InvalidArgument(format!("algebra `{}` has no matrix representation", alg.name())));
    }
    if history.len() >= 3 {
        let zcc = zcc_residual(alg, history, grid)?;
        if zcc > RECONSTRUCTION_ZCC_TOLERANCE {
            return Err(Error::ReconstructionRefused {
                residual: zcc,
                tolerance: RECONSTRUCTION_ZCC_TOLERANCE,
            });
        }
    } else {
        history.require(1)?;
    }
    let mut g = Vec::with_capacity(history.len());
    g.push(g0.to_vec());
    for i in 0..history.len() - 1 {
        let cur = &history.slices[i];
        let prev = g.last().expect("nonempty");
        let next = (0..grid.n_s)
            .map(|j| {
                let nu = alg.to_matrix(&cur.nu[j])?;
                Ok((nu * history.dt).exp() * &prev[j])
            })
            .collect::<Result<Vec<_>>>()?;
        g.push(next);
    }
    let mut mismatch = 0.0f64;
    if !grid.is_degenerate() {
        for (i, gi) in g.iter().enumerate() {
            let js = interior_s(grid);
            for &j in &js {
                let dg = derivative_matrix(grid, j, gi);
                let inv = gi[j]
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::SingularMatrix("reconstructed g is singular".into()))?;
                let gamma = alg.to_matrix(&history.slices[i].gamma[j])?;
                mismatch = mismatch.max((dg * inv - gamma).amax());
            }
        }
    }
    Ok(Reconstruction {
        g,
        gamma_mismatch: mismatch,
    })
}

fn derivative_matrix(grid: &StrandGrid, j: usize, g: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (r, c) = g[0].shape();
    DMatrix::from_fn(r, c, |a, b| grid.d_s_at(j, |jj| g[jj][(a, b)]))
}

/// Zero-curvature part of [`residual_report`], which does not need a Lagrangian.
pub fn zcc_residual(alg: &LieAlgebraSpec, history: &History<StrandField>, grid: &StrandGrid) -> Result<f64> {
    history.require(3)?;
    let d = alg.dim();
    let js = interior_s(grid);
    let mut zcc = 0.0f64;
    for i in 1..history.len() - 1 {
        let (prev, cur, next) = (&history.slices[i - 1], &history.slices[i], &history.slices[i + 1]);
        cur.check(d, grid)?;
        let rhs = zcc_rhs_flat(alg, &flatten(&cur.nu), &flatten(&cur.gamma), grid);
        for &j in &js {
            let dg = &next.gamma[j] - &prev.gamma[j];
            for c in 0..d {
                zcc = zcc.max((dg[c] / (2.0 * history.dt) - rhs[j * d + c]).abs());
            }
        }
    }
    Ok(zcc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liealg::{builtin, Builtin};
    use std::f64::consts::TAU;

    fn so3() -> LieAlgebraSpec {
        builtin(Builtin::So3).unwrap()
    }

    fn e(v: [f64; 3]) -> AlgebraElement {
        AlgebraElement::new(v.to_vec())
    }

    #[test]
    fn constant_chiral_field_is_stationary() {
        let alg = so3();
        let lag = QuadraticLagrangian::chiral(3);
        let grid = StrandGrid::periodic(16, 1.0, 1e-3, 1.0).unwrap();
        let xi = e([0.3, -0.5, 0.8]);
        let f = StrandField::from_fn(&grid, |_| xi.clone(), |_| xi.clone());
        for r in ep_rhs(&alg, &lag, &f, &grid).unwrap() {
            assert!(r.max_abs() < 1e-15);
        }
        for r in zcc_rhs(&alg, &f, &grid).unwrap() {
            assert!(r.max_abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_bc_needs_three_points() {
        let alg = so3();
        let grid = StrandGrid {
            n_s: 2,
            s_extent: 1.0,
            bc: Boundary::Fixed,
            dt: 1e-3,
            t_end: 1.0,
        };
        let f = StrandField::zeros(3, 2);
        assert!(matches!(zcc_rhs(&alg, &f, &grid), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn traveling_wave_rhs_is_second_order() {
        let alg = so3();
        let lag = QuadraticLagrangian::chiral(3);
        let xi = [0.6, 0.0, 0.8];
        let err = |n: usize| {
            let grid = StrandGrid::periodic(n, TAU, 1e-3, 1.0).unwrap();
            let f = |s: f64| s.sin();
            let field = StrandField::from_fn(&grid, |s| e(xi).scaled(f(s)), |s| e(xi).scaled(f(s)));
            let ep = ep_rhs(&alg, &lag, &field, &grid).unwrap();
            let zc = zcc_rhs(&alg, &field, &grid).unwrap();
            let mut worst = 0.0f64;
            for j in 0..n {
                let exact = e(xi).scaled(grid.s(j).cos());
                worst = worst.max((&ep[j] - &exact).max_abs()).max((&zc[j] - &exact).max_abs());
            }
            worst
        };
        let order = (err(32) / err(64)).log2();
        assert!(order > 1.95, "{order}");
    }

    /// Manufactured nonlinear field: the semi-discrete right-hand side approaches the
    /// continuum one at second order.
    #[test]
    fn manufactured_rhs_converges() {
        let alg = builtin(Builtin::Se3).unwrap();
        let a_t = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 1.5, 1.0, 1.0, 3.0]));
        let a_s = -DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 1.0, 2.0, 1.0, 2.0, 1.0]));
        let lag = QuadraticLagrangian::new(a_t, a_s).unwrap();
        let nu = |s: f64| AlgebraElement::new((0..6).map(|c| (s + c as f64).sin()).collect());
        let gamma = |s: f64| AlgebraElement::new((0..6).map(|c| (2.0 * s - c as f64).cos()).collect());
        let dgamma = |s: f64| AlgebraElement::new((0..6).map(|c| -2.0 * (2.0 * s - c as f64).sin()).collect());
        let err = |n: usize| {
            let grid = StrandGrid::periodic(n, TAU, 1e-3, 1.0).unwrap();
            let field = StrandField::from_fn(&grid, nu, gamma);
            let ep = ep_rhs(&alg, &lag, &field, &grid).unwrap();
            let mut worst = 0.0f64;
            for j in 0..n {
                let s = grid.s(j);
                let (v, g) = (nu(s), gamma(s));
                let mut exact = lag.momentum_s(&dgamma(s)).scaled(-1.0);
                exact.axpy(-1.0, &alg.ad_star(&v, &lag.momentum_t(&v)).unwrap());
                exact.axpy(-1.0, &alg.ad_star(&g, &lag.momentum_s(&g)).unwrap());
                worst = worst.max((&ep[j] - &exact).max_abs());
            }
            worst
        };
        let order = (err(64) / err(128)).log2();
        assert!(order > 1.9, "{order}");
    }

    #[test]
    fn zero_field_stays_zero() {
        let alg = so3();
        let lag = QuadraticLagrangian::chiral(3);
        let grid = StrandGrid::periodic(16, 1.0, 1e-2, 1.0).unwrap();
        let f = StrandField::zeros(3, 16);
        assert_eq!(step(&alg, &lag, &f, &grid).unwrap(), f);
    }

    #[test]
    fn coadjoint_pairing_identity_per_gridpoint() {
        let alg = so3();
        let lag = QuadraticLagrangian::chiral(3);
        let grid = StrandGrid::periodic(16, TAU, 1e-2, 1.0).unwrap();
        let f = StrandField::from_fn(&grid, |s| e([s.sin(), s.cos(), 0.3]), |s| e([0.1, (2.0 * s).sin(), 1.0]));
        let eta = e([0.2, -0.7, 0.4]);
        for nu in &f.nu {
            let mom = lag.momentum_t(nu);
            let lhs = alg.pair(&alg.ad_star(nu, &mom).unwrap(), &eta);
            let rhs = alg.pair(&mom, &alg.bracket(nu, &eta).unwrap());
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn rk4_step_matches_richardson_at_fourth_order() {
        let alg = so3();
        let lag = QuadraticLagrangian::chiral(3);
        let base = StrandGrid::periodic(16, TAU, 0.04, 1.0).unwrap();
        let f0 = StrandField::from_fn(&base, |s| e([s.sin(), 0.5 * s.cos(), 0.3]), |s| e([0.2, (2.0 * s).sin(), -0.4]));
        let advance = |dt: f64, n: usize| {
            let grid = StrandGrid { dt, ..base };
            let mut f = f0.clone();
            for _ in 0..n {
                f = step(&alg, &lag, &f, &grid).unwrap();
            }
            f
        };
        // local error of one step shrinks by 2^5 when dt halves
        let reference = advance(0.04 / 64.0, 64);
        let e1 = advance(0.04, 1).max_abs_diff(&reference);
        let e2 = advance(0.02, 2).max_abs_diff(&reference);
        let order = (e1 / e2).log2();
        assert!(order > 3.8, "{order}");
    }

    #[test]
    fn reconstruction_of_one_parameter_subgroup() {
        let alg = so3();
        let lag = QuadraticLagrangian::chiral(3);
        let grid = StrandGrid::periodic(8, 1.0, 1e-2, 0.5).unwrap();
        let xi = e([0.0, 0.0, 1.0]);
        let f = StrandField::from_fn(&grid, |_| xi.clone(), |_| AlgebraElement::zeros(3));
        let mut sim = StrandSimulation::new(alg.clone(), lag, grid, f, 1).unwrap();
        sim.run().unwrap();
        let g0 = vec![DMatrix::identity(3, 3); 8];
        let rec = reconstruct(&alg, &g0, &sim.history, &grid).unwrap();
        let exact = (alg.to_matrix(&xi).unwrap() * 0.5).exp();
        assert!((rec.g.last().unwrap()[3].clone() - exact).amax() < 1e-12);

        let zero = StrandField::zeros(3, 8);
        let mut h = History::new(1e-2, 0.0);
        h.slices = vec![zero.clone(), zero.clone(), zero];
        let g0: Vec<_> = (0..8).map(|j| (alg.to_matrix(&xi).unwrap() * grid.s(j)).exp()).collect();
        let rec = reconstruct(&alg, &g0, &h, &grid).unwrap();
        assert_eq!(rec.g[2], g0);
    }

    #[test]
    fn corrupted_history_is_refused() {
        let alg = so3();
        let lag = QuadraticLagrangian::chiral(3);
        let grid = StrandGrid::periodic(32, TAU, 1e-3, 0.01).unwrap();
        let f = StrandField::from_fn(&grid, |s| e([s.sin(), 0.2, 0.0]), |s| e([0.0, s.cos(), 0.5]));
        let mut sim = StrandSimulation::new(alg.clone(), lag.clone(), grid, f, 1).unwrap();
        sim.run().unwrap();
        let mut bad = sim.history.clone();
        for (i, sl) in bad.slices.iter_mut().enumerate() {
            if i % 2 == 1 {
                for g in &mut sl.gamma {
                    *g = g.scaled(1.1);
                }
            }
        }
        let r = residual_report(&alg, &lag, &bad, &grid).unwrap();
        assert!(r.zcc > 1e-2, "{}", r.zcc);
        let g0 = vec![DMatrix::identity(3, 3); 32];
        assert!(matches!(
            reconstruct(&alg, &g0, &bad, &grid),
            Err(Error::ReconstructionRefused { .. })
        ));
        let mut short = History::new(1e-3, 0.0);
        short.slices.push(sim.field.clone());
        assert!(matches!(
            residual_report(&alg, &lag, &short, &grid),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn blow_up_is_reported_with_step_index() {
        let alg = so3();
        let lag = QuadraticLagrangian::chiral(3);
        let grid = StrandGrid::periodic(8, 1.0, 1e3, 1e4).unwrap();
        let f = StrandField::from_fn(&grid, |s| e([1e150 * (s * TAU).sin(), 1e150, 0.0]), |_| e([0.0, 1e150, 1e150]));
        let mut sim = StrandSimulation::new(alg, lag, grid, f, 1).unwrap();
        let err = sim.run().unwrap_err();
        assert!(matches!(err, Error::BlowUp { step: 1 }), "{err}");
    }
}
