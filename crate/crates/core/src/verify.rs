//! Discrete variational checks.
//!
//! A [`DiscreteAction`] sums an integrand over the cells of a (t, s) node grid.
//! Each cell sees the average of its four corner values and the cell-averaged
//! forward differences, which makes the discrete Euler-Lagrange equations a
//! second-order consistent approximation of the continuum ones. Central
//! finite differences of the assembled action then measure how far a solver
//! trajectory is from stationarity.
//!
//! [`pontryagin_residual`] checks the canonical form of the same statement for
//! a generalized energy density `e(x, psi, p, b)`, and [`legendre_pair`] builds
//! the Lie-Poisson Hamiltonian dual to a quadratic Lagrangian.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::grid::{Boundary, StrandGrid};
use crate::clebsch::{symm_rigid_kinematics, SymmRigidState};
use crate::gstrand::{interior_s, History, QuadraticLagrangian, StrandField};
use crate::liealg::{AlgebraElement, LieAlgebraSpec};

/// Relative step of every finite-difference derivative in this module.
pub const FD_REL_STEP: f64 = 1e-6;

fn fd_step(v: f64) -> f64 {
    FD_REL_STEP * (1.0 + v.abs())
}

/// Central difference of `f` in coordinate `i` of `x`.
pub fn central_partial(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let h = fd_step(x[i]);
    let mut y = x.to_vec();
    y[i] = x[i] + h;
    let fp = f(&y);
    y[i] = x[i] - h;
    let fm = f(&y);
    (fp - fm) / (2.0 * h)
}

/// Named blocks of per-node field values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldLayout {
    pub names: Vec<String>,
    pub dims: Vec<usize>,
}

impl FieldLayout {
    pub fn new(fields: &[(&str, usize)]) -> Self {
        Self {
            names: fields.iter().map(|(n, _)| n.to_string()).collect(),
            dims: fields.iter().map(|(_, d)| *d).collect(),
        }
    }

    /// Values per node.
    pub fn width(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Offset of block `name` within a node.
    pub fn offset(&self, name: &str) -> Option<usize> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.dims[..i].iter().sum())
    }
}

/// Node grid `t_i = t0 + i dt`, `s_j = j ds`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionGrid {
    pub n_t: usize,
    pub n_s: usize,
    pub t0: f64,
    pub dt: f64,
    pub ds: f64,
    pub bc: Boundary,
}

impl ActionGrid {
    /// Node grid matching a stored history on a strand grid.
    pub fn from_history(grid: &StrandGrid, history_len: usize, history_dt: f64) -> Self {
        Self {
            n_t: history_len,
            n_s: grid.n_s,
            t0: 0.0,
            dt: history_dt,
            ds: if grid.is_degenerate() { 1.0 } else { grid.ds() },
            bc: grid.bc,
        }
    }

    fn periodic(&self) -> bool {
        self.bc == Boundary::Periodic && self.n_s > 1
    }

    /// Cell columns in s: a single degenerate column when `n_s == 1`.
    fn s_cells(&self) -> usize {
        if self.n_s == 1 {
            1
        } else if self.periodic() {
            self.n_s
        } else {
            self.n_s - 1
        }
    }

    fn cell_area(&self) -> f64 {
        if self.n_s == 1 {
            self.dt
        } else {
            self.dt * self.ds
        }
    }

    /// Whether node `(i, j)` may vary (boundary nodes are held fixed).
    fn is_free(&self, i: usize, j: usize) -> bool {
        let t_ok = i > 0 && i + 1 < self.n_t;
        let s_ok = self.n_s == 1 || self.periodic() || (j > 0 && j + 1 < self.n_s);
        t_ok && s_ok
    }
}

/// What an integrand sees on one cell.
pub struct CellSample<'a> {
    pub t: f64,
    pub s: f64,
    pub values: &'a [f64],
    pub d_t: &'a [f64],
    pub d_s: &'a [f64],
}

type Integrand<'a> = Box<dyn Fn(&CellSample) -> f64 + Send + Sync + 'a>;

pub struct DiscreteAction<'a> {
    pub layout: FieldLayout,
    pub grid: ActionGrid,
    integrand: Integrand<'a>,
}

impl<'a> DiscreteAction<'a> {
    pub fn new(
        layout: FieldLayout,
        grid: ActionGrid,
        integrand: impl Fn(&CellSample) -> f64 + Send + Sync + 'a,
    ) -> Result<Self> {
        if grid.n_t < 2 || grid.n_s == 0 {
            return Err(Error::InvalidGrid("an action grid needs at least two time nodes".into()));
        }
        if !(grid.dt > 0.0 && grid.ds > 0.0) {
            return Err(Error::InvalidGrid("action grid spacings must be positive".into()));
        }
        if grid.n_s > 1 && !grid.periodic() && grid.n_s < 2 {
            return Err(Error::InvalidGrid("fixed s-boundary needs two nodes".into()));
        }
        Ok(Self {
            layout,
            grid,
            integrand: Box::new(integrand),
        })
    }

    fn node(&self, _fields: &[f64], i: usize, j: usize) -> usize {
        (i * self.grid.n_s + j) * self.layout.width()
    }

    fn cell_value(&self, fields: &[f64], i: usize, jc: usize, buf: &mut CellBuffers) -> f64 {
        let w = self.layout.width();
        let g = &self.grid;
        if g.n_s == 1 {
            let (a, b) = (self.node(fields, i, 0), self.node(fields, i + 1, 0));
            for c in 0..w {
                buf.values[c] = 0.5 * (fields[a + c] + fields[b + c]);
                buf.d_t[c] = (fields[b + c] - fields[a + c]) / g.dt;
                buf.d_s[c] = 0.0;
            }
        } else {
            let j1 = if jc + 1 == g.n_s { 0 } else { jc + 1 };
            let n00 = self.node(fields, i, jc);
            let n01 = self.node(fields, i, j1);
            let n10 = self.node(fields, i + 1, jc);
            let n11 = self.node(fields, i + 1, j1);
            for c in 0..w {
                let (f00, f01, f10, f11) = (fields[n00 + c], fields[n01 + c], fields[n10 + c], fields[n11 + c]);
                buf.values[c] = 0.25 * (f00 + f01 + f10 + f11);
                buf.d_t[c] = 0.5 * ((f10 - f00) + (f11 - f01)) / g.dt;
                buf.d_s[c] = 0.5 * ((f01 - f00) + (f11 - f10)) / g.ds;
            }
        }
        let sample = CellSample {
            t: g.t0 + (i as f64 + 0.5) * g.dt,
            s: if g.n_s == 1 { 0.0 } else { (jc as f64 + 0.5) * g.ds },
            values: &buf.values,
            d_t: &buf.d_t,
            d_s: &buf.d_s,
        };
        (self.integrand)(&sample) * g.cell_area()
    }

    /// Cells touching node `(i, j)`.
    fn cells_around(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(4);
        let ti: Vec<usize> = [i.checked_sub(1), (i + 1 < g.n_t).then_some(i)].into_iter().flatten().collect();
        let sj: Vec<usize> = if g.n_s == 1 {
            vec![0]
        } else if g.periodic() {
            let jm = if j == 0 { g.n_s - 1 } else { j - 1 };
            if jm == j {
                vec![j]
            } else {
                vec![jm, j]
            }
        } else {
            [j.checked_sub(1), (j + 1 < g.n_s).then_some(j)].into_iter().flatten().collect()
        };
        for &a in &ti {
            for &b in &sj {
                out.push((a, b));
            }
        }
        out
    }

    fn check_fields(&self, fields: &[f64]) -> Result<()> {
        check_dim(self.grid.n_t * self.grid.n_s * self.layout.width(), fields.len())
    }
}

struct CellBuffers {
    values: Vec<f64>,
    d_t: Vec<f64>,
    d_s: Vec<f64>,
}

impl CellBuffers {
    fn new(w: usize) -> Self {
        Self {
            values: vec![0.0; w],
            d_t: vec![0.0; w],
            d_s: vec![0.0; w],
        }
    }
}

/// `sum_cells e(cell) dt ds`, with node values laid out `[i][j][component]`.
pub fn assemble(action: &DiscreteAction, fields: &[f64]) -> Result<f64> {
    action.check_fields(fields)?;
    let mut buf = CellBuffers::new(action.layout.width());
    let mut total = 0.0;
    for i in 0..action.grid.n_t - 1 {
        for jc in 0..action.grid.s_cells() {
            total += action.cell_value(fields, i, jc, &mut buf);
        }
    }
    Ok(total)
}

/// Central-difference gradient of an assembled action.
#[derive(Clone, Debug)]
pub struct ActionGradient {
    /// `d S / d field` per node component; zero on held boundary nodes.
    pub raw: Vec<f64>,
    /// Whether each entry was varied.
    pub free: Vec<bool>,
    /// Cell area used to turn `raw` into a density.
    pub cell_area: f64,
}

impl ActionGradient {
    /// `max |dS/dfield| / (dt ds)` over varied components.
    pub fn density_max_norm(&self) -> f64 {
        self.raw
            .iter()
            .zip(&self.free)
            .filter(|(_, f)| **f)
            .fold(0.0f64, |m, (g, _)| m.max(g.abs()))
            / self.cell_area
    }

    /// Same, restricted to the components of one layout block.
    pub fn block_max_norm(&self, layout: &FieldLayout, name: &str) -> Option<f64> {
        let off = layout.offset(name)?;
        let dim = layout.dims[layout.names.iter().position(|n| n == name)?];
        let w = layout.width();
        Some(
            self.raw
                .iter()
                .zip(&self.free)
                .enumerate()
                .filter(|(k, (_, f))| **f && (k % w) >= off && (k % w) < off + dim)
                .fold(0.0f64, |m, (_, (g, _))| m.max(g.abs()))
                / self.cell_area,
        )
    }
}

/// Central differences of the action in every free node component,
/// each evaluated over the cells touching that node.
pub fn fd_gradient(action: &DiscreteAction, fields: &[f64]) -> Result<ActionGradient> {
    action.check_fields(fields)?;
    let g = action.grid;
    let w = action.layout.width();
    let mut raw = vec![0.0; fields.len()];
    let mut free = vec![false; fields.len()];
    let mut work = fields.to_vec();
    let mut buf = CellBuffers::new(w);
    for i in 0..g.n_t {
        for j in 0..g.n_s {
            if !g.is_free(i, j) {
                continue;
            }
            let cells = action.cells_around(i, j);
            let base = action.node(fields, i, j);
            for c in 0..w {
                let k = base + c;
                let x = fields[k];
                let h = fd_step(x);
                let mut local = |v: f64, work: &mut Vec<f64>| {
                    work[k] = v;
                    cells
                        .iter()
                        .map(|&(a, b)| action.cell_value(work, a, b, &mut buf))
                        .sum::<f64>()
                };
                let fp = local(x + h, &mut work);
                let fm = local(x - h, &mut work);
                work[k] = x;
                raw[k] = (fp - fm) / (2.0 * h);
                free[k] = true;
            }
        }
    }
    Ok(ActionGradient {
        raw,
        free,
        cell_area: g.cell_area(),
    })
}

// ---------------------------------------------------------------------------
// Generalized energies
// ---------------------------------------------------------------------------

/// Per-node layout of `(psi, p^mu, b)`: `n_psi` configuration values, one
/// momentum block of length `n_psi` per base direction, `n_b` auxiliary values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PontryaginLayout {
    pub n_psi: usize,
    pub n_dirs: usize,
    pub n_b: usize,
}

impl PontryaginLayout {
    pub fn width(&self) -> usize {
        self.n_psi * (1 + self.n_dirs) + self.n_b
    }

    pub fn as_field_layout(&self) -> FieldLayout {
        let mut fields = vec![("psi", self.n_psi), ("p_t", self.n_psi)];
        if self.n_dirs > 1 {
            fields.push(("p_s", self.n_psi));
        }
        fields.push(("b", self.n_b));
        FieldLayout::new(&fields)
    }
}

/// What an energy density sees at a point.
pub struct EnergyPoint<'a> {
    pub t: f64,
    pub s: f64,
    pub psi: &'a [f64],
    /// `p[mu]` for each base direction.
    pub p: [&'a [f64]; 2],
    pub b: &'a [f64],
}

type EnergyFn<'a> = Box<dyn Fn(&EnergyPoint) -> f64 + Send + Sync + 'a>;

/// A generalized energy density `e(x, psi, p, b)`.
pub struct GeneralizedEnergy<'a> {
    pub layout: PontryaginLayout,
    e_loc: EnergyFn<'a>,
}

impl<'a> GeneralizedEnergy<'a> {
    pub fn new(layout: PontryaginLayout, e_loc: impl Fn(&EnergyPoint) -> f64 + Send + Sync + 'a) -> Result<Self> {
        if layout.n_dirs == 0 || layout.n_dirs > 2 {
            return Err(Error::InvalidArgument("one or two base directions are supported".into()));
        }
        Ok(Self {
            layout,
            e_loc: Box::new(e_loc),
        })
    }

    /// `e` at a node given its packed values.
    pub fn eval(&self, t: f64, s: f64, node: &[f64]) -> f64 {
        let l = self.layout;
        let psi = &node[..l.n_psi];
        let pt = &node[l.n_psi..2 * l.n_psi];
        let ps = if l.n_dirs > 1 { &node[2 * l.n_psi..3 * l.n_psi] } else { &node[0..0] };
        let b = &node[l.n_psi * (1 + l.n_dirs)..];
        (self.e_loc)(&EnergyPoint {
            t,
            s,
            psi,
            p: [pt, ps],
            b,
        })
    }
}

/// The Clebsch/Pontryagin action `sum_mu <p^mu, d_mu psi> - e` of a generalized energy.
pub fn action_from_energy<'a>(e: &'a GeneralizedEnergy<'a>, grid: ActionGrid) -> Result<DiscreteAction<'a>> {
    let l = e.layout;
    if (grid.n_s == 1) != (l.n_dirs == 1) {
        return Err(Error::InvalidArgument("number of base directions must match the grid".into()));
    }
    DiscreteAction::new(l.as_field_layout(), grid, move |c: &CellSample| {
        let n = l.n_psi;
        let mut kin = 0.0;
        for a in 0..n {
            kin += c.values[n + a] * c.d_t[a];
            if l.n_dirs > 1 {
                kin += c.values[2 * n + a] * c.d_s[a];
            }
        }
        kin - e.eval(c.t, c.s, c.values)
    })
}

/// Max-norm residuals of the canonical equations over interior nodes:
/// `d_mu psi - de/dp^mu`, `sum_mu d_mu p^mu + de/dpsi` and `de/db`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PontryaginResiduals {
    pub hamilton: f64,
    pub costate: f64,
    pub constraint: f64,
}

impl PontryaginResiduals {
    pub fn max(&self) -> f64 {
        self.hamilton.max(self.costate).max(self.constraint)
    }
}

/// Evaluates the canonical equations with centered field derivatives and
/// finite-difference partials of `e`.
pub fn pontryagin_residual(e: &GeneralizedEnergy, fields: &[f64], grid: &ActionGrid) -> Result<PontryaginResiduals> {
    let l = e.layout;
    let w = l.width();
    check_dim(grid.n_t * grid.n_s * w, fields.len())?;
    if (grid.n_s == 1) != (l.n_dirs == 1) {
        return Err(Error::InvalidArgument("number of base directions must match the grid".into()));
    }
    if grid.n_t < 3 {
        return Err(Error::InsufficientHistory {
            needed: 3,
            have: grid.n_t,
        });
    }
    let n = l.n_psi;
    let at = |i: usize, j: usize| (i * grid.n_s + j) * w;
    let js: Vec<usize> = if grid.n_s == 1 || grid.periodic() {
        (0..grid.n_s).collect()
    } else {
        (1..grid.n_s - 1).collect()
    };
    let wrap = |j: usize, up: bool| -> usize {
        if up {
            if j + 1 == grid.n_s {
                0
            } else {
                j + 1
            }
        } else if j == 0 {
            grid.n_s - 1
        } else {
            j - 1
        }
    };
    let mut r = PontryaginResiduals::default();
    for i in 1..grid.n_t - 1 {
        for &j in &js {
            let node = &fields[at(i, j)..at(i, j) + w];
            let (t, s) = (grid.t0 + i as f64 * grid.dt, j as f64 * grid.ds);
            let f = |x: &[f64]| e.eval(t, s, x);
            let dt_of = |k: usize| (fields[at(i + 1, j) + k] - fields[at(i - 1, j) + k]) / (2.0 * grid.dt);
            let ds_of = |k: usize| {
                if l.n_dirs > 1 {
                    (fields[at(i, wrap(j, true)) + k] - fields[at(i, wrap(j, false)) + k]) / (2.0 * grid.ds)
                } else {
                    0.0
                }
            };
            for a in 0..n {
                // d_t psi = de/dp^t, d_s psi = de/dp^s
                r.hamilton = r.hamilton.max((dt_of(a) - central_partial(f, node, n + a)).abs());
                if l.n_dirs > 1 {
                    r.hamilton = r.hamilton.max((ds_of(a) - central_partial(f, node, 2 * n + a)).abs());
                }
                let mut div = dt_of(n + a);
                if l.n_dirs > 1 {
                    div += ds_of(2 * n + a);
                }
                r.costate = r.costate.max((div + central_partial(f, node, a)).abs());
            }
            for k in n * (1 + l.n_dirs)..w {
                r.constraint = r.constraint.max(central_partial(f, node, k).abs());
            }
        }
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// Legendre transform
// ---------------------------------------------------------------------------

/// `h(mu_t, mu_s) = 1/2 <B_t mu_t, mu_t> + 1/2 <B_s mu_s, mu_s>` with `B = A^-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiePoissonHamiltonian {
    pub b_t: DMatrix<f64>,
    pub b_s: DMatrix<f64>,
}

/// Legendre dual of a quadratic Lagrangian.
pub fn legendre_pair(lag: &QuadraticLagrangian) -> Result<LiePoissonHamiltonian> {
    Ok(LiePoissonHamiltonian {
        b_t: lag.a_t_inv().clone(),
        b_s: lag.a_s_inv().clone(),
    })
}

impl LiePoissonHamiltonian {
    pub fn value(&self, alg: &LieAlgebraSpec, mu_t: &AlgebraElement, mu_s: &AlgebraElement) -> f64 {
        let (vt, vs) = (self.velocity_t(mu_t), self.velocity_s(mu_s));
        0.5 * alg.pair(&vt, mu_t) + 0.5 * alg.pair(&vs, mu_s)
    }

    /// `dh/dmu_t`
    pub fn velocity_t(&self, mu: &AlgebraElement) -> AlgebraElement {
        crate::gstrand::apply(&self.b_t, mu.as_slice())
    }

    /// `dh/dmu_s`
    pub fn velocity_s(&self, mu: &AlgebraElement) -> AlgebraElement {
        crate::gstrand::apply(&self.b_s, mu.as_slice())
    }

    /// The inverse transform, back to a Lagrangian.
    pub fn to_lagrangian(&self) -> Result<QuadraticLagrangian> {
        let inv = |m: &DMatrix<f64>| {
            m.clone()
                .try_inverse()
                .ok_or_else(|| Error::SingularMatrix("Hamiltonian inertia is singular".into()))
        };
        QuadraticLagrangian::new(inv(&self.b_t)?, inv(&self.b_s)?)
    }
}

/// Pointwise residual of the covariant Lie-Poisson equations
/// `d_t mu_t + d_s mu_s + ad*_{dh/dmu_t} mu_t + ad*_{dh/dmu_s} mu_s`
/// along a history of velocities, with `mu = A sigma`. Same layout as
/// [`crate::gstrand::ep_residual_field`].
pub fn covariant_lp_residual_field(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    ham: &LiePoissonHamiltonian,
    history: &History<StrandField>,
    grid: &StrandGrid,
) -> Result<Vec<f64>> {
    history.require(3)?;
    let d = alg.dim();
    let mu: Vec<(Vec<AlgebraElement>, Vec<AlgebraElement>)> = history
        .slices
        .iter()
        .map(|f| {
            (
                f.nu.iter().map(|v| lag.momentum_t(v)).collect(),
                f.gamma.iter().map(|g| lag.momentum_s(g)).collect(),
            )
        })
        .collect();
    let mut out = Vec::new();
    for i in 1..history.len() - 1 {
        let (mt, ms) = &mu[i];
        let flat_ms: Vec<f64> = ms.iter().flat_map(|x| x.as_slice().to_vec()).collect();
        let dms = grid.d_s_blocks(&flat_ms, d);
        for j in interior_s(grid) {
            let a = alg.ad_star(&ham.velocity_t(&mt[j]), &mt[j])?;
            let b = alg.ad_star(&ham.velocity_s(&ms[j]), &ms[j])?;
            for c in 0..d {
                let dmt = (mu[i + 1].0[j][c] - mu[i - 1].0[j][c]) / (2.0 * history.dt);
                out.push(dmt + dms[j * d + c] + a[c] + b[c]);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Clebsch action of symmetric rigid-body strands
// ---------------------------------------------------------------------------

/// Generalized energy `<M, Q U> + <N, Q V> - l(u, v)` of the SO(N) symmetric
/// rigid-body strand, with `psi = Q`, `p = (M, N)` and `b = (u, v)`.
/// Matrices are packed column-major; `l(u, v) = 1/2 u.A_t u + 1/2 v.A_s v`
/// in basis coordinates, which is the form whose coordinate gradient the
/// solver's momentum map matches.
pub fn symm_rigid_energy<'a>(alg: &'a LieAlgebraSpec, lag: &'a QuadraticLagrangian) -> Result<GeneralizedEnergy<'a>> {
    let basis = alg
        .basis_matrices()
        .ok_or_else(|| Error::InvalidArgument(format!("algebra `{}` has no matrix representation", alg.name())))?;
    check_dim(alg.dim(), lag.dim())?;
    let n = basis[0].nrows();
    let d = alg.dim();
    let layout = PontryaginLayout {
        n_psi: n * n,
        n_dirs: 2,
        n_b: 2 * d,
    };
    GeneralizedEnergy::new(layout, move |x: &EnergyPoint| {
        let q = DMatrix::from_column_slice(n, n, x.psi);
        let (u, v) = x.b.split_at(d);
        let mut uh = DMatrix::zeros(n, n);
        let mut vh = DMatrix::zeros(n, n);
        for (k, e) in basis.iter().enumerate() {
            uh += e * u[k];
            vh += e * v[k];
        }
        let qu = &q * uh;
        let qv = &q * vh;
        let coupling: f64 = x.p[0].iter().zip(qu.iter()).map(|(a, b)| a * b).sum::<f64>()
            + x.p[1].iter().zip(qv.iter()).map(|(a, b)| a * b).sum::<f64>();
        let au = crate::gstrand::apply(lag.a_t(), u);
        let av = crate::gstrand::apply(lag.a_s(), v);
        let l: f64 = 0.5 * au.as_slice().iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
            + 0.5 * av.as_slice().iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        coupling - l
    })
}

/// Packs a symmetric rigid-body history into `[i][j][Q, M, N, u, v]` node values.
pub fn symm_rigid_fields(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    history: &History<SymmRigidState>,
    grid: &StrandGrid,
) -> Result<(Vec<f64>, ActionGrid)> {
    history.require(2)?;
    let mut out = Vec::new();
    for slice in &history.slices {
        let k = symm_rigid_kinematics(alg, lag, slice, grid)?;
        for j in 0..grid.n_s {
            out.extend_from_slice(slice.q[j].as_slice());
            out.extend_from_slice(slice.mw[j].as_slice());
            out.extend_from_slice(slice.nw[j].as_slice());
            out.extend_from_slice(k.u[j].as_slice());
            out.extend_from_slice(k.v[j].as_slice());
        }
    }
    let mut ag = ActionGrid::from_history(grid, history.len(), history.dt);
    ag.t0 = history.t0;
    Ok((out, ag))
}

/// Stationarity diagnostics of one trajectory: the gradient density of the
/// assembled Clebsch action and the canonical-equation residuals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StationarityReport {
    pub gradient_density: f64,
    pub pontryagin: PontryaginResiduals,
}

pub fn symm_rigid_stationarity(
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    history: &History<SymmRigidState>,
    grid: &StrandGrid,
) -> Result<StationarityReport> {
    let e = symm_rigid_energy(alg, lag)?;
    let (fields, ag) = symm_rigid_fields(alg, lag, history, grid)?;
    let pontryagin = pontryagin_residual(&e, &fields, &ag)?;
    let action = action_from_energy(&e, ag)?;
    let gradient_density = fd_gradient(&action, &fields)?.density_max_norm();
    Ok(StationarityReport {
        gradient_density,
        pontryagin,
    })
}

/// The Hamilton-Pontryagin energy `e = p v - v^2/2` of a free particle, with
/// `psi = q`, `p^t = p` and `b = v`.
pub fn hamilton_pontryagin_energy() -> GeneralizedEnergy<'static> {
    let layout = PontryaginLayout {
        n_psi: 1,
        n_dirs: 1,
        n_b: 1,
    };
    GeneralizedEnergy {
        layout,
        e_loc: Box::new(|x: &EnergyPoint| x.p[0][0] * x.b[0] - 0.5 * x.b[0] * x.b[0]),
    }
}

/// Stationarity of the exact solution `q = t`, `p = v = 1` on `n_t` time nodes.
pub fn hamilton_pontryagin_line(n_t: usize, dt: f64) -> Result<StationarityReport> {
    let e = hamilton_pontryagin_energy();
    let grid = ActionGrid {
        n_t,
        n_s: 1,
        t0: 0.0,
        dt,
        ds: 1.0,
        bc: Boundary::Periodic,
    };
    let fields: Vec<f64> = (0..n_t).flat_map(|i| [i as f64 * dt, 1.0, 1.0]).collect();
    let pontryagin = pontryagin_residual(&e, &fields, &grid)?;
    let action = action_from_energy(&e, grid)?;
    let gradient_density = fd_gradient(&action, &fields)?.density_max_norm();
    Ok(StationarityReport {
        gradient_density,
        pontryagin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gstrand::{ep_residual_field, StrandSimulation};
    use crate::liealg::{builtin, Builtin};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn scalar_grid(n_t: usize, n_s: usize, t_end: f64, l: f64) -> ActionGrid {
        ActionGrid {
            n_t,
            n_s,
            t0: 0.0,
            dt: t_end / (n_t - 1) as f64,
            ds: l / n_s as f64,
            bc: Boundary::Periodic,
        }
    }

    #[test]
    fn quadratic_in_one_variable() {
        let a = 3.7;
        let g = central_partial(|x| a * x[0] * x[0], &[1.0], 0);
        assert!((g - 2.0 * a).abs() < 1e-8 * 2.0 * a);
    }

    #[test]
    fn zero_and_constant_fields() {
        let grid = scalar_grid(5, 8, 1.0, 2.0);
        let layout = FieldLayout::new(&[("phi", 2)]);
        let act = DiscreteAction::new(layout, grid, |c: &CellSample| {
            0.5 * (c.values[0].powi(2) + c.values[1].powi(2)) + c.d_t[0] * c.values[1]
        })
        .unwrap();
        assert_eq!(assemble(&act, &vec![0.0; 5 * 8 * 2]).unwrap(), 0.0);
        let consts: Vec<f64> = (0..5 * 8).flat_map(|_| [1.0, 2.0]).collect();
        // derivative terms vanish; area 1 x 2
        assert!((assemble(&act, &consts).unwrap() - 2.5 * 2.0).abs() < 1e-12);
        assert!(assemble(&act, &[0.0; 3]).is_err());
    }

    #[test]
    fn assembled_smooth_density_is_second_order() {
        // phi = sin(t) cos(s), density 1/2 (phi_t^2 + phi_s^2) on [0,1] x [0, 2 pi]
        let exact = 0.5 * (std::f64::consts::PI / 2.0) * ((1.0 + (2.0f64).sin() / 2.0) + (1.0 - (2.0f64).sin() / 2.0));
        let err = |n: usize| {
            let grid = scalar_grid(n + 1, n, 1.0, TAU);
            let f: Vec<f64> = (0..=n)
                .flat_map(|i| (0..n).map(move |j| (i as f64 * 1.0 / n as f64).sin() * (j as f64 * TAU / n as f64).cos()))
                .collect();
            let act = DiscreteAction::new(FieldLayout::new(&[("phi", 1)]), grid, |c: &CellSample| {
                0.5 * (c.d_t[0].powi(2) + c.d_s[0].powi(2))
            })
            .unwrap();
            (assemble(&act, &f).unwrap() - exact).abs()
        };
        let order = (err(32) / err(64)).log2();
        assert!(order > 1.9, "{order}");
    }

    #[test]
    fn gradient_matches_directional_derivative() {
        let grid = scalar_grid(6, 8, 1.0, 1.0);
        let act = DiscreteAction::new(FieldLayout::new(&[("x", 1)]), grid, |c: &CellSample| {
            c.values[0].powi(3) + 0.5 * c.d_t[0].powi(2) - c.d_s[0] * c.values[0]
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dir: Vec<f64> = (0..48)
            .map(|k| if grid.is_free(k / 8, k % 8) { rng.random_range(-1.0..1.0) } else { 0.0 })
            .collect();
        let g = fd_gradient(&act, &f).unwrap();
        let eps = 1e-5;
        let shifted = |e: f64| -> Vec<f64> { f.iter().zip(&dir).map(|(x, d)| x + e * d).collect() };
        let dd = (assemble(&act, &shifted(eps)).unwrap() - assemble(&act, &shifted(-eps)).unwrap()) / (2.0 * eps);
        let gd: f64 = g.raw.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((dd - gd).abs() < 1e-8, "{dd} {gd}");
        // t-boundary nodes are held
        assert!(!g.free[0] && g.free[8]);
    }

    #[test]
    fn hamilton_pontryagin_exact_line() {
        let r = hamilton_pontryagin_line(101, 0.01).unwrap();
        assert!(r.pontryagin.max() < 1e-8 && r.gradient_density < 1e-8, "{r:?}");

        let e = hamilton_pontryagin_energy();
        let grid = ActionGrid {
            n_t: 101,
            n_s: 1,
            t0: 0.0,
            dt: 0.01,
            ds: 1.0,
            bc: Boundary::Periodic,
        };
        let bad: Vec<f64> = (0..101).flat_map(|i| [i as f64 * 0.01, 1.0, 1.05]).collect();
        let r = pontryagin_residual(&e, &bad, &grid).unwrap();
        assert!(r.constraint > 1e-2, "{r:?}");
    }

    #[test]
    fn legendre_examples_and_involution() {
        let alg = builtin(Builtin::So3).unwrap();
        let lag = QuadraticLagrangian::chiral(3);
        let h = legendre_pair(&lag).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let a = AlgebraElement::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            let b = AlgebraElement::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            let expect = 0.5 * a.dot(&a) - 0.5 * b.dot(&b);
            assert!((h.value(&alg, &a, &b) - expect).abs() < 1e-12);
        }

        let a_t = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5]);
        let a_s = -DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 3.0, 0.0, 0.0, 0.0, 0.5]);
        let lag = QuadraticLagrangian::new(a_t.clone(), a_s.clone()).unwrap();
        let h = legendre_pair(&lag).unwrap();
        for _ in 0..100 {
            let s_t = AlgebraElement::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            let s_s = AlgebraElement::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            let back_t = h.velocity_t(&lag.momentum_t(&s_t));
            let back_s = h.velocity_s(&lag.momentum_s(&s_s));
            assert!((&back_t - &s_t).max_abs() < 1e-12 && (&back_s - &s_s).max_abs() < 1e-12);
            // l(sigma) + h(mu) = <mu, sigma> at mu = dl/dsigma
            let mu_t = lag.momentum_t(&s_t);
            let mu_s = lag.momentum_s(&s_s);
            let pairing = alg.pair(&mu_t, &s_t) + alg.pair(&mu_s, &s_s);
            assert!((lag.lagrangian(&alg, &s_t, &s_s) + h.value(&alg, &mu_t, &mu_s) - pairing).abs() < 1e-12);
        }
        let round = legendre_pair(&h.to_lagrangian().unwrap()).unwrap().to_lagrangian().unwrap();
        assert!((round.a_t() - &a_t).amax() < 1e-12 && (round.a_s() - &a_s).amax() < 1e-12);

        let singular = LiePoissonHamiltonian {
            b_t: DMatrix::zeros(3, 3),
            b_s: DMatrix::identity(3, 3),
        };
        assert!(singular.to_lagrangian().is_err());
    }

    #[test]
    fn lie_poisson_residual_equals_ep_residual() {
        let alg = builtin(Builtin::So3).unwrap();
        let a_t = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let lag = QuadraticLagrangian::new(a_t, -DMatrix::identity(3, 3)).unwrap();
        let grid = StrandGrid::periodic(16, TAU, 1e-2, 0.1).unwrap();
        let f = StrandField::from_fn(
            &grid,
            |s| AlgebraElement::new(vec![s.sin(), 0.3, s.cos()]),
            |s| AlgebraElement::new(vec![0.1, (2.0 * s).cos(), 0.2]),
        );
        let mut sim = StrandSimulation::new(alg.clone(), lag.clone(), grid, f, 1).unwrap();
        sim.run().unwrap();
        let ep = ep_residual_field(&alg, &lag, &sim.history, &grid).unwrap();
        let lp = covariant_lp_residual_field(&alg, &lag, &legendre_pair(&lag).unwrap(), &sim.history, &grid).unwrap();
        assert_eq!(ep.len(), lp.len());
        for (a, b) in ep.iter().zip(&lp) {
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }

    fn twisted_state(grid: &StrandGrid, lag: &QuadraticLagrangian, alg: &LieAlgebraSpec) -> SymmRigidState {
        use crate::liealg::hat3;
        let mut q = Vec::new();
        let mut m = Vec::new();
        for j in 0..grid.n_s {
            let th = TAU * grid.s(j) / grid.s_extent;
            q.push(hat3([0.4 * th.sin(), 0.3 * th.cos(), 0.2]).exp());
            m.push(DMatrix::from_row_slice(3, 3, &[0.0, 0.3 * th.cos(), 0.1, 0.2, 0.1, 0.4 * th.sin(), -0.1, 0.2, 0.0]));
        }
        SymmRigidState::new(alg, lag, grid, q, m).unwrap()
    }

    #[test]
    fn symm_rigid_trajectory_is_stationary_at_second_order() {
        use crate::clebsch::run_symm_rigid;
        let alg = builtin(Builtin::So3).unwrap();
        let lag = QuadraticLagrangian::chiral(3);
        let report = |level: u32| {
            let grid = StrandGrid::periodic(32, TAU, 1.0 / 64.0, 0.25).unwrap().refined(level);
            let h = run_symm_rigid(&alg, &lag, twisted_state(&grid, &lag, &alg), &grid, 1).unwrap();
            symm_rigid_stationarity(&alg, &lag, &h, &grid).unwrap()
        };
        let r: Vec<_> = (0..3).map(report).collect();
        for w in r.windows(2) {
            let o = (w[0].gradient_density / w[1].gradient_density).log2();
            assert!(o > 1.9, "{r:?}");
            let o = (w[0].pontryagin.max() / w[1].pontryagin.max()).log2();
            assert!(o > 1.9, "{r:?}");
        }
        for x in &r {
            let ratio = x.gradient_density / x.pontryagin.max();
            assert!((0.1..=10.0).contains(&ratio), "{r:?}");
        }
    }

    #[test]
    fn traveling_wave_action_matches_closed_form() {
        use crate::liealg::hat3;
        // Q = exp(sin(s + t) xi^) has U = V = cos(s + t) xi exactly
        let alg = builtin(Builtin::So3).unwrap();
        let a_t = DMatrix::identity(3, 3) * 2.0;
        let lag = QuadraticLagrangian::new(a_t, -DMatrix::identity(3, 3)).unwrap();
        let xi = [0.6, -0.3, 0.2];
        let xi2: f64 = xi.iter().map(|x| x * x).sum();
        let exact = 0.5 * xi2 * std::f64::consts::PI;
        let e = symm_rigid_energy(&alg, &lag).unwrap();
        let err = |n: usize| {
            let grid = scalar_grid(n + 1, n, 1.0, TAU);
            let mut f = Vec::new();
            for i in 0..=n {
                for j in 0..n {
                    let x = i as f64 * grid.dt + j as f64 * grid.ds;
                    let q = hat3(xi).scale(x.sin()).exp();
                    let u: Vec<f64> = xi.iter().map(|c| c * x.cos()).collect();
                    let m = q.clone().try_inverse().unwrap().transpose() * hat3([u[0], u[1], u[2]]).scale(2.0);
                    let nn = q.clone().try_inverse().unwrap().transpose() * hat3([u[0], u[1], u[2]]).scale(-1.0);
                    f.extend_from_slice(q.as_slice());
                    f.extend_from_slice(m.as_slice());
                    f.extend_from_slice(nn.as_slice());
                    f.extend_from_slice(&u);
                    f.extend_from_slice(&u);
                }
            }
            let act = action_from_energy(&e, grid).unwrap();
            (assemble(&act, &f).unwrap() - exact).abs()
        };
        let (a, b) = (err(32), err(64));
        assert!(a < 5e-2 && (a / b).log2() > 1.9, "{a} {b}");
    }
}
