//! Peakon solutions of the Diff(R)-strand equations.
//!
//! Each of `n_p` peakons carries a position `Q_a(t, s)` and two momenta:
//! `M_a` (conjugate in t) and `N_a` (conjugate in s). The velocity fields are
//! kernel superpositions `nu(m) = sum_a M_a G(m, Q_a)` and
//! `gamma(m) = -sum_a N_a G(m, Q_a)`. Positions and `M` are evolved; `N` is
//! recovered at every stage from `d/ds Q_a = gamma(Q_a)`.
//!
//! With `n_s == 1` every s-derivative vanishes, `N` is zero and the system is
//! the classical Camassa-Holm peakon ODE.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::grid::{all_finite, rk4_step, StrandGrid};
use crate::gstrand::{interior_s, History};
use crate::kernels::HelmholtzKernel;

/// Smallest admissible distance between two peakons at the same `s`.
pub const COLLISION_GAP: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PeakonState {
    pub n_p: usize,
    pub grid: StrandGrid,
    /// `q[a][j]`, positions of peakon `a` at gridpoint `j`.
    pub q: Vec<Vec<f64>>,
    pub mw: Vec<Vec<f64>>,
    pub nw: Vec<Vec<f64>>,
}

fn require_1d(kernel: &HelmholtzKernel) -> Result<()> {
    if kernel.dim() != 1 {
        return Err(Error::InvalidArgument("peakon strands need a one-dimensional kernel".into()));
    }
    Ok(())
}

impl PeakonState {
    /// Builds a state with `N` solved from the s-constraint.
    pub fn new(grid: StrandGrid, kernel: &HelmholtzKernel, q: Vec<Vec<f64>>, mw: Vec<Vec<f64>>) -> Result<Self> {
        grid.validate()?;
        require_1d(kernel)?;
        let n_p = q.len();
        if n_p == 0 {
            return Err(Error::InvalidArgument("at least one peakon is required".into()));
        }
        check_dim(n_p, mw.len())?;
        for row in q.iter().chain(&mw) {
            check_dim(grid.n_s, row.len())?;
        }
        let mut s = Self {
            n_p,
            grid,
            q,
            mw,
            nw: vec![vec![0.0; grid.n_s]; n_p],
        };
        if !(all_finite(&s.q.concat()) && all_finite(&s.mw.concat())) {
            return Err(Error::InvalidArgument("non-finite peakon data".into()));
        }
        s.nw = s.solve_n_constraint(kernel)?;
        Ok(s)
    }

    fn column(data: &[Vec<f64>], j: usize) -> Vec<f64> {
        data.iter().map(|row| row[j]).collect()
    }

    pub fn positions_at(&self, j: usize) -> Vec<f64> {
        Self::column(&self.q, j)
    }

    /// `(nu, gamma)` at position `m` on strand point `j`.
    pub fn velocity(&self, kernel: &HelmholtzKernel, j: usize, m: f64) -> (f64, f64) {
        velocity(self, kernel, j, m)
    }

    /// Solves `sum_b G(Q_a, Q_b) N_b = -d/ds Q_a` at every gridpoint.
    pub fn solve_n_constraint(&self, kernel: &HelmholtzKernel) -> Result<Vec<Vec<f64>>> {
        solve_n_constraint(self, kernel)
    }

    /// `sum_a M_a` at every gridpoint.
    pub fn total_momentum(&self) -> Vec<f64> {
        (0..self.grid.n_s).map(|j| self.mw.iter().map(|row| row[j]).sum()).collect()
    }

    pub fn is_finite(&self) -> bool {
        [&self.q, &self.mw, &self.nw].iter().all(|d| d.iter().all(|r| all_finite(r)))
    }
}

pub fn velocity(state: &PeakonState, kernel: &HelmholtzKernel, j: usize, m: f64) -> (f64, f64) {
    let mut nu = 0.0;
    let mut gamma = 0.0;
    for a in 0..state.n_p {
        let g = kernel.eval_1d(m, state.q[a][j]);
        nu += state.mw[a][j] * g;
        gamma -= state.nw[a][j] * g;
    }
    (nu, gamma)
}

fn check_gaps(q: &[f64], j: usize) -> Result<()> {
    let mut sorted = q.to_vec();
    sorted.sort_by(f64::total_cmp);
    for w in sorted.windows(2) {
        if w[1] - w[0] < COLLISION_GAP {
            return Err(Error::NearCollision(format!(
                "peakons at s-index {j} are {:e} apart",
                w[1] - w[0]
            )));
        }
    }
    Ok(())
}

/// Flat layout `a * n_s + j`.
fn solve_n_flat(kernel: &HelmholtzKernel, grid: &StrandGrid, n_p: usize, q: &[f64]) -> Result<Vec<f64>> {
    let ns = grid.n_s;
    let mut n = vec![0.0; n_p * ns];
    let mut dq = vec![0.0; n_p * ns];
    for a in 0..n_p {
        for j in 0..ns {
            dq[a * ns + j] = grid.d_s_at(j, |jj| q[a * ns + jj]);
        }
    }
    for j in 0..ns {
        let qj: Vec<f64> = (0..n_p).map(|a| q[a * ns + j]).collect();
        check_gaps(&qj, j)?;
        if grid.is_degenerate() {
            continue;
        }
        let rhs: Vec<f64> = (0..n_p).map(|a| -dq[a * ns + j]).collect();
        let sol = kernel
            .gram_1d(&qj)?
            .solve(&rhs)
            .map_err(|e| e.context(format!("s-constraint solve at s-index {j}")))?;
        for a in 0..n_p {
            n[a * ns + j] = sol[a];
        }
    }
    Ok(n)
}

pub fn solve_n_constraint(state: &PeakonState, kernel: &HelmholtzKernel) -> Result<Vec<Vec<f64>>> {
    require_1d(kernel)?;
    let n = solve_n_flat(kernel, &state.grid, state.n_p, &state.q.concat())?;
    Ok(n.chunks(state.grid.n_s).map(|c| c.to_vec()).collect())
}

/// One RK4 step of `d/dt Q_a = sum_b M_b G_ab`,
/// `d/dt M_a = -d/ds N_a - sum_b (N_a N_b + M_a M_b) dG/dQ_a`.
pub fn step(state: &PeakonState, kernel: &HelmholtzKernel, grid: &StrandGrid) -> Result<PeakonState> {
    step_indexed(state, kernel, grid, 0)
}

fn step_indexed(state: &PeakonState, kernel: &HelmholtzKernel, grid: &StrandGrid, index: usize) -> Result<PeakonState> {
    require_1d(kernel)?;
    check_dim(grid.n_s, state.grid.n_s)?;
    let (n_p, ns) = (state.n_p, grid.n_s);
    let half = n_p * ns;
    let mut y = state.q.concat();
    y.extend(state.mw.concat());

    let next = rk4_step(&y, grid.dt, |y| {
        let (q, m) = y.split_at(half);
        let n = solve_n_flat(kernel, grid, n_p, q)?;
        let mut rhs = vec![0.0; 2 * half];
        for j in 0..ns {
            for a in 0..n_p {
                let qa = q[a * ns + j];
                let (mut dq, mut force) = (0.0, 0.0);
                for b in 0..n_p {
                    let qb = q[b * ns + j];
                    dq += m[b * ns + j] * kernel.eval_1d(qa, qb);
                    let w = n[a * ns + j] * n[b * ns + j] + m[a * ns + j] * m[b * ns + j];
                    force += w * kernel.grad_1d(qa, qb);
                }
                let dn = grid.d_s_at(j, |jj| n[a * ns + jj]);
                rhs[a * ns + j] = dq;
                rhs[half + a * ns + j] = -dn - force;
            }
        }
        Ok(rhs)
    })?;
    if !all_finite(&next) {
        return Err(Error::BlowUp { step: index });
    }
    let (q, m) = next.split_at(half);
    let n = solve_n_flat(kernel, grid, n_p, q)?;
    let rows = |x: &[f64]| x.chunks(ns).map(|c| c.to_vec()).collect::<Vec<_>>();
    Ok(PeakonState {
        n_p,
        grid: *grid,
        q: rows(q),
        mw: rows(m),
        nw: rows(&n),
    })
}

/// `max_{a,j} |d/ds Q_a + sum_b G(Q_a, Q_b) N_b|`
pub fn s_constraint_residual(state: &PeakonState, kernel: &HelmholtzKernel) -> f64 {
    if state.grid.is_degenerate() {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for j in 0..state.grid.n_s {
        for a in 0..state.n_p {
            let dq = state.grid.d_s_at(j, |jj| state.q[a][jj]);
            let gn: f64 = (0..state.n_p)
                .map(|b| kernel.eval_1d(state.q[a][j], state.q[b][j]) * state.nw[b][j])
                .sum();
            worst = worst.max((dq + gn).abs());
        }
    }
    worst
}

/// Energy density `1/2 sum_ab (N_a N_b + M_a M_b) G(Q_a, Q_b)` at every gridpoint.
pub fn collective_hamiltonian(state: &PeakonState, kernel: &HelmholtzKernel) -> Vec<f64> {
    (0..state.grid.n_s)
        .map(|j| {
            let mut h = 0.0;
            for a in 0..state.n_p {
                for b in 0..state.n_p {
                    let g = kernel.eval_1d(state.q[a][j], state.q[b][j]);
                    h += (state.nw[a][j] * state.nw[b][j] + state.mw[a][j] * state.mw[b][j]) * g;
                }
            }
            0.5 * h
        })
        .collect()
}

/// `sum_j H_j ds` (or `H` itself in the classical mode).
pub fn integrated_hamiltonian(state: &PeakonState, kernel: &HelmholtzKernel) -> f64 {
    let w = if state.grid.is_degenerate() { 1.0 } else { state.grid.ds() };
    collective_hamiltonian(state, kernel).iter().sum::<f64>() * w
}

/// Max over peakons, interior s-points and interior slices of
///
/// ```text
/// sum_b (d/dt N_b + d/ds M_b) G_ab
///   - sum_bc (M_b N_c - N_b M_c) (G1_ab G_ac + G2_ab G_bc)
/// ```
///
/// where `G1`, `G2` are the derivatives of `G` in its first and second argument.
pub fn compatibility_residual(history: &History<PeakonState>, kernel: &HelmholtzKernel) -> Result<f64> {
    history.require(3)?;
    let grid = history.slices[0].grid;
    let n_p = history.slices[0].n_p;
    let mut worst = 0.0f64;
    for i in 1..history.len() - 1 {
        let (prev, cur, next) = (&history.slices[i - 1], &history.slices[i], &history.slices[i + 1]);
        for j in interior_s(&grid) {
            let q = cur.positions_at(j);
            let g = |a: usize, b: usize| kernel.eval_1d(q[a], q[b]);
            let g1 = |a: usize, b: usize| kernel.grad_1d(q[a], q[b]);
            for a in 0..n_p {
                let mut r = 0.0;
                for b in 0..n_p {
                    let dn = (next.nw[b][j] - prev.nw[b][j]) / (2.0 * history.dt);
                    let dm = grid.d_s_at(j, |jj| cur.mw[b][jj]);
                    r += (dn + dm) * g(a, b);
                    for c in 0..n_p {
                        let w = cur.mw[b][j] * cur.nw[c][j] - cur.nw[b][j] * cur.mw[c][j];
                        // translation invariance: G2(x, y) = -G1(x, y)
                        r -= w * (g1(a, b) * g(a, c) - g1(a, b) * g(b, c));
                    }
                }
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

/// `max |d/ds (sum_b M_b G_ab) - d/dt (-sum_b N_b G_ab)|`, the mismatch of the
/// mixed derivatives of `Q` computed from the two canonical equations.
pub fn cross_derivative_residual(history: &History<PeakonState>, kernel: &HelmholtzKernel) -> Result<f64> {
    history.require(3)?;
    let grid = history.slices[0].grid;
    let n_p = history.slices[0].n_p;
    let ns = grid.n_s;
    let nu_at = |s: &PeakonState, a: usize, j: usize| -> f64 {
        (0..n_p).map(|b| s.mw[b][j] * kernel.eval_1d(s.q[a][j], s.q[b][j])).sum()
    };
    let gamma_at = |s: &PeakonState, a: usize, j: usize| -> f64 {
        -(0..n_p).map(|b| s.nw[b][j] * kernel.eval_1d(s.q[a][j], s.q[b][j])).sum::<f64>()
    };
    let mut worst = 0.0f64;
    for i in 1..history.len() - 1 {
        let (prev, cur, next) = (&history.slices[i - 1], &history.slices[i], &history.slices[i + 1]);
        for a in 0..n_p {
            let nu: Vec<f64> = (0..ns).map(|j| nu_at(cur, a, j)).collect();
            for j in interior_s(&grid) {
                let ds_nu = grid.d_s_at(j, |jj| nu[jj]);
                let dt_gamma = (gamma_at(next, a, j) - gamma_at(prev, a, j)) / (2.0 * history.dt);
                worst = worst.max((ds_nu - dt_gamma).abs());
            }
        }
    }
    Ok(worst)
}

/// `nu[j][k]`, `gamma[j][k]` on strand point `j` and sample position `m[k]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldSnapshot {
    pub m: Vec<f64>,
    pub nu: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
}

pub fn field_snapshot(state: &PeakonState, kernel: &HelmholtzKernel, m_grid: &[f64]) -> FieldSnapshot {
    let (mut nu, mut gamma) = (Vec::new(), Vec::new());
    for j in 0..state.grid.n_s {
        let (a, b): (Vec<f64>, Vec<f64>) = m_grid.iter().map(|&m| velocity(state, kernel, j, m)).unzip();
        nu.push(a);
        gamma.push(b);
    }
    FieldSnapshot {
        m: m_grid.to_vec(),
        nu,
        gamma,
    }
}

/// A peakon run with its stored history and the worst post-step s-constraint residual.
#[derive(Clone, Debug)]
pub struct PeakonSimulation {
    pub kernel: HelmholtzKernel,
    pub grid: StrandGrid,
    pub state: PeakonState,
    pub steps_taken: usize,
    pub history_every: usize,
    pub history: History<PeakonState>,
    pub max_s_constraint: f64,
}

impl PeakonSimulation {
    pub fn new(kernel: HelmholtzKernel, state: PeakonState, history_every: usize) -> Result<Self> {
        if history_every == 0 {
            return Err(Error::InvalidArgument("history_every must be at least 1".into()));
        }
        let grid = state.grid;
        let mut history = History::new(grid.dt * history_every as f64, 0.0);
        history.slices.push(state.clone());
        let max_s_constraint = s_constraint_residual(&state, &kernel);
        Ok(Self {
            kernel,
            grid,
            state,
            steps_taken: 0,
            history_every,
            history,
            max_s_constraint,
        })
    }

    pub fn time(&self) -> f64 {
        self.steps_taken as f64 * self.grid.dt
    }

    pub fn step(&mut self) -> Result<()> {
        self.state = step_indexed(&self.state, &self.kernel, &self.grid, self.steps_taken + 1)?;
        self.steps_taken += 1;
        self.max_s_constraint = self
            .max_s_constraint
            .max(s_constraint_residual(&self.state, &self.kernel));
        if self.steps_taken.is_multiple_of(self.history_every) {
            self.history.slices.push(self.state.clone());
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        for _ in self.steps_taken..self.grid.n_steps() {
            self.step()?;
        }
        Ok(())
    }
}
