use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ScenarioConfig, ScenarioKind};
use super::output::{numbered, CsvTable, Diagnostics, Order, StudyLevel, StudyTable};
use crate::clebsch::{
    cdb_constraint_residual, cdb_divergence_residual, cdb_norm_drift, linear_constraint_residual,
    linear_curvature_residual, linear_momentum_map_residual, run_cdb, run_linear_strand, run_symm_rigid,
    so_n_strand_residual, symm_rigid_constraint_residual, symm_rigid_kinematics, symm_rigid_momentum_map_residual,
    CDBState, LinearRepSpec, LinearStrandState, SymmRigidState,
};
use crate::error::{Error, Result};
use crate::grid::StrandGrid;
use crate::gstrand::{residual_report, strand_energy, History, QuadraticLagrangian, StrandField, StrandSimulation};
use crate::kernels::HelmholtzKernel;
use crate::liealg::{builtin, AlgebraElement, Builtin, LieAlgebraSpec};
use crate::peakon::{
    compatibility_residual, cross_derivative_residual, field_snapshot, integrated_hamiltonian, PeakonSimulation,
    PeakonState,
};
use crate::verify::{hamilton_pontryagin_line, symm_rigid_stationarity};

/// Everything a run produces before it is written to disk.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub trajectory: CsvTable,
    pub snapshots: Option<CsvTable>,
    pub diagnostics: Diagnostics,
    /// Residuals tracked by convergence studies.
    pub metrics: BTreeMap<String, f64>,
}

/// Residuals below this are roundoff and give no meaningful order.
pub const SATURATION_FLOOR: f64 = 1e-13;

/// Runs a resolved scenario.
pub fn execute(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let grid = cfg.grid.strand_grid()?;
    let out = match cfg.scenario {
        ScenarioKind::ChiralSo3 => chiral_so3(cfg, &grid),
        ScenarioKind::Se3Strand => se3_strand(cfg, &grid),
        ScenarioKind::CdbSo3 => cdb_so3(cfg, &grid),
        ScenarioKind::SymmRigidSoN => symm_rigid(cfg, &grid),
        ScenarioKind::LinearRep => linear_rep(cfg, &grid),
        ScenarioKind::PeakonStrand | ScenarioKind::ChClassical => peakons(cfg, &grid),
        ScenarioKind::VerifyAction => verify_action(cfg, &grid),
    };
    out.map_err(|e| e.context(format!("scenario {}", cfg.scenario.name())))
}

/// Runs the scenario at `(dt, ds) / 2^i` for `i < levels` and tabulates the
/// refinement orders of its tracked residuals.
pub fn convergence_study(cfg: &ScenarioConfig, levels: u32) -> Result<StudyTable> {
    if levels < 3 {
        return Err(Error::InvalidArgument(format!("a convergence study needs at least 3 levels, got {levels}")));
    }
    let mut rows = Vec::new();
    for level in 0..levels {
        let mut c = cfg.clone();
        let f = 1usize << level;
        if c.grid.n_s > 1 {
            c.grid.n_s *= f;
        }
        c.grid.dt /= f as f64;
        let out = execute(&c).map_err(|e| e.context(format!("study level {level}")))?;
        rows.push(StudyLevel {
            level,
            n_s: c.grid.n_s,
            dt: c.grid.dt,
            metrics: out.metrics,
        });
    }
    let mut orders = BTreeMap::new();
    for name in rows[0].metrics.keys() {
        let o = rows
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0].metrics[name], w[1].metrics[name]);
                if a.abs() < SATURATION_FLOOR || b.abs() < SATURATION_FLOOR {
                    Order::Saturated("saturated")
                } else {
                    Order::Measured((a / b).log2())
                }
            })
            .collect();
        orders.insert(name.clone(), o);
    }
    Ok(StudyTable { levels: rows, orders })
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

fn theta(grid: &StrandGrid, j: usize) -> f64 {
    TAU * grid.s(j) / grid.s_extent
}

fn inertia(cfg: &ScenarioConfig, dim: usize, default_t: DMatrix<f64>, default_s: DMatrix<f64>) -> Result<QuadraticLagrangian> {
    let a_t = match &cfg.physics.a_t {
        Some(a) => a.to_matrix("physics.a_t", dim)?,
        None => default_t,
    };
    let a_s = match &cfg.physics.a_s {
        Some(a) => a.to_matrix("physics.a_s", dim)?,
        None => default_s,
    };
    QuadraticLagrangian::new(a_t, a_s).map_err(|e| Error::validation("physics.a_t/a_s", e.to_string()))
}

fn max_rel_drift(series: &[f64]) -> f64 {
    let Some(&e0) = series.first() else { return 0.0 };
    let scale = if e0.abs() > 0.0 { e0.abs() } else { 1.0 };
    series.iter().map(|e| (e - e0).abs() / scale).fold(0.0, f64::max)
}

fn strand_trajectory(history: &History<StrandField>, grid: &StrandGrid, d: usize, every: usize) -> CsvTable {
    let mut header = vec!["t".to_string(), "s".to_string()];
    header.extend(numbered("nu", d));
    header.extend(numbered("gamma", d));
    let mut t = CsvTable::new(header);
    for (i, slice) in history.slices.iter().enumerate().step_by(every) {
        for j in 0..grid.n_s {
            let mut row = vec![history.time(i), grid.s(j)];
            row.extend_from_slice(slice.nu[j].as_slice());
            row.extend_from_slice(slice.gamma[j].as_slice());
            t.push(row);
        }
    }
    t
}

fn run_strand(
    cfg: &ScenarioConfig,
    alg: LieAlgebraSpec,
    lag: QuadraticLagrangian,
    grid: &StrandGrid,
    field: StrandField,
) -> Result<(RunOutput, StrandSimulation)> {
    let d = alg.dim();
    let mut sim = StrandSimulation::new(alg, lag, *grid, field, cfg.grid.history_every)?;
    sim.run()?;
    let energy: Vec<f64> = sim
        .history
        .slices
        .iter()
        .map(|f| strand_energy(&sim.alg, &sim.lag, f, grid))
        .collect();
    let res = residual_report(&sim.alg, &sim.lag, &sim.history, grid)?;
    let mut out = RunOutput {
        trajectory: strand_trajectory(&sim.history, grid, d, cfg.output.every),
        ..RunOutput::default()
    };
    out.diagnostics.scalar("energy_rel_drift", max_rel_drift(&energy));
    out.diagnostics.scalar("ep_residual", res.ep);
    out.diagnostics.scalar("zcc_residual", res.zcc);
    out.diagnostics.series("energy", energy);
    out.metrics.insert("ep_residual".into(), res.ep);
    out.metrics.insert("zcc_residual".into(), res.zcc);
    Ok((out, sim))
}

/// Smooth random periodic component: a few low Fourier modes with seeded coefficients.
fn random_mode(rng: &mut ChaCha8Rng, scale: f64) -> impl Fn(f64) -> f64 {
    let c: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(-1.0..1.0) * scale, rng.random_range(0.0..TAU)))
        .collect();
    move |th: f64| {
        c.iter()
            .enumerate()
            .map(|(k, (a, ph))| a * ((k as f64) * th + ph).cos() / (1 + k) as f64)
            .sum()
    }
}

fn random_field(cfg: &ScenarioConfig, grid: &StrandGrid, d: usize) -> StrandField {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let amp = 0.5 * cfg.initial.amplitude;
    let nu: Vec<_> = (0..d).map(|_| random_mode(&mut rng, amp)).collect();
    let gamma: Vec<_> = (0..d).map(|_| random_mode(&mut rng, amp)).collect();
    let l = grid.s_extent;
    StrandField::from_fn(
        grid,
        |s| AlgebraElement::new(nu.iter().map(|f| f(TAU * s / l)).collect()),
        |s| AlgebraElement::new(gamma.iter().map(|f| f(TAU * s / l)).collect()),
    )
}

// ---------------------------------------------------------------------------
// G-strands
// ---------------------------------------------------------------------------

/// Direction of the traveling wave and of the pure-gauge field.
const WAVE_DIRECTION: [f64; 3] = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];

/// Unit-amplitude periodic bump `exp(cos(2 pi x / L) - 1)`.
pub fn bump(x: f64, l: f64) -> f64 {
    ((TAU * x / l).cos() - 1.0).exp()
}

fn chiral_so3(cfg: &ScenarioConfig, grid: &StrandGrid) -> Result<RunOutput> {
    let alg = builtin(Builtin::So3)?;
    let lag = inertia(cfg, 3, DMatrix::identity(3, 3), -DMatrix::identity(3, 3))?;
    let amp = cfg.initial.amplitude;
    let l = grid.s_extent;
    let xi = AlgebraElement::new(WAVE_DIRECTION.to_vec());
    let field = match cfg.initial.preset.as_str() {
        "traveling_wave" => StrandField::from_fn(grid, |s| xi.scaled(amp * bump(s, l)), |s| xi.scaled(amp * bump(s, l))),
        "pure_gauge" => StrandField::from_fn(grid, |_| AlgebraElement::zeros(3), |_| xi.scaled(amp)),
        _ => random_field(cfg, grid, 3),
    };
    let (mut out, sim) = run_strand(cfg, alg, lag, grid, field)?;
    let chiral = cfg.physics.a_t.is_none() && cfg.physics.a_s.is_none();
    if cfg.initial.preset == "traveling_wave" && chiral {
        let mut worst = 0.0f64;
        for (i, f) in sim.history.slices.iter().enumerate() {
            let t = sim.history.time(i);
            for j in 0..grid.n_s {
                let exact = xi.scaled(amp * bump(grid.s(j) + t, l));
                worst = worst.max((&f.nu[j] - &exact).max_abs()).max((&f.gamma[j] - &exact).max_abs());
            }
        }
        out.diagnostics.scalar("traveling_wave_max_error", worst);
    }
    Ok(out)
}

fn se3_strand(cfg: &ScenarioConfig, grid: &StrandGrid) -> Result<RunOutput> {
    let alg = builtin(Builtin::Se3)?;
    let diag = |v: [f64; 6]| DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&v));
    let lag = inertia(cfg, 6, diag([1.0, 2.0, 3.0, 1.0, 1.0, 1.0]), -diag([1.0, 1.0, 1.0, 2.0, 2.0, 2.0]))?;
    let field = random_field(cfg, grid, 6);
    Ok(run_strand(cfg, alg, lag, grid, field)?.0)
}

// ---------------------------------------------------------------------------
// Clebsch strands
// ---------------------------------------------------------------------------

fn phase(cfg: &ScenarioConfig) -> f64 {
    ChaCha8Rng::seed_from_u64(cfg.seed).random_range(0.0..TAU)
}

fn cdb_so3(cfg: &ScenarioConfig, grid: &StrandGrid) -> Result<RunOutput> {
    let alg = builtin(Builtin::So3)?;
    let a = cfg.initial.amplitude;
    let ph0 = if cfg.seed == 0 { 0.0 } else { phase(cfg) };
    let m = (0..grid.n_s)
        .map(|j| {
            let th = theta(grid, j) + ph0;
            let ph = 0.3 * th.cos();
            AlgebraElement::new(vec![a * th.cos() * ph.cos(), a * th.sin() * ph.cos(), a * ph.sin()])
        })
        .collect();
    let wt = (0..grid.n_s)
        .map(|j| {
            let th = theta(grid, j) + ph0;
            AlgebraElement::new(vec![0.2 * th.sin(), 0.1, -0.3 * th.cos()])
        })
        .collect();
    let h = run_cdb(&alg, CDBState::new(&alg, grid, m, wt)?, grid, cfg.grid.history_every)?;

    let mut header = vec!["t".to_string(), "s".to_string()];
    header.extend(numbered("m", 3));
    header.extend(numbered("sigma_t", 3));
    header.extend(numbered("sigma_s", 3));
    let mut traj = CsvTable::new(header);
    for (i, st) in h.slices.iter().enumerate().step_by(cfg.output.every) {
        let (st_t, st_s) = st.sigma(&alg);
        for j in 0..grid.n_s {
            let mut row = vec![h.time(i), grid.s(j)];
            row.extend_from_slice(st.m[j].as_slice());
            row.extend_from_slice(st_t[j].as_slice());
            row.extend_from_slice(st_s[j].as_slice());
            traj.push(row);
        }
    }
    let div = cdb_divergence_residual(&alg, &h, grid)?;
    let constraint = h.slices.iter().map(|s| cdb_constraint_residual(&alg, s, grid)).fold(0.0, f64::max);
    let mut out = RunOutput {
        trajectory: traj,
        ..RunOutput::default()
    };
    out.diagnostics.scalar("norm_drift", cdb_norm_drift(&h));
    out.diagnostics.scalar("divergence_residual", div);
    out.diagnostics.scalar("constraint_residual", constraint);
    out.metrics.insert("divergence_residual".into(), div);
    Ok(out)
}

fn linear_rep(cfg: &ScenarioConfig, grid: &StrandGrid) -> Result<RunOutput> {
    let alg = builtin(Builtin::So3)?;
    let rep = match cfg.physics.rep.as_str() {
        "adjoint" => LinearRepSpec::adjoint(alg)?,
        _ => LinearRepSpec::defining(alg)?,
    };
    let lag = inertia(cfg, 3, DMatrix::identity(3, 3), -DMatrix::identity(3, 3))?;
    let a = cfg.initial.amplitude;
    let ph0 = if cfg.seed == 0 { 0.0 } else { phase(cfg) };
    let v = (0..grid.n_s)
        .map(|j| {
            let th = theta(grid, j) + ph0;
            let ph = 0.4 * th.sin();
            vec![a * th.cos() * ph.cos(), a * th.sin() * ph.cos(), a * ph.sin()]
        })
        .collect();
    let m = (0..grid.n_s)
        .map(|j| {
            let th = theta(grid, j) + ph0;
            vec![0.3 * th.cos(), 0.5, 0.2 * (2.0 * th).sin()]
        })
        .collect();
    let s0 = LinearStrandState::new(&rep, &lag, grid, v, m)?;
    let h = run_linear_strand(&rep, &lag, s0, grid, cfg.grid.history_every)?;
    let r = rep.rep_dim;
    let mut header = vec!["t".to_string(), "s".to_string()];
    header.extend(numbered("v", r));
    header.extend(numbered("m", r));
    header.extend(numbered("n", r));
    let mut traj = CsvTable::new(header);
    for (i, st) in h.slices.iter().enumerate().step_by(cfg.output.every) {
        for j in 0..grid.n_s {
            let mut row = vec![h.time(i), grid.s(j)];
            row.extend_from_slice(&st.v[j]);
            row.extend_from_slice(&st.m[j]);
            row.extend_from_slice(&st.n[j]);
            traj.push(row);
        }
    }
    let constraint = h.slices.iter().map(|s| linear_constraint_residual(&rep, &lag, s, grid)).fold(0.0, f64::max);
    let mm = h.slices.iter().map(|s| linear_momentum_map_residual(&rep, &lag, s)).fold(0.0, f64::max);
    let curv = linear_curvature_residual(&rep, &lag, &h, grid)?;
    let mut out = RunOutput {
        trajectory: traj,
        ..RunOutput::default()
    };
    out.diagnostics.scalar("constraint_residual", constraint);
    out.diagnostics.scalar("momentum_map_residual", mm);
    out.diagnostics.scalar("curvature_residual", curv);
    out.metrics.insert("constraint_residual".into(), constraint);
    out.metrics.insert("curvature_residual".into(), curv);
    Ok(out)
}

fn so_n_algebra(n: usize) -> Result<LieAlgebraSpec> {
    if n == 3 {
        builtin(Builtin::So3)
    } else {
        builtin(Builtin::SoN(n))
    }
}

fn combine(basis: &[DMatrix<f64>], c: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let n = basis[0].nrows();
    basis.iter().enumerate().fold(DMatrix::zeros(n, n), |acc, (k, e)| acc + e * c(k))
}

/// Twisted frames `Q(s) = exp(sum_k c_k(s) E_k)` with smooth body momenta.
fn symm_rigid_initial(
    cfg: &ScenarioConfig,
    alg: &LieAlgebraSpec,
    lag: &QuadraticLagrangian,
    grid: &StrandGrid,
) -> Result<SymmRigidState> {
    let basis = alg
        .basis_matrices()
        .ok_or_else(|| Error::InvalidArgument("so(N) has a matrix basis".into()))?
        .to_vec();
    let a = cfg.initial.amplitude;
    let n = basis[0].nrows();
    let mut q = Vec::with_capacity(grid.n_s);
    let mut m = Vec::with_capacity(grid.n_s);
    for j in 0..grid.n_s {
        let th = if grid.is_degenerate() { 0.7 } else { theta(grid, j) };
        let x = combine(&basis, |k| 0.4 * (th + k as f64).sin() / (1 + k) as f64);
        let qj = x.exp();
        let p = combine(&basis, |k| a * 0.3 * ((1 + k) as f64 * th).cos() + 0.1 * k as f64);
        // body momentum p = Q^T M for orthogonal Q
        m.push(&qj * p + DMatrix::identity(n, n) * 0.1);
        q.push(qj);
    }
    SymmRigidState::new(alg, lag, grid, q, m)
}

fn flat_row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

fn symm_rigid_trajectory(h: &History<SymmRigidState>, grid: &StrandGrid, n: usize, every: usize) -> CsvTable {
    let mut header = vec!["t".to_string(), "s".to_string()];
    for name in ["Q", "M", "N"] {
        header.extend((0..n * n).map(|k| format!("{name}_{}{}", k / n, k % n)));
    }
    let mut traj = CsvTable::new(header);
    for (i, st) in h.slices.iter().enumerate().step_by(every) {
        for j in 0..grid.n_s {
            let mut row = vec![h.time(i), grid.s(j)];
            row.extend(flat_row_major(&st.q[j]));
            row.extend(flat_row_major(&st.mw[j]));
            row.extend(flat_row_major(&st.nw[j]));
            traj.push(row);
        }
    }
    traj
}

fn symm_rigid(cfg: &ScenarioConfig, grid: &StrandGrid) -> Result<RunOutput> {
    let n = cfg.physics.n;
    let alg = so_n_algebra(n)?;
    let d = alg.dim();
    let lag = inertia(cfg, d, DMatrix::identity(d, d), -DMatrix::identity(d, d))?;
    let s0 = symm_rigid_initial(cfg, &alg, &lag, grid)?;
    let h = run_symm_rigid(&alg, &lag, s0, grid, cfg.grid.history_every)?;
    let mut out = RunOutput {
        trajectory: symm_rigid_trajectory(&h, grid, n, cfg.output.every),
        ..RunOutput::default()
    };
    let mut constraint = 0.0f64;
    let mut mm = 0.0f64;
    for s in &h.slices {
        constraint = constraint.max(symm_rigid_constraint_residual(&alg, &lag, s, grid)?);
        mm = mm.max(symm_rigid_momentum_map_residual(&alg, &lag, s, grid)?);
    }
    out.diagnostics.scalar("constraint_residual", constraint);
    out.diagnostics.scalar("momentum_map_residual", mm);
    if grid.is_degenerate() {
        for k in 0..d {
            let series = h
                .slices
                .iter()
                .map(|s| Ok(symm_rigid_kinematics(&alg, &lag, s, grid)?.u[0][k]))
                .collect::<Result<Vec<_>>>()?;
            out.diagnostics.series(&format!("u_{k}"), series);
        }
    } else {
        let r = so_n_strand_residual(&alg, &lag, &h, grid)?;
        out.diagnostics.scalar("so_n_residual", r);
        out.metrics.insert("so_n_residual".into(), r);
    }
    Ok(out)
}

fn verify_action(cfg: &ScenarioConfig, grid: &StrandGrid) -> Result<RunOutput> {
    let alg = builtin(Builtin::So3)?;
    let lag = QuadraticLagrangian::chiral(3);
    let s0 = symm_rigid_initial(cfg, &alg, &lag, grid)?;
    let h = run_symm_rigid(&alg, &lag, s0, grid, cfg.grid.history_every)?;
    let report = symm_rigid_stationarity(&alg, &lag, &h, grid)?;
    let line = hamilton_pontryagin_line(101, 0.01)?;
    let mut out = RunOutput {
        trajectory: symm_rigid_trajectory(&h, grid, 3, cfg.output.every),
        ..RunOutput::default()
    };
    let d = &mut out.diagnostics;
    d.scalar("gradient_density", report.gradient_density);
    d.scalar("pontryagin_hamilton", report.pontryagin.hamilton);
    d.scalar("pontryagin_costate", report.pontryagin.costate);
    d.scalar("pontryagin_constraint", report.pontryagin.constraint);
    d.scalar("gradient_to_pontryagin_ratio", report.gradient_density / report.pontryagin.max());
    d.scalar("hp_line_pontryagin", line.pontryagin.max());
    d.scalar("hp_line_gradient_density", line.gradient_density);
    out.metrics.insert("gradient_density".into(), report.gradient_density);
    out.metrics.insert("pontryagin_residual".into(), report.pontryagin.max());
    Ok(out)
}

// ---------------------------------------------------------------------------
// Peakons
// ---------------------------------------------------------------------------

fn peakon_initial(cfg: &ScenarioConfig, grid: &StrandGrid, kernel: &HelmholtzKernel) -> Result<PeakonState> {
    let (dq, dp): (Vec<f64>, Vec<f64>) = match (cfg.scenario, cfg.initial.preset.as_str()) {
        (ScenarioKind::ChClassical, _) => (vec![-2.5, 2.5], vec![1.0, 0.8]),
        (_, "single") => (vec![0.0], vec![1.0]),
        _ => (vec![-1.5, 1.5], vec![1.0, 0.8]),
    };
    let q0 = cfg.initial.q.clone().unwrap_or(dq);
    let p0 = cfg.initial.p.clone().unwrap_or_else(|| if q0.len() == dp.len() { dp } else { vec![1.0; q0.len()] });
    if p0.len() != q0.len() {
        return Err(Error::validation("initial.p", "must have the same length as initial.q"));
    }
    let a = if grid.is_degenerate() { 0.0 } else { cfg.initial.amplitude };
    let q = q0
        .iter()
        .enumerate()
        .map(|(k, &base)| (0..grid.n_s).map(|j| base + 0.3 * a * (theta(grid, j) + k as f64).sin()).collect())
        .collect();
    let m = p0
        .iter()
        .enumerate()
        .map(|(k, &base)| (0..grid.n_s).map(|j| base + 0.2 * a * ((1 + k) as f64 * theta(grid, j)).cos()).collect())
        .collect();
    PeakonState::new(*grid, kernel, q, m)
}

fn peakons(cfg: &ScenarioConfig, grid: &StrandGrid) -> Result<RunOutput> {
    let kernel = HelmholtzKernel::one_d(cfg.physics.alpha)?;
    let s0 = peakon_initial(cfg, grid, &kernel)?;
    let n_p = s0.n_p;
    let mut sim = PeakonSimulation::new(kernel, s0, cfg.grid.history_every)?;
    sim.run()?;
    let h = &sim.history;

    let header = ["t", "s", "a", "Q", "M", "N"].map(String::from).to_vec();
    let mut traj = CsvTable::new(header);
    for (i, st) in h.slices.iter().enumerate().step_by(cfg.output.every) {
        for j in 0..grid.n_s {
            for a in 0..n_p {
                traj.push(vec![h.time(i), grid.s(j), a as f64, st.q[a][j], st.mw[a][j], st.nw[a][j]]);
            }
        }
    }

    let (lo, hi) = h
        .slices
        .iter()
        .flat_map(|s| s.q.iter().flatten())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let pad = 4.0 * cfg.physics.alpha;
    let m_grid: Vec<f64> = (0..=80).map(|k| lo - pad + (hi - lo + 2.0 * pad) * k as f64 / 80.0).collect();
    let mut snaps = CsvTable::new(["t", "s", "m", "nu", "gamma"].map(String::from).to_vec());
    for i in [0, h.len() - 1] {
        let f = field_snapshot(&h.slices[i], &sim.kernel, &m_grid);
        for j in 0..grid.n_s {
            for (k, &m) in m_grid.iter().enumerate() {
                snaps.push(vec![h.time(i), grid.s(j), m, f.nu[j][k], f.gamma[j][k]]);
            }
        }
    }

    let ham: Vec<f64> = h.slices.iter().map(|s| integrated_hamiltonian(s, &sim.kernel)).collect();
    let mom: Vec<f64> = h.slices.iter().map(|s| s.total_momentum().iter().sum()).collect();
    let mut out = RunOutput {
        trajectory: traj,
        snapshots: Some(snaps),
        ..RunOutput::default()
    };
    let d = &mut out.diagnostics;
    d.scalar("hamiltonian_rel_drift", max_rel_drift(&ham));
    d.scalar("momentum_rel_drift", max_rel_drift(&mom));
    d.scalar("max_s_constraint", sim.max_s_constraint);
    d.series("hamiltonian", ham);
    d.series("total_momentum", mom);
    for a in 0..n_p {
        d.series(&format!("Q_{a}"), h.slices.iter().map(|s| s.q[a][0]).collect());
        d.series(&format!("M_{a}"), h.slices.iter().map(|s| s.mw[a][0]).collect());
    }
    if !grid.is_degenerate() && h.len() >= 3 {
        let cross = cross_derivative_residual(h, &sim.kernel)?;
        let compat = compatibility_residual(h, &sim.kernel)?;
        d.scalar("cross_derivative_residual", cross);
        d.scalar("compatibility_residual", compat);
        out.metrics.insert("cross_derivative_residual".into(), cross);
        out.metrics.insert("compatibility_residual".into(), compat);
    }
    Ok(out)
}
