//! Scenario configuration files.
//!
//! Configs are TOML. Every table rejects unknown keys, and every omitted value
//! is filled from the per-scenario defaults in [`ScenarioKind::defaults`], so the
//! resolved [`ScenarioConfig`] echoed into the diagnostics is complete.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, StrandGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ChiralSo3,
    Se3Strand,
    CdbSo3,
    #[serde(rename = "symm_rigid_soN")]
    SymmRigidSoN,
    LinearRep,
    PeakonStrand,
    ChClassical,
    VerifyAction,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::ChiralSo3,
        ScenarioKind::Se3Strand,
        ScenarioKind::CdbSo3,
        ScenarioKind::SymmRigidSoN,
        ScenarioKind::LinearRep,
        ScenarioKind::PeakonStrand,
        ScenarioKind::ChClassical,
        ScenarioKind::VerifyAction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ChiralSo3 => "chiral_so3",
            ScenarioKind::Se3Strand => "se3_strand",
            ScenarioKind::CdbSo3 => "cdb_so3",
            ScenarioKind::SymmRigidSoN => "symm_rigid_soN",
            ScenarioKind::LinearRep => "linear_rep",
            ScenarioKind::PeakonStrand => "peakon_strand",
            ScenarioKind::ChClassical => "ch_classical",
            ScenarioKind::VerifyAction => "verify_action",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::UnknownScenario(name.to_string()))
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioKind::ChiralSo3 => "so(3) chiral-model G-strand (presets: traveling_wave, generic, pure_gauge)",
            ScenarioKind::Se3Strand => "se(3) G-strand with block inertia (presets: generic)",
            ScenarioKind::CdbSo3 => "coupled double-bracket so(3) strand (presets: generic)",
            ScenarioKind::SymmRigidSoN => "SO(N) symmetric rigid-body strand (presets: twisted, classical)",
            ScenarioKind::LinearRep => "Clebsch strand on a linear so(3) representation (presets: generic; rep: defining, adjoint)",
            ScenarioKind::PeakonStrand => "peakon G-strand on Diff(R) (presets: two_peakon, single)",
            ScenarioKind::ChClassical => "classical Camassa-Holm peakons (presets: two_peakon)",
            ScenarioKind::VerifyAction => "discrete stationarity of a symmetric rigid-body Clebsch action (presets: twisted)",
        }
    }

    pub fn presets(self) -> &'static [&'static str] {
        match self {
            ScenarioKind::ChiralSo3 => &["traveling_wave", "generic", "pure_gauge"],
            ScenarioKind::Se3Strand | ScenarioKind::CdbSo3 | ScenarioKind::LinearRep => &["generic"],
            ScenarioKind::SymmRigidSoN => &["twisted", "classical"],
            ScenarioKind::PeakonStrand => &["two_peakon", "single"],
            ScenarioKind::ChClassical => &["two_peakon"],
            ScenarioKind::VerifyAction => &["twisted"],
        }
    }

    /// Defaults for a scenario and preset.
    pub fn defaults(self, preset: &str) -> Defaults {
        let d = Defaults {
            n_s: 64,
            s_extent: TAU,
            dt: 1e-3,
            t_end: 1.0,
        };
        match (self, preset) {
            // wide enough that the central-difference dispersion of the bump stays below 1e-5
            (ScenarioKind::ChiralSo3, "traveling_wave") => Defaults {
                n_s: 128,
                s_extent: 1000.0,
                ..d
            },
            (ScenarioKind::ChiralSo3, _) => Defaults { n_s: 128, ..d },
            (ScenarioKind::CdbSo3, _) => Defaults {
                s_extent: 4.0 * TAU,
                ..d
            },
            (ScenarioKind::SymmRigidSoN, "classical") => Defaults { n_s: 1, ..d },
            (ScenarioKind::SymmRigidSoN, _) => Defaults { n_s: 32, ..d },
            (ScenarioKind::ChClassical, _) => Defaults {
                n_s: 1,
                t_end: 5.0,
                ..d
            },
            (ScenarioKind::PeakonStrand, "single") => Defaults { n_s: 1, ..d },
            // the stationarity orders are preasymptotic on coarser grids
            (ScenarioKind::VerifyAction, _) => Defaults {
                n_s: 64,
                dt: 1.0 / 128.0,
                t_end: 0.25,
                ..d
            },
            _ => d,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Defaults {
    pub n_s: usize,
    pub s_extent: f64,
    pub dt: f64,
    pub t_end: f64,
}

/// An inertia given either as its diagonal or as a full row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inertia {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Inertia {
    pub fn to_matrix(&self, field: &str, dim: usize) -> Result<DMatrix<f64>> {
        match self {
            Inertia::Diagonal(d) => {
                if d.len() != dim {
                    return Err(Error::validation(field, format!("expected {dim} diagonal entries, got {}", d.len())));
                }
                Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
            }
            Inertia::Full(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::validation(field, format!("expected a {dim}x{dim} matrix")));
                }
                Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridConfig {
    pub n_s: usize,
    pub s_extent: f64,
    pub dt: f64,
    pub t_end: f64,
    pub bc: Boundary,
    pub history_every: usize,
}

impl GridConfig {
    pub fn strand_grid(&self) -> Result<StrandGrid> {
        StrandGrid::new(self.n_s, self.s_extent, self.bc, self.dt, self.t_end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhysicsConfig {
    pub alpha: f64,
    pub n: usize,
    pub rep: String,
    pub a_t: Option<Inertia>,
    pub a_s: Option<Inertia>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitialConfig {
    pub preset: String,
    pub amplitude: f64,
    pub q: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub prefix: String,
    pub every: usize,
    pub wall_time: bool,
}

/// A fully resolved scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub initial: InitialConfig,
    pub output: OutputConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: String,
    seed: Option<u64>,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    physics: RawPhysics,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n_s: Option<usize>,
    s_extent: Option<f64>,
    dt: Option<f64>,
    t_end: Option<f64>,
    bc: Option<Boundary>,
    history_every: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhysics {
    alpha: Option<f64>,
    n: Option<usize>,
    rep: Option<String>,
    a_t: Option<Inertia>,
    a_s: Option<Inertia>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    preset: Option<String>,
    amplitude: Option<f64>,
    q: Option<Vec<f64>>,
    p: Option<Vec<f64>>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    prefix: Option<String>,
    every: Option<usize>,
    wall_time: Option<bool>,
}

/// Byte offset to 1-based (line, column).
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses and validates config text. Relative output directories are kept as given.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    resolve(raw)
}

/// Reads a config file; a relative `output.dir` is taken relative to the file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cfg = parse_config(&text)?;
    if cfg.output.dir.is_relative() {
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.output.dir = base.join(&cfg.output.dir);
    }
    Ok(cfg)
}

fn resolve(raw: RawConfig) -> Result<ScenarioConfig> {
    let scenario = ScenarioKind::parse(&raw.scenario)?;
    let preset = raw
        .initial
        .preset
        .unwrap_or_else(|| scenario.presets()[0].to_string());
    if !scenario.presets().contains(&preset.as_str()) {
        return Err(Error::validation(
            "initial.preset",
            format!("`{preset}` is not a preset of {} (expected one of {:?})", scenario.name(), scenario.presets()),
        ));
    }
    let d = scenario.defaults(&preset);
    let cfg = ScenarioConfig {
        scenario,
        seed: raw.seed.unwrap_or(0),
        grid: GridConfig {
            n_s: raw.grid.n_s.unwrap_or(d.n_s),
            s_extent: raw.grid.s_extent.unwrap_or(d.s_extent),
            dt: raw.grid.dt.unwrap_or(d.dt),
            t_end: raw.grid.t_end.unwrap_or(d.t_end),
            bc: raw.grid.bc.unwrap_or(Boundary::Periodic),
            history_every: raw.grid.history_every.unwrap_or(1),
        },
        physics: PhysicsConfig {
            alpha: raw.physics.alpha.unwrap_or(1.0),
            n: raw.physics.n.unwrap_or(3),
            rep: raw.physics.rep.unwrap_or_else(|| "defining".into()),
            a_t: raw.physics.a_t,
            a_s: raw.physics.a_s,
        },
        initial: InitialConfig {
            preset,
            amplitude: raw.initial.amplitude.unwrap_or(1.0),
            q: raw.initial.q,
            p: raw.initial.p,
        },
        output: OutputConfig {
            dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("output")),
            prefix: raw.output.prefix.unwrap_or_else(|| scenario.name().to_string()),
            every: raw.output.every.unwrap_or(10),
            wall_time: raw.output.wall_time.unwrap_or(false),
        },
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn positive(field: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be positive and finite, got {x}")))
    }
}

pub fn validate(cfg: &ScenarioConfig) -> Result<()> {
    let g = &cfg.grid;
    positive("grid.dt", g.dt)?;
    positive("grid.t_end", g.t_end)?;
    positive("grid.s_extent", g.s_extent)?;
    positive("physics.alpha", cfg.physics.alpha)?;
    if g.dt > g.t_end {
        return Err(Error::validation("grid.dt", "exceeds grid.t_end"));
    }
    if g.n_s != 1 && g.n_s < crate::grid::MIN_STRAND_POINTS {
        return Err(Error::validation("grid.n_s", format!("must be 1 or at least {}", crate::grid::MIN_STRAND_POINTS)));
    }
    if g.history_every == 0 {
        return Err(Error::validation("grid.history_every", "must be at least 1"));
    }
    if cfg.output.every == 0 {
        return Err(Error::validation("output.every", "must be at least 1"));
    }
    if cfg.output.prefix.is_empty() || cfg.output.prefix.contains(['/', '\\']) {
        return Err(Error::validation("output.prefix", "must be a non-empty file name"));
    }
    if !cfg.initial.amplitude.is_finite() {
        return Err(Error::validation("initial.amplitude", "must be finite"));
    }
    let n = cfg.physics.n;
    if !(2..=8).contains(&n) {
        return Err(Error::validation("physics.n", format!("must be in 2..=8, got {n}")));
    }
    if !matches!(cfg.physics.rep.as_str(), "defining" | "adjoint") {
        return Err(Error::validation("physics.rep", "must be `defining` or `adjoint`"));
    }
    let needs_strand = matches!(
        cfg.scenario,
        ScenarioKind::ChiralSo3 | ScenarioKind::Se3Strand | ScenarioKind::CdbSo3 | ScenarioKind::LinearRep | ScenarioKind::VerifyAction
    );
    if needs_strand && g.n_s == 1 {
        return Err(Error::validation("grid.n_s", format!("{} needs a resolved strand", cfg.scenario.name())));
    }
    if cfg.scenario == ScenarioKind::ChClassical && g.n_s != 1 {
        return Err(Error::validation("grid.n_s", "ch_classical is s-independent, n_s must be 1"));
    }
    match (&cfg.initial.q, &cfg.initial.p) {
        (Some(q), Some(p)) if q.len() != p.len() => {
            return Err(Error::validation("initial.p", "must have the same length as initial.q"));
        }
        (Some(q), _) | (_, Some(q)) if q.is_empty() || q.iter().any(|x| !x.is_finite()) => {
            return Err(Error::validation("initial.q", "must be a non-empty list of finite numbers"));
        }
        _ => {}
    }
    Ok(())
}
