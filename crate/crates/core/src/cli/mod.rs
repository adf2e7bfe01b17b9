//! Scenario-driven runner behind the `covclebsch` binary.
//!
//! A run reads a [`ScenarioConfig`], integrates it and writes
//! `<prefix>_trajectory.csv`, `<prefix>_diagnostics.json` and, for peakon
//! scenarios, `<prefix>_snapshots.csv` into the output directory. The
//! `COVCLEBSCH_OUTPUT_DIR` environment variable overrides `output.dir`.

pub mod config;
pub mod output;
pub mod scenarios;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::{load_config, parse_config, ScenarioConfig, ScenarioKind};
pub use output::{CsvTable, Diagnostics, Order, StudyTable};
pub use scenarios::{convergence_study, execute, RunOutput};

use crate::error::Result;

pub const OUTPUT_DIR_ENV: &str = "COVCLEBSCH_OUTPUT_DIR";

#[derive(Serialize)]
struct Report<'a> {
    scenario: &'a ScenarioConfig,
    diagnostics: &'a Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_s: Option<f64>,
}

#[derive(Serialize)]
struct StudyReport<'a> {
    scenario: &'a ScenarioConfig,
    study: &'a StudyTable,
}

/// Files written by one invocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WrittenFiles {
    pub paths: Vec<PathBuf>,
}

pub fn output_dir(cfg: &ScenarioConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg.output.dir.clone(),
    }
}

fn target(cfg: &ScenarioConfig, suffix: &str) -> PathBuf {
    output_dir(cfg).join(format!("{}_{suffix}", cfg.output.prefix))
}

/// Runs a scenario and writes its outputs.
pub fn run(cfg: &ScenarioConfig) -> Result<WrittenFiles> {
    let start = Instant::now();
    let out = execute(cfg)?;
    let wall = start.elapsed().as_secs_f64();
    let mut paths = Vec::new();
    let traj = target(cfg, "trajectory.csv");
    output::write_atomic(&traj, out.trajectory.render().as_bytes())?;
    paths.push(traj);
    if let Some(snaps) = &out.snapshots {
        let p = target(cfg, "snapshots.csv");
        output::write_atomic(&p, snaps.render().as_bytes())?;
        paths.push(p);
    }
    let report = Report {
        scenario: cfg,
        diagnostics: &out.diagnostics,
        wall_time_s: cfg.output.wall_time.then_some(wall),
    };
    let p = target(cfg, "diagnostics.json");
    output::write_atomic(&p, output::to_json(&report)?.as_bytes())?;
    paths.push(p);
    Ok(WrittenFiles { paths })
}

/// Runs a convergence study and writes `<prefix>_study.json`.
pub fn study(cfg: &ScenarioConfig, levels: u32) -> Result<(StudyTable, PathBuf)> {
    let table = convergence_study(cfg, levels)?;
    let p = target(cfg, "study.json");
    let report = StudyReport {
        scenario: cfg,
        study: &table,
    };
    output::write_atomic(&p, output::to_json(&report)?.as_bytes())?;
    Ok((table, p))
}

/// Loads and runs a config file.
pub fn run_config_file(path: &Path) -> Result<WrittenFiles> {
    run(&load_config(path)?)
}
