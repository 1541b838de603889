//! Experiment execution: scenario grid times seeds, persistence, summary.
//!
//! Cost-to-target methodology: the target accuracy of a cell is the explicit
//! `target_accuracy` when set; otherwise the peak accuracy of the baseline
//! cell with the same seed whose config matches up to mode (and the halting
//! distance, which the baseline ignores); otherwise, if the sweep contains
//! exactly one baseline scenario, that one. Baseline cells use their own peak
//! so their cost-to-peak is visible too.

use crate::config::{expand_scenarios, ConfigError, ExperimentSpec, Mode, SimConfig};
use crate::output::{persist_cell, persist_summary, CellRecord, SummaryRow};
use crate::sim::{run_experiment, summarize, SimError};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed in scenario `{scenario}` seed {seed}: {source}")]
    Sim {
        scenario: String,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// What a run produced: every written file, in write order.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub cells: usize,
    pub files: Vec<PathBuf>,
}

/// Normalized config used to pair a cell with its baseline: same everything
/// except mode, halting distance and seed.
fn pairing_key(cfg: &SimConfig) -> SimConfig {
    let mut key = cfg.clone();
    key.mode = Mode::FedDif;
    key.epsilon = 0.0;
    key.seed = 0;
    key
}

/// Fills in per-cell targets and produces the summary rows, sorted by
/// (scenario, seed).
pub fn summarize_cells(cells: &mut [CellRecord], explicit_target: Option<f64>) -> Vec<SummaryRow> {
    let baseline_peaks: Vec<(SimConfig, u64, f64, String)> = cells
        .iter()
        .filter(|c| c.config.mode == Mode::BaselineFedAvg)
        .map(|c| {
            (
                pairing_key(&c.config),
                c.seed,
                c.summary.peak_accuracy,
                c.scenario.clone(),
            )
        })
        .collect();
    let baseline_scenarios: std::collections::BTreeSet<&String> =
        baseline_peaks.iter().map(|(_, _, _, s)| s).collect();

    for cell in cells.iter_mut() {
        let target = if let Some(t) = explicit_target {
            Some(t)
        } else if cell.config.mode == Mode::BaselineFedAvg {
            Some(cell.summary.peak_accuracy)
        } else {
            let key = pairing_key(&cell.config);
            let exact: Vec<f64> = baseline_peaks
                .iter()
                .filter(|(k, seed, _, _)| *seed == cell.seed && *k == key)
                .map(|(_, _, peak, _)| *peak)
                .collect();
            match exact.as_slice() {
                [one] => Some(*one),
                [] if baseline_scenarios.len() == 1 => baseline_peaks
                    .iter()
                    .find(|(_, seed, _, _)| *seed == cell.seed)
                    .map(|(_, _, peak, _)| *peak),
                _ => None,
            }
        };
        cell.summary = summarize(&cell.rounds, target);
    }

    let mut rows: Vec<SummaryRow> = cells.iter().map(CellRecord::summary_row).collect();
    rows.sort_by(|a, b| a.scenario.cmp(&b.scenario).then(a.seed.cmp(&b.seed)));
    rows
}

/// Runs every cell of a spec and writes metric files plus the summary.
///
/// `expand_sweep = false` runs the base config only (the `run` subcommand);
/// `true` expands the sweep grid (the `sweep` subcommand). Cells run
/// sequentially in grid order; re-runs overwrite their files atomically.
pub fn run_and_persist(spec: &ExperimentSpec, expand_sweep: bool) -> Result<RunReport, RunnerError> {
    spec.validate()?;
    let scenarios = if expand_sweep {
        expand_scenarios(spec)?
    } else {
        vec![crate::config::Scenario {
            name: "base".into(),
            config: spec.base.resolved(),
        }]
    };

    let mut cells: Vec<CellRecord> = Vec::new();
    for scenario in &scenarios {
        for &seed in &spec.seeds {
            let mut config = scenario.config.clone();
            config.seed = seed;
            let result =
                run_experiment(&config, spec.target_accuracy).map_err(|source| RunnerError::Sim {
                    scenario: scenario.name.clone(),
                    seed,
                    source,
                })?;
            cells.push(CellRecord::from_result(
                &scenario.name,
                &config,
                spec.target_accuracy,
                &result,
            ));
        }
    }

    let rows = summarize_cells(&mut cells, spec.target_accuracy);

    let io_err = |source: std::io::Error| RunnerError::Io {
        path: spec.output_dir.display().to_string(),
        source,
    };
    let mut files = Vec::new();
    for cell in &cells {
        let (csv, json) = persist_cell(&spec.output_dir, cell).map_err(io_err)?;
        files.push(csv);
        files.push(json);
    }
    let (csv, json) = persist_summary(&spec.output_dir, &rows).map_err(io_err)?;
    files.push(csv);
    files.push(json);
    Ok(RunReport {
        cells: cells.len(),
        files,
    })
}
