//! Metric persistence.
//!
//! Every (scenario, seed) cell produces a CSV metric file and a JSON record;
//! a run additionally writes one summary table across all cells. Both
//! formats embed the fully resolved config and the seed, writes go through a
//! temp file plus rename so re-runs overwrite atomically, and all formatting
//! is deterministic so identical runs produce byte-identical files.
//!
//! CSV schema (header required, `#` lines are comments):
//! `round,test_accuracy,diffusion_rounds,subframes_cum,models_cum,mean_iid_distance,weight_divergence`

use crate::config::SimConfig;
use crate::sim::{ExperimentResult, RoundMetrics, RunSummary};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

/// Everything one cell produced, as stored in the JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub scenario: String,
    pub seed: u64,
    pub config: SimConfig,
    /// Run-level explicit target accuracy, if one was configured; kept so
    /// summary rebuilds resolve targets the same way as the original run.
    #[serde(default)]
    pub explicit_target: Option<f64>,
    pub rounds: Vec<RoundMetrics>,
    pub summary: RunSummary,
    pub violations: u64,
}

/// One row of the cross-scenario summary table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub seed: u64,
    pub mode: String,
    pub peak_accuracy: f64,
    pub peak_round: usize,
    pub target_accuracy: Option<f64>,
    pub rounds_to_target: Option<usize>,
    pub subframes_to_target: Option<u64>,
    pub models_to_target: Option<u64>,
    pub total_subframes: u64,
    pub total_models: u64,
    pub violations: u64,
}

/// Atomic write: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().unwrap_or_default().to_string_lossy()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "N/A".to_string(),
    }
}

/// Renders the per-round CSV with the resolved config embedded in comment
/// lines.
pub fn metrics_csv(record: &CellRecord) -> String {
    let mut out = String::new();
    let config_json =
        serde_json::to_string(&record.config).expect("config serializes");
    let _ = writeln!(out, "# scenario: {}", record.scenario);
    let _ = writeln!(out, "# seed: {}", record.seed);
    let _ = writeln!(out, "# config: {config_json}");
    out.push_str(
        "round,test_accuracy,diffusion_rounds,subframes_cum,models_cum,mean_iid_distance,weight_divergence\n",
    );
    for r in &record.rounds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round,
            r.test_accuracy,
            r.diffusion_rounds,
            r.subframes_cum,
            r.models_cum,
            r.mean_iid_distance,
            r.weight_divergence
        );
    }
    out
}

/// File stem of one cell, e.g. `alpha-0.5__s42`.
pub fn cell_stem(scenario: &str, seed: u64) -> String {
    format!("{scenario}__s{seed}")
}

/// Writes the CSV and JSON files of one cell; returns their paths.
pub fn persist_cell(dir: &Path, record: &CellRecord) -> io::Result<(PathBuf, PathBuf)> {
    let stem = cell_stem(&record.scenario, record.seed);
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    atomic_write(&csv_path, metrics_csv(record).as_bytes())?;
    let mut json = serde_json::to_vec_pretty(record).expect("record serializes");
    json.push(b'\n');
    atomic_write(&json_path, &json)?;
    Ok((csv_path, json_path))
}

/// Renders the summary table CSV.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "scenario,seed,mode,peak_accuracy,peak_round,target_accuracy,rounds_to_target,subframes_to_target,models_to_target,total_subframes,total_models,violations\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.seed,
            r.mode,
            r.peak_accuracy,
            r.peak_round,
            opt(&r.target_accuracy),
            opt(&r.rounds_to_target),
            opt(&r.subframes_to_target),
            opt(&r.models_to_target),
            r.total_subframes,
            r.total_models,
            r.violations
        );
    }
    out
}

/// Writes `summary.csv` and `summary.json`; returns their paths.
pub fn persist_summary(dir: &Path, rows: &[SummaryRow]) -> io::Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join("summary.csv");
    let json_path = dir.join("summary.json");
    atomic_write(&csv_path, summary_csv(rows).as_bytes())?;
    let mut json = serde_json::to_vec_pretty(rows).expect("rows serialize");
    json.push(b'\n');
    atomic_write(&json_path, &json)?;
    Ok((csv_path, json_path))
}

/// Reads every cell JSON under `dir` (sorted by file name).
pub fn read_cells(dir: &Path) -> io::Result<Vec<CellRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name().is_some_and(|n| n != "summary.json")
        })
        .collect();
    paths.sort();
    let mut cells = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        let record: CellRecord = serde_json::from_str(&text)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))?;
        cells.push(record);
    }
    Ok(cells)
}

impl CellRecord {
    pub fn from_result(
        scenario: &str,
        config: &SimConfig,
        explicit_target: Option<f64>,
        result: &ExperimentResult,
    ) -> CellRecord {
        CellRecord {
            scenario: scenario.to_string(),
            seed: config.seed,
            config: config.clone(),
            explicit_target,
            rounds: result.rounds.clone(),
            summary: result.summary.clone(),
            violations: result.violations,
        }
    }

    pub fn summary_row(&self) -> SummaryRow {
        SummaryRow {
            scenario: self.scenario.clone(),
            seed: self.seed,
            mode: self.config.mode.to_string(),
            peak_accuracy: self.summary.peak_accuracy,
            peak_round: self.summary.peak_round,
            target_accuracy: self.summary.target_accuracy,
            rounds_to_target: self.summary.rounds_to_target,
            subframes_to_target: self.summary.subframes_to_target,
            models_to_target: self.summary.models_to_target,
            total_subframes: self.summary.total_subframes,
            total_models: self.summary.total_models,
            violations: self.violations,
        }
    }
}
