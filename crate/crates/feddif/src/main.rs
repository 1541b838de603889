//! Experiment runner CLI.
//!
//! Subcommands: `run` (base config times seeds), `sweep` (full sweep grid),
//! `validate` (parse and range-check a config), `summary` (rebuild the
//! summary table from persisted metric files). Config values can be
//! overridden per invocation with `--set key=value` (flags win); the
//! `FEDDIF_OUTPUT_ROOT` environment variable anchors relative output
//! directories.

use clap::{Parser, Subcommand};
use feddif::config::{
    expand_scenarios, load_config, parse_override, set_dotted, ConfigError, ExperimentSpec,
};
use feddif::output::{persist_summary, read_cells, summary_csv};
use feddif::runner::{run_and_persist, summarize_cells};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "feddif", version, about = "Diffusion-based federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the base config for every seed (the sweep grid is ignored).
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the full sweep grid for every seed.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Parse, validate and echo the resolved experiment spec.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Rebuild summary.csv / summary.json from the metric files in a
    /// directory.
    Summary { dir: PathBuf },
}

#[derive(clap::Args)]
struct Overrides {
    /// Override output directory (wins over the config file).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the seed list, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Override a base-config field, e.g. --set alpha=0.5 or
    /// --set radio.tx_power=0.1. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_spec(path: &Path, overrides: &Overrides) -> anyhow::Result<ExperimentSpec> {
    let spec = if overrides.set.is_empty() {
        load_config(path)?
    } else {
        // Apply --set overrides onto the raw [base] table before
        // deserializing, so field names and types are checked the same way.
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for raw in &overrides.set {
            let (key, value) = parse_override(raw)?;
            set_dotted(&mut table, &format!("base.{key}"), value)?;
        }
        feddif::config::spec_from_table(table)?
    };
    let mut spec = spec;
    if !overrides.seeds.is_empty() {
        spec.seeds = overrides.seeds.clone();
    }
    if let Some(dir) = &overrides.output_dir {
        spec.output_dir = dir.clone();
    }
    if spec.output_dir.is_relative() {
        if let Ok(root) = std::env::var("FEDDIF_OUTPUT_ROOT") {
            spec.output_dir = PathBuf::from(root).join(&spec.output_dir);
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Run { config, overrides } => {
            let spec = load_spec(&config, &overrides)?;
            let report = run_and_persist(&spec, false)?;
            println!(
                "ran {} cell(s); wrote {} file(s) under {}",
                report.cells,
                report.files.len(),
                spec.output_dir.display()
            );
        }
        Cmd::Sweep { config, overrides } => {
            let spec = load_spec(&config, &overrides)?;
            let report = run_and_persist(&spec, true)?;
            println!(
                "ran {} cell(s); wrote {} file(s) under {}",
                report.cells,
                report.files.len(),
                spec.output_dir.display()
            );
        }
        Cmd::Validate { config, overrides } => {
            let spec = load_spec(&config, &overrides)?;
            let scenarios = expand_scenarios(&spec)?;
            println!(
                "ok: {} scenario(s) x {} seed(s), output under {}",
                scenarios.len(),
                spec.seeds.len(),
                spec.output_dir.display()
            );
            for s in &scenarios {
                println!("  {}", s.name);
            }
        }
        Cmd::Summary { dir } => {
            let mut cells = read_cells(&dir)?;
            if cells.is_empty() {
                anyhow::bail!("no metric files found under {}", dir.display());
            }
            let explicit = cells.iter().find_map(|c| c.explicit_target);
            let rows = summarize_cells(&mut cells, explicit);
            persist_summary(&dir, &rows)?;
            print!("{}", summary_csv(&rows));
        }
    }
    Ok(())
}
