//! Experiment configuration.
//!
//! A TOML file describes one experiment spec: a base simulation config, an
//! optional sweep grid, the seed list and the output directory. Unset fields
//! fall back to the baseline defaults (`alpha = 1.0`, `epsilon = 0.04`,
//! `gamma_min = 1.0`, ten users, logistic model on a synthetic two-class
//! task). Sweep keys name base-config fields, dotted for nested ones
//! (`radio.tx_power`); expansion is the cartesian product of the value lists.

use crate::channel::RadioConfig;
use crate::dist::DistanceMetric;
use crate::learn::{Hyperparams, ModelKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

/// Protocol variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Mode {
    /// Diffusion with the configured halting distance.
    #[default]
    #[serde(rename = "feddif")]
    FedDif,
    /// Vanilla federated averaging: one local pass per user, no diffusion.
    #[serde(rename = "baseline")]
    BaselineFedAvg,
    /// Diffusion until no eligible improvement remains (epsilon forced to 0).
    #[serde(rename = "full-diffusion")]
    FullDiffusion,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::FedDif => write!(f, "feddif"),
            Mode::BaselineFedAvg => write!(f, "baseline"),
            Mode::FullDiffusion => write!(f, "full-diffusion"),
        }
    }
}

/// How the training data is split across users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PartitionScheme {
    /// Non-IID shards drawn from a symmetric Dirichlet with concentration
    /// `alpha`.
    #[default]
    Dirichlet,
    /// Round-robin by class: every shard gets (near-)exactly the universal
    /// class distribution.
    Stratified,
}

/// Model family and width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden units of the MLP; ignored by the convex models.
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Logistic,
            hidden: 16,
        }
    }
}

/// Data source: a synthetic Gaussian-mixture task by default, or CSV files
/// (one sample per row: integer label, then the feature values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub n_classes: usize,
    /// Distance between neighboring class means, in noise standard
    /// deviations.
    pub class_sep: f64,
    pub csv_train: Option<PathBuf>,
    pub csv_test: Option<PathBuf>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 1000,
            dim: 20,
            n_classes: 2,
            class_sep: 2.5,
            csv_train: None,
            csv_test: None,
        }
    }
}

/// Full configuration of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Number of participating users; also the number of local models.
    pub n_pues: usize,
    /// Mean number of background users per communication round.
    pub cue_arrival_rate: f64,
    /// Dirichlet concentration of the non-IID partition.
    pub alpha: f64,
    /// Minimum tolerable IID distance: models at or below it stop diffusing.
    pub epsilon: f64,
    /// Minimum tolerable spectral efficiency for scheduling a link.
    pub gamma_min: f64,
    /// Communication rounds to run.
    pub n_rounds: usize,
    pub metric: DistanceMetric,
    pub mode: Mode,
    /// Lets users re-train models they already trained (the current holder
    /// stays excluded).
    pub allow_retrain: bool,
    pub partition: PartitionScheme,
    /// Adds base-station up/down-link transfers to the cost counters.
    pub count_broadcast: bool,
    /// Serialized size of one parameter.
    pub bits_per_param: u32,
    pub seed: u64,
    pub radio: RadioConfig,
    pub hp: Hyperparams,
    pub model: ModelConfig,
    pub task: TaskConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_pues: 10,
            cue_arrival_rate: 5.0,
            alpha: 1.0,
            epsilon: 0.04,
            gamma_min: 1.0,
            n_rounds: 30,
            metric: DistanceMetric::W1L2,
            mode: Mode::FedDif,
            allow_retrain: false,
            partition: PartitionScheme::Dirichlet,
            count_broadcast: false,
            bits_per_param: 32,
            seed: 0,
            radio: RadioConfig::default(),
            hp: Hyperparams::default(),
            model: ModelConfig::default(),
            task: TaskConfig::default(),
        }
    }
}

impl SimConfig {
    /// Range checks. Field names in errors match the config keys.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: &str| -> Result<(), ConfigError> {
            Err(ConfigError::Invalid {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.n_pues < 1 {
            return bad("n_pues", "must be >= 1");
        }
        if self.n_rounds < 1 {
            return bad("n_rounds", "must be >= 1");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha", "must be positive");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon", "must be >= 0");
        }
        if !(self.gamma_min >= 0.0) {
            return bad("gamma_min", "must be >= 0");
        }
        if !(self.cue_arrival_rate >= 0.0) {
            return bad("cue_arrival_rate", "must be >= 0");
        }
        if self.bits_per_param == 0 {
            return bad("bits_per_param", "must be >= 1");
        }
        if self.mode == Mode::FullDiffusion
            && self.epsilon != 0.0
            && self.epsilon != SimConfig::default().epsilon
        {
            return bad("epsilon", "mode full-diffusion forces epsilon = 0");
        }
        if !(self.hp.learning_rate > 0.0) {
            return bad("hp.learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.hp.momentum) {
            return bad("hp.momentum", "must be in [0, 1)");
        }
        if self.hp.batch_size < 1 {
            return bad("hp.batch_size", "must be >= 1");
        }
        if self.hp.local_epochs < 1 {
            return bad("hp.local_epochs", "must be >= 1");
        }
        let r = &self.radio;
        for (key, v) in [
            ("radio.kappa", r.kappa),
            ("radio.d0", r.d0),
            ("radio.noise_psd", r.noise_psd),
            ("radio.tx_power", r.tx_power),
            ("radio.cell_radius", r.cell_radius),
            ("radio.subcarrier_spacing", r.subcarrier_spacing),
            ("radio.subframe_duration", r.subframe_duration),
            ("radio.rb_bandwidth", r.rb_bandwidth),
            ("radio.total_bandwidth", r.total_bandwidth),
            ("radio.cue_bandwidth", r.cue_bandwidth),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(key, "must be strictly positive");
            }
        }
        if !r.beta0_db.is_finite() {
            return bad("radio.beta0_db", "must be finite");
        }
        if let Some(rp) = r.outage_rate_product {
            if !(rp >= 0.0) {
                return bad("radio.outage_rate_product", "must be >= 0");
            }
        }
        let t = &self.task;
        if t.n_classes < 2 {
            return bad("task.n_classes", "must be >= 2");
        }
        if t.csv_train.is_some() != t.csv_test.is_some() {
            return bad("task.csv_train", "csv_train and csv_test go together");
        }
        if t.csv_train.is_none() {
            if t.n_train < self.n_pues {
                return bad("task.n_train", "need at least one sample per user");
            }
            if t.n_test < 1 {
                return bad("task.n_test", "must be >= 1");
            }
            if t.dim < t.n_classes {
                return bad("task.dim", "must be >= task.n_classes");
            }
            if !(t.class_sep > 0.0) {
                return bad("task.class_sep", "must be positive");
            }
        }
        if self.model.kind == ModelKind::Mlp && self.model.hidden < 1 {
            return bad("model.hidden", "must be >= 1 for the MLP");
        }
        Ok(())
    }

    /// Applies the cross-field rules (currently: full diffusion runs with
    /// `epsilon = 0`).
    pub fn resolved(&self) -> SimConfig {
        let mut cfg = self.clone();
        if cfg.mode == Mode::FullDiffusion {
            cfg.epsilon = 0.0;
        }
        cfg
    }
}

/// One experiment: base config, sweep grid, seeds, output location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub base: SimConfig,
    /// Field name (dotted for nested) to list of values.
    pub sweep: BTreeMap<String, Vec<toml::Value>>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Explicit cost-to-target accuracy. Unset, targets come from paired
    /// baseline cells of the same sweep.
    pub target_accuracy: Option<f64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base: SimConfig::default(),
            sweep: BTreeMap::new(),
            seeds: vec![0],
            output_dir: PathBuf::from("results"),
            target_accuracy: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid {
                key: "seeds".into(),
                reason: "must list at least one seed".into(),
            });
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(ConfigError::Invalid {
                    key: "target_accuracy".into(),
                    reason: "must be in [0, 1]".into(),
                });
            }
        }
        self.base.validate()?;
        // Expanding also type-checks every sweep key and value.
        expand_scenarios(self)?;
        Ok(())
    }
}

/// A named point of the sweep grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub config: SimConfig,
}

/// Parses a spec from TOML text.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let spec: ExperimentSpec =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Deserializes and validates a spec from an already-parsed (and possibly
/// override-patched) TOML table.
pub fn spec_from_table(table: toml::Table) -> Result<ExperimentSpec, ConfigError> {
    let spec: ExperimentSpec = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Loads and validates a spec file. An empty file yields the full default
/// (baseline-parameter) spec.
pub fn load_config(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_spec(&text)
}

/// Sets `dotted.key = value` inside a TOML table, creating intermediate
/// tables as needed. The value string is parsed as TOML, falling back to a
/// plain string.
pub fn set_dotted(
    table: &mut toml::Table,
    dotted_key: &str,
    value: toml::Value,
) -> Result<(), ConfigError> {
    let mut parts = dotted_key.split('.').peekable();
    let mut current = table;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            current.insert(part.to_string(), value);
            return Ok(());
        }
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid {
                key: dotted_key.to_string(),
                reason: format!("`{part}` is not a table"),
            })?;
    }
    unreachable!("split always yields at least one part")
}

/// Parses a `key=value` override as TOML (strings may be unquoted).
pub fn parse_override(raw: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, value) = raw.split_once('=').ok_or_else(|| ConfigError::Invalid {
        key: raw.to_string(),
        reason: "expected key=value".into(),
    })?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed: toml::Value = match format!("x = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").unwrap(),
        Err(_) => toml::Value::String(value.to_string()),
    };
    Ok((key, parsed))
}

fn value_label(v: &toml::Value) -> String {
    let raw = match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    raw.replace([' ', '"', '\'', '/', '\\'], "")
}

/// Expands the sweep grid into named scenarios (cartesian product over the
/// sorted sweep keys). Without a sweep, the single scenario is named `base`.
pub fn expand_scenarios(spec: &ExperimentSpec) -> Result<Vec<Scenario>, ConfigError> {
    if spec.sweep.is_empty() {
        return Ok(vec![Scenario {
            name: "base".into(),
            config: spec.base.resolved(),
        }]);
    }
    for (key, values) in &spec.sweep {
        if values.is_empty() {
            return Err(ConfigError::Invalid {
                key: format!("sweep.{key}"),
                reason: "value list is empty".into(),
            });
        }
    }
    let base_table =
        toml::Table::try_from(&spec.base).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let keys: Vec<&String> = spec.sweep.keys().collect();
    let mut scenarios = Vec::new();
    let mut combo = vec![0usize; keys.len()];
    loop {
        let mut table = base_table.clone();
        let mut name_parts = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            let value = spec.sweep[*key][combo[i]].clone();
            name_parts.push(format!("{key}-{}", value_label(&value)));
            set_dotted(&mut table, key, value)?;
        }
        let config: SimConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e| ConfigError::Invalid {
                    key: keys
                        .iter()
                        .map(|k| k.as_str())
                        .collect::<Vec<_>>()
                        .join(","),
                    reason: e.to_string(),
                })?;
        config.validate()?;
        scenarios.push(Scenario {
            name: name_parts.join("__"),
            config: config.resolved(),
        });
        // Next point of the grid.
        let mut i = keys.len();
        loop {
            if i == 0 {
                return Ok(scenarios);
            }
            i -= 1;
            combo[i] += 1;
            if combo[i] < spec.sweep[keys[i]].len() {
                break;
            }
            combo[i] = 0;
        }
    }
}
