//! Experiment configuration: a TOML file, optionally patched by
//! `--section.field value` command-line overrides, hashed for provenance.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use locpriv::adversarial::GeneratorLossMode;

/// Configuration problems abort with exit code 3 before any work starts.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every stage draws from its own named stream.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub game: GameSection,
    pub laplace: LaplaceSection,
    pub evaluation: EvalSection,
    pub expected: ExpectedSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            dataset: DatasetSection::default(),
            game: GameSection::default(),
            laplace: LaplaceSection::default(),
            evaluation: EvalSection::default(),
            expected: ExpectedSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Gowalla,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub center_lat: f64,
    pub center_lon: f64,
    pub region_side_m: f64,
    // Synthetic-only geometry.
    pub cluster_square_side_m: f64,
    pub max_radius_m: f64,
    pub per_class: usize,
    pub per_class_trainval: usize,
    // Check-in ingestion.
    pub path: Option<PathBuf>,
    pub num_users: usize,
    pub per_user_trainval: usize,
    pub per_user_test: usize,
    pub user_col: usize,
    pub lat_col: usize,
    pub lon_col: usize,
    pub overlap_filter_m: Option<f64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            kind: DatasetKind::Synthetic,
            center_lat: 48.8635,
            center_lon: 2.3486,
            region_side_m: 6500.0,
            cluster_square_side_m: 300.0,
            max_radius_m: 45.0,
            per_class: 600,
            per_class_trainval: 480,
            path: None,
            num_users: 6,
            per_user_trainval: 82,
            per_user_test: 20,
            user_col: 0,
            lat_col: 2,
            lon_col: 3,
            overlap_filter_m: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameSection {
    pub budget_m: f64,
    /// Weight of the distortion penalty in the generator loss.
    pub alpha: f64,
    /// Weight of the privacy term.
    pub beta: f64,
    pub max_iterations: usize,
    pub stop_delta: f64,
    pub seeds_per_location: usize,
    pub generator_loss: LossName,
    pub gen_hidden: Vec<usize>,
    pub clf_hidden: Vec<usize>,
    pub gen_batch: usize,
    pub gen_epochs: usize,
    pub gen_lr: f64,
    pub clf_batch: usize,
    pub clf_epochs: usize,
    pub clf_lr: f64,
    /// Pretraining epochs that start the generator as an at-budget spread
    /// rather than a near-identity map. 0 disables.
    pub warm_start_epochs: usize,
}

impl Default for GameSection {
    fn default() -> Self {
        GameSection {
            budget_m: 270.0,
            alpha: 1.0,
            beta: 2.0,
            max_iterations: 200,
            stop_delta: 0.02,
            seeds_per_location: 10,
            generator_loss: LossName::MutualInfo,
            gen_hidden: vec![100, 100, 100],
            clf_hidden: vec![60, 100, 51],
            gen_batch: 128,
            gen_epochs: 30,
            gen_lr: 1e-4,
            clf_batch: 256,
            clf_epochs: 30,
            clf_lr: 1e-3,
            warm_start_epochs: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    MutualInfo,
    CrossEntropyUnsound,
}

impl From<LossName> for GeneratorLossMode {
    fn from(n: LossName) -> Self {
        match n {
            LossName::MutualInfo => GeneratorLossMode::MutualInfo,
            LossName::CrossEntropyUnsound => GeneratorLossMode::CrossEntropyUnsound,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaplaceSection {
    pub epsilon: f64,
}

impl Default for LaplaceSection {
    fn default() -> Self {
        LaplaceSection { epsilon: std::f64::consts::LN_2 / 100.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub grids: Vec<usize>,
    pub obf_counts: Vec<usize>,
    pub splits: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            grids: vec![13, 65, 130, 260],
            obf_counts: vec![10, 100, 200, 500],
            splits: vec!["train".into(), "test".into()],
        }
    }
}

/// Target values for the summary comparison; absent fields are not checked.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpectedSection {
    /// Grid/count cell the headline Bayes-error numbers are read from.
    pub bayes_grid: Option<usize>,
    pub bayes_count: Option<usize>,
    pub max_val_accuracy: Option<f64>,
    pub min_test_accuracy: Option<f64>,
    pub max_test_accuracy: Option<f64>,
    pub min_bayes_ours: Option<f64>,
    pub max_bayes_ours: Option<f64>,
    pub min_bayes_laplace: Option<f64>,
    pub max_bayes_laplace: Option<f64>,
    pub max_distortion_ours_m: Option<f64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dataset;
        if d.kind == DatasetKind::Gowalla {
            match &d.path {
                None => return cfg_err("dataset.kind = \"gowalla\" requires dataset.path"),
                Some(p) if !p.exists() => {
                    return cfg_err(format!("dataset.path {} does not exist", p.display()))
                }
                _ => {}
            }
        }
        if !(self.game.budget_m.is_finite() && self.game.budget_m > 0.0) {
            return cfg_err(format!("game.budget_m must be > 0, got {}", self.game.budget_m));
        }
        if !(self.laplace.epsilon.is_finite() && self.laplace.epsilon > 0.0) {
            return cfg_err(format!("laplace.epsilon must be > 0, got {}", self.laplace.epsilon));
        }
        if self.evaluation.grids.is_empty() || self.evaluation.grids.contains(&0) {
            return cfg_err("evaluation.grids must be non-empty, all >= 1");
        }
        if self.evaluation.obf_counts.is_empty() || self.evaluation.obf_counts.contains(&0) {
            return cfg_err("evaluation.obf_counts must be non-empty, all >= 1");
        }
        for s in &self.evaluation.splits {
            if s != "train" && s != "val" && s != "test" {
                return cfg_err(format!("evaluation.splits entry {s:?} (want train/val/test)"));
            }
        }
        Ok(())
    }

    /// Relative gap between the Laplace closed-form displacement 2/ε and the
    /// game budget; experiments pair them, so a large gap is worth a warning.
    pub fn epsilon_budget_gap(&self) -> f64 {
        let implied = 2.0 / self.laplace.epsilon;
        (implied - self.game.budget_m).abs() / self.game.budget_m
    }

    /// Hash of the parsed config (not the file bytes), so formatting and
    /// comments do not churn provenance lines.
    pub fn hash(&self) -> String {
        let canon = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

/// Loads a config file and applies `key path → value` overrides, where the
/// key path is dotted (`game.budget_m`). Values parse as bool, then integer,
/// then float, then string; comma-separated values become arrays.
pub fn load_config(
    path: &Path,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("reading {}: {e}", path.display())))?;
    let table: toml::Table =
        text.parse().map_err(|e| ConfigError(format!("parsing {}: {e}", path.display())))?;
    let mut value = toml::Value::Table(table);

    for (key, raw) in overrides {
        apply_override(&mut value, key, raw)?;
    }

    let cfg: ExperimentConfig =
        value.try_into().map_err(|e| ConfigError(format!("in {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    let mut parsed = if raw.contains(',') {
        toml::Value::Array(
            raw.split(',').map(str::trim).filter(|p| !p.is_empty()).map(parse_scalar).collect(),
        )
    } else {
        parse_scalar(raw)
    };

    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("--{key}: {part} is not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::value::Table::new()));
    }
    let table =
        node.as_table_mut().ok_or_else(|| ConfigError(format!("--{key}: not a table path")))?;
    let leaf = parts[parts.len() - 1];
    // A bare scalar replacing an array field means a one-element list.
    if !parsed.is_array() && table.get(leaf).is_some_and(toml::Value::is_array) {
        parsed = toml::Value::Array(vec![parsed]);
    }
    table.insert(leaf.to_string(), parsed);
    Ok(())
}
