//! Sectioned TOML configuration. Every key has a default, unknown keys are
//! rejected, and the resolved value is what gets written as the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use tritrain::analysis::{AdistConfig, MAX_INSTANCE_HYPOTHESES, MAX_INSTANCE_SAMPLES};
use tritrain::datagen::Generator;
use tritrain::labeler::LabelingConfig;
use tritrain::nnlib::OptimizerKind;
use tritrain::trainer::{LrDecay, TrainConfig};
use tritrain::trinet::NetConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seeds data generation, initialization, batching and sampling.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: NetConfig,
    pub train: TrainSection,
    pub labeling: LabelingConfig,
    pub analysis: AnalysisSection,
    pub bound: BoundSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: NetConfig::default(),
            train: TrainSection::default(),
            labeling: LabelingConfig::default(),
            analysis: AnalysisSection::default(),
            bound: BoundSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Synthetic,
    Csv,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub generator: Generator,
    pub n_source: usize,
    pub n_target: usize,
    pub rotation_deg: f64,
    pub translation: Vec<f64>,
    pub noise_sigma: f64,
    pub source_path: Option<PathBuf>,
    /// Target rows; a label column, if present, is only used for evaluation.
    pub target_path: Option<PathBuf>,
    /// Labeled target test set; without it the target pool's labels are used.
    pub test_path: Option<PathBuf>,
    /// Feature count for sparse files.
    pub dim: Option<usize>,
    pub val_count: usize,
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Synthetic,
            generator: Generator::TwoMoons,
            n_source: 500,
            n_target: 500,
            rotation_deg: 30.0,
            translation: vec![0.0, 0.0],
            noise_sigma: 0.1,
            source_path: None,
            target_path: None,
            test_path: None,
            dim: None,
            val_count: 0,
            standardize: false,
        }
    }
}

/// Same fields as the library's training config, minus the labeling
/// schedule and seed, which live in their own places.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iter_per_phase: Option<usize>,
    pub pretrain_iters: Option<usize>,
    pub steps_k: usize,
    pub batch_labeling: usize,
    pub batch_target: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub lr_decay: Option<LrDecay>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            iter_per_phase: t.iter_per_phase,
            pretrain_iters: t.pretrain_iters,
            steps_k: t.steps_k,
            batch_labeling: t.batch_labeling,
            batch_target: t.batch_target,
            lr: t.lr,
            optimizer: t.optimizer,
            lr_decay: t.lr_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Measure the 𝒜-distance on raw inputs and on `F` features after training.
    pub a_distance: bool,
    pub heldout_fraction: f64,
    pub repeats: usize,
    pub iters: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let a = AdistConfig::default();
        Self {
            a_distance: true,
            heldout_fraction: 0.5,
            repeats: a.repeats,
            iters: a.iters,
            lr: a.lr,
            l2: a.l2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    pub instances: usize,
    pub max_samples: usize,
    pub max_hypotheses: usize,
}

impl Default for BoundSection {
    fn default() -> Self {
        Self {
            instances: 100,
            max_samples: MAX_INSTANCE_SAMPLES,
            max_hypotheses: MAX_INSTANCE_HYPOTHESES,
        }
    }
}

impl Config {
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            iter_per_phase: t.iter_per_phase,
            pretrain_iters: t.pretrain_iters,
            steps_k: t.steps_k,
            batch_labeling: t.batch_labeling,
            batch_target: t.batch_target,
            lr: t.lr,
            optimizer: t.optimizer,
            lr_decay: t.lr_decay,
            labeling: self.labeling.clone(),
            seed: self.seed,
        }
    }

    pub fn adist_config(&self) -> AdistConfig {
        let a = &self.analysis;
        AdistConfig {
            repeats: a.repeats,
            iters: a.iters,
            lr: a.lr,
            l2: a.l2,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("seed must be at most {}", i64::MAX)));
        }
        self.train_config().validate(&self.model)?;
        let a = &self.analysis;
        if !(a.heldout_fraction > 0.0 && a.heldout_fraction < 1.0) {
            return Err(CliError::Config("analysis.heldout_fraction must be in (0, 1)".into()));
        }
        let d = &self.data;
        match d.kind {
            DataKind::Synthetic => {
                if d.source_path.is_some() || d.target_path.is_some() {
                    return Err(CliError::Config(
                        "data.source_path/target_path need data.kind = \"csv\" or \"sparse\"".into(),
                    ));
                }
            }
            DataKind::Csv | DataKind::Sparse => {
                if d.source_path.is_none() || d.target_path.is_none() {
                    return Err(CliError::Config(
                        "data.source_path and data.target_path are required for file data".into(),
                    ));
                }
                if d.kind == DataKind::Sparse && d.dim.is_none() {
                    return Err(CliError::Config("data.dim is required for sparse data".into()));
                }
            }
        }
        Ok(())
    }

    /// Relative data paths are taken relative to the config file and stored
    /// absolute, so a manifest can be re-run from any directory.
    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.source_path, &mut self.data.target_path, &mut self.data.test_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                let joined = base.join(&*p);
                *p = std::path::absolute(&joined).unwrap_or(joined);
            }
        }
    }

    pub fn to_manifest(&self) -> Result<String> {
        let body = toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))?;
        Ok(format!(
            "# tritrain {} resolved configuration\n{body}",
            env!("CARGO_PKG_VERSION")
        ))
    }
}

/// Reads `path` (or starts from defaults), applies `key=value` overrides in
/// order, then deserializes and validates.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| CliError::ConfigRead {
                path: p.to_path_buf(),
                source,
            })?;
            text.parse::<Table>().map_err(|source| CliError::ConfigParse {
                path: p.to_path_buf(),
                source,
            })?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let display = path.map_or_else(|| PathBuf::from("<defaults>"), Path::to_path_buf);
    let mut cfg: Config = Value::Table(table)
        .try_into()
        .map_err(|source| CliError::ConfigParse { path: display, source })?;
    if let Some(dir) = path.and_then(Path::parent) {
        cfg.resolve_paths(dir);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key '{key}' is malformed")));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override '{key}': '{p}' is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        load(None, &[]).unwrap();
    }

    #[test]
    fn overrides_nest_and_parse_types() {
        let cfg = load(
            None,
            &[
                "seed=7".into(),
                "model.lambda=0.5".into(),
                "train.optimizer.kind=adagrad".into(),
                "train.optimizer.eps=1e-8".into(),
                "data.generator=gaussian_blobs".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.lambda, 0.5);
        assert_eq!(cfg.train.optimizer, OptimizerKind::Adagrad { eps: 1e-8 });
        assert_eq!(cfg.data.generator, Generator::GaussianBlobs);
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = load(None, &["data.rotation=3".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("rotation"), "{err}");
    }

    #[test]
    fn malformed_override() {
        assert!(load(None, &["seed".into()]).is_err());
        assert!(load(None, &["seed=1".into(), "seed.x=2".into()]).is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let cfg = load(None, &["train.lr_decay.after_step=3".into(), "train.lr_decay.lr=0.001".into()]).unwrap();
        let text = cfg.to_manifest().unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_data_needs_paths() {
        assert!(load(None, &["data.kind=csv".into()]).is_err());
        assert!(load(None, &["data.kind=sparse".into(), "data.source_path=a".into(), "data.target_path=b".into()]).is_err());
    }
}
