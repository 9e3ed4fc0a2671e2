//! JSON run configuration and command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use gspect_core::eval::{ExperimentPlan, SweepAxes, DEFAULT_SCALE_LADDER};
use gspect_core::synth::{ClassSource, MsgConfig};
use gspect_core::{BasisMode, ModelConfig, SplitSpec, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySettings {
    pub trials: usize,
    /// Graphs checked per run.
    pub graphs: usize,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        Self {
            trials: 10_000,
            graphs: 5,
        }
    }
}

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub msg: Option<MsgConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitSpec,
    /// Explicit run seeds; replaced by `--seed`/`--seeds` when given.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub scale_ladder: Option<Vec<f64>>,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default)]
    pub stability: StabilitySettings,
    #[serde(default)]
    pub record_timing: bool,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA,
            dataset: None,
            msg: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            seeds: None,
            scale_ladder: None,
            sweep: SweepAxes::default(),
            stability: StabilitySettings::default(),
            record_timing: false,
        }
    }
}

impl FileConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let raw: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        match raw.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CONFIG_SCHEMA as u64 => {}
            Some(v) => {
                return Err(CliError::Usage(format!(
                    "config {}: unsupported schema_version {v} (expected {CONFIG_SCHEMA})",
                    path.display()
                )))
            }
            None => {
                return Err(CliError::Usage(format!(
                    "config {}: missing integer field `schema_version`",
                    path.display()
                )))
            }
        }
        let mut cfg: FileConfig =
            serde_json::from_value(raw).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = &mut cfg.dataset {
            *d = resolve(base, d);
        }
        if let Some(msg) = &mut cfg.msg {
            for class in &mut msg.classes {
                if let ClassSource::Empirical { path: Some(p) } = &mut class.source {
                    *p = resolve(base, p);
                }
            }
        }
        Ok(cfg)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Flag values that replace file settings when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub scales: Option<Vec<f64>>,
    pub order: Option<usize>,
    pub m_out: Option<usize>,
    pub n_max: Option<usize>,
    pub basis_mode: Option<BasisMode>,
    pub beta: Option<f64>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
}

pub const DEFAULT_SEED_COUNT: usize = 10;

/// File config with overrides applied and checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub file: FileConfig,
    pub seed: u64,
    /// `--seed` as given on the command line.
    pub seed_flag: Option<u64>,
    pub seeds: Vec<u64>,
}

impl Resolved {
    pub fn new(mut file: FileConfig, o: &Overrides) -> Result<Self, CliError> {
        if let Some(d) = &o.dataset {
            file.dataset = Some(d.clone());
        }
        let m = &mut file.model;
        if let Some(v) = o.variant {
            m.variant = v;
        }
        if let Some(s) = &o.scales {
            m.scales = s.clone();
        }
        if let Some(v) = o.order {
            m.order = v;
        }
        if let Some(v) = o.m_out {
            m.m_out = v;
        }
        if let Some(v) = o.n_max {
            m.n_max = v;
        }
        if let Some(v) = o.basis_mode {
            m.basis_mode = v;
        }
        let t = &mut file.train;
        if let Some(v) = o.beta {
            t.beta = v;
        }
        if let Some(v) = o.epochs {
            t.epochs = v;
        }
        if let Some(v) = o.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = o.batch_size {
            t.batch_size = v;
        }
        file.train.validate()?;
        let seed = o.seed.or(file.seeds.as_ref().and_then(|s| s.first().copied())).unwrap_or(0);
        let seeds = match (&file.seeds, o.seed, o.seeds) {
            (Some(list), None, None) => list.clone(),
            (list, _, count) => {
                let n = count.or(list.as_ref().map(Vec::len)).unwrap_or(DEFAULT_SEED_COUNT);
                (0..n as u64).map(|k| seed.wrapping_add(k)).collect()
            }
        };
        if seeds.is_empty() {
            return Err(CliError::Usage("at least one seed is required".into()));
        }
        file.train.seed = seed;
        Ok(Self {
            file,
            seed,
            seed_flag: o.seed,
            seeds,
        })
    }

    pub fn dataset_path(&self) -> Result<&Path, CliError> {
        let p = self
            .file
            .dataset
            .as_deref()
            .ok_or_else(|| CliError::Usage("no dataset given (use --dataset or `dataset` in the config)".into()))?;
        if !p.exists() {
            return Err(CliError::Usage(format!("dataset path {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            seeds: self.seeds.clone(),
            model: self.file.model.clone(),
            train: self.file.train.clone(),
            split: self.file.split,
            scale_ladder: self.file.scale_ladder.clone().unwrap_or_else(|| DEFAULT_SCALE_LADDER.to_vec()),
            sweep: self.file.sweep.clone(),
            record_timing: self.file.record_timing,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = FileConfig {
            seeds: Some(vec![7, 8, 9]),
            ..FileConfig::default()
        };
        let r = Resolved::new(file.clone(), &Overrides::default()).unwrap();
        assert_eq!(r.seeds, vec![7, 8, 9]);
        let o = Overrides {
            seed: Some(100),
            beta: Some(0.3),
            ..Overrides::default()
        };
        let r = Resolved::new(file, &o).unwrap();
        assert_eq!(r.seeds, vec![100, 101, 102]);
        assert_eq!(r.file.train.beta, 0.3);
    }

    #[test]
    fn out_of_range_beta_is_rejected() {
        let o = Overrides {
            beta: Some(1.5),
            ..Overrides::default()
        };
        assert!(matches!(Resolved::new(FileConfig::default(), &o), Err(CliError::Core(_))));
    }

    #[test]
    fn schema_version_is_required() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"train": {"epochs": 3}}"#).unwrap();
        assert!(matches!(FileConfig::load(&p), Err(CliError::Usage(_))));
        fs::write(&p, r#"{"schema_version": 1, "dataset": "d", "train": {"epochs": 3}}"#).unwrap();
        let cfg = FileConfig::load(&p).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.dataset.unwrap(), dir.path().join("d"));
    }
}
