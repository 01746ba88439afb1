use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adm::{AdmConfig, AdmMode};
use crate::adp::AdpConfig;
use crate::datasets::ToyDataset;
use crate::nnad::DEFAULT_TEMB_DIM;
use crate::scorenets::NetConfig;
use crate::{Error, Result};

/// Teacher architecture and flow-matching schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSettings {
    pub hidden: Vec<usize>,
    pub temb_dim: usize,
    /// Condition on the mixture component index.
    pub conditional: bool,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub cond_drop: f64,
    /// Loss is logged every `log_every` steps.
    pub log_every: u64,
}

impl Default for TeacherSettings {
    fn default() -> Self {
        Self {
            hidden: vec![128; 4],
            temb_dim: DEFAULT_TEMB_DIM,
            conditional: false,
            steps: 20_000,
            batch: 256,
            lr: 1e-3,
            cond_drop: 0.1,
            log_every: 100,
        }
    }
}

impl TeacherSettings {
    pub fn net_config(&self, dataset: &ToyDataset) -> NetConfig {
        NetConfig {
            data_dim: dataset.dim(),
            hidden: self.hidden.clone(),
            temb_dim: self.temb_dim,
            num_classes: self.conditional.then(|| dataset.num_classes()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("teacher needs non-empty hidden layers".into()));
        }
        if self.batch == 0 || self.log_every == 0 {
            return Err(Error::Config("teacher batch and log cadence must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("teacher learning rate must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.cond_drop) {
            return Err(Error::Config("condition drop rate outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Input of the `teach` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeachConfig {
    pub dataset: ToyDataset,
    pub seed: u64,
    pub teacher: TeacherSettings,
}

impl Default for TeachConfig {
    fn default() -> Self {
        Self {
            dataset: ToyDataset::ring8(),
            seed: 0,
            teacher: TeacherSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub n: usize,
    pub steps: usize,
    /// Draw a class label per pair; otherwise every pair uses the null class.
    pub conditional: bool,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            n: 20_000,
            steps: 64,
            conditional: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    /// Euler steps when sampling the teacher.
    pub teacher_steps: usize,
    /// Evaluate during distillation after every `every` generator updates;
    /// 0 evaluates only at the end.
    pub every: u64,
    /// Rows of each exported scatter.
    pub scatter: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            teacher_steps: 64,
            every: 0,
            scatter: 2_000,
        }
    }
}

/// Full pipeline configuration. Stage seeds are derived from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: ToyDataset,
    pub teacher: TeacherSettings,
    pub collect: CollectConfig,
    /// Zero iterations skip pre-training and distill from a teacher clone.
    pub adp: AdpConfig,
    pub adm: AdmConfig,
    pub modes: Vec<AdmMode>,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: ToyDataset::ring8(),
            teacher: TeacherSettings::default(),
            collect: CollectConfig::default(),
            adp: AdpConfig::default(),
            adm: AdmConfig::default(),
            modes: vec![AdmMode::Adm],
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.adp.seed != 0 || self.adm.seed != 0 {
            return Err(Error::Config(
                "stage seeds are derived from the run seed; leave adp.seed and adm.seed unset".into(),
            ));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("at least one distillation mode is required".into()));
        }
        let mut seen = Vec::new();
        for m in &self.modes {
            if seen.contains(m) {
                return Err(Error::Config(format!("mode '{}' listed twice", m.name())));
            }
            seen.push(*m);
        }
        if self.eval.samples == 0 || self.eval.teacher_steps == 0 {
            return Err(Error::Config("eval needs samples and teacher steps ≥ 1".into()));
        }
        if self.collect.n == 0 || self.collect.steps == 0 {
            return Err(Error::Config("collection needs n and steps ≥ 1".into()));
        }
        if self.collect.conditional && !self.teacher.conditional {
            return Err(Error::Config("conditional pairs need a conditional teacher".into()));
        }
        self.teacher.validate()?;
        self.adp.validate()
    }
}

/// Strictly parses a JSON config file.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Short hash of the canonical (key-sorted) JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    Ok(sha256_hex(canonical.as_bytes())[..16].to_string())
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Rejected(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}
