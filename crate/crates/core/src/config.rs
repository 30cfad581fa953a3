//! Run configuration: one TOML file covering every stage, with dotted-key
//! overrides applied before validation.

use std::path::{Path, PathBuf};

use plp_tensor::{AdamWConfig, CosineSchedule, Precision};
use serde::{Deserialize, Serialize};

use crate::align::AlignConfig;
use crate::encoders::{EncoderKind, EncoderSpec};
use crate::error::{Error, Result};
use crate::eval::{CiderConfig, MeteorConfig};
use crate::generation::DecoderConfig;
use crate::plp::PlpConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable naming the default config path.
pub const CONFIG_ENV: &str = "PROTCHAT_CONFIG";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionSetting {
    #[default]
    F32,
    F64,
}

impl From<PrecisionSetting> for Precision {
    fn from(p: PrecisionSetting) -> Precision {
        match p {
            PrecisionSetting::F32 => Precision::F32,
            PrecisionSetting::F64 => Precision::F64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Line-delimited instruction records.
    pub instructions: PathBuf,
    #[serde(default)]
    pub eval_count: usize,
    #[serde(default = "default_max_vocab")]
    pub max_vocab: usize,
    #[serde(default = "default_max_residues")]
    pub max_residues: usize,
}

fn default_max_vocab() -> usize {
    4000
}

fn default_max_residues() -> usize {
    3000
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        OptimizerConfig {
            beta1: a.beta1,
            beta2: a.beta2,
            weight_decay: a.weight_decay,
            eps: a.eps,
        }
    }
}

impl From<OptimizerConfig> for AdamWConfig {
    fn from(o: OptimizerConfig) -> AdamWConfig {
        AdamWConfig {
            beta1: o.beta1,
            beta2: o.beta2,
            weight_decay: o.weight_decay,
            eps: o.eps,
        }
    }
}

/// Step budget and learning-rate schedule of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    /// Only read by the tuning stage.
    #[serde(default)]
    pub train_decoder: bool,
}

fn default_checkpoint_every() -> u64 {
    1000
}

impl StageConfig {
    fn with(steps: u64, batch_size: usize, min_lr: f64, warmup: u64) -> Self {
        StageConfig {
            steps,
            batch_size,
            peak_lr: 1e-4,
            min_lr,
            warmup,
            checkpoint_every: default_checkpoint_every(),
            train_decoder: false,
        }
    }

    pub fn schedule(&self) -> CosineSchedule {
        CosineSchedule {
            peak: self.peak_lr,
            min_lr: self.min_lr,
            warmup: self.warmup,
            total: self.steps,
        }
    }

    /// Rate used for 1-based `step`; the schedule's step 0 (lr = 0 under
    /// warmup) is never taken.
    pub fn lr(&self, step: u64) -> f64 {
        self.schedule().lr(step)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{name}: {m}")));
        if self.steps == 0 || self.checkpoint_every == 0 {
            return bad("steps and checkpoint_every must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.peak_lr > 0.0) || !(self.min_lr > 0.0) || self.min_lr > self.peak_lr {
            return bad("need 0 < min_lr ≤ peak_lr");
        }
        if self.warmup >= self.steps {
            return bad("warmup must be shorter than steps");
        }
        Ok(())
    }
}

fn default_pretrain() -> StageConfig {
    StageConfig::with(20_000, 64, 8e-5, 5000)
}

fn default_alignment() -> StageConfig {
    StageConfig::with(20_000, 64, 5e-5, 5000)
}

fn default_tune() -> StageConfig {
    StageConfig::with(1000, 128, 5e-5, 100)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    #[default]
    Eval,
    All,
}

impl std::str::FromStr for SplitChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitChoice::Train),
            "eval" => Ok(SplitChoice::Eval),
            "all" => Ok(SplitChoice::All),
            _ => Err(Error::Config(format!("unknown split {s:?} (train, eval or all)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: SplitChoice,
    /// Candidates re-scored by the matching head.
    pub k_rank: usize,
    pub meteor: MeteorConfig,
    pub cider: CiderConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: SplitChoice::Eval,
            k_rank: 16,
            meteor: MeteorConfig::default(),
            cider: CiderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub precision: PrecisionSetting,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub plp: PlpConfig,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_pretrain")]
    pub pretrain: StageConfig,
    #[serde(default = "default_alignment")]
    pub alignment: StageConfig,
    #[serde(default = "default_tune")]
    pub tune: StageConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_override_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Applies `a.b.c=value` to a TOML tree, creating tables as needed.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_override_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies overrides, resolves relative paths against
    /// `base_dir` and validates.
    pub fn from_toml(text: &str, overrides: &[String], base_dir: &Path) -> Result<RunConfig> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, overrides, base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.instructions);
        if let Some(p) = &mut self.encoder.path {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn precision(&self) -> Precision {
        self.precision.into()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !self.data.instructions.is_file() {
            return Err(Error::Config(format!(
                "instruction file {} does not exist",
                self.data.instructions.display()
            )));
        }
        if self.data.max_residues == 0 {
            return Err(Error::Config("data.max_residues must be positive".into()));
        }
        if self.data.max_vocab <= crate::corpus::SPECIAL_TOKENS.len() {
            return Err(Error::Config("data.max_vocab leaves no room for words".into()));
        }
        self.encoder.validate()?;
        // widths that come from the data are filled in with placeholders
        let mut plp = self.plp.clone();
        plp.vocab_size = self.data.max_vocab;
        plp.c_seq = self.encoder.c_seq;
        plp.validate()?;
        self.align.validate()?;
        let mut dec = self.decoder.clone();
        dec.vocab_size = self.data.max_vocab;
        dec.validate()?;
        self.pretrain.validate("pretrain")?;
        self.alignment.validate("alignment")?;
        self.tune.validate("tune")?;
        if self.eval.k_rank == 0 {
            return Err(Error::Config("eval.k_rank must be positive".into()));
        }
        if self.encoder.kind == EncoderKind::File && self.encoder.path.is_none() {
            return Err(Error::Config("file encoder needs a path".into()));
        }
        Ok(())
    }
}
