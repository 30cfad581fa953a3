//! Staged training, evaluation, chat and embedding precompute over one
//! output directory:
//!
//! ```text
//! <output_dir>/tokenizer.json  split.json
//! <output_dir>/stage1/plp.ckpt    stage1/loss.tsv
//! <output_dir>/stage2/align.ckpt  stage2/loss.tsv
//! <output_dir>/stage3/tune.ckpt   stage3/loss.tsv
//! <output_dir>/eval/report.json   eval/transcripts.jsonl
//! ```

mod serve;
mod train;

use std::io::Write;
use std::path::{Path, PathBuf};

use plp_tensor::{Checkpoint, Module, Tensor};
use sha2::{Digest, Sha256};

pub use serve::{precompute, read_protein, run_eval, ChatSession, Models, PrecomputeInput};
pub use train::{run_align, run_pretrain, run_tune, HashCheck, RunOptions, StageReport};

use crate::config::RunConfig;
use crate::corpus::{load_instruction_file, split_dataset, DatasetSplit, ProteinRecord, Tokenizer};
use crate::encoders::{load_embeddings, ss8_features, trim_window, AminoAcidSequence, ProteinEncoder};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, tag};

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(cfg: &RunConfig) -> Self {
        Paths {
            root: cfg.output_dir.clone(),
        }
    }

    pub fn tokenizer(&self) -> PathBuf {
        self.root.join("tokenizer.json")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn checkpoint(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.dir()).join(stage.checkpoint_name())
    }

    pub fn loss_log(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.dir()).join("loss.tsv")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("eval").join("report.json")
    }

    pub fn transcripts(&self) -> PathBuf {
        self.root.join("eval").join("transcripts.jsonl")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Align,
    Tune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Align => "align",
            Stage::Tune => "tune",
        }
    }

    fn dir(self) -> &'static str {
        match self {
            Stage::Pretrain => "stage1",
            Stage::Align => "stage2",
            Stage::Tune => "stage3",
        }
    }

    fn checkpoint_name(self) -> &'static str {
        match self {
            Stage::Pretrain => "plp.ckpt",
            Stage::Align => "align.ckpt",
            Stage::Tune => "tune.ckpt",
        }
    }
}

/// Corpus, split and tokenizer shared by every command.
pub struct Prepared {
    pub records: Vec<ProteinRecord>,
    pub split: DatasetSplit,
    pub tokenizer: Tokenizer,
}

impl Prepared {
    pub fn train_records(&self) -> Vec<&ProteinRecord> {
        self.select(&self.split.train)
    }

    pub fn eval_records(&self) -> Vec<&ProteinRecord> {
        self.select(&self.split.eval)
    }

    fn select(&self, ids: &[String]) -> Vec<&ProteinRecord> {
        let wanted: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.records.iter().filter(|r| wanted.contains(r.id.as_str())).collect()
    }
}

/// Loads the corpus, splits it and builds the tokenizer from the training
/// texts. Both derived artifacts are rewritten on every call; they are pure
/// functions of the config and corpus.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let records = load_instruction_file(&cfg.data.instructions)?;
    if records.is_empty() {
        return Err(Error::contract(format!(
            "{} contains no records",
            cfg.data.instructions.display()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::contract(format!("duplicate record id `{}`", r.id)));
        }
    }
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let split = split_dataset(&ids, cfg.data.eval_count, derive_seed(cfg.seed, tag("split")))?;
    let train: std::collections::HashSet<&str> = split.train.iter().map(String::as_str).collect();
    let mut texts: Vec<&str> = Vec::new();
    for r in records.iter().filter(|r| train.contains(r.id.as_str())) {
        texts.extend(r.description.as_deref());
        for p in &r.qa {
            texts.push(&p.question);
            texts.push(&p.answer);
        }
    }
    let tokenizer = Tokenizer::build(texts, cfg.data.max_vocab)?;
    let prepared = Prepared {
        records,
        split,
        tokenizer,
    };
    let paths = Paths::new(cfg);
    write_atomic(&paths.tokenizer(), prepared.tokenizer.to_json().as_bytes())?;
    let mut split_json = serde_json::to_string_pretty(&prepared.split)?;
    split_json.push('\n');
    write_atomic(&paths.split(), split_json.as_bytes())?;
    Ok(prepared)
}

/// Frozen encoder outputs for one protein, trimmed to the residue budget.
#[derive(Clone, Debug)]
pub struct ProteinInputs {
    pub id: String,
    pub e_seq: Tensor,
    /// Secondary features from the encoder.
    pub e_sec_encoder: Tensor,
    /// One-hot labels when the record carries them.
    pub e_sec_labels: Option<Tensor>,
    pub e_ter: Tensor,
}

impl ProteinInputs {
    /// Labels when present, encoder features otherwise.
    pub fn e_sec(&self) -> &Tensor {
        self.e_sec_labels.as_ref().unwrap_or(&self.e_sec_encoder)
    }
}

fn slice_rows(t: &Tensor, range: std::ops::Range<usize>) -> Result<Tensor> {
    let c = t.cols();
    Ok(Tensor::new([range.len(), c], t.data()[range.start * c..range.end * c].to_vec())?)
}

pub fn encode_inputs(
    encoder: &dyn ProteinEncoder,
    cfg: &RunConfig,
    seq: &AminoAcidSequence,
    ss8: Option<&str>,
    ter_path: Option<&Path>,
) -> Result<ProteinInputs> {
    let window = trim_window(seq.id(), seq.len(), cfg.data.max_residues, cfg.seed)?;
    let trimmed = AminoAcidSequence::new(seq.id(), &seq.residues()[window.clone()])?;
    let emb = encoder.encode(&trimmed)?;
    let e_ter = match ter_path {
        Some(p) => {
            let full = load_embeddings(p)?;
            if full.len() != seq.len() || full.c_ter() != encoder.spec().c_ter {
                return Err(Error::contract(format!(
                    "{}: tertiary embeddings are {}×{}, expected {}×{}",
                    p.display(),
                    full.len(),
                    full.c_ter(),
                    seq.len(),
                    encoder.spec().c_ter
                )));
            }
            slice_rows(&full.e_ter, window.clone())?
        }
        None => emb.e_ter.clone(),
    };
    let e_sec_labels = ss8.map(|s| ss8_features(&s[window])).transpose()?;
    Ok(ProteinInputs {
        id: seq.id().to_string(),
        e_seq: emb.e_seq,
        e_sec_encoder: emb.e_sec,
        e_sec_labels,
        e_ter,
    })
}

pub fn record_inputs(encoder: &dyn ProteinEncoder, cfg: &RunConfig, rec: &ProteinRecord) -> Result<ProteinInputs> {
    encode_inputs(encoder, cfg, &rec.sequence, rec.ss8.as_deref(), rec.ter_path.as_deref())
}

/// SHA-256 over parameter names, shapes and values.
pub fn param_hash(module: &dyn Module) -> String {
    let mut h = Sha256::new();
    for p in module.params() {
        h.update(p.name().as_bytes());
        h.update([0]);
        for &d in p.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &x in p.value.data() {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// SHA-256 over a set of encoder outputs.
pub fn inputs_hash(inputs: &[ProteinInputs]) -> String {
    let mut h = Sha256::new();
    for i in inputs {
        h.update(i.id.as_bytes());
        h.update([0]);
        for t in [&i.e_seq, &i.e_sec_encoder, &i.e_ter] {
            for &x in t.data() {
                h.update(x.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

pub fn store_module(ckpt: &mut Checkpoint, module: &dyn Module) {
    for p in module.params() {
        ckpt.push(p.name(), p.value.clone().with_requires_grad(false));
    }
}

/// Copies every parameter of `module` out of `ckpt`, checking shapes.
pub fn load_module(ckpt: &Checkpoint, module: &mut dyn Module, source: &Path) -> Result<()> {
    for p in module.params_mut() {
        let t = ckpt.get(p.name()).ok_or_else(|| {
            Error::contract(format!("{} has no parameter `{}`", source.display(), p.name()))
        })?;
        if t.shape() != p.shape() {
            return Err(Error::contract(format!(
                "{}: `{}` has shape {:?}, model expects {:?}",
                source.display(),
                p.name(),
                t.shape(),
                p.shape()
            )));
        }
        p.value.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path, what: &str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::NotFound(format!("{what} checkpoint {}", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}
