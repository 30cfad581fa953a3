use std::path::PathBuf;

use log::{info, warn};
use plp_tensor::{AdamW, Checkpoint, Module, Precision, Tensor};
use rand::seq::index::sample;

use super::{
    inputs_hash, load_checkpoint, load_module, param_hash, prepare, record_inputs, store_module, write_atomic, Paths,
    ProteinInputs, Stage,
};
use crate::align::{align_train_step, AlignExample, AlignModel};
use crate::config::{RunConfig, StageConfig};
use crate::corpus::Tokenizer;
use crate::error::{Error, Result};
use crate::generation::{lm_tune_step, Adapter, Decoder, DecoderConfig, TuneExample};
use crate::plp::{plp_pretrain_step, PlpConfig, PlpExample, PlpFormer};
use crate::rng::{derive_seed, rng, tag};

const OPTIM_PREFIX: &str = "optim.";

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Continue from the stage checkpoint when one exists.
    pub resume: bool,
    /// Stop after this many total steps (the schedule still spans the
    /// configured step count).
    pub stop_after: Option<u64>,
}

/// Hashes of one module taken before and after a stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashCheck {
    pub module: String,
    pub before: String,
    pub after: String,
}

impl HashCheck {
    pub fn unchanged(&self) -> bool {
        self.before == self.after
    }
}

#[derive(Clone, Debug)]
pub struct StageReport {
    pub stage: Stage,
    pub steps_done: u64,
    pub last_loss: Option<f64>,
    pub skipped_records: usize,
    pub frozen: Vec<HashCheck>,
    pub trained: Vec<HashCheck>,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

struct LossRow {
    parts: Option<[f64; 3]>,
    total: f64,
}

impl LossRow {
    fn line(&self, step: u64, lr: f64) -> String {
        match self.parts {
            Some([a, b, c]) => format!("{step}\t{lr:e}\t{a:e}\t{b:e}\t{c:e}\t{:e}", self.total),
            None => format!("{step}\t{lr:e}\t-\t-\t-\t{:e}", self.total),
        }
    }
}

trait Trainer {
    fn step(&mut self, batch: &[usize], lr: f64) -> Result<LossRow>;
    fn checkpoint(&self) -> Checkpoint;
    /// Restores parameters and optimizer state; returns completed steps.
    fn restore(&mut self, ckpt: &Checkpoint, source: &std::path::Path) -> Result<u64>;
}

fn with_optimizer(ckpt: &mut Checkpoint, opt: &AdamW) {
    for (name, t) in opt.state_tensors(OPTIM_PREFIX) {
        ckpt.push(name, t);
    }
}

fn restore_optimizer(opt: &mut AdamW, ckpt: &Checkpoint) -> Result<u64> {
    opt.load_state(OPTIM_PREFIX, ckpt.iter())?;
    Ok(opt.step_count())
}

/// Distinct item indices for one step, drawn from `(seed, stage, step)`.
fn batch_indices(seed: u64, stage: Stage, step: u64, n: usize, batch_size: usize) -> Vec<usize> {
    let mut r = rng(derive_seed(seed, step), tag(stage.name()));
    sample(&mut r, n, batch_size.min(n)).into_vec()
}

struct LoopOutcome {
    steps_done: u64,
    last_loss: Option<f64>,
}

fn save(trainer: &dyn Trainer, paths: &Paths, stage: Stage, lines: &[String]) -> Result<()> {
    let ckpt = trainer.checkpoint();
    let mut bytes = Vec::new();
    ckpt.write_to(&mut bytes)?;
    write_atomic(&paths.checkpoint(stage), &bytes)?;
    let mut log = lines.join("\n");
    if !log.is_empty() {
        log.push('\n');
    }
    write_atomic(&paths.loss_log(stage), log.as_bytes())
}

fn train_loop(
    trainer: &mut dyn Trainer,
    stage: Stage,
    sc: &StageConfig,
    cfg: &RunConfig,
    n_items: usize,
    opts: RunOptions,
) -> Result<LoopOutcome> {
    let paths = Paths::new(cfg);
    let ckpt_path = paths.checkpoint(stage);
    let mut lines: Vec<String> = Vec::new();
    let mut start = 0;
    if opts.resume && ckpt_path.exists() {
        let ckpt = load_checkpoint(&ckpt_path, stage.name())?;
        start = trainer.restore(&ckpt, &ckpt_path)?;
        let log = std::fs::read_to_string(paths.loss_log(stage))?;
        lines = log.lines().take(start as usize).map(str::to_string).collect();
        if lines.len() as u64 != start {
            return Err(Error::contract(format!(
                "{}: loss log has {} lines but the checkpoint is at step {start}",
                stage.name(),
                lines.len()
            )));
        }
        info!("{}: resuming at step {start}", stage.name());
    }
    let end = opts.stop_after.map_or(sc.steps, |s| s.min(sc.steps));
    let mut last_good = start;
    let mut last_loss = None;
    for step in start + 1..=end {
        let batch = batch_indices(cfg.seed, stage, step, n_items, sc.batch_size);
        let lr = sc.lr(step);
        let row = trainer.step(&batch, lr).map_err(|e| {
            if e.is_numeric() {
                Error::Numeric(format!(
                    "{} step {step}: {e}; last good checkpoint is step {last_good}",
                    stage.name()
                ))
            } else {
                e
            }
        })?;
        if !row.total.is_finite() {
            return Err(Error::Numeric(format!(
                "{} step {step}: loss is {}; last good checkpoint is step {last_good}",
                stage.name(),
                row.total
            )));
        }
        lines.push(row.line(step, lr));
        last_loss = Some(row.total);
        if step % sc.checkpoint_every == 0 || step == end {
            save(trainer, &paths, stage, &lines)?;
            last_good = step;
        }
    }
    if start >= end && !ckpt_path.exists() {
        save(trainer, &paths, stage, &lines)?;
    }
    Ok(LoopOutcome {
        steps_done: end.max(start),
        last_loss,
    })
}

fn check(module: &str, before: String, after: String) -> HashCheck {
    HashCheck {
        module: module.to_string(),
        before,
        after,
    }
}

fn ensure_frozen(stage: Stage, checks: &[HashCheck]) -> Result<()> {
    for c in checks {
        if !c.unchanged() {
            return Err(Error::contract(format!("{}: frozen module {} changed", stage.name(), c.module)));
        }
    }
    Ok(())
}

pub(crate) fn plp_config(cfg: &RunConfig, tok: &Tokenizer) -> PlpConfig {
    PlpConfig {
        vocab_size: tok.vocab_size(),
        c_seq: cfg.encoder.c_seq,
        ..cfg.plp.clone()
    }
}

pub(crate) fn decoder_config(cfg: &RunConfig, tok: &Tokenizer) -> DecoderConfig {
    DecoderConfig {
        vocab_size: tok.vocab_size(),
        ..cfg.decoder.clone()
    }
}

pub(crate) fn init_seed(cfg: &RunConfig, what: &str) -> u64 {
    derive_seed(cfg.seed, tag(what))
}

/// Rounds freshly initialised parameters to what a checkpoint stores, so
/// a model restored from disk equals the one that was saved.
fn quantize<M: Module>(mut m: M) -> M {
    for p in m.params_mut() {
        p.value.round_to(Precision::F32);
    }
    m
}

pub(crate) fn new_plp(cfg: &RunConfig, tok: &Tokenizer) -> Result<PlpFormer> {
    Ok(quantize(PlpFormer::new(&plp_config(cfg, tok), init_seed(cfg, "init.plp"))?))
}

pub(crate) fn new_align(cfg: &RunConfig) -> Result<AlignModel> {
    Ok(quantize(AlignModel::new(
        &cfg.align,
        cfg.plp.n_queries,
        cfg.plp.d_model,
        cfg.encoder.c_ter,
        init_seed(cfg, "init.align"),
    )?))
}

pub(crate) fn new_decoder(cfg: &RunConfig, tok: &Tokenizer) -> Result<Decoder> {
    Ok(quantize(Decoder::new(&decoder_config(cfg, tok), init_seed(cfg, "init.decoder"))?))
}

pub(crate) fn new_adapter(cfg: &RunConfig) -> Adapter {
    quantize(Adapter::new(cfg.plp.d_model, cfg.decoder.d_lm, init_seed(cfg, "init.adapter")))
}

pub(crate) fn load_plp(cfg: &RunConfig, tok: &Tokenizer) -> Result<PlpFormer> {
    let path = Paths::new(cfg).checkpoint(Stage::Pretrain);
    let ckpt = load_checkpoint(&path, "pretraining")?;
    let mut plp = new_plp(cfg, tok)?;
    load_module(&ckpt, &mut plp, &path)?;
    plp.set_trainable(false);
    Ok(plp)
}

pub(crate) fn load_align(cfg: &RunConfig) -> Result<AlignModel> {
    let path = Paths::new(cfg).checkpoint(Stage::Align);
    let ckpt = load_checkpoint(&path, "alignment")?;
    let mut m = new_align(cfg)?;
    load_module(&ckpt, &mut m, &path)?;
    m.set_trainable(false);
    Ok(m)
}

pub(crate) fn load_tuned(cfg: &RunConfig, tok: &Tokenizer) -> Result<(Adapter, Decoder)> {
    let path = Paths::new(cfg).checkpoint(Stage::Tune);
    let ckpt = load_checkpoint(&path, "tuning")?;
    let mut a = new_adapter(cfg);
    let mut d = new_decoder(cfg, tok)?;
    load_module(&ckpt, &mut a, &path)?;
    load_module(&ckpt, &mut d, &path)?;
    a.set_trainable(false);
    d.set_trainable(false);
    Ok((a, d))
}

fn new_optimizer(cfg: &RunConfig) -> AdamW {
    AdamW::new(cfg.optimizer.into(), cfg.precision())
}

struct PretrainTrainer {
    model: PlpFormer,
    opt: AdamW,
    e_seq: Vec<Tensor>,
    words: Vec<Vec<usize>>,
    precision: Precision,
}

impl Trainer for PretrainTrainer {
    fn step(&mut self, batch: &[usize], lr: f64) -> Result<LossRow> {
        let examples: Vec<PlpExample<'_>> = batch
            .iter()
            .map(|&i| PlpExample {
                e_seq: &self.e_seq[i],
                words: &self.words[i],
            })
            .collect();
        let r = plp_pretrain_step(&mut self.model, &mut self.opt, &examples, lr, self.precision)?;
        Ok(LossRow {
            parts: Some([r.ptc, r.ptg, r.ptm]),
            total: r.total,
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        store_module(&mut c, &self.model);
        with_optimizer(&mut c, &self.opt);
        c
    }

    fn restore(&mut self, ckpt: &Checkpoint, source: &std::path::Path) -> Result<u64> {
        load_module(ckpt, &mut self.model, source)?;
        restore_optimizer(&mut self.opt, ckpt)
    }
}

/// Stage 1: the query-token model on (sequence, description) pairs.
pub fn run_pretrain(cfg: &RunConfig, opts: RunOptions) -> Result<StageReport> {
    let prep = prepare(cfg)?;
    let encoder = cfg.encoder.build()?;
    let mut inputs = Vec::new();
    let mut words = Vec::new();
    let mut skipped = 0;
    for rec in prep.train_records() {
        match &rec.description {
            Some(d) if !prep.tokenizer.encode(d).is_empty() => {
                inputs.push(record_inputs(encoder.as_ref(), cfg, rec)?);
                words.push(prep.tokenizer.encode(d));
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("pretrain: skipped {skipped} records without a description");
    }
    if inputs.len() < 2 {
        return Err(Error::contract("pretraining needs at least two described training records"));
    }
    let enc_before = inputs_hash(&inputs);
    let model = new_plp(cfg, &prep.tokenizer)?;
    let plp_before = param_hash(&model);
    let mut t = PretrainTrainer {
        model,
        opt: new_optimizer(cfg),
        e_seq: inputs.iter().map(|i| i.e_seq.clone()).collect(),
        words,
        precision: cfg.precision(),
    };
    let out = train_loop(&mut t, Stage::Pretrain, &cfg.pretrain, cfg, inputs.len(), opts)?;
    let frozen = vec![check("encoder", enc_before, inputs_hash(&inputs))];
    ensure_frozen(Stage::Pretrain, &frozen)?;
    let paths = Paths::new(cfg);
    Ok(StageReport {
        stage: Stage::Pretrain,
        steps_done: out.steps_done,
        last_loss: out.last_loss,
        skipped_records: skipped,
        frozen,
        trained: vec![check("plp", plp_before, param_hash(&t.model))],
        checkpoint: paths.checkpoint(Stage::Pretrain),
        loss_log: paths.loss_log(Stage::Pretrain),
    })
}

struct AlignTrainer {
    model: AlignModel,
    opt: AdamW,
    selected: Vec<Tensor>,
    inputs: Vec<ProteinInputs>,
    precision: Precision,
}

impl Trainer for AlignTrainer {
    fn step(&mut self, batch: &[usize], lr: f64) -> Result<LossRow> {
        let examples: Vec<AlignExample<'_>> = batch
            .iter()
            .map(|&i| AlignExample {
                e_seq_sel: &self.selected[i],
                e_sec: self.inputs[i].e_sec(),
                e_ter: &self.inputs[i].e_ter,
            })
            .collect();
        let total = align_train_step(&mut self.model, &mut self.opt, &examples, lr, self.precision)?;
        Ok(LossRow { parts: None, total })
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        store_module(&mut c, &self.model);
        with_optimizer(&mut c, &self.opt);
        c
    }

    fn restore(&mut self, ckpt: &Checkpoint, source: &std::path::Path) -> Result<u64> {
        load_module(ckpt, &mut self.model, source)?;
        restore_optimizer(&mut self.opt, ckpt)
    }
}

/// Stage 2: gate and tertiary projector on frozen query-token outputs.
/// Records without secondary-structure labels are skipped.
pub fn run_align(cfg: &RunConfig, opts: RunOptions) -> Result<StageReport> {
    let prep = prepare(cfg)?;
    let encoder = cfg.encoder.build()?;
    let plp = load_plp(cfg, &prep.tokenizer)?;
    let plp_before = param_hash(&plp);
    let mut inputs = Vec::new();
    let mut skipped = 0;
    for rec in prep.train_records() {
        if rec.ss8.is_none() {
            skipped += 1;
            continue;
        }
        inputs.push(record_inputs(encoder.as_ref(), cfg, rec)?);
    }
    if skipped > 0 {
        warn!("align: skipped {skipped} records without secondary-structure labels");
    }
    if inputs.len() < 2 {
        return Err(Error::contract("alignment needs at least two training records with ss8 labels"));
    }
    let enc_before = inputs_hash(&inputs);
    let selected = inputs
        .iter()
        .map(|i| plp.select(&i.e_seq, cfg.precision()))
        .collect::<Result<Vec<_>>>()?;
    let model = new_align(cfg)?;
    let align_before = param_hash(&model);
    let n = inputs.len();
    let mut t = AlignTrainer {
        model,
        opt: new_optimizer(cfg),
        selected,
        inputs,
        precision: cfg.precision(),
    };
    let out = train_loop(&mut t, Stage::Align, &cfg.alignment, cfg, n, opts)?;
    let frozen = vec![
        check("encoder", enc_before, inputs_hash(&t.inputs)),
        check("plp", plp_before, param_hash(&plp)),
    ];
    ensure_frozen(Stage::Align, &frozen)?;
    let paths = Paths::new(cfg);
    Ok(StageReport {
        stage: Stage::Align,
        steps_done: out.steps_done,
        last_loss: out.last_loss,
        skipped_records: skipped,
        frozen,
        trained: vec![check("align", align_before, param_hash(&t.model))],
        checkpoint: paths.checkpoint(Stage::Align),
        loss_log: paths.loss_log(Stage::Align),
    })
}

struct TuneItem {
    protein: usize,
    question: Vec<usize>,
    answer: Vec<usize>,
}

struct TuneTrainer {
    decoder: Decoder,
    adapter: Adapter,
    opt: AdamW,
    aligned: Vec<Tensor>,
    projected: Vec<Tensor>,
    items: Vec<TuneItem>,
    precision: Precision,
}

impl Trainer for TuneTrainer {
    fn step(&mut self, batch: &[usize], lr: f64) -> Result<LossRow> {
        let examples: Vec<TuneExample<'_>> = batch
            .iter()
            .map(|&i| {
                let it = &self.items[i];
                TuneExample {
                    e_align: &self.aligned[it.protein],
                    e_ter_proj: &self.projected[it.protein],
                    question: &it.question,
                    answer: &it.answer,
                }
            })
            .collect();
        let total = lm_tune_step(
            &mut self.decoder,
            &mut self.adapter,
            &mut self.opt,
            &examples,
            lr,
            self.precision,
        )?;
        Ok(LossRow { parts: None, total })
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        store_module(&mut c, &self.adapter);
        store_module(&mut c, &self.decoder);
        with_optimizer(&mut c, &self.opt);
        c
    }

    fn restore(&mut self, ckpt: &Checkpoint, source: &std::path::Path) -> Result<u64> {
        load_module(ckpt, &mut self.adapter, source)?;
        load_module(ckpt, &mut self.decoder, source)?;
        restore_optimizer(&mut self.opt, ckpt)
    }
}

/// Aligned and projected embeddings for every input, through frozen
/// stage-1 and stage-2 models.
pub(crate) fn protein_prompts_inputs(
    plp: &PlpFormer,
    align: &AlignModel,
    inputs: &[ProteinInputs],
    precision: Precision,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let mut aligned = Vec::with_capacity(inputs.len());
    let mut projected = Vec::with_capacity(inputs.len());
    for i in inputs {
        let sel = plp.select(&i.e_seq, precision)?;
        aligned.push(align.align(&sel, i.e_sec(), precision)?);
        projected.push(align.project(&i.e_ter, precision)?);
    }
    Ok((aligned, projected))
}

/// Stage 3: the adapter (and the decoder when `tune.train_decoder` is set)
/// on answer-only language-model loss.
pub fn run_tune(cfg: &RunConfig, opts: RunOptions) -> Result<StageReport> {
    let prep = prepare(cfg)?;
    let tok = &prep.tokenizer;
    let encoder = cfg.encoder.build()?;
    let plp = load_plp(cfg, tok)?;
    let align = load_align(cfg)?;
    let (plp_before, align_before) = (param_hash(&plp), param_hash(&align));
    let mut inputs = Vec::new();
    let mut items = Vec::new();
    let mut skipped = 0;
    for rec in prep.train_records() {
        let qa: Vec<_> = rec
            .qa
            .iter()
            .map(|p| (tok.encode(&p.question), tok.encode_with_eos(&p.answer)))
            .filter(|(q, _)| !q.is_empty())
            .collect();
        if qa.is_empty() {
            skipped += 1;
            continue;
        }
        for (question, answer) in qa {
            items.push(TuneItem {
                protein: inputs.len(),
                question,
                answer,
            });
        }
        inputs.push(record_inputs(encoder.as_ref(), cfg, rec)?);
    }
    if skipped > 0 {
        warn!("tune: skipped {skipped} records without question-answer pairs");
    }
    if items.is_empty() {
        return Err(Error::contract("tuning needs at least one question-answer pair"));
    }
    let enc_before = inputs_hash(&inputs);
    let (aligned, projected) = protein_prompts_inputs(&plp, &align, &inputs, cfg.precision())?;
    let mut decoder = new_decoder(cfg, tok)?;
    decoder.set_trainable(cfg.tune.train_decoder);
    let adapter = new_adapter(cfg);
    let (dec_before, ad_before) = (param_hash(&decoder), param_hash(&adapter));
    let n = items.len();
    let mut t = TuneTrainer {
        decoder,
        adapter,
        opt: new_optimizer(cfg),
        aligned,
        projected,
        items,
        precision: cfg.precision(),
    };
    let out = train_loop(&mut t, Stage::Tune, &cfg.tune, cfg, n, opts)?;
    let mut frozen = vec![
        check("encoder", enc_before, inputs_hash(&inputs)),
        check("plp", plp_before, param_hash(&plp)),
        check("align", align_before, param_hash(&align)),
    ];
    let mut trained = vec![check("adapter", ad_before, param_hash(&t.adapter))];
    let dec = check("decoder", dec_before, param_hash(&t.decoder));
    if cfg.tune.train_decoder {
        trained.push(dec);
    } else {
        frozen.push(dec);
    }
    ensure_frozen(Stage::Tune, &frozen)?;
    let paths = Paths::new(cfg);
    Ok(StageReport {
        stage: Stage::Tune,
        steps_done: out.steps_done,
        last_loss: out.last_loss,
        skipped_records: skipped,
        frozen,
        trained,
        checkpoint: paths.checkpoint(Stage::Tune),
        loss_log: paths.loss_log(Stage::Tune),
    })
}
