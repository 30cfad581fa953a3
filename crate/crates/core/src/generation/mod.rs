//! Stage 3: two linear adapters turn the aligned and tertiary embeddings
//! into soft prompts, which sit between `<Protein>` and `</Protein>` ahead
//! of the question in a small causal decoder's input stream.

mod decoder;
mod prompt;

use plp_tensor::nn::Linear;
use plp_tensor::{AdamW, Module, Param, Precision, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use decoder::{Decoder, DecoderBlock};
pub use prompt::{assemble_prompt, PromptSequence, StreamLayout, PROMPT_MAGIC};

use crate::corpus::Tokenizer;
use crate::error::{Error, Result};
use crate::rng::{rng, tag};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    Greedy,
    TopK { k: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub d_lm: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    /// Taken from the tokenizer at build time.
    #[serde(skip)]
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub mode: GenerationMode,
    pub max_new_tokens: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            d_lm: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_mult: 4,
            vocab_size: 0,
            max_seq_len: 160,
            mode: GenerationMode::Greedy,
            max_new_tokens: 32,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("decoder: {m}")));
        if self.n_heads == 0 || !self.d_lm.is_multiple_of(self.n_heads) {
            return bad("d_lm must be divisible by n_heads");
        }
        if self.n_layers == 0 || self.ffn_mult == 0 || self.max_seq_len == 0 {
            return bad("n_layers, ffn_mult and max_seq_len must be positive");
        }
        if self.vocab_size < crate::corpus::SPECIAL_TOKENS.len() {
            return bad("vocab_size is smaller than the reserved vocabulary");
        }
        if let GenerationMode::TopK { k: 0, .. } = self.mode {
            return bad("top-k sampling needs k ≥ 1");
        }
        Ok(())
    }
}

/// Two independent linear maps `d_model → d_lm`.
#[derive(Clone, Debug)]
pub struct Adapter {
    pub fc_align: Linear,
    pub fc_ter: Linear,
}

impl Adapter {
    pub fn new(d_model: usize, d_lm: usize, seed: u64) -> Self {
        let mut r = rng(seed, tag("adapter"));
        Adapter {
            fc_align: Linear::new("adapter.fc_align", d_model, d_lm, true, &mut r),
            fc_ter: Linear::new("adapter.fc_ter", d_model, d_lm, true, &mut r),
        }
    }

    pub fn d_lm(&self) -> usize {
        self.fc_align.d_out()
    }

    /// Off-tape prompts for inference.
    pub fn prompts(&self, e_align: &Tensor, e_ter_proj: &Tensor, precision: Precision) -> Result<Tensor> {
        let mut tape = Tape::new(precision);
        let a = tape.constant(e_align)?;
        let t = tape.constant(e_ter_proj)?;
        let p = project_prompts(&mut tape, self, a, t)?;
        Ok(tape.tensor(p))
    }
}

impl Module for Adapter {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.fc_align.params();
        v.extend(self.fc_ter.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fc_align.params_mut();
        v.extend(self.fc_ter.params_mut());
        v
    }
}

/// Rows `0..q` are `fc_align(e_align)`, rows `q..2q` are
/// `fc_ter(e_ter_proj)`.
pub fn project_prompts(tape: &mut Tape, adapter: &Adapter, e_align: Var, e_ter_proj: Var) -> Result<Var> {
    if tape.shape(e_align) != tape.shape(e_ter_proj) {
        return Err(Error::contract(format!(
            "aligned {:?} and tertiary {:?} embeddings differ in shape",
            tape.shape(e_align),
            tape.shape(e_ter_proj)
        )));
    }
    let a = adapter.fc_align.forward(tape, e_align)?;
    let t = adapter.fc_ter.forward(tape, e_ter_proj)?;
    Ok(tape.vstack(&[a, t])?)
}

/// One instruction pair with its frozen protein embeddings. `answer`
/// includes the terminating [EOS].
#[derive(Clone, Copy, Debug)]
pub struct TuneExample<'a> {
    pub e_align: &'a Tensor,
    pub e_ter_proj: &'a Tensor,
    pub question: &'a [usize],
    pub answer: &'a [usize],
}

/// Decoder logits over the whole stream for one example, with the
/// next-token targets that the answer-only objective uses (`None` outside
/// the answer).
pub fn lm_logits(
    tape: &mut Tape,
    decoder: &Decoder,
    adapter: &Adapter,
    ex: &TuneExample<'_>,
) -> Result<(Var, Vec<Option<usize>>)> {
    let a = tape.constant(ex.e_align)?;
    let t = tape.constant(ex.e_ter_proj)?;
    let prompts = project_prompts(tape, adapter, a, t)?;
    let n_prompts = tape.shape(prompts)[0];
    let layout = StreamLayout::new(n_prompts, ex.question.len(), ex.answer);
    let x = decoder.embed_stream(tape, prompts, ex.question, ex.answer)?;
    let logits = decoder.forward(tape, x)?;
    Ok((logits, layout.loss_targets()))
}

/// Mean answer-token cross-entropy over the batch.
pub fn lm_loss(tape: &mut Tape, decoder: &Decoder, adapter: &Adapter, batch: &[TuneExample<'_>]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::contract("tuning batch is empty"));
    }
    let mut rows = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for ex in batch {
        if ex.answer.is_empty() {
            return Err(Error::contract("tuning example has no answer tokens"));
        }
        let (logits, t) = lm_logits(tape, decoder, adapter, ex)?;
        // only the rows that predict answer tokens carry loss
        let first = t.iter().position(Option::is_some).expect("answer is non-empty");
        let n = ex.answer.len();
        rows.push(tape.slice_rows(logits, first, n)?);
        targets.extend(t[first..first + n].iter().copied());
    }
    let all = tape.vstack(&rows)?;
    Ok(tape.cross_entropy(all, &targets)?)
}

/// One step on the adapter, and on the decoder when it is trainable.
/// Frozen parameters are left bit-identical.
pub fn lm_tune_step(
    decoder: &mut Decoder,
    adapter: &mut Adapter,
    opt: &mut AdamW,
    batch: &[TuneExample<'_>],
    lr: f64,
    precision: Precision,
) -> Result<f64> {
    let mut tape = Tape::new(precision);
    let loss = lm_loss(&mut tape, decoder, adapter, batch)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    let mut params = adapter.params_mut();
    params.extend(decoder.params_mut());
    grads.store_into(params);
    let mut params = adapter.params_mut();
    params.extend(decoder.params_mut());
    opt.step(params, lr)?;
    Ok(value)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    pub truncated: bool,
}

/// Autoregressive continuation of `prompt` (whose answer region must be
/// empty). Stops at [EOS], which is not returned; hitting
/// `max_new_tokens` or the decoder's context length sets `truncated`.
pub fn generate(
    prompt: &PromptSequence,
    decoder: &Decoder,
    mode: &GenerationMode,
    max_new_tokens: usize,
    precision: Precision,
) -> Result<Generation> {
    if !prompt.answer.is_empty() {
        return Err(Error::contract("generation prompt must have an empty answer region"));
    }
    let mut sampler = match mode {
        GenerationMode::Greedy => None,
        GenerationMode::TopK { k, seed } => {
            if *k == 0 {
                return Err(Error::contract("top-k sampling needs k ≥ 1"));
            }
            Some((*k, rng(*seed, tag("generate"))))
        }
    };
    let mut tokens = Vec::new();
    loop {
        if tokens.len() >= max_new_tokens || prompt.stream_len() + tokens.len() >= decoder.config().max_seq_len {
            return Ok(Generation { tokens, truncated: true });
        }
        let mut tape = Tape::new(precision);
        let p = tape.constant(&prompt.protein_prompts)?;
        let x = decoder.embed_stream(&mut tape, p, &prompt.question, &tokens)?;
        let logits = decoder.forward(&mut tape, x)?;
        let v = decoder.config().vocab_size;
        let data = tape.data(logits);
        let last = &data[data.len() - v..];
        let next = match &mut sampler {
            None => argmax(last),
            Some((k, r)) => sample_top_k(last, *k, r),
        };
        if next == Tokenizer::EOS {
            return Ok(Generation { tokens, truncated: false });
        }
        tokens.push(next);
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_top_k(logits: &[f64], k: usize, r: &mut impl Rng) -> usize {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(k.min(logits.len()));
    let m = logits[order[0]];
    let w: Vec<f64> = order.iter().map(|&i| (logits[i] - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = r.gen::<f64>() * total;
    for (&i, &wi) in order.iter().zip(&w) {
        if u < wi {
            return i;
        }
        u -= wi;
    }
    *order.last().expect("k ≥ 1")
}

/// One line of a generation transcript.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub protein_id: String,
    pub question: String,
    pub answer: String,
    pub truncated: bool,
}

pub fn write_transcripts(records: &[TranscriptRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("serialisable"));
        s.push('\n');
    }
    s
}

pub fn read_transcripts(text: &str) -> Result<Vec<TranscriptRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
