//! Query-token transformer pretrained with contrastive (PTC), generative
//! (PTG) and matching (PTM) objectives.

mod losses;
mod model;

use serde::{Deserialize, Serialize};

pub use losses::{
    hard_negatives, plp_losses, plp_pretrain_step, ptc_loss, ptc_loss_from_similarity, ptc_similarity, ptg_loss,
    ptm_logit, ptm_loss, LossReport, PlpExample, PlpLosses,
};
pub use model::{plp_forward, PlpFormer, PlpLayer, ProteinContext};

use crate::corpus::Tokenizer;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlpConfig {
    pub n_queries: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    /// Taken from the tokenizer at build time.
    #[serde(skip)]
    pub vocab_size: usize,
    /// Taken from the encoder spec at build time.
    #[serde(skip)]
    pub c_seq: usize,
    pub max_text_len: usize,
    pub cross_attention_every: usize,
    pub ptc_temperature: f64,
    pub w_ptc: f64,
    pub w_ptg: f64,
    pub w_ptm: f64,
}

impl Default for PlpConfig {
    fn default() -> Self {
        PlpConfig {
            n_queries: 32,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            ffn_mult: 4,
            vocab_size: 0,
            c_seq: 768,
            max_text_len: 32,
            cross_attention_every: 1,
            ptc_temperature: 0.07,
            w_ptc: 1.0,
            w_ptg: 1.0,
            w_ptm: 1.0,
        }
    }
}

impl PlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("plp: {m}")));
        if self.n_queries == 0 {
            return bad("n_queries must be at least 1");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.n_layers == 0 || self.ffn_mult == 0 || self.cross_attention_every == 0 {
            return bad("n_layers, ffn_mult and cross_attention_every must be positive");
        }
        if self.vocab_size < crate::corpus::SPECIAL_TOKENS.len() {
            return bad("vocab_size is smaller than the reserved vocabulary");
        }
        if self.c_seq == 0 {
            return bad("c_seq must be positive");
        }
        if self.max_text_len < 2 {
            return bad("max_text_len must leave room for the leading token and one word");
        }
        if !(self.ptc_temperature > 0.0) {
            return bad("ptc_temperature must be positive");
        }
        let w = [self.w_ptc, self.w_ptg, self.w_ptm];
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || w.iter().all(|&x| x == 0.0) {
            return bad("loss weights must be non-negative, finite, and not all zero");
        }
        Ok(())
    }
}

/// Which [queries ∥ text] pairs may attend to each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionMaskMode {
    /// Queries see queries, text sees text (bidirectionally).
    Unimodal,
    /// Queries see queries; text position i sees all queries and text ≤ i.
    MultimodalCausal,
    /// Everything sees everything.
    Bidirectional,
}

impl AttentionMaskMode {
    pub const ALL: [AttentionMaskMode; 3] = [
        AttentionMaskMode::Unimodal,
        AttentionMaskMode::MultimodalCausal,
        AttentionMaskMode::Bidirectional,
    ];

    /// Whether position `i` may attend to position `j`, ignoring padding.
    /// Positions below `n_queries` are query rows.
    pub fn allows(self, n_queries: usize, i: usize, j: usize) -> bool {
        let (qi, qj) = (i < n_queries, j < n_queries);
        match self {
            AttentionMaskMode::Bidirectional => true,
            AttentionMaskMode::Unimodal => qi == qj,
            AttentionMaskMode::MultimodalCausal => {
                if qi {
                    qj
                } else {
                    qj || j <= i
                }
            }
        }
    }

    /// Row-major `[(q+L)×(q+L)]` pattern; pad keys are never attended.
    pub fn allowed(self, n_queries: usize, text: &[usize]) -> Vec<bool> {
        let n = n_queries + text.len();
        let mut m = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                let pad = j >= n_queries && text[j - n_queries] == Tokenizer::PAD;
                m[i * n + j] = !pad && self.allows(n_queries, i, j);
            }
        }
        m
    }
}

/// Token rows `[B×L]`, each starting with exactly one [CLS] or [DEC] and
/// right-padded with [PAD].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextBatch {
    rows: Vec<Vec<usize>>,
    len: usize,
}

impl TextBatch {
    pub fn new(rows: Vec<Vec<usize>>) -> Result<Self> {
        let len = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = Vec::with_capacity(rows.len());
        for (b, mut r) in rows.into_iter().enumerate() {
            let lead = r.first().copied();
            if !matches!(lead, Some(Tokenizer::CLS) | Some(Tokenizer::DEC)) {
                return Err(Error::contract(format!("text row {b} does not start with [CLS] or [DEC]")));
            }
            if r[1..].iter().any(|&t| t == Tokenizer::CLS || t == Tokenizer::DEC) {
                return Err(Error::contract(format!("text row {b} has more than one leading token")));
            }
            if let Some(p) = r.iter().position(|&t| t == Tokenizer::PAD) {
                if r[p..].iter().any(|&t| t != Tokenizer::PAD) {
                    return Err(Error::contract(format!("text row {b} has tokens after padding")));
                }
            }
            r.resize(len, Tokenizer::PAD);
            out.push(r);
        }
        Ok(TextBatch { rows: out, len })
    }

    /// `[lead] + words + [EOS]`, words truncated so the row fits `max_len`.
    pub fn row(lead: usize, words: &[usize], max_len: usize) -> Vec<usize> {
        let keep = words.len().min(max_len.saturating_sub(2));
        let mut r = Vec::with_capacity(keep + 2);
        r.push(lead);
        r.extend_from_slice(&words[..keep]);
        r.push(Tokenizer::EOS);
        r
    }

    pub fn from_words(lead: usize, words: &[Vec<usize>], max_len: usize) -> Result<Self> {
        Self::new(words.iter().map(|w| Self::row(lead, w, max_len)).collect())
    }

    pub fn batch_size(&self) -> usize {
        self.rows.len()
    }

    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// True where a position holds padding.
    pub fn pad_mask(&self) -> Vec<Vec<bool>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&t| t == Tokenizer::PAD).collect())
            .collect()
    }

    /// Row `b` without trailing padding.
    pub fn unpadded(&self, b: usize) -> &[usize] {
        let r = &self.rows[b];
        let n = r.iter().position(|&t| t == Tokenizer::PAD).unwrap_or(r.len());
        &r[..n]
    }
}
