use plp_tensor::nn::{Embedding, LayerNorm, Linear};
use plp_tensor::{Module, Param, Tape, Tensor, Var};

use super::DecoderConfig;
use crate::attention::{causal_mask, FeedForward, MultiHeadAttention};
use crate::corpus::Tokenizer;
use crate::error::{Error, Result};
use crate::rng::{rng, tag};

/// Pre-norm causal block.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

/// Small causal language model over the shared vocabulary.
#[derive(Clone, Debug)]
pub struct Decoder {
    config: DecoderConfig,
    pub tok_embed: Embedding,
    pub pos_embed: Param,
    pub blocks: Vec<DecoderBlock>,
    pub ln_f: LayerNorm,
    pub head: Linear,
}

impl Decoder {
    pub fn new(config: &DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let d = c.d_lm;
        let mut r = rng(seed, tag("decoder"));
        let blocks = (0..c.n_layers)
            .map(|l| DecoderBlock {
                ln1: LayerNorm::new(&format!("lm.block{l}.ln1"), d),
                attn: MultiHeadAttention::new(&format!("lm.block{l}.attn"), d, d, c.n_heads, &mut r),
                ln2: LayerNorm::new(&format!("lm.block{l}.ln2"), d),
                ffn: FeedForward::new(&format!("lm.block{l}.ffn"), d, c.ffn_mult, &mut r),
            })
            .collect();
        Ok(Decoder {
            tok_embed: Embedding::new("lm.tok_embed", c.vocab_size, d, &mut r),
            pos_embed: Param::new(
                "lm.pos_embed",
                Tensor::randn([c.max_seq_len, d], 1.0 / (d as f64).sqrt(), &mut r),
            ),
            blocks,
            ln_f: LayerNorm::new("lm.ln_f", d),
            head: Linear::new("lm.head", d, c.vocab_size, true, &mut r),
            config: c.clone(),
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn embed_tokens(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::contract(format!("token id {bad} outside the vocabulary")));
        }
        Ok(self.tok_embed.forward(tape, ids)?)
    }

    /// `[<Protein>; prompts; </Protein>; question; answer]` as one
    /// embedding matrix.
    pub fn embed_stream(&self, tape: &mut Tape, prompts: Var, question: &[usize], answer: &[usize]) -> Result<Var> {
        if tape.shape(prompts).get(1) != Some(&self.config.d_lm) {
            return Err(Error::contract(format!(
                "prompts must have {} columns, got {:?}",
                self.config.d_lm,
                tape.shape(prompts)
            )));
        }
        let open = self.embed_tokens(tape, &[Tokenizer::PROTEIN_OPEN])?;
        let close = self.embed_tokens(tape, &[Tokenizer::PROTEIN_CLOSE])?;
        let mut parts = vec![open, prompts, close];
        let mut ids = question.to_vec();
        ids.extend_from_slice(answer);
        if !ids.is_empty() {
            parts.push(self.embed_tokens(tape, &ids)?);
        }
        Ok(tape.vstack(&parts)?)
    }

    /// Logits `[T×vocab]` for an input embedding stream `[T×d_lm]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let t = tape.shape(x)[0];
        if t > self.config.max_seq_len {
            return Err(Error::contract(format!(
                "stream of {t} positions exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        let pos = tape.param(&self.pos_embed)?;
        let pos = tape.slice_rows(pos, 0, t)?;
        let mut x = tape.add(x, pos)?;
        let mask = causal_mask(t);
        for b in &self.blocks {
            let h = b.ln1.forward(tape, x)?;
            let a = b.attn.forward(tape, h, h, Some(&mask))?;
            x = tape.add(x, a)?;
            let h = b.ln2.forward(tape, x)?;
            let f = b.ffn.forward(tape, h)?;
            x = tape.add(x, f)?;
        }
        let h = self.ln_f.forward(tape, x)?;
        Ok(self.head.forward(tape, h)?)
    }
}

impl Module for Decoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.tok_embed.params();
        v.push(&self.pos_embed);
        for b in &self.blocks {
            v.extend(b.ln1.params());
            v.extend(b.attn.params());
            v.extend(b.ln2.params());
            v.extend(b.ffn.params());
        }
        v.extend(self.ln_f.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.tok_embed.params_mut();
        v.push(&mut self.pos_embed);
        for b in &mut self.blocks {
            v.extend(b.ln1.params_mut());
            v.extend(b.attn.params_mut());
            v.extend(b.ln2.params_mut());
            v.extend(b.ffn.params_mut());
        }
        v.extend(self.ln_f.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}
