use plp_tensor::nn::{Embedding, LayerNorm, Linear};
use plp_tensor::{Module, Param, Precision, Tape, Tensor, Var};

use super::{AttentionMaskMode, PlpConfig, TextBatch};
use crate::attention::{FeedForward, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::rng::{rng, tag};

/// One block: shared self-attention over [queries ∥ text], optional
/// cross-attention for the query rows, then separate feed-forwards for
/// the two streams. Post-norm residuals throughout.
#[derive(Clone, Debug)]
pub struct PlpLayer {
    pub self_attn: MultiHeadAttention,
    pub self_ln: LayerNorm,
    pub cross_attn: Option<(MultiHeadAttention, LayerNorm)>,
    pub ffn_query: FeedForward,
    pub ffn_query_ln: LayerNorm,
    pub ffn_text: FeedForward,
    pub ffn_text_ln: LayerNorm,
}

impl Module for PlpLayer {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.self_attn.params();
        v.extend(self.self_ln.params());
        if let Some((a, ln)) = &self.cross_attn {
            v.extend(a.params());
            v.extend(ln.params());
        }
        v.extend(self.ffn_query.params());
        v.extend(self.ffn_query_ln.params());
        v.extend(self.ffn_text.params());
        v.extend(self.ffn_text_ln.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.self_attn.params_mut();
        v.extend(self.self_ln.params_mut());
        if let Some((a, ln)) = &mut self.cross_attn {
            v.extend(a.params_mut());
            v.extend(ln.params_mut());
        }
        v.extend(self.ffn_query.params_mut());
        v.extend(self.ffn_query_ln.params_mut());
        v.extend(self.ffn_text.params_mut());
        v.extend(self.ffn_text_ln.params_mut());
        v
    }
}

#[derive(Clone, Debug)]
pub struct PlpFormer {
    config: PlpConfig,
    pub query_tokens: Param,
    pub text_embed: Embedding,
    pub text_pos: Param,
    pub embed_ln: LayerNorm,
    pub layers: Vec<PlpLayer>,
    pub lm_head: Linear,
    pub itm_head: Linear,
}

/// Cross-attention keys and values for one protein, per layer.
pub struct ProteinContext {
    kv: Vec<Option<(Var, Var)>>,
}

impl PlpFormer {
    pub fn new(config: &PlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut r = rng(seed, tag("plp"));
        let d = c.d_model;
        let layers = (0..c.n_layers)
            .map(|l| {
                let p = format!("plp.layer{l}");
                let cross = (l % c.cross_attention_every == 0).then(|| {
                    (
                        MultiHeadAttention::new(&format!("{p}.cross_attn"), d, c.c_seq, c.n_heads, &mut r),
                        LayerNorm::new(&format!("{p}.cross_ln"), d),
                    )
                });
                PlpLayer {
                    self_attn: MultiHeadAttention::new(&format!("{p}.self_attn"), d, d, c.n_heads, &mut r),
                    self_ln: LayerNorm::new(&format!("{p}.self_ln"), d),
                    cross_attn: cross,
                    ffn_query: FeedForward::new(&format!("{p}.ffn_query"), d, c.ffn_mult, &mut r),
                    ffn_query_ln: LayerNorm::new(&format!("{p}.ffn_query_ln"), d),
                    ffn_text: FeedForward::new(&format!("{p}.ffn_text"), d, c.ffn_mult, &mut r),
                    ffn_text_ln: LayerNorm::new(&format!("{p}.ffn_text_ln"), d),
                }
            })
            .collect();
        Ok(PlpFormer {
            query_tokens: Param::new("plp.query_tokens", Tensor::randn([c.n_queries, d], 1.0, &mut r)),
            text_embed: Embedding::new("plp.text_embed", c.vocab_size, d, &mut r),
            text_pos: Param::new(
                "plp.text_pos",
                Tensor::randn([c.max_text_len, d], 1.0 / (d as f64).sqrt(), &mut r),
            ),
            embed_ln: LayerNorm::new("plp.embed_ln", d),
            layers,
            lm_head: Linear::new("plp.lm_head", d, c.vocab_size, true, &mut r),
            itm_head: Linear::new("plp.itm_head", d, 1, true, &mut r),
            config: c.clone(),
        })
    }

    pub fn config(&self) -> &PlpConfig {
        &self.config
    }

    /// Projects `e_seq` (already on the tape) into every cross-attention
    /// layer's keys and values.
    pub fn protein_context(&self, tape: &mut Tape, e_seq: Var) -> Result<ProteinContext> {
        let shape = tape.shape(e_seq);
        if shape.len() != 2 || shape[0] == 0 || shape[1] != self.config.c_seq {
            return Err(Error::contract(format!(
                "e_seq must be n×{} with n ≥ 1, got {:?}",
                self.config.c_seq, shape
            )));
        }
        let kv = self
            .layers
            .iter()
            .map(|l| match &l.cross_attn {
                Some((a, _)) => a.project_kv(tape, e_seq).map(Some),
                None => Ok(None),
            })
            .collect::<plp_tensor::Result<_>>()?;
        Ok(ProteinContext { kv })
    }

    /// Adds `e_seq` as a constant and builds its context.
    pub fn encode_protein(&self, tape: &mut Tape, e_seq: &Tensor) -> Result<ProteinContext> {
        let v = tape.constant(e_seq)?;
        self.protein_context(tape, v)
    }

    fn embed_text(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        if ids.len() > self.config.max_text_len {
            return Err(Error::contract(format!(
                "text of {} tokens exceeds max_text_len {}",
                ids.len(),
                self.config.max_text_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::contract(format!("token id {bad} outside the vocabulary")));
        }
        let tok = self.text_embed.forward(tape, ids)?;
        let pos = tape.param(&self.text_pos)?;
        let pos = tape.slice_rows(pos, 0, ids.len())?;
        let x = tape.add(tok, pos)?;
        Ok(self.embed_ln.forward(tape, x)?)
    }

    /// Runs the stack over queries (when `protein` is given) and text (when
    /// given). Returns the final query rows and text rows.
    pub fn forward_parts(
        &self,
        tape: &mut Tape,
        protein: Option<&ProteinContext>,
        text: Option<&[usize]>,
        mode: AttentionMaskMode,
    ) -> Result<(Option<Var>, Option<Var>)> {
        let text = text.filter(|t| !t.is_empty());
        if protein.is_none() && text.is_none() {
            return Err(Error::contract("forward needs a protein, a text, or both"));
        }
        let nq = if protein.is_some() { self.config.n_queries } else { 0 };
        let len = text.map_or(0, <[usize]>::len);
        let mut q = match protein {
            Some(_) => Some(tape.param(&self.query_tokens)?),
            None => None,
        };
        let mut t = match text {
            Some(ids) => Some(self.embed_text(tape, ids)?),
            None => None,
        };
        let allowed = mode.allowed(nq, text.unwrap_or(&[]));
        let allowed = if allowed.iter().all(|&a| a) { None } else { Some(allowed) };

        for (l, layer) in self.layers.iter().enumerate() {
            let x = match (q, t) {
                (Some(qv), Some(tv)) => tape.vstack(&[qv, tv])?,
                (Some(v), None) | (None, Some(v)) => v,
                (None, None) => unreachable!(),
            };
            let kv = layer.self_attn.project_kv(tape, x)?;
            let a = layer.self_attn.attend(tape, x, kv, allowed.as_deref())?;
            let x = tape.add(x, a)?;
            let x = layer.self_ln.forward(tape, x)?;
            if q.is_some() {
                let mut qv = if len > 0 { tape.slice_rows(x, 0, nq)? } else { x };
                if let (Some((cross, ln)), Some(ctx)) = (&layer.cross_attn, protein) {
                    let kv = ctx.kv[l].expect("context built for this model");
                    let c = cross.attend(tape, qv, kv, None)?;
                    let s = tape.add(qv, c)?;
                    qv = ln.forward(tape, s)?;
                }
                let f = layer.ffn_query.forward(tape, qv)?;
                let s = tape.add(qv, f)?;
                q = Some(layer.ffn_query_ln.forward(tape, s)?);
            }
            if t.is_some() {
                let tv = if nq > 0 { tape.slice_rows(x, nq, len)? } else { x };
                let f = layer.ffn_text.forward(tape, tv)?;
                let s = tape.add(tv, f)?;
                t = Some(layer.ffn_text_ln.forward(tape, s)?);
            }
        }
        Ok((q, t))
    }

    /// Query and text outputs for one (protein, text) pair.
    pub fn forward_pair(
        &self,
        tape: &mut Tape,
        protein: &ProteinContext,
        text: &[usize],
        mode: AttentionMaskMode,
    ) -> Result<(Var, Var)> {
        if text.is_empty() {
            return Err(Error::contract("text must not be empty"));
        }
        let (q, t) = self.forward_parts(tape, Some(protein), Some(text), mode)?;
        Ok((q.expect("queries requested"), t.expect("text requested")))
    }

    /// Query outputs with no text present: the selected sequence embedding.
    pub fn query_output(&self, tape: &mut Tape, protein: &ProteinContext) -> Result<Var> {
        let (q, _) = self.forward_parts(tape, Some(protein), None, AttentionMaskMode::Unimodal)?;
        Ok(q.expect("queries requested"))
    }

    /// Text-only pass; under the unimodal mask this equals the text stream
    /// of any joint pass.
    pub fn text_output(&self, tape: &mut Tape, text: &[usize]) -> Result<Var> {
        let (_, t) = self.forward_parts(tape, None, Some(text), AttentionMaskMode::Unimodal)?;
        t.ok_or_else(|| Error::contract("text must not be empty"))
    }

    /// `[n_queries×d]` selected embedding for `e_seq`, off-tape.
    pub fn select(&self, e_seq: &Tensor, precision: Precision) -> Result<Tensor> {
        let mut tape = Tape::new(precision);
        let ctx = self.encode_protein(&mut tape, e_seq)?;
        let q = self.query_output(&mut tape, &ctx)?;
        Ok(tape.tensor(q))
    }
}

impl Module for PlpFormer {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.query_tokens];
        v.extend(self.text_embed.params());
        v.push(&self.text_pos);
        v.extend(self.embed_ln.params());
        for l in &self.layers {
            v.extend(l.params());
        }
        v.extend(self.lm_head.params());
        v.extend(self.itm_head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.query_tokens];
        v.extend(self.text_embed.params_mut());
        v.push(&mut self.text_pos);
        v.extend(self.embed_ln.params_mut());
        for l in &mut self.layers {
            v.extend(l.params_mut());
        }
        v.extend(self.lm_head.params_mut());
        v.extend(self.itm_head.params_mut());
        v
    }
}

/// Batched forward. Returns `[B×n_queries×d]` query outputs and `[B×L×d]`
/// text outputs; rows at padded positions are computed but never attended.
pub fn plp_forward(
    model: &PlpFormer,
    e_seq: &[Tensor],
    text: &TextBatch,
    mode: AttentionMaskMode,
    precision: Precision,
) -> Result<(Tensor, Tensor)> {
    if e_seq.len() != text.batch_size() {
        return Err(Error::contract(format!(
            "{} proteins but {} text rows",
            e_seq.len(),
            text.batch_size()
        )));
    }
    let c = model.config();
    let (nq, d, len) = (c.n_queries, c.d_model, text.seq_len());
    if len > c.max_text_len {
        return Err(Error::contract(format!(
            "text of {len} tokens exceeds max_text_len {}",
            c.max_text_len
        )));
    }
    let mut qdata = Vec::with_capacity(e_seq.len() * nq * d);
    let mut tdata = Vec::with_capacity(e_seq.len() * len * d);
    for (b, e) in e_seq.iter().enumerate() {
        let mut tape = Tape::new(precision);
        let ctx = model.encode_protein(&mut tape, e)?;
        let row = &text.rows()[b];
        let (q, t) = model.forward_parts(&mut tape, Some(&ctx), Some(row), mode)?;
        qdata.extend_from_slice(tape.data(q.expect("queries")));
        if let Some(t) = t {
            tdata.extend_from_slice(tape.data(t));
        }
    }
    Ok((
        Tensor::new([e_seq.len(), nq, d], qdata)?,
        Tensor::new([e_seq.len(), len, d], tdata)?,
    ))
}
