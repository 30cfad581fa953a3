use plp_tensor::{AdamW, Module, Precision, Tape, Tensor, Var};

use super::model::{PlpFormer, ProteinContext};
use super::{AttentionMaskMode, TextBatch};
use crate::corpus::Tokenizer;
use crate::error::{Error, Result};

/// `[B×B]` similarity: entry (i, j) is the highest cosine between any
/// query output of protein i and the [CLS] output of text j.
pub fn ptc_similarity(tape: &mut Tape, query_outs: &[Var], text_cls: &[Var]) -> Result<Var> {
    if query_outs.len() != text_cls.len() || query_outs.is_empty() {
        return Err(Error::contract("similarity needs equally many proteins and texts"));
    }
    let cls = tape.vstack(text_cls)?;
    let cls = tape.l2_normalize_rows(cls)?;
    let cls_t = tape.transpose(cls)?;
    let mut rows = Vec::with_capacity(query_outs.len());
    for &q in query_outs {
        let qn = tape.l2_normalize_rows(q)?;
        let cos = tape.matmul(qn, cls_t)?;
        rows.push(tape.max_rows(cos)?);
    }
    Ok(tape.vstack(&rows)?)
}

/// Symmetric InfoNCE over a similarity matrix whose diagonal holds the
/// matching pairs.
pub fn ptc_loss_from_similarity(tape: &mut Tape, sim: Var, temperature: f64) -> Result<Var> {
    let shape = tape.shape(sim).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::contract(format!("similarity must be square, got {shape:?}")));
    }
    let b = shape[0];
    if b < 2 {
        return Err(Error::contract("contrastive loss needs at least two pairs"));
    }
    let targets: Vec<Option<usize>> = (0..b).map(Some).collect();
    let logits = tape.scale(sim, 1.0 / temperature)?;
    let p2t = tape.cross_entropy(logits, &targets)?;
    let lt = tape.transpose(logits)?;
    let t2p = tape.cross_entropy(lt, &targets)?;
    let s = tape.add(p2t, t2p)?;
    Ok(tape.scale(s, 0.5)?)
}

pub fn ptc_loss(tape: &mut Tape, query_outs: &[Var], text_cls: &[Var], temperature: f64) -> Result<Var> {
    if query_outs.len() < 2 {
        return Err(Error::contract("contrastive loss needs at least two pairs"));
    }
    let sim = ptc_similarity(tape, query_outs, text_cls)?;
    ptc_loss_from_similarity(tape, sim, temperature)
}

/// For every row, the column of the largest off-diagonal entry (lowest
/// index on ties).
pub fn hard_negatives(sim: &[Vec<f64>]) -> Vec<usize> {
    sim.iter()
        .enumerate()
        .map(|(i, row)| {
            let mut best: Option<usize> = None;
            for (j, &v) in row.iter().enumerate() {
                if j != i && best.is_none_or(|b| v > row[b]) {
                    best = Some(j);
                }
            }
            best.unwrap_or(i)
        })
        .collect()
}

/// Next-token cross-entropy over the text stream under the causal mask.
/// Every text must start with [DEC].
pub fn ptg_loss(tape: &mut Tape, model: &PlpFormer, proteins: &[&ProteinContext], texts: &[Vec<usize>]) -> Result<Var> {
    if proteins.len() != texts.len() || texts.is_empty() {
        return Err(Error::contract("generation loss needs one text per protein"));
    }
    let mut logits = Vec::with_capacity(texts.len());
    let mut targets = Vec::new();
    for (ctx, text) in proteins.iter().zip(texts) {
        if text.first() != Some(&Tokenizer::DEC) {
            return Err(Error::contract("generation text must start with [DEC]"));
        }
        let (_, t) = model.forward_pair(tape, ctx, text, AttentionMaskMode::MultimodalCausal)?;
        logits.push(model.lm_head.forward(tape, t)?);
        for p in 0..text.len() {
            targets.push(text.get(p + 1).copied().filter(|&x| x != Tokenizer::PAD));
        }
    }
    let all = tape.vstack(&logits)?;
    Ok(tape.cross_entropy(all, &targets)?)
}

/// Matching logit for a bidirectional pass: the binary head applied to
/// every query output, averaged over queries. Shape `[1×1]`.
pub fn ptm_logit(tape: &mut Tape, model: &PlpFormer, query_out: Var) -> Result<Var> {
    let per_query = model.itm_head.forward(tape, query_out)?;
    Ok(tape.mean_rows(per_query)?)
}

/// Binary matching loss over the B positives, one hard negative text per
/// protein and one hard negative protein per text, mined from `sim`.
pub fn ptm_loss(
    tape: &mut Tape,
    model: &PlpFormer,
    proteins: &[&ProteinContext],
    cls_texts: &[Vec<usize>],
    sim: &[Vec<f64>],
) -> Result<Var> {
    let b = proteins.len();
    if b < 2 || cls_texts.len() != b || sim.len() != b {
        return Err(Error::contract("matching loss needs at least two aligned pairs"));
    }
    let neg_text = hard_negatives(sim);
    let cols: Vec<Vec<f64>> = (0..b).map(|j| (0..b).map(|i| sim[i][j]).collect()).collect();
    let neg_protein = hard_negatives(&cols);

    let mut pairs = Vec::with_capacity(3 * b);
    pairs.extend((0..b).map(|i| (i, i, 1.0)));
    pairs.extend((0..b).map(|i| (i, neg_text[i], 0.0)));
    pairs.extend((0..b).map(|j| (neg_protein[j], j, 0.0)));

    let mut logits = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for (p, t, y) in pairs {
        let (q, _) = model.forward_pair(tape, proteins[p], &cls_texts[t], AttentionMaskMode::Bidirectional)?;
        logits.push(ptm_logit(tape, model, q)?);
        labels.push(y);
    }
    let all = tape.vstack(&logits)?;
    Ok(tape.bce_with_logits(all, &labels)?)
}

/// One stage-1 example: sequence embeddings and the description's word ids
/// (no reserved tokens).
#[derive(Clone, Copy, Debug)]
pub struct PlpExample<'a> {
    pub e_seq: &'a Tensor,
    pub words: &'a [usize],
}

pub struct PlpLosses {
    pub ptc: Var,
    pub ptg: Var,
    pub ptm: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub ptc: f64,
    pub ptg: f64,
    pub ptm: f64,
    pub total: f64,
}

/// Builds all three objectives and their weighted sum on `tape`. Terms
/// with weight zero are still evaluated but left out of the total.
pub fn plp_losses(tape: &mut Tape, model: &PlpFormer, batch: &[PlpExample<'_>]) -> Result<PlpLosses> {
    let c = model.config();
    if batch.len() < 2 {
        return Err(Error::contract("pretraining needs at least two pairs per batch"));
    }
    let ctxs = batch
        .iter()
        .map(|ex| model.encode_protein(tape, ex.e_seq))
        .collect::<Result<Vec<_>>>()?;
    let ctx_refs: Vec<&ProteinContext> = ctxs.iter().collect();
    let cls_texts: Vec<Vec<usize>> = batch
        .iter()
        .map(|ex| TextBatch::row(Tokenizer::CLS, ex.words, c.max_text_len))
        .collect();
    let dec_texts: Vec<Vec<usize>> = batch
        .iter()
        .map(|ex| TextBatch::row(Tokenizer::DEC, ex.words, c.max_text_len))
        .collect();

    let mut queries = Vec::with_capacity(batch.len());
    let mut cls = Vec::with_capacity(batch.len());
    for (ctx, text) in ctx_refs.iter().zip(&cls_texts) {
        let (q, t) = model.forward_pair(tape, ctx, text, AttentionMaskMode::Unimodal)?;
        queries.push(q);
        cls.push(tape.slice_rows(t, 0, 1)?);
    }
    let sim = ptc_similarity(tape, &queries, &cls)?;
    let ptc = ptc_loss_from_similarity(tape, sim, c.ptc_temperature)?;
    let b = batch.len();
    let sim_values: Vec<Vec<f64>> = tape.data(sim).chunks(b).map(<[f64]>::to_vec).collect();

    let ptg = ptg_loss(tape, model, &ctx_refs, &dec_texts)?;
    let ptm = ptm_loss(tape, model, &ctx_refs, &cls_texts, &sim_values)?;

    let mut total: Option<Var> = None;
    for (v, w) in [(ptc, c.w_ptc), (ptg, c.w_ptg), (ptm, c.w_ptm)] {
        if w == 0.0 {
            continue;
        }
        let term = if w == 1.0 { v } else { tape.scale(v, w)? };
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let total = total.ok_or_else(|| Error::contract("all loss weights are zero"))?;
    Ok(PlpLosses { ptc, ptg, ptm, total })
}

/// One optimisation step on `batch`. Returns the losses measured before
/// the update.
pub fn plp_pretrain_step(
    model: &mut PlpFormer,
    opt: &mut AdamW,
    batch: &[PlpExample<'_>],
    lr: f64,
    precision: Precision,
) -> Result<LossReport> {
    let mut tape = Tape::new(precision);
    let losses = plp_losses(&mut tape, model, batch)?;
    let report = LossReport {
        ptc: tape.scalar(losses.ptc),
        ptg: tape.scalar(losses.ptg),
        ptm: tape.scalar(losses.ptm),
        total: tape.scalar(losses.total),
    };
    let grads = tape.backward(losses.total)?;
    grads.store_into(model.params_mut());
    opt.step(model.params_mut(), lr)?;
    Ok(report)
}
