//! Stage 2: context gating of the selected sequence embedding with
//! secondary-structure features, a tertiary projector, and the contrastive
//! objective tying the two together.

use plp_tensor::nn::Linear;
use plp_tensor::{AdamW, Module, Param, Precision, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::encoders::C_SEC;
use crate::error::{Error, Result};
use crate::rng::{rng, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    /// Odd convolution width along the residue axis.
    pub kernel_size: usize,
    pub temperature: f64,
    /// Upper bound on in-batch negatives per anchor.
    pub negatives: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            kernel_size: 5,
            temperature: 0.8,
            negatives: 128,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config("align: kernel_size must be odd".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("align: temperature must be positive".into()));
        }
        if self.negatives == 0 {
            return Err(Error::Config("align: negatives must be at least 1".into()));
        }
        Ok(())
    }
}

fn conv_param(name: &str, k: usize, c_in: usize, c_out: usize, r: &mut impl rand::Rng) -> Param {
    let std = (1.0 / (k * c_in) as f64).sqrt();
    Param::new(name, Tensor::randn([k, c_in, c_out], std, r))
}

/// Gate parameters: a length projector (convolution then adaptive average
/// pooling to `n_queries` rows) followed by `W_sec`, `b`.
#[derive(Clone, Debug)]
pub struct Pcg {
    pub conv_weight: Param,
    pub conv_bias: Param,
    pub w_sec: Param,
    pub b: Param,
    n_queries: usize,
}

impl Pcg {
    pub fn new(n_queries: usize, d_model: usize, kernel: usize, r: &mut impl rand::Rng) -> Self {
        Pcg {
            conv_weight: conv_param("pcg.conv.weight", kernel, C_SEC, C_SEC, r),
            conv_bias: Param::new("pcg.conv.bias", Tensor::zeros([C_SEC])),
            w_sec: Param::new("pcg.w_sec", Tensor::randn([C_SEC, d_model], (1.0 / C_SEC as f64).sqrt(), r)),
            b: Param::new("pcg.b", Tensor::zeros([d_model])),
            n_queries,
        }
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    /// Gate values `σ(pool(conv(e_sec))·W_sec + b)`, `[n_queries×d]`.
    pub fn gate(&self, tape: &mut Tape, e_sec: Var) -> Result<Var> {
        let shape = tape.shape(e_sec);
        if shape.len() != 2 || shape[1] != C_SEC {
            return Err(Error::contract(format!("e_sec must be n×{C_SEC}, got {shape:?}")));
        }
        if shape[0] == 0 {
            return Err(Error::contract("e_sec has no residues"));
        }
        let w = tape.param(&self.conv_weight)?;
        let cb = tape.param(&self.conv_bias)?;
        let h = tape.conv1d(e_sec, w, cb)?;
        let p = tape.adaptive_avg_pool_rows(h, self.n_queries)?;
        let ws = tape.param(&self.w_sec)?;
        let z = tape.matmul(p, ws)?;
        let b = tape.param(&self.b)?;
        let z = tape.add_row(z, b)?;
        Ok(tape.sigmoid(z)?)
    }
}

impl Module for Pcg {
    fn params(&self) -> Vec<&Param> {
        vec![&self.conv_weight, &self.conv_bias, &self.w_sec, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.conv_weight, &mut self.conv_bias, &mut self.w_sec, &mut self.b]
    }
}

/// `E_align = gate(e_sec) ⊙ e_seq_sel`.
pub fn pcg_forward(tape: &mut Tape, pcg: &Pcg, e_seq_sel: Var, e_sec: Var) -> Result<Var> {
    let g = pcg.gate(tape, e_sec)?;
    if tape.shape(g) != tape.shape(e_seq_sel) {
        return Err(Error::contract(format!(
            "selected embedding is {:?}, gate is {:?}",
            tape.shape(e_seq_sel),
            tape.shape(g)
        )));
    }
    Ok(tape.mul(g, e_seq_sel)?)
}

/// Convolution over residues, adaptive average pooling to `n_queries`
/// rows, then a linear map `c_ter → d`.
#[derive(Clone, Debug)]
pub struct TertiaryProjector {
    pub conv_weight: Param,
    pub conv_bias: Param,
    pub linear: Linear,
    n_queries: usize,
}

impl TertiaryProjector {
    pub fn new(n_queries: usize, c_ter: usize, d_model: usize, kernel: usize, r: &mut impl rand::Rng) -> Self {
        TertiaryProjector {
            conv_weight: conv_param("ter.conv.weight", kernel, c_ter, c_ter, r),
            conv_bias: Param::new("ter.conv.bias", Tensor::zeros([c_ter])),
            linear: Linear::new("ter.linear", c_ter, d_model, true, r),
            n_queries,
        }
    }

    pub fn c_ter(&self) -> usize {
        self.linear.d_in()
    }
}

impl Module for TertiaryProjector {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.conv_weight, &self.conv_bias];
        v.extend(self.linear.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.conv_weight, &mut self.conv_bias];
        v.extend(self.linear.params_mut());
        v
    }
}

pub fn project_tertiary(tape: &mut Tape, proj: &TertiaryProjector, e_ter: Var) -> Result<Var> {
    let shape = tape.shape(e_ter);
    if shape.len() != 2 || shape[1] != proj.c_ter() {
        return Err(Error::contract(format!("e_ter must be n×{}, got {shape:?}", proj.c_ter())));
    }
    if shape[0] == 0 {
        return Err(Error::contract("e_ter has no residues"));
    }
    let w = tape.param(&proj.conv_weight)?;
    let b = tape.param(&proj.conv_bias)?;
    let h = tape.conv1d(e_ter, w, b)?;
    let p = tape.adaptive_avg_pool_rows(h, proj.n_queries)?;
    Ok(proj.linear.forward(tape, p)?)
}

/// Mean over rows, then unit length: the vector used for scoring.
pub fn pooled_direction(tape: &mut Tape, x: Var) -> Result<Var> {
    let m = tape.mean_rows(x)?;
    Ok(tape.l2_normalize_rows(m)?)
}

/// `-log softmax(s/τ)[0]` over the positive followed by the negatives,
/// where each score is the dot product of pooled, normalised matrices.
pub fn contrastive_loss(tape: &mut Tape, e_align: Var, positive: Var, negatives: &[Var], temperature: f64) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::contract("contrastive loss needs at least one negative"));
    }
    let a = pooled_direction(tape, e_align)?;
    let mut cands = Vec::with_capacity(negatives.len() + 1);
    for &c in std::iter::once(&positive).chain(negatives) {
        cands.push(tape.mean_rows(c)?);
    }
    let c = tape.vstack(&cands)?;
    let c = tape.l2_normalize_rows(c)?;
    let ct = tape.transpose(c)?;
    let s = tape.matmul(a, ct)?;
    let logits = tape.scale(s, 1.0 / temperature)?;
    Ok(tape.cross_entropy(logits, &[Some(0)])?)
}

/// Gate plus tertiary projector: the stage-2 trainable parameters.
#[derive(Clone, Debug)]
pub struct AlignModel {
    pub config: AlignConfig,
    pub pcg: Pcg,
    pub ter: TertiaryProjector,
}

impl AlignModel {
    pub fn new(config: &AlignConfig, n_queries: usize, d_model: usize, c_ter: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng(seed, tag("align"));
        Ok(AlignModel {
            pcg: Pcg::new(n_queries, d_model, config.kernel_size, &mut r),
            ter: TertiaryProjector::new(n_queries, c_ter, d_model, config.kernel_size, &mut r),
            config: config.clone(),
        })
    }

    pub fn align(&self, e_seq_sel: &Tensor, e_sec: &Tensor, precision: Precision) -> Result<Tensor> {
        let mut tape = Tape::new(precision);
        let s = tape.constant(e_seq_sel)?;
        let e = tape.constant(e_sec)?;
        let out = pcg_forward(&mut tape, &self.pcg, s, e)?;
        Ok(tape.tensor(out))
    }

    pub fn project(&self, e_ter: &Tensor, precision: Precision) -> Result<Tensor> {
        let mut tape = Tape::new(precision);
        let e = tape.constant(e_ter)?;
        let out = project_tertiary(&mut tape, &self.ter, e)?;
        Ok(tape.tensor(out))
    }
}

impl Module for AlignModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.pcg.params();
        v.extend(self.ter.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.pcg.params_mut();
        v.extend(self.ter.params_mut());
        v
    }
}

/// One stage-2 example. `e_seq_sel` is the frozen query-token output.
#[derive(Clone, Copy, Debug)]
pub struct AlignExample<'a> {
    pub e_seq_sel: &'a Tensor,
    pub e_sec: &'a Tensor,
    pub e_ter: &'a Tensor,
}

/// Negatives for anchor `i`: the next `k` other batch members, wrapping.
pub fn negative_indices(i: usize, batch: usize, k: usize) -> Vec<usize> {
    (1..batch).map(|o| (i + o) % batch).take(k).collect()
}

/// Mean contrastive loss over the batch, each anchor against its own
/// tertiary embedding and up to `k` others.
pub fn align_loss(tape: &mut Tape, model: &AlignModel, batch: &[AlignExample<'_>]) -> Result<Var> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::contract("alignment needs at least two proteins per batch"));
    }
    let mut ters = Vec::with_capacity(b);
    let mut aligns = Vec::with_capacity(b);
    for ex in batch {
        let t = tape.constant(ex.e_ter)?;
        ters.push(project_tertiary(tape, &model.ter, t)?);
        let s = tape.constant(ex.e_seq_sel)?;
        let e = tape.constant(ex.e_sec)?;
        aligns.push(pcg_forward(tape, &model.pcg, s, e)?);
    }
    let mut total: Option<Var> = None;
    for i in 0..b {
        let negs: Vec<Var> = negative_indices(i, b, model.config.negatives)
            .into_iter()
            .map(|j| ters[j])
            .collect();
        let l = contrastive_loss(tape, aligns[i], ters[i], &negs, model.config.temperature)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    Ok(tape.scale(total.expect("b ≥ 2"), 1.0 / b as f64)?)
}

pub fn align_train_step(
    model: &mut AlignModel,
    opt: &mut AdamW,
    batch: &[AlignExample<'_>],
    lr: f64,
    precision: Precision,
) -> Result<f64> {
    let mut tape = Tape::new(precision);
    let loss = align_loss(&mut tape, model, batch)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    grads.store_into(model.params_mut());
    opt.step(model.params_mut(), lr)?;
    Ok(value)
}

/// Pooled, normalised vector of an `[r×d]` matrix.
pub fn pooled_unit(x: &Tensor) -> Vec<f64> {
    let (r, d) = (x.rows(), x.cols());
    let mut m = vec![0.0; d];
    for i in 0..r {
        for (a, b) in m.iter_mut().zip(x.row(i)) {
            *a += b;
        }
    }
    let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    m.iter().map(|v| v / norm).collect()
}

/// `scores[i][j]` = pooled cosine between aligned embedding i and
/// projected tertiary embedding j.
pub fn cross_level_scores(aligned: &[Tensor], projected: &[Tensor]) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = aligned.iter().map(pooled_unit).collect();
    let t: Vec<Vec<f64>> = projected.iter().map(pooled_unit).collect();
    a.iter()
        .map(|ai| t.iter().map(|tj| ai.iter().zip(tj).map(|(x, y)| x * y).sum()).collect())
        .collect()
}
