//! Multi-head scaled dot-product attention shared by the query-token
//! transformer and the decoder.

use plp_tensor::nn::Linear;
use plp_tensor::{Module, Param, Result, Tape, Var};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    /// Queries come from `d_model`-wide rows, keys/values from `d_kv`-wide
    /// rows; every head has width `d_model / n_heads`.
    pub fn new<R: Rng + ?Sized>(name: &str, d_model: usize, d_kv: usize, n_heads: usize, rng: &mut R) -> Self {
        MultiHeadAttention {
            w_q: Linear::new(&format!("{name}.q"), d_model, d_model, true, rng),
            w_k: Linear::new(&format!("{name}.k"), d_kv, d_model, true, rng),
            w_v: Linear::new(&format!("{name}.v"), d_kv, d_model, true, rng),
            w_o: Linear::new(&format!("{name}.o"), d_model, d_model, true, rng),
            n_heads,
        }
    }

    /// Key and value projections of `x_kv`, reusable across several query
    /// passes on the same tape.
    pub fn project_kv(&self, tape: &mut Tape, x_kv: Var) -> Result<(Var, Var)> {
        Ok((self.w_k.forward(tape, x_kv)?, self.w_v.forward(tape, x_kv)?))
    }

    /// Attention output before any residual. `allowed` is a row-major
    /// `[m×n]` pattern; `None` lets every query see every key.
    pub fn attend(&self, tape: &mut Tape, x_q: Var, kv: (Var, Var), allowed: Option<&[bool]>) -> Result<Var> {
        let q = self.w_q.forward(tape, x_q)?;
        let (k, v) = kv;
        let d = tape.shape(q)[1];
        let dk = d / self.n_heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dk, dk)?,
                    tape.slice_cols(k, h * dk, dk)?,
                    tape.slice_cols(v, h * dk, dk)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let weights = tape.masked_softmax_rows(scores, allowed)?;
            heads.push(tape.matmul(weights, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.hstack(&heads)? };
        self.w_o.forward(tape, cat)
    }

    pub fn forward(&self, tape: &mut Tape, x_q: Var, x_kv: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let kv = self.project_kv(tape, x_kv)?;
        self.attend(tape, x_q, kv, allowed)
    }
}

impl Module for MultiHeadAttention {
    fn params(&self) -> Vec<&Param> {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
            .into_iter()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

/// Two-layer GELU feed-forward, `d → mult·d → d`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(name: &str, d: usize, mult: usize, rng: &mut R) -> Self {
        FeedForward {
            up: Linear::new(&format!("{name}.up"), d, d * mult, true, rng),
            down: Linear::new(&format!("{name}.down"), d * mult, d, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, x)?;
        let h = tape.gelu(h)?;
        self.down.forward(tape, h)
    }
}

impl Module for FeedForward {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.up.params();
        v.extend(self.down.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.up.params_mut();
        v.extend(self.down.params_mut());
        v
    }
}

/// Row-major causal pattern over `n` positions.
pub fn causal_mask(n: usize) -> Vec<bool> {
    let mut m = vec![false; n * n];
    for i in 0..n {
        for j in 0..=i {
            m[i * n + j] = true;
        }
    }
    m
}
