//! Parameterised building blocks shared by the model crates.

use rand::Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::{Param, Tensor};
use crate::Module;

/// `y = x·W + b` with `W: [in×out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let std = (1.0 / d_in as f64).sqrt();
        Linear {
            weight: Param::new(format!("{name}.weight"), Tensor::randn([d_in, d_out], std, rng)),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros([d_out]))),
        }
    }

    pub fn zeros(name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        Linear {
            weight: Param::new(format!("{name}.weight"), Tensor::zeros([d_in, d_out])),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros([d_out]))),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight)?;
        let y = tape.matmul(x, w)?;
        match &self.bias {
            Some(b) => {
                let b = tape.param(b)?;
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
}

impl LayerNorm {
    pub fn new(name: &str, d: usize) -> Self {
        LayerNorm {
            gain: Param::new(format!("{name}.gain"), Tensor::full([d], 1.0)),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros([d])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(&self.gain)?;
        let b = tape.param(&self.bias)?;
        tape.layer_norm(x, g, b)
    }
}

impl Module for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gain, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gain, &mut self.bias]
    }
}

/// Lookup table `[vocab×d]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: Param,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(name: &str, vocab: usize, d: usize, rng: &mut R) -> Self {
        Embedding {
            table: Param::new(format!("{name}.table"), Tensor::randn([vocab, d], 0.02_f64.max(1.0 / (d as f64).sqrt()), rng)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        let t = tape.param(&self.table)?;
        tape.gather_rows(t, ids)
    }
}

impl Module for Embedding {
    fn params(&self) -> Vec<&Param> {
        vec![&self.table]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.table]
    }
}
