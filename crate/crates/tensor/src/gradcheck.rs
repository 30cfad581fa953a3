//! Central finite-difference gradient checking.
//!
//! The oracle only ever evaluates the forward pass, so it stays independent
//! of every backward rule it validates.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::{Param, Precision, Tensor};
use crate::Module;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub h: f64,
    pub rel_tol: f64,
    /// Absolute slack for gradients that are essentially zero.
    pub abs_floor: f64,
    /// Upper bound on probed elements per parameter (evenly strided).
    pub max_probes: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            h: 1e-4,
            rel_tol: 1e-3,
            abs_floor: 1e-7,
            max_probes: 24,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub probes: usize,
    pub failures: Vec<String>,
    pub max_rel_err: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.probes > 0
    }
}

/// Plain list of parameters for checks over free-standing inputs.
#[derive(Clone, Debug, Default)]
pub struct ParamList(pub Vec<Param>);

impl ParamList {
    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        ParamList(
            tensors
                .into_iter()
                .enumerate()
                .map(|(i, t)| Param::new(format!("input{i}"), t))
                .collect(),
        )
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.0.iter().map(|p| tape.param(p)).collect()
    }
}

impl Module for ParamList {
    fn params(&self) -> Vec<&Param> {
        self.0.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.0.iter_mut().collect()
    }
}

impl GradCheck {
    /// Compares tape gradients of every trainable parameter of `model`
    /// against central differences of `loss`. Runs in f64.
    pub fn run<M: Module>(&self, model: &mut M, loss: impl Fn(&M, &mut Tape) -> Result<Var>) -> Result<GradReport> {
        let eval = |m: &M| -> Result<f64> {
            let mut tape = Tape::new(Precision::F64);
            let l = loss(m, &mut tape)?;
            Ok(tape.scalar(l))
        };
        let mut tape = Tape::new(Precision::F64);
        let l = loss(model, &mut tape)?;
        let grads = tape.backward(l)?;

        let mut report = GradReport::default();
        let n_params = model.params().len();
        for pi in 0..n_params {
            let (name, numel, trainable) = {
                let p = model.params()[pi];
                (p.name().to_string(), p.value.numel(), p.value.requires_grad)
            };
            if !trainable || numel == 0 {
                continue;
            }
            let analytic = grads.param(&name).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; numel]);
            let stride = numel.div_ceil(self.max_probes).max(1);
            for e in (0..numel).step_by(stride) {
                let orig = model.params()[pi].value.data()[e];
                model.params_mut()[pi].value.data_mut()[e] = orig + self.h;
                let fp = eval(model)?;
                model.params_mut()[pi].value.data_mut()[e] = orig - self.h;
                let fm = eval(model)?;
                model.params_mut()[pi].value.data_mut()[e] = orig;
                let numeric = (fp - fm) / (2.0 * self.h);
                let a = analytic[e];
                let scale = a.abs().max(numeric.abs());
                let err = (a - numeric).abs();
                let rel = if scale > 0.0 { err / scale } else { 0.0 };
                report.probes += 1;
                if err > self.rel_tol * scale + self.abs_floor {
                    report.failures.push(format!(
                        "{name}[{e}]: analytic {a:.9e} numeric {numeric:.9e}"
                    ));
                }
                if err > self.abs_floor {
                    report.max_rel_err = report.max_rel_err.max(rel);
                }
            }
        }
        Ok(report)
    }
}
