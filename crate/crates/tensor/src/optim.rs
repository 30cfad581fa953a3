//! AdamW with decoupled weight decay and a warmup + cosine schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Result, TensorError};
use crate::tensor::{Param, Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.98,
            weight_decay: 0.05,
            eps: 1e-8,
        }
    }
}

/// Linear warmup from 0 to `peak`, then cosine decay to `min_lr` at `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub peak: f64,
    pub min_lr: f64,
    pub warmup: u64,
    pub total: u64,
}

impl CosineSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        cosine_lr(step, self.peak, self.min_lr, self.warmup, self.total)
    }
}

/// Steps past `total` clamp to `min_lr`.
pub fn cosine_lr(step: u64, peak: f64, min_lr: f64, warmup: u64, total: u64) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if step >= total || total <= warmup {
        return min_lr;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    min_lr + 0.5 * (peak - min_lr) * (1.0 + (PI * progress).cos())
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
    precision: Precision,
}

impl AdamW {
    pub fn new(config: AdamWConfig, precision: Precision) -> Self {
        AdamW {
            config,
            step: 0,
            moments: BTreeMap::new(),
            precision,
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter carrying a gradient,
    /// then clears the gradients.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(TensorError::Contract(format!("learning rate must be > 0, got {lr}")));
        }
        let mut params: Vec<&mut Param> = params.into_iter().collect();
        for p in &params {
            if let Some(g) = &p.value.grad {
                if g.len() != p.value.numel() {
                    return Err(TensorError::Contract(format!(
                        "gradient for {} has {} elements, parameter has {}",
                        p.name(),
                        g.len(),
                        p.value.numel()
                    )));
                }
            }
            if let Some(mo) = self.moments.get(p.name()) {
                if mo.m.len() != p.value.numel() {
                    return Err(TensorError::Contract(format!(
                        "optimizer state for {} does not match its shape",
                        p.name()
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamWConfig {
            beta1,
            beta2,
            weight_decay,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let prec = self.precision;
        for p in params.iter_mut() {
            if !p.value.requires_grad {
                continue;
            }
            let Some(g) = p.value.grad.take() else { continue };
            let n = g.len();
            let mo = self.moments.entry(p.name().to_string()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let theta = p.value.data_mut();
            for i in 0..n {
                mo.m[i] = prec.round(beta1 * mo.m[i] + (1.0 - beta1) * g[i]);
                mo.v[i] = prec.round(beta2 * mo.v[i] + (1.0 - beta2) * g[i] * g[i]);
                let mhat = mo.m[i] / bc1;
                let vhat = mo.v[i] / bc2;
                let decayed = theta[i] - lr * weight_decay * theta[i];
                theta[i] = prec.round(decayed - lr * mhat / (vhat.sqrt() + eps));
            }
        }
        Ok(())
    }

    /// Optimizer state as named tensors (`<prefix>m.<param>`, `<prefix>v.<param>`,
    /// `<prefix>step`).
    pub fn state_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![(format!("{prefix}step"), Tensor::scalar(self.step as f64))];
        for (name, mo) in &self.moments {
            let n = mo.m.len();
            out.push((format!("{prefix}m.{name}"), Tensor::from_parts(vec![n], mo.m.clone())));
            out.push((format!("{prefix}v.{name}"), Tensor::from_parts(vec![n], mo.v.clone())));
        }
        out
    }

    /// Inverse of [`AdamW::state_tensors`].
    pub fn load_state<'a>(
        &mut self,
        prefix: &str,
        tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
    ) -> Result<()> {
        let mut step = None;
        let mut ms: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut vs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (name, t) in tensors {
            let Some(rest) = name.strip_prefix(prefix) else { continue };
            if rest == "step" {
                step = Some(t.item() as u64);
            } else if let Some(p) = rest.strip_prefix("m.") {
                ms.insert(p.to_string(), t.data().to_vec());
            } else if let Some(p) = rest.strip_prefix("v.") {
                vs.insert(p.to_string(), t.data().to_vec());
            }
        }
        let step = step.ok_or_else(|| TensorError::Contract("optimizer state has no step".into()))?;
        let mut moments = BTreeMap::new();
        for (name, m) in ms {
            let v = vs
                .remove(&name)
                .ok_or_else(|| TensorError::Contract(format!("missing second moment for {name}")))?;
            if v.len() != m.len() {
                return Err(TensorError::Contract(format!("moment sizes differ for {name}")));
            }
            moments.insert(name, Moments { m, v });
        }
        self.step = step;
        self.moments = moments;
        Ok(())
    }
}
