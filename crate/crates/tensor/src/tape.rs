use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tensor::{Param, Precision, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    VStack(Vec<Var>),
    HStack(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Conv1d {
        x: Var,
        weight: Var,
        bias: Var,
    },
    AdaptiveAvgPool {
        x: Var,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Single-use record of a forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    precision: Precision,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new(Precision::F32)
    }
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        mut data: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        self.precision.round_slice(&mut data);
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = &self.node(v).shape;
        match s.len() {
            1 => Ok((1, s[0])),
            2 => Ok((s[0], s[1])),
            _ => Err(TensorError::shape(op, s, &[])),
        }
    }

    // ---- values -------------------------------------------------------

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.node(v).data
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::from_parts(n.shape.clone(), n.data.clone())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).data[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    // ---- leaves -------------------------------------------------------

    /// Adds a leaf; it participates in differentiation iff
    /// `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Result<Var> {
        self.push(
            "leaf",
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad,
        )
    }

    /// Adds a non-differentiable input.
    pub fn constant(&mut self, t: &Tensor) -> Result<Var> {
        self.push(
            "constant",
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            false,
        )
    }

    /// Binds a named parameter. Binding the same name twice returns the
    /// same node.
    pub fn param(&mut self, p: &Param) -> Result<Var> {
        if let Some(&v) = self.params.get(p.name()) {
            return Ok(v);
        }
        let v = self.leaf(&p.value)?;
        self.params.insert(p.name().to_string(), v);
        Ok(v)
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 || self.node(a).shape.len() != 2 || self.node(b).shape.len() != 2 {
            return Err(TensorError::shape(
                "matmul",
                &self.node(a).shape,
                &self.node(b).shape,
            ));
        }
        let data = kernels::matmul(&self.node(a).data, &self.node(b).data, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push("matmul", vec![m, n], data, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let data = kernels::transpose(&self.node(a).data, m, n);
        let rg = self.rg(&[a]);
        self.push("transpose", vec![n, m], data, Op::Transpose(a), rg)
    }

    // ---- elementwise ---------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.node(a).shape != self.node(b).shape {
            return Err(TensorError::shape(
                op,
                &self.node(a).shape,
                &self.node(b).shape,
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(&self.node(a).data, &self.node(b).data, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push("add", self.node(a).shape.clone(), data, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(&self.node(a).data, &self.node(b).data, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push("sub", self.node(a).shape.clone(), data, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(&self.node(a).data, &self.node(b).data, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push("mul", self.node(a).shape.clone(), data, Op::Mul(a, b), rg)
    }

    /// `x[m×n] + row[n]`, the row broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_row")?;
        if self.node(row).data.len() != n {
            return Err(TensorError::shape(
                "add_row",
                &self.node(x).shape,
                &self.node(row).shape,
            ));
        }
        let r = &self.node(row).data;
        let mut data = self.node(x).data.clone();
        for i in 0..m {
            for (o, b) in data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, row]);
        self.push("add_row", self.node(x).shape.clone(), data, Op::AddRow(x, row), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.node(x).data.iter().map(|v| v * c).collect();
        let rg = self.rg(&[x]);
        self.push("scale", self.node(x).shape.clone(), data, Op::Scale(x, c), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let data = self.node(x).data.iter().map(|&v| kernels::sigmoid(v)).collect();
        let rg = self.rg(&[x]);
        self.push("sigmoid", self.node(x).shape.clone(), data, Op::Sigmoid(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self.node(x).data.iter().map(|&v| kernels::gelu(v)).collect();
        let rg = self.rg(&[x]);
        self.push("gelu", self.node(x).shape.clone(), data, Op::Gelu(x), rg)
    }

    // ---- normalisation -------------------------------------------------

    /// Row-wise softmax, stabilised by subtracting the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax_rows(x, None)
    }

    /// Row-wise softmax restricted to allowed entries; disallowed entries get
    /// probability exactly zero. Every row must allow at least one entry.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.dims2(x, "softmax_rows")?;
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(TensorError::shape("softmax_rows", &[m, n], &[mask.len()]));
            }
        }
        let xs = &self.node(x).data;
        if xs.iter().any(|v| v.is_nan()) {
            return Err(TensorError::NonFinite { op: "softmax_rows" });
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let allowed = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            let mut mx = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if allowed(j) && v > mx {
                    mx = v;
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(TensorError::Contract(format!(
                    "softmax row {i} has no allowed entries"
                )));
            }
            let out = &mut data[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for (j, (o, &v)) in out.iter_mut().zip(row).enumerate() {
                if allowed(j) {
                    *o = (v - mx).exp();
                    sum += *o;
                }
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let rg = self.rg(&[x]);
        self.push("softmax_rows", vec![m, n], data, Op::Softmax(x), rg)
    }

    /// Per-row layer normalisation with ε = 1e-5 inside the square root.
    /// Constant rows normalise to zero before the affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (m, d) = self.dims2(x, "layer_norm")?;
        if d == 0 {
            return Err(TensorError::Contract("layer_norm needs d >= 1".into()));
        }
        if self.node(gain).data.len() != d || self.node(bias).data.len() != d {
            return Err(TensorError::shape(
                "layer_norm",
                &self.node(x).shape,
                &self.node(gain).shape,
            ));
        }
        let xs = &self.node(x).data;
        let g = &self.node(gain).data;
        let b = &self.node(bias).data;
        let mut xhat = vec![0.0; m * d];
        let mut rstd = vec![0.0; m];
        let mut data = vec![0.0; m * d];
        for i in 0..m {
            let row = &xs[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + EPS).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                data[i * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            "layer_norm",
            vec![m, d],
            data,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Scales every row to unit L2 norm (norms floored at 1e-12).
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "l2_normalize_rows")?;
        let xs = &self.node(x).data;
        let mut norms = vec![0.0; m];
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms[i] = nrm;
            for j in 0..n {
                data[i * n + j] = row[j] / nrm;
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            "l2_normalize_rows",
            self.node(x).shape.clone(),
            data,
            Op::L2NormalizeRows { x, norms },
            rg,
        )
    }

    // ---- losses ----------------------------------------------------------

    /// Mean negative log-softmax of the targets over non-ignored rows.
    /// `None` targets are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (m, v) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != m {
            return Err(TensorError::shape("cross_entropy", &[m, v], &[targets.len()]));
        }
        for t in targets.iter().flatten() {
            if *t >= v {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: *t,
                    bound: v,
                });
            }
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(TensorError::Contract(
                "cross_entropy with every target ignored".into(),
            ));
        }
        let xs = &self.node(logits).data;
        let mut probs = vec![0.0; m * v];
        let mut loss = 0.0;
        for i in 0..m {
            let row = &xs[i * v..(i + 1) * v];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            let lse = mx + sum.ln();
            for j in 0..v {
                probs[i * v + j] = (row[j] - lse).exp();
            }
            if let Some(t) = targets[i] {
                loss += lse - row[t];
            }
        }
        let loss = loss / count as f64;
        let rg = self.rg(&[logits]);
        self.push(
            "cross_entropy",
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        )
    }

    /// Convenience wrapper: targets with an ignore index.
    pub fn cross_entropy_ignore(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_index: Option<usize>,
    ) -> Result<Var> {
        let t: Vec<Option<usize>> = targets
            .iter()
            .map(|&t| if Some(t) == ignore_index { None } else { Some(t) })
            .collect();
        self.cross_entropy(logits, &t)
    }

    /// Mean binary cross-entropy on raw logits, targets in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let xs = &self.node(logits).data;
        if xs.len() != targets.len() || xs.is_empty() {
            return Err(TensorError::shape(
                "bce_with_logits",
                &self.node(logits).shape,
                &[targets.len()],
            ));
        }
        let loss = xs
            .iter()
            .zip(targets)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / xs.len() as f64;
        let rg = self.rg(&[logits]);
        self.push(
            "bce_with_logits",
            Vec::new(),
            vec![loss],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        )
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x).data.iter().sum();
        let rg = self.rg(&[x]);
        self.push("sum", Vec::new(), vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = &self.node(x).data;
        if d.is_empty() {
            return Err(TensorError::Contract("mean of empty tensor".into()));
        }
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(&[x]);
        self.push("mean", Vec::new(), vec![s], Op::Mean(x), rg)
    }

    /// Column means: `[m×n] -> [1×n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "mean_rows")?;
        let xs = &self.node(x).data;
        let mut data = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                data[j] += xs[i * n + j];
            }
        }
        data.iter_mut().for_each(|v| *v /= m as f64);
        let rg = self.rg(&[x]);
        self.push("mean_rows", vec![1, n], data, Op::MeanRows(x), rg)
    }

    /// Column maxima: `[m×n] -> [1×n]`; ties resolve to the first row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "max_rows")?;
        if m == 0 {
            return Err(TensorError::Contract("max over zero rows".into()));
        }
        let xs = &self.node(x).data;
        let mut argmax = vec![0usize; n];
        let mut data = xs[..n].to_vec();
        for i in 1..m {
            for j in 0..n {
                if xs[i * n + j] > data[j] {
                    data[j] = xs[i * n + j];
                    argmax[j] = i;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push("max_rows", vec![1, n], data, Op::MaxRows { x, argmax }, rg)
    }

    // ---- shape -----------------------------------------------------------

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_rows")?;
        if start + len > m {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                bound: m,
            });
        }
        let data = self.node(x).data[start * n..(start + len) * n].to_vec();
        let rg = self.rg(&[x]);
        self.push("slice_rows", vec![len, n], data, Op::SliceRows { x, start }, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start + len > n {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                bound: n,
            });
        }
        let xs = &self.node(x).data;
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&xs[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(&[x]);
        self.push("slice_cols", vec![m, len], data, Op::SliceCols { x, start }, rg)
    }

    /// Concatenates matrices with equal column counts top to bottom.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Contract("vstack of nothing".into()))?;
        let (_, n) = self.dims2(first, "vstack")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, c) = self.dims2(p, "vstack")?;
            if c != n {
                return Err(TensorError::shape(
                    "vstack",
                    &self.node(first).shape,
                    &self.node(p).shape,
                ));
            }
            rows += m;
            data.extend_from_slice(&self.node(p).data);
        }
        let rg = self.rg(parts);
        self.push("vstack", vec![rows, n], data, Op::VStack(parts.to_vec()), rg)
    }

    /// Concatenates matrices with equal row counts left to right.
    pub fn hstack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Contract("hstack of nothing".into()))?;
        let (m, _) = self.dims2(first, "hstack")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "hstack")?;
            if r != m {
                return Err(TensorError::shape(
                    "hstack",
                    &self.node(first).shape,
                    &self.node(p).shape,
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.node(p).data[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        self.push("hstack", vec![m, total], data, Op::HStack(parts.to_vec()), rg)
    }

    /// Row lookup: `table[V×d]`, ids → `[len×d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table, "gather_rows")?;
        let t = &self.node(table).data;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        let rg = self.rg(&[table]);
        self.push(
            "gather_rows",
            vec![ids.len(), d],
            data,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    // ---- sequence ops ----------------------------------------------------

    /// 1-D convolution along rows with same padding and stride 1.
    /// `x[n×c_in]`, `weight[k×c_in×c_out]` (k odd), `bias[c_out]`.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, cin) = self.dims2(x, "conv1d")?;
        let ws = self.node(weight).shape.clone();
        if ws.len() != 3 || ws[1] != cin || ws[0].is_multiple_of(2) {
            return Err(TensorError::shape("conv1d", &self.node(x).shape, &ws));
        }
        let (k, cout) = (ws[0], ws[2]);
        if self.node(bias).data.len() != cout {
            return Err(TensorError::shape("conv1d", &ws, &self.node(bias).shape));
        }
        let half = k / 2;
        let xs = &self.node(x).data;
        let w = &self.node(weight).data;
        let mut data = Vec::with_capacity(n * cout);
        for _ in 0..n {
            data.extend_from_slice(&self.node(bias).data);
        }
        for o in 0..k {
            // output row i reads input row i + o - half
            let lo = half.saturating_sub(o);
            let hi = (n + half).saturating_sub(o).min(n);
            if lo >= hi {
                continue;
            }
            let src = &xs[(lo + o - half) * cin..(hi + o - half) * cin];
            let prod = kernels::matmul(src, &w[o * cin * cout..(o + 1) * cin * cout], hi - lo, cin, cout);
            for (d, p) in data[lo * cout..hi * cout].iter_mut().zip(&prod) {
                *d += p;
            }
        }
        let rg = self.rg(&[x, weight, bias]);
        self.push("conv1d", vec![n, cout], data, Op::Conv1d { x, weight, bias }, rg)
    }

    /// Adaptive average pooling of `[n×c]` to `[out×c]` along rows.
    pub fn adaptive_avg_pool_rows(&mut self, x: Var, out: usize) -> Result<Var> {
        let (n, c) = self.dims2(x, "adaptive_avg_pool_rows")?;
        if n == 0 || out == 0 {
            return Err(TensorError::Contract(
                "adaptive pooling needs at least one input and output row".into(),
            ));
        }
        let xs = &self.node(x).data;
        let mut data = vec![0.0; out * c];
        for i in 0..out {
            let (s, e) = kernels::pool_bounds(n, out, i);
            let w = 1.0 / (e - s) as f64;
            for r in s..e {
                for j in 0..c {
                    data[i * c + j] += xs[r * c + j] * w;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            "adaptive_avg_pool_rows",
            vec![out, c],
            data,
            Op::AdaptiveAvgPool { x },
            rg,
        )
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let ln = self.node(loss);
        if ln.data.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop(i, &g, &mut grads);
        }
        let mut named = BTreeMap::new();
        for (name, v) in &self.params {
            if let Some(mut g) = grads[v.0].take() {
                self.precision.round_slice(&mut g);
                named.insert(name.clone(), g);
            }
        }
        Ok(Gradients {
            leaves: grads,
            named,
        })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].data.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.nodes[a.0].requires_grad {
                    let da = kernels::matmul_nt(g, &self.nodes[b.0].data, m, n, k);
                    add_into(self.acc(grads, *a).unwrap(), &da);
                }
                if self.nodes[b.0].requires_grad {
                    let db = kernels::matmul_tn(&self.nodes[a.0].data, g, m, k, n);
                    add_into(self.acc(grads, *b).unwrap(), &db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (node.shape[0], node.shape[1]);
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, &kernels::transpose(g, m, n));
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
                if let Some(ga) = self.acc(grads, *a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * bd[j];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for j in 0..g.len() {
                        gb[j] += g[j] * ad[j];
                    }
                }
            }
            Op::AddRow(x, row) => {
                if let Some(gx) = self.acc(grads, *x) {
                    add_into(gx, g);
                }
                if let Some(gr) = self.acc(grads, *row) {
                    let n = gr.len();
                    for chunk in g.chunks(n) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v * c);
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.data;
                if let Some(gx) = self.acc(grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
            }
            Op::Gelu(x) => {
                let xd = &self.nodes[x.0].data;
                if let Some(gx) = self.acc(grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * kernels::gelu_grad(xd[j]);
                    }
                }
            }
            Op::Softmax(x) => {
                let (m, n) = (node.shape[0], node.shape[1]);
                let y = &node.data;
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (m, d) = (node.shape[0], node.shape[1]);
                let gw = self.nodes[gain.0].data.clone();
                if let Some(gg) = self.acc(grads, *gain) {
                    for r in 0..m {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for r in 0..m {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..m {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            let dh = g[r * d + j] * gw[j];
                            s1 += dh;
                            s2 += dh * xhat[r * d + j];
                        }
                        let (s1, s2) = (s1 / d as f64, s2 / d as f64);
                        for j in 0..d {
                            let dh = g[r * d + j] * gw[j];
                            gx[r * d + j] += rstd[r] * (dh - s1 - xhat[r * d + j] * s2);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let v = self.nodes[logits.0].shape[1];
                let scale = g[0] / *count as f64;
                if let Some(gl) = self.acc(grads, *logits) {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        for j in 0..v {
                            gl[r * v + j] += scale * probs[r * v + j];
                        }
                        gl[r * v + t] -= scale;
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let xs = &self.nodes[logits.0].data;
                let scale = g[0] / xs.len() as f64;
                if let Some(gl) = self.acc(grads, *logits) {
                    for j in 0..xs.len() {
                        gl[j] += scale * (kernels::sigmoid(xs[j]) - targets[j]);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|o| *o += s);
                }
            }
            Op::MeanRows(x) => {
                let n = node.shape[1];
                if let Some(gx) = self.acc(grads, *x) {
                    let m = gx.len() / n.max(1);
                    for r in 0..m {
                        for j in 0..n {
                            gx[r * n + j] += g[j] / m as f64;
                        }
                    }
                }
            }
            Op::MaxRows { x, argmax } => {
                let n = node.shape[1];
                if let Some(gx) = self.acc(grads, *x) {
                    for (j, &r) in argmax.iter().enumerate() {
                        gx[r * n + j] += g[j];
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let n = node.shape[1];
                if let Some(gx) = self.acc(grads, *x) {
                    add_into(&mut gx[start * n..start * n + g.len()], g);
                }
            }
            Op::SliceCols { x, start } => {
                let (m, len) = (node.shape[0], node.shape[1]);
                let n = self.nodes[x.0].shape[1];
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..m {
                        add_into(
                            &mut gx[r * n + start..r * n + start + len],
                            &g[r * len..(r + 1) * len],
                        );
                    }
                }
            }
            Op::VStack(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.0].data.len();
                    if let Some(gp) = self.acc(grads, *p) {
                        add_into(gp, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::HStack(parts) => {
                let (m, total) = (node.shape[0], node.shape[1]);
                let mut off = 0;
                for p in parts {
                    let w = self.nodes[p.0].data.len() / m.max(1);
                    if let Some(gp) = self.acc(grads, *p) {
                        for r in 0..m {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + off..r * total + off + w],
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::Gather { table, ids } => {
                let d = node.shape[1];
                if let Some(gt) = self.acc(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                let n = node.shape[node.shape.len() - 1];
                let y = &node.data;
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, nrm) in norms.iter().enumerate() {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] += (gr[j] - yr[j] * dot) / nrm;
                        }
                    }
                }
            }
            Op::Conv1d { x, weight, bias } => {
                let n = node.shape[0];
                let ws = &self.nodes[weight.0].shape;
                let (k, cin, cout) = (ws[0], ws[1], ws[2]);
                let half = k / 2;
                let xs = &self.nodes[x.0].data;
                let w = &self.nodes[weight.0].data;
                if let Some(gb) = self.acc(grads, *bias) {
                    for chunk in g.chunks(cout) {
                        add_into(gb, chunk);
                    }
                }
                for o in 0..k {
                    let lo = half.saturating_sub(o);
                    let hi = (n + half).saturating_sub(o).min(n);
                    if lo >= hi {
                        continue;
                    }
                    let src_lo = lo + o - half;
                    let src_hi = hi + o - half;
                    let gout = &g[lo * cout..hi * cout];
                    if self.nodes[weight.0].requires_grad {
                        let dw = kernels::matmul_tn(
                            &xs[src_lo * cin..src_hi * cin],
                            gout,
                            hi - lo,
                            cin,
                            cout,
                        );
                        let gw = self.acc(grads, *weight).unwrap();
                        add_into(&mut gw[o * cin * cout..(o + 1) * cin * cout], &dw);
                    }
                    if self.nodes[x.0].requires_grad {
                        let dx = kernels::matmul_nt(
                            gout,
                            &w[o * cin * cout..(o + 1) * cin * cout],
                            hi - lo,
                            cout,
                            cin,
                        );
                        let gx = self.acc(grads, *x).unwrap();
                        add_into(&mut gx[src_lo * cin..src_hi * cin], &dx);
                    }
                }
            }
            Op::AdaptiveAvgPool { x } => {
                let (out, c) = (node.shape[0], node.shape[1]);
                let n = self.nodes[x.0].shape[0];
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..out {
                        let (s, e) = kernels::pool_bounds(n, out, i);
                        let w = 1.0 / (e - s) as f64;
                        for r in s..e {
                            for j in 0..c {
                                gx[r * c + j] += g[i * c + j] * w;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Vec<f64>>>,
    named: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    /// Gradient of a leaf node, if it required one and was reached.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.named.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.named.keys().map(String::as_str)
    }

    /// Moves parameter gradients into `Tensor::grad`; parameters that were
    /// not reached get `None`.
    pub fn store_into<'a>(mut self, params: impl IntoIterator<Item = &'a mut Param>) {
        for p in params {
            p.value.grad = self.named.remove(p.name());
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
