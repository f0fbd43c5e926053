//! Reverse-mode tape. Forward ops append nodes; `backward` walks the nodes
//! in reverse and accumulates parameter gradients into the owning store.

use crate::error::{CplError, Result};

use super::ParameterStore;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Constant or parameter leaf; parameters carry a gradient sink
    /// (tensor name, element offset).
    Leaf { sink: Option<(String, usize)> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Dot(Var, Var),
    /// w is a (rows × cols) leaf, x a length-cols vector.
    MatVec { w: Var, x: Var, rows: usize, cols: usize },
    Concat(Vec<Var>),
    Slice { v: Var, start: usize },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    /// Scalar pick out of a vector.
    Index { v: Var, index: usize },
    /// Elementwise max across same-shape vectors; winners saved for backward.
    MaxOver { vars: Vec<Var>, argmax: Vec<usize> },
    /// weights is a length-k vector, vecs are k same-shape vectors.
    WeightedSum { weights: Var, vecs: Vec<Var> },
    /// Sum of scalar nodes.
    SumScalars(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf { sink: None })
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.constant(vec![value])
    }

    /// Whole parameter tensor as a leaf.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Var {
        let t = store.get(name);
        self.push(
            t.data.clone(),
            Op::Leaf {
                sink: Some((name.to_string(), 0)),
            },
        )
    }

    /// One row of a 2-D parameter tensor (embedding lookup).
    pub fn embed_lookup(&mut self, store: &ParameterStore, name: &str, row: usize) -> Var {
        let t = store.get(name);
        let cols = t.shape[1];
        let offset = row * cols;
        self.push(
            t.data[offset..offset + cols].to_vec(),
            Op::Leaf {
                sink: Some((name.to_string(), offset)),
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(value, Op::Scale(a, c))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let value: f64 = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        self.push(vec![value], Op::Dot(a, b))
    }

    /// Matrix-vector product; `w` must be a (rows × cols) node.
    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Result<Var> {
        if self.nodes[w.0].value.len() != rows * cols {
            return Err(CplError::Dimension {
                expected: rows * cols,
                got: self.nodes[w.0].value.len(),
                context: "matvec weight".to_string(),
            });
        }
        if self.nodes[x.0].value.len() != cols {
            return Err(CplError::Dimension {
                expected: cols,
                got: self.nodes[x.0].value.len(),
                context: "matvec input".to_string(),
            });
        }
        let mut value = vec![0.0; rows];
        {
            let wv = &self.nodes[w.0].value;
            let xv = &self.nodes[x.0].value;
            for (i, out) in value.iter_mut().enumerate() {
                let row = &wv[i * cols..(i + 1) * cols];
                *out = row.iter().zip(xv).map(|(a, b)| a * b).sum();
            }
        }
        Ok(self.push(value, Op::MatVec { w, x, rows, cols }))
    }

    /// `W x + b` with `W` a (rows × cols) parameter node.
    pub fn affine(&mut self, w: Var, b: Var, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let wx = self.matvec(w, x, rows, cols)?;
        Ok(self.add(wx, b))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let value: Vec<f64> = parts
            .iter()
            .flat_map(|p| self.nodes[p.0].value.iter().copied())
            .collect();
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[v.0].value[start..start + len].to_vec();
        self.push(value, Op::Slice { v, start })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|&x| x.max(0.0)).collect();
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0]
            .value
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(value, Op::Sigmoid(a))
    }

    fn softmax_values(logits: &[f64]) -> Vec<f64> {
        // Log-sum-exp stabilization.
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    pub fn softmax(&mut self, logits: Var) -> Var {
        let value = Self::softmax_values(&self.nodes[logits.0].value);
        self.push(value, Op::Softmax(logits))
    }

    pub fn log_softmax(&mut self, logits: Var) -> Var {
        let lv = &self.nodes[logits.0].value;
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let value = lv.iter().map(|x| x - lse).collect();
        self.push(value, Op::LogSoftmax(logits))
    }

    pub fn index(&mut self, v: Var, i: usize) -> Result<Var> {
        if i >= self.nodes[v.0].value.len() {
            return Err(CplError::Dimension {
                expected: self.nodes[v.0].value.len(),
                got: i,
                context: "index out of support".to_string(),
            });
        }
        let value = vec![self.nodes[v.0].value[i]];
        Ok(self.push(value, Op::Index { v, index: i }))
    }

    /// Log-probability of `index` under `softmax(logits)`.
    pub fn categorical_log_prob(&mut self, logits: Var, index: usize) -> Result<Var> {
        let lp = self.log_softmax(logits);
        self.index(lp, index)
    }

    /// Elementwise max across same-shape vectors.
    pub fn max_over(&mut self, vars: &[Var]) -> Var {
        let dim = self.nodes[vars[0].0].value.len();
        let mut value = vec![f64::NEG_INFINITY; dim];
        let mut argmax = vec![0usize; dim];
        for (k, v) in vars.iter().enumerate() {
            for (j, &x) in self.nodes[v.0].value.iter().enumerate() {
                if x > value[j] {
                    value[j] = x;
                    argmax[j] = k;
                }
            }
        }
        self.push(
            value,
            Op::MaxOver {
                vars: vars.to_vec(),
                argmax,
            },
        )
    }

    /// `Σ_k weights[k] · vecs[k]` with differentiable weights.
    pub fn weighted_sum(&mut self, weights: Var, vecs: &[Var]) -> Var {
        let dim = self.nodes[vecs[0].0].value.len();
        let mut value = vec![0.0; dim];
        for (k, v) in vecs.iter().enumerate() {
            let wk = self.nodes[weights.0].value[k];
            for (dst, &x) in value.iter_mut().zip(&self.nodes[v.0].value) {
                *dst += wk * x;
            }
        }
        self.push(
            value,
            Op::WeightedSum {
                weights,
                vecs: vecs.to_vec(),
            },
        )
    }

    pub fn sum_scalars(&mut self, vars: &[Var]) -> Var {
        let value: f64 = vars.iter().map(|v| self.nodes[v.0].value[0]).sum();
        self.push(vec![value], Op::SumScalars(vars.to_vec()))
    }

    /// One step of an LSTM cell. `w` is a (4·nh × (nx+nh)) weight node, `b`
    /// a 4·nh bias node; gate order i, f, o, g.
    pub fn lstm_step(
        &mut self,
        w: Var,
        b: Var,
        x: Var,
        h_prev: Var,
        c_prev: Var,
        nh: usize,
    ) -> Result<(Var, Var)> {
        let nx = self.nodes[x.0].value.len();
        let xh = self.concat(&[x, h_prev]);
        let z = self.affine(w, b, xh, 4 * nh, nx + nh)?;
        let i = self.slice(z, 0, nh);
        let f = self.slice(z, nh, nh);
        let o = self.slice(z, 2 * nh, nh);
        let g = self.slice(z, 3 * nh, nh);
        let i = self.sigmoid(i);
        let f = self.sigmoid(f);
        let o = self.sigmoid(o);
        let g = self.tanh(g);
        let fc = self.mul(f, c_prev);
        let ig = self.mul(i, g);
        let c = self.add(fc, ig);
        let tc = self.tanh(c);
        let h = self.mul(o, tc);
        Ok((h, c))
    }

    /// Reverse pass from scalar `loss` with seed gradient `seed`; parameter
    /// gradients accumulate into `store`.
    pub fn backward(&mut self, loss: Var, seed: f64, store: &mut ParameterStore) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(CplError::Lifecycle("backward on empty tape".to_string()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(CplError::Dimension {
                expected: 1,
                got: self.nodes[loss.0].value.len(),
                context: "backward loss".to_string(),
            });
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        grads[loss.0][0] = seed;
        for idx in (0..=loss.0).rev() {
            if grads[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            match &self.nodes[idx].op {
                Op::Leaf { sink } => {
                    if let Some((name, offset)) = sink {
                        store.accumulate_grad(name, *offset, &g);
                    }
                }
                Op::Add(a, b) => {
                    for (dst, &gi) in grads[a.0].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                    for (dst, &gi) in grads[b.0].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                }
                Op::Sub(a, b) => {
                    for (dst, &gi) in grads[a.0].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                    for (dst, &gi) in grads[b.0].iter_mut().zip(&g) {
                        *dst -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for j in 0..g.len() {
                        let av = self.nodes[a.0].value[j];
                        let bv = self.nodes[b.0].value[j];
                        grads[a.0][j] += g[j] * bv;
                        grads[b.0][j] += g[j] * av;
                    }
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    for (dst, &gi) in grads[a.0].iter_mut().zip(&g) {
                        *dst += gi * c;
                    }
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let gs = g[0];
                    for j in 0..self.nodes[a.0].value.len() {
                        let av = self.nodes[a.0].value[j];
                        let bv = self.nodes[b.0].value[j];
                        grads[a.0][j] += gs * bv;
                        grads[b.0][j] += gs * av;
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (w, x, rows, cols) = (*w, *x, *rows, *cols);
                    for i in 0..rows {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        for j in 0..cols {
                            let wij = self.nodes[w.0].value[i * cols + j];
                            let xj = self.nodes[x.0].value[j];
                            grads[w.0][i * cols + j] += gi * xj;
                            grads[x.0][j] += gi * wij;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        for (dst, &gi) in grads[p.0].iter_mut().zip(&g[off..off + len]) {
                            *dst += gi;
                        }
                        off += len;
                    }
                }
                Op::Slice { v, start } => {
                    let (v, start) = (*v, *start);
                    for (dst, &gi) in grads[v.0][start..start + g.len()].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    for j in 0..g.len() {
                        if self.nodes[a.0].value[j] > 0.0 {
                            grads[a.0][j] += g[j];
                        }
                    }
                }
                Op::Tanh(a) => {
                    let a = *a;
                    for j in 0..g.len() {
                        let y = self.nodes[idx].value[j];
                        grads[a.0][j] += g[j] * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    for j in 0..g.len() {
                        let y = self.nodes[idx].value[j];
                        grads[a.0][j] += g[j] * y * (1.0 - y);
                    }
                }
                Op::Softmax(a) => {
                    let a = *a;
                    let p = &self.nodes[idx].value;
                    let dot: f64 = g.iter().zip(p).map(|(gi, pi)| gi * pi).sum();
                    for j in 0..g.len() {
                        grads[a.0][j] += p[j] * (g[j] - dot);
                    }
                }
                Op::LogSoftmax(a) => {
                    let a = *a;
                    let gsum: f64 = g.iter().sum();
                    let lp = &self.nodes[idx].value;
                    for j in 0..g.len() {
                        grads[a.0][j] += g[j] - lp[j].exp() * gsum;
                    }
                }
                Op::Index { v, index } => {
                    grads[v.0][*index] += g[0];
                }
                Op::MaxOver { vars, argmax } => {
                    let vars = vars.clone();
                    let argmax = argmax.clone();
                    for (j, &k) in argmax.iter().enumerate() {
                        grads[vars[k].0][j] += g[j];
                    }
                }
                Op::WeightedSum { weights, vecs } => {
                    let (weights, vecs) = (*weights, vecs.clone());
                    for (k, v) in vecs.iter().enumerate() {
                        let wk = self.nodes[weights.0].value[k];
                        let mut acc = 0.0;
                        for j in 0..g.len() {
                            grads[v.0][j] += wk * g[j];
                            acc += g[j] * self.nodes[v.0].value[j];
                        }
                        grads[weights.0][k] += acc;
                    }
                }
                Op::SumScalars(vars) => {
                    for v in vars.clone() {
                        grads[v.0][0] += g[0];
                    }
                }
            }
        }
        Ok(())
    }
}
