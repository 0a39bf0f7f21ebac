//! Small reverse-mode autodiff over row-major 2-D tensors.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape {rows}x{cols} vs {} values", data.len());
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor::new(rows, cols, vec![v; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(1, 1, vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// Backward rule for a custom op: receives the output gradient and the input
/// values, returns one gradient per input.
pub type CustomBackward = Box<dyn Fn(&Tensor, &[&Tensor]) -> Vec<Tensor>>;

enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    MulRow(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    SoftmaxRows(usize),
    Pairwise { q: usize, k: usize, n: usize, scale: f64 },
    Attend { logits: usize, v: usize, n: usize, weights: Vec<f64> },
    MeanRows(usize),
    Sum(usize),
    ConcatCols(Vec<usize>),
    Nll { p: usize, targets: Vec<usize>, weights: Vec<f64> },
    Bce { p: usize, targets: Vec<f64> },
    Custom { inputs: Vec<usize>, backward: CustomBackward },
}

struct Node {
    value: Tensor,
    op: Op,
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

pub const PROB_FLOOR: f64 = 1e-12;
pub const BCE_CLAMP: f64 = 1e-7;
const LN_EPS: f64 = 1e-5;

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    /// Count of probabilities that hit `PROB_FLOOR` inside `nll`.
    pub clamped: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape {
            return Err(Error::ForeignVariable);
        }
        Ok(match &self.grads[v.idx] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.idx];
                Tensor::zeros(r, c)
            }
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            clamped: 0,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable from another tape");
        v.idx
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v)].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (x, w) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(x.cols, w.rows, "matmul {}x{} by {}x{}", x.rows, x.cols, w.rows, w.cols);
        let mut out = Tensor::zeros(x.rows, w.cols);
        matmul_into(&x.data, &w.data, &mut out.data, x.rows, x.cols, w.cols);
        self.push(out, Op::MatMul(ia, ib))
    }

    /// `a + b` with `b` a single row broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (x, bias) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!((bias.rows, bias.cols), (1, x.cols));
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols) {
            for (o, b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(ia, ib))
    }

    /// `a * b` with `b` a single row broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (x, s) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!((s.rows, s.cols), (1, x.cols));
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols) {
            for (o, b) in row.iter_mut().zip(&s.data) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRow(ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(x.shape(), y.shape());
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        self.push(Tensor::new(x.rows, x.cols, data), Op::Add(ia, ib))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(x.shape(), y.shape());
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        self.push(Tensor::new(x.rows, x.cols, data), Op::Mul(ia, ib))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ia = self.idx(a);
        let x = &self.nodes[ia].value;
        let data = x.data.iter().map(|v| v * s).collect();
        self.push(Tensor::new(x.rows, x.cols, data), Op::Scale(ia, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let ia = self.idx(a);
        let x = &self.nodes[ia].value;
        let data = x.data.iter().map(|v| v + s).collect();
        self.push(Tensor::new(x.rows, x.cols, data), Op::AddScalar(ia))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let x = &self.nodes[ia].value;
        let data = x.data.iter().map(|v| v.max(0.0)).collect();
        self.push(Tensor::new(x.rows, x.cols, data), Op::Relu(ia))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let x = &self.nodes[ia].value;
        let data = x.data.iter().map(|v| v.tanh()).collect();
        self.push(Tensor::new(x.rows, x.cols, data), Op::Tanh(ia))
    }

    /// Row-wise normalization with learned scale and shift rows.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Var {
        let (ix, ig, ib) = (self.idx(a), self.idx(gamma), self.idx(beta));
        let x = &self.nodes[ix].value;
        let (g, b) = (&self.nodes[ig].value, &self.nodes[ib].value);
        let c = x.cols;
        assert_eq!((g.rows, g.cols, b.rows, b.cols), (1, c, 1, c));
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; x.rows];
        let mut out = Tensor::zeros(x.rows, c);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for k in 0..c {
                let h = (row[k] - mean) * is;
                xhat[r * c + k] = h;
                out.data[r * c + k] = g.data[k] * h + b.data[k];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let x = &self.nodes[ia].value;
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols) {
            softmax_in_place(row);
        }
        self.push(out, Op::SoftmaxRows(ia))
    }

    /// `Y[(i, j), f] = scale * q[i, f] * k[j, f]` for `n` nodes.
    pub fn pairwise(&mut self, q: Var, k: Var, scale: f64) -> Var {
        let (iq, ik) = (self.idx(q), self.idx(k));
        let (qv, kv) = (&self.nodes[iq].value, &self.nodes[ik].value);
        assert_eq!(qv.shape(), kv.shape());
        let (n, d) = qv.shape();
        let mut out = Tensor::zeros(n * n, d);
        for i in 0..n {
            for j in 0..n {
                let o = &mut out.data[(i * n + j) * d..(i * n + j + 1) * d];
                for f in 0..d {
                    o[f] = scale * qv.data[i * d + f] * kv.data[j * d + f];
                }
            }
        }
        self.push(out, Op::Pairwise { q: iq, k: ik, n, scale })
    }

    /// For every node `i` and feature `f`, softmax of `logits[(i, j), f]` over
    /// `j`, then the weighted sum of `v[j, f]`.
    pub fn attend(&mut self, logits: Var, v: Var) -> Var {
        let (il, iv) = (self.idx(logits), self.idx(v));
        let (lv, vv) = (&self.nodes[il].value, &self.nodes[iv].value);
        let (n, d) = vv.shape();
        assert_eq!(lv.shape(), (n * n, d));
        let mut weights = vec![0.0; n * n * d];
        let mut out = Tensor::zeros(n, d);
        let mut col = vec![0.0; n];
        for i in 0..n {
            for f in 0..d {
                for j in 0..n {
                    col[j] = lv.data[(i * n + j) * d + f];
                }
                softmax_in_place(&mut col);
                let mut acc = 0.0;
                for j in 0..n {
                    weights[(i * n + j) * d + f] = col[j];
                    acc += col[j] * vv.data[j * d + f];
                }
                out.data[i * d + f] = acc;
            }
        }
        self.push(out, Op::Attend { logits: il, v: iv, n, weights })
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let x = &self.nodes[ia].value;
        let mut out = Tensor::zeros(1, x.cols);
        if x.rows > 0 {
            for row in x.data.chunks(x.cols) {
                out.add_assign(&Tensor::new(1, x.cols, row.to_vec()));
            }
            for o in &mut out.data {
                *o /= x.rows as f64;
            }
        }
        self.push(out, Op::MeanRows(ia))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let s = self.nodes[ia].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(ia))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let ids: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect();
        let rows = self.nodes[ids[0]].value.rows;
        let cols: usize = ids.iter().map(|&i| self.nodes[i].value.cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &i in &ids {
            let t = &self.nodes[i].value;
            assert_eq!(t.rows, rows);
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + t.cols].copy_from_slice(t.row(r));
            }
            off += t.cols;
        }
        self.push(out, Op::ConcatCols(ids))
    }

    /// `sum_r w_r * -ln p[r, target_r]`, probabilities floored at 1e-12.
    pub fn nll(&mut self, p: Var, targets: &[usize], weights: &[f64]) -> Var {
        let ip = self.idx(p);
        let pv = &self.nodes[ip].value;
        assert_eq!(targets.len(), pv.rows);
        assert_eq!(weights.len(), pv.rows);
        let mut loss = 0.0;
        let mut clamped = 0;
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            let v = pv.at(r, t);
            if v < PROB_FLOOR {
                clamped += 1;
            }
            loss -= w * v.max(PROB_FLOOR).ln();
        }
        self.clamped += clamped;
        self.push(
            Tensor::scalar(loss),
            Op::Nll {
                p: ip,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    /// Mean binary cross-entropy with inputs clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce_mean(&mut self, p: Var, targets: &[f64]) -> Var {
        let ip = self.idx(p);
        let pv = &self.nodes[ip].value;
        assert_eq!(targets.len(), pv.len());
        let mut loss = 0.0;
        for (&x, &y) in pv.data.iter().zip(targets) {
            let c = x.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            loss -= y * c.ln() + (1.0 - y) * (1.0 - c).ln();
        }
        loss /= targets.len().max(1) as f64;
        self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p: ip,
                targets: targets.to_vec(),
            },
        )
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Var {
        let inputs = inputs.iter().map(|&v| self.idx(v)).collect();
        self.push(value, Op::Custom { inputs, backward })
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id {
            return Err(Error::ForeignVariable);
        }
        let root = loss.idx;
        let lv = &self.nodes[root].value;
        if lv.shape() != (1, 1) {
            return Err(Error::SizeMismatch {
                what: "loss elements",
                expected: 1,
                got: lv.len(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(1.0));
        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |i: usize| &self.nodes[i].value;
        let mut acc = |i: usize, t: Tensor| match &mut grads[i] {
            Some(e) => e.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (x, w) = (val(a), val(b));
                let (m, k, n) = (x.rows, x.cols, w.cols);
                let mut gx = Tensor::zeros(m, k);
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g.data[i * n + j] * w.data[p * n + j];
                        }
                        gx.data[i * k + p] = s;
                    }
                }
                let mut gw = Tensor::zeros(k, n);
                for i in 0..m {
                    for p in 0..k {
                        let xv = x.data[i * k + p];
                        if xv == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gw.data[p * n + j] += xv * g.data[i * n + j];
                        }
                    }
                }
                acc(a, gx);
                acc(b, gw);
            }
            &Op::AddBias(a, b) => {
                let mut gb = Tensor::zeros(1, g.cols);
                for row in g.data.chunks(g.cols) {
                    for (o, v) in gb.data.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                acc(a, g.clone());
                acc(b, gb);
            }
            &Op::MulRow(a, b) => {
                let (x, s) = (val(a), val(b));
                let c = x.cols;
                let mut gx = g.clone();
                let mut gs = Tensor::zeros(1, c);
                for r in 0..x.rows {
                    for k in 0..c {
                        gx.data[r * c + k] *= s.data[k];
                        gs.data[k] += g.data[r * c + k] * x.data[r * c + k];
                    }
                }
                acc(a, gx);
                acc(b, gs);
            }
            &Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            &Op::Mul(a, b) => {
                let (x, y) = (val(a), val(b));
                let ga = g.data.iter().zip(&y.data).map(|(d, v)| d * v).collect();
                let gb = g.data.iter().zip(&x.data).map(|(d, v)| d * v).collect();
                acc(a, Tensor::new(g.rows, g.cols, ga));
                acc(b, Tensor::new(g.rows, g.cols, gb));
            }
            &Op::Scale(a, s) => {
                acc(a, Tensor::new(g.rows, g.cols, g.data.iter().map(|d| d * s).collect()));
            }
            &Op::AddScalar(a) => acc(a, g.clone()),
            &Op::Relu(a) => {
                let x = val(a);
                let d = g.data.iter().zip(&x.data).map(|(d, v)| if *v > 0.0 { *d } else { 0.0 }).collect();
                acc(a, Tensor::new(g.rows, g.cols, d));
            }
            &Op::Tanh(a) => {
                let d = g.data.iter().zip(&out.data).map(|(d, y)| d * (1.0 - y * y)).collect();
                acc(a, Tensor::new(g.rows, g.cols, d));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gm = val(*gamma);
                let c = g.cols;
                let mut gx = Tensor::zeros(g.rows, c);
                let mut gg = Tensor::zeros(1, c);
                let mut gb = Tensor::zeros(1, c);
                let mut dh = vec![0.0; c];
                for r in 0..g.rows {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for k in 0..c {
                        let d = g.data[r * c + k];
                        let h = xhat[r * c + k];
                        gg.data[k] += d * h;
                        gb.data[k] += d;
                        dh[k] = d * gm.data[k];
                        mean_dh += dh[k];
                        mean_dh_h += dh[k] * h;
                    }
                    mean_dh /= c as f64;
                    mean_dh_h /= c as f64;
                    for k in 0..c {
                        gx.data[r * c + k] = inv_std[r] * (dh[k] - mean_dh - xhat[r * c + k] * mean_dh_h);
                    }
                }
                acc(*x, gx);
                acc(*gamma, gg);
                acc(*beta, gb);
            }
            &Op::SoftmaxRows(a) => {
                let mut gx = Tensor::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let y = out.row(r);
                    let d = g.row(r);
                    let dot: f64 = y.iter().zip(d).map(|(a, b)| a * b).sum();
                    for k in 0..g.cols {
                        gx.data[r * g.cols + k] = y[k] * (d[k] - dot);
                    }
                }
                acc(a, gx);
            }
            &Op::Pairwise { q, k, n, scale } => {
                let (qv, kv) = (val(q), val(k));
                let d = qv.cols;
                let mut gq = Tensor::zeros(n, d);
                let mut gk = Tensor::zeros(n, d);
                for i in 0..n {
                    for j in 0..n {
                        let row = &g.data[(i * n + j) * d..(i * n + j + 1) * d];
                        for f in 0..d {
                            gq.data[i * d + f] += scale * row[f] * kv.data[j * d + f];
                            gk.data[j * d + f] += scale * row[f] * qv.data[i * d + f];
                        }
                    }
                }
                acc(q, gq);
                acc(k, gk);
            }
            Op::Attend { logits, v, n, weights } => {
                let n = *n;
                let vv = val(*v);
                let d = vv.cols;
                let mut gl = Tensor::zeros(n * n, d);
                let mut gv = Tensor::zeros(n, d);
                for i in 0..n {
                    for f in 0..d {
                        let go = g.data[i * d + f];
                        let mut dot = 0.0;
                        for j in 0..n {
                            let a = weights[(i * n + j) * d + f];
                            gv.data[j * d + f] += a * go;
                            dot += a * go * vv.data[j * d + f];
                        }
                        for j in 0..n {
                            let a = weights[(i * n + j) * d + f];
                            gl.data[(i * n + j) * d + f] = a * (go * vv.data[j * d + f] - dot);
                        }
                    }
                }
                acc(*logits, gl);
                acc(*v, gv);
            }
            &Op::MeanRows(a) => {
                let x = val(a);
                let mut gx = Tensor::zeros(x.rows, x.cols);
                if x.rows > 0 {
                    let inv = 1.0 / x.rows as f64;
                    for row in gx.data.chunks_mut(x.cols) {
                        for (o, d) in row.iter_mut().zip(&g.data) {
                            *o = d * inv;
                        }
                    }
                }
                acc(a, gx);
            }
            &Op::Sum(a) => {
                let x = val(a);
                acc(a, Tensor::filled(x.rows, x.cols, g.item()));
            }
            Op::ConcatCols(ids) => {
                let cols = g.cols;
                let mut off = 0;
                for &i in ids {
                    let w = val(i).cols;
                    let mut part = Tensor::zeros(g.rows, w);
                    for r in 0..g.rows {
                        part.data[r * w..(r + 1) * w].copy_from_slice(&g.data[r * cols + off..r * cols + off + w]);
                    }
                    off += w;
                    acc(i, part);
                }
            }
            Op::Nll { p, targets, weights } => {
                let pv = val(*p);
                let mut gp = Tensor::zeros(pv.rows, pv.cols);
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let v = pv.at(r, t);
                    if w != 0.0 && v >= PROB_FLOOR {
                        gp.data[r * pv.cols + t] = -g.item() * w / v;
                    }
                }
                acc(*p, gp);
            }
            Op::Bce { p, targets } => {
                let pv = val(*p);
                let scale = g.item() / targets.len().max(1) as f64;
                let d = pv
                    .data
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| {
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&x) {
                            0.0
                        } else {
                            scale * (-y / x + (1.0 - y) / (1.0 - x))
                        }
                    })
                    .collect();
                acc(*p, Tensor::new(pv.rows, pv.cols, d));
            }
            Op::Custom { inputs, backward } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
                for (&i, t) in inputs.iter().zip(backward(g, &vals)) {
                    acc(i, t);
                }
            }
        }
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
