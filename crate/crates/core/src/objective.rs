//! Training losses: edge cross-entropy, soft circuit simulation and the
//! truth-table condition loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aig::{Roster, TruthTable, NODE_AND, NODE_INPUT, NODE_OUTPUT};
use crate::error::{Error, Result};
use crate::graph::{Dag, EDGE_NEGATED, EDGE_NORMAL};
use crate::tape::{softmax_in_place, Tape, Tensor, Var, PROB_FLOOR};

const PRESENCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_graph: f64,
    pub l_cond: f64,
    pub lambda: f64,
    pub total: f64,
}

pub fn total_loss(l_graph: f64, l_cond: f64, lambda: f64) -> Result<LossBreakdown> {
    if !(l_graph.is_finite() && l_cond.is_finite() && lambda.is_finite()) {
        return Err(Error::NonFinite(format!(
            "loss terms l_graph={l_graph}, l_cond={l_cond}, lambda={lambda}"
        )));
    }
    Ok(LossBreakdown {
        l_graph,
        l_cond,
        lambda,
        total: l_graph + lambda * l_cond,
    })
}

/// Summed cross-entropy of the edge predictions over all `n^2` pairs, plus
/// the node term when enabled.
pub fn graph_ce_loss(tape: &mut Tape, px: Var, pe: Var, clean: &Dag, node_loss: bool) -> Var {
    let n = clean.n();
    let le = tape.nll(pe, &clean.edge_classes(), &vec![1.0; n * n]);
    if node_loss {
        let lx = tape.nll(px, &clean.node_classes(), &vec![1.0; n]);
        tape.add(le, lx)
    } else {
        le
    }
}

/// Value-only cross-entropy; also reports how many true-class
/// probabilities hit the floor.
pub fn graph_ce_value(px: &[f64], pe: &[f64], clean: &Dag, node_loss: bool) -> (f64, usize) {
    let kx = clean.node_categories();
    let ke = clean.edge_categories();
    let mut loss = 0.0;
    let mut clamped = 0;
    let mut term = |p: f64| {
        if p < PROB_FLOOR {
            clamped += 1;
        }
        loss -= p.max(PROB_FLOOR).ln();
    };
    for (idx, c) in clean.edge_classes().into_iter().enumerate() {
        term(pe[idx * ke + c]);
    }
    if node_loss {
        for (i, c) in clean.node_classes().into_iter().enumerate() {
            term(px[i * kx + c]);
        }
    }
    (loss, clamped)
}

/// Forward record of a soft simulation, enough to run the backward pass.
struct SimTrace {
    n: usize,
    rows: usize,
    /// gates in evaluation order with candidate lists
    gates: Vec<(usize, Vec<usize>)>,
    weights: Vec<Vec<f64>>,
    polarity: Vec<Vec<f64>>,
    presence: Vec<Vec<f64>>,
    mix: Vec<Vec<f64>>,
    signals: Vec<Vec<f64>>,
    classes: Vec<usize>,
    outputs: Vec<usize>,
}

fn run_soft_sim(pe: &[f64], roster: &Roster, levels: &[usize]) -> Result<SimTrace> {
    let n = roster.n();
    if pe.len() != n * n * 3 || levels.len() != n {
        return Err(Error::SizeMismatch {
            what: "edge distribution",
            expected: n * n * 3,
            got: pe.len(),
        });
    }
    let n_in = roster.inputs.len();
    let rows = 1usize << n_in;
    let classes = &roster.classes;
    let mut signals = vec![vec![0.0; rows]; n];
    for (k, &node) in roster.inputs.iter().enumerate() {
        for (r, s) in signals[node].iter_mut().enumerate() {
            *s = ((r >> k) & 1) as f64;
        }
    }
    let mut order: Vec<usize> = (0..n)
        .filter(|&g| classes[g] == NODE_AND || classes[g] == NODE_OUTPUT)
        .collect();
    order.sort_by_key(|&g| (levels[g], g));

    let mut trace = SimTrace {
        n,
        rows,
        gates: Vec::with_capacity(order.len()),
        weights: Vec::new(),
        polarity: Vec::new(),
        presence: Vec::new(),
        mix: Vec::new(),
        signals: Vec::new(),
        classes: classes.clone(),
        outputs: roster.outputs.clone(),
    };
    for g in order {
        let cands: Vec<usize> = (0..n)
            .filter(|&c| (classes[c] == NODE_INPUT || classes[c] == NODE_AND) && levels[c] < levels[g])
            .collect();
        let mut pres = Vec::with_capacity(cands.len());
        let mut sig = Vec::with_capacity(cands.len());
        for &c in &cands {
            let e = &pe[(c * n + g) * 3..(c * n + g + 1) * 3];
            pres.push(e[EDGE_NORMAL] + e[EDGE_NEGATED]);
            sig.push((e[EDGE_NORMAL] - e[EDGE_NEGATED]).tanh());
        }
        let mut a: Vec<f64> = pres.iter().map(|p| (p + PRESENCE_EPS).ln()).collect();
        if !a.is_empty() {
            softmax_in_place(&mut a);
        }
        let mut m = vec![0.0; rows];
        for (k, &c) in cands.iter().enumerate() {
            let off = (1.0 - sig[k]) / 2.0;
            for (mr, s) in m.iter_mut().zip(&signals[c]) {
                *mr += a[k] * (sig[k] * s + off);
            }
        }
        signals[g] = if classes[g] == NODE_AND {
            m.iter().map(|v| v * v).collect()
        } else {
            m.clone()
        };
        trace.gates.push((g, cands));
        trace.weights.push(a);
        trace.polarity.push(sig);
        trace.presence.push(pres);
        trace.mix.push(m);
    }
    trace.signals = signals;
    Ok(trace)
}

impl SimTrace {
    fn outputs_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.outputs.len() * self.rows);
        for &o in &self.outputs {
            data.extend_from_slice(&self.signals[o]);
        }
        Tensor::new(self.outputs.len(), self.rows, data)
    }

    /// Gradient of the edge distribution given output-signal gradients.
    fn backward(&self, grad_out: &Tensor) -> Tensor {
        let (n, rows) = (self.n, self.rows);
        let mut ds = vec![vec![0.0; rows]; n];
        for (k, &o) in self.outputs.iter().enumerate() {
            ds[o].copy_from_slice(grad_out.row(k));
        }
        let mut gpe = Tensor::zeros(n * n, 3);
        for gi in (0..self.gates.len()).rev() {
            let (g, cands) = &self.gates[gi];
            if cands.is_empty() {
                continue;
            }
            let m = &self.mix[gi];
            let dm: Vec<f64> = if self.classes[*g] == NODE_AND {
                ds[*g].iter().zip(m).map(|(d, v)| 2.0 * v * d).collect()
            } else {
                ds[*g].clone()
            };
            let a = &self.weights[gi];
            let sig = &self.polarity[gi];
            let mut da = vec![0.0; cands.len()];
            let mut dsig = vec![0.0; cands.len()];
            for (k, &c) in cands.iter().enumerate() {
                let off = (1.0 - sig[k]) / 2.0;
                let (mut acc_a, mut acc_s) = (0.0, 0.0);
                for r in 0..rows {
                    let s = self.signals[c][r];
                    acc_a += dm[r] * (sig[k] * s + off);
                    acc_s += dm[r] * a[k] * (s - 0.5);
                    ds[c][r] += dm[r] * a[k] * sig[k];
                }
                da[k] = acc_a;
                dsig[k] = acc_s;
            }
            let mean: f64 = a.iter().zip(&da).map(|(w, d)| w * d).sum();
            for (k, &c) in cands.iter().enumerate() {
                let dpres = a[k] * (da[k] - mean) / (self.presence[gi][k] + PRESENCE_EPS);
                let ddiff = dsig[k] * (1.0 - sig[k] * sig[k]);
                let base = (c * n + g) * 3;
                gpe.data[base + EDGE_NORMAL] += dpres + ddiff;
                gpe.data[base + EDGE_NEGATED] += dpres - ddiff;
            }
        }
        gpe
    }
}

/// Differentiable circuit evaluation from edge probabilities: one row per
/// output (in roster order), one column per input assignment.
pub fn soft_simulate(pe: &[f64], roster: &Roster, levels: &[usize]) -> Result<Tensor> {
    Ok(run_soft_sim(pe, roster, levels)?.outputs_tensor())
}

/// Records soft simulation on a tape; `pe` is the `n*n x 3` edge output.
pub fn soft_simulate_on_tape(tape: &mut Tape, pe: Var, roster: &Roster, levels: &[usize]) -> Result<Var> {
    let trace = run_soft_sim(&tape.value(pe).data, roster, levels)?;
    let value = trace.outputs_tensor();
    Ok(tape.custom(&[pe], value, Box::new(move |g, _| vec![trace.backward(g)])))
}

/// Output bits of a truth table as BCE targets, row-major by output.
pub fn condition_targets(tt: &TruthTable) -> Vec<f64> {
    (0..tt.n_out())
        .flat_map(|k| tt.column_bits(k).into_iter().map(|b| b as u8 as f64))
        .collect()
}

pub fn condition_loss(tape: &mut Tape, soft: Var, tt: &TruthTable) -> Result<Var> {
    let v = tape.value(soft);
    if v.shape() != (tt.n_out(), tt.rows()) {
        return Err(Error::SizeMismatch {
            what: "soft output signals",
            expected: tt.n_out() * tt.rows(),
            got: v.len(),
        });
    }
    Ok(tape.bce_mean(soft, &condition_targets(tt)))
}

/// Value-only condition loss.
pub fn condition_loss_value(soft: &Tensor, tt: &TruthTable) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.leaf(soft.clone());
    let l = condition_loss(&mut tape, v, tt)?;
    Ok(tape.value(l).item())
}

fn gumbel_forward(dist: &[f64], noise: &[f64], temperature: f64) -> Vec<f64> {
    let mut z: Vec<f64> = dist
        .iter()
        .zip(noise)
        .map(|(p, g)| (p.max(PROB_FLOOR).ln() + g) / temperature)
        .collect();
    softmax_in_place(&mut z);
    z
}

fn one_hot_argmax(y: &[f64]) -> Vec<f64> {
    let best = y
        .iter()
        .enumerate()
        .fold(0, |b, (k, v)| if *v > y[b] { k } else { b });
    (0..y.len()).map(|k| (k == best) as u8 as f64).collect()
}

/// Gumbel-softmax relaxation of a categorical draw with explicit noise.
pub fn gumbel_with_noise(dist: &[f64], noise: &[f64], temperature: f64, straight_through: bool) -> Vec<f64> {
    let y = gumbel_forward(dist, noise, temperature);
    if straight_through {
        one_hot_argmax(&y)
    } else {
        y
    }
}

pub fn gumbel_noise<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

pub fn gumbel_sample<R: Rng + ?Sized>(dist: &[f64], temperature: f64, rng: &mut R, straight_through: bool) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let noise = gumbel_noise(dist.len(), rng);
    Ok(gumbel_with_noise(dist, &noise, temperature, straight_through))
}

/// Gumbel-softmax on a tape over each row of `p`. With `straight_through`
/// the forward value is the hard one-hot while gradients follow the relaxed
/// sample.
pub fn gumbel_on_tape(tape: &mut Tape, p: Var, noise: &Tensor, temperature: f64, straight_through: bool) -> Var {
    let pv = tape.value(p).clone();
    assert_eq!(pv.shape(), noise.shape());
    let k = pv.cols;
    let mut soft = Vec::with_capacity(pv.len());
    let mut value = Vec::with_capacity(pv.len());
    for r in 0..pv.rows {
        let y = gumbel_forward(pv.row(r), noise.row(r), temperature);
        value.extend(if straight_through { one_hot_argmax(&y) } else { y.clone() });
        soft.extend(y);
    }
    let out = Tensor::new(pv.rows, k, value);
    tape.custom(
        &[p],
        out,
        Box::new(move |g, ins| {
            let pv = ins[0];
            let mut gp = Tensor::zeros(pv.rows, k);
            for r in 0..pv.rows {
                let y = &soft[r * k..(r + 1) * k];
                let d = g.row(r);
                let dot: f64 = y.iter().zip(d).map(|(a, b)| a * b).sum();
                for c in 0..k {
                    let p = pv.at(r, c);
                    if p >= PROB_FLOOR {
                        gp.data[r * k + c] = y[c] * (d[c] - dot) / (temperature * p);
                    }
                }
            }
            vec![gp]
        }),
    )
}
