use std::f64::consts::FRAC_PI_2;

use crate::diffusion::NoiseModel;
use crate::error::{Error, Result};
use crate::graph::{Dag, EDGE_ABSENT};
use crate::tape::Tensor;

/// Node, edge and graph-level inputs to the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFeatures {
    /// `n x d_x`
    pub fx: Tensor,
    /// `n*n x d_e`, pair `(i, j)` at row `i * n + j`
    pub fe: Tensor,
    /// `1 x d_y`
    pub y: Tensor,
}

/// Interleaved `sin(w_k x), cos(w_k x)` with `w_k = pi/2 * 2^k`.
pub fn sinusoid(x: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let w = FRAC_PI_2 * (1u64 << k) as f64;
        out.push((w * x).sin());
        out.push((w * x).cos());
    }
    out
}

pub fn node_feature_width(kx: usize, time_dim: usize, cond_width: usize) -> usize {
    kx + 1 + time_dim + 2 + cond_width
}

pub fn graph_feature_width(ke: usize, time_dim: usize) -> usize {
    time_dim + ke
}

/// Builds features for a (noisy) graph at global step `t`. `cond` is either
/// empty or `n x cond_width`.
pub fn extract_features(
    noisy: &Dag,
    t: usize,
    model: &NoiseModel,
    cond: &[f64],
    cond_width: usize,
    time_dim: usize,
) -> Result<GraphFeatures> {
    let n = noisy.n();
    let kx = noisy.node_categories();
    let ke = noisy.edge_categories();
    if !cond.is_empty() && cond.len() != n * cond_width {
        return Err(Error::SizeMismatch {
            what: "condition rows",
            expected: n * cond_width,
            got: cond.len(),
        });
    }
    let t_max = model.t_max() as f64;
    let taus = model.node_timesteps(noisy, t)?;
    let mut indeg = vec![0usize; n];
    let mut outdeg = vec![0usize; n];
    let mut counts = vec![0usize; ke];
    for i in 0..n {
        for j in 0..n {
            let c = noisy.edge_class(i, j);
            if i != j {
                counts[c] += 1;
            }
            if c != EDGE_ABSENT {
                indeg[j] += 1;
                outdeg[i] += 1;
            }
        }
    }

    let dx = node_feature_width(kx, time_dim, cond_width);
    let mut fx = Vec::with_capacity(n * dx);
    for i in 0..n {
        fx.extend(noisy.node_row(i).iter().map(|&b| b as f64));
        fx.push(noisy.normalized_level(i));
        fx.extend(sinusoid(taus[i] as f64 / t_max, time_dim));
        fx.push(indeg[i] as f64 / n as f64);
        fx.push(outdeg[i] as f64 / n as f64);
        if cond.is_empty() {
            fx.extend(std::iter::repeat_n(0.0, cond_width));
        } else {
            fx.extend_from_slice(&cond[i * cond_width..(i + 1) * cond_width]);
        }
    }
    let mut fe = Vec::with_capacity(n * n * ke);
    for i in 0..n {
        for j in 0..n {
            fe.extend(noisy.edge_entry(i, j).iter().map(|&b| b as f64));
        }
    }
    let pairs = (n * n.saturating_sub(1)).max(1) as f64;
    let mut y = sinusoid(t as f64 / t_max, time_dim);
    y.extend(counts.iter().map(|&c| c as f64 / pairs));
    Ok(GraphFeatures {
        fx: Tensor::new(n, dx, fx),
        fe: Tensor::new(n * n, ke, fe),
        y: Tensor::new(1, graph_feature_width(ke, time_dim), y),
    })
}
