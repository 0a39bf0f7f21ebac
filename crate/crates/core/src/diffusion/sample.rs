use rand::Rng;

use super::schedule::sample_categorical;
use super::{posterior_step, Element, LevelStructureStats, NoiseModel};
use crate::aig::{encode_condition, Roster, TruthTable, AIG_EDGE_CLASSES, AIG_NODE_CLASSES};
use crate::error::{Error, Result};
use crate::graph::Dag;

/// Clean-graph prediction: `px` is `n x k_x`, `pe` is `n x n x k_e`, both
/// row-major distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub px: Vec<f64>,
    pub pe: Vec<f64>,
}

pub trait Denoiser {
    /// `cond` holds the per-node condition rows (may be empty).
    fn predict(&self, noisy: &Dag, t: usize, cond: &[f64], model: &NoiseModel) -> Result<Prediction>;
}

/// Runs the reverse chain on a fixed node roster and level labelling.
/// `on_step` sees every intermediate graph, from `G^T` down to `G^0`.
pub fn reverse_sample_with<D, R, F>(
    denoiser: &D,
    nodes: &[usize],
    levels: Vec<usize>,
    cond: &[f64],
    model: &NoiseModel,
    rng: &mut R,
    mut on_step: F,
) -> Result<Dag>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(usize, &Dag),
{
    let n = nodes.len();
    let kx = model.marginal(Element::Node).len();
    let ke = model.marginal(Element::Edge).len();
    let mut node_state = nodes.to_vec();
    if model.node_noise() {
        for x in node_state.iter_mut() {
            *x = sample_categorical(model.marginal(Element::Node), rng);
        }
    }
    let mut edge_state = vec![0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                edge_state[i * n + j] = sample_categorical(model.marginal(Element::Edge), rng);
            }
        }
    }
    let mut g = Dag::from_classes(kx, ke, &node_state, &edge_state, levels)?;
    on_step(model.t_max(), &g);

    for t in (1..=model.t_max()).rev() {
        let cur = model.node_timesteps(&g, t)?;
        let prev = model.node_timesteps(&g, t - 1)?;
        let pred = denoiser.predict(&g, t, cond, model)?;
        if pred.px.len() != n * kx || pred.pe.len() != n * n * ke {
            return Err(Error::SizeMismatch {
                what: "denoiser output",
                expected: n * n * ke,
                got: pred.pe.len(),
            });
        }
        if model.node_noise() {
            for i in 0..n {
                let post = posterior_step(&pred.px[i * kx..(i + 1) * kx], node_state[i], prev[i], cur[i], model, Element::Node)
                    .map_err(|e| locate(e, format!("node {i}")))?;
                node_state[i] = sample_categorical(&post, rng);
            }
        }
        for j in 0..n {
            if prev[j] == cur[j] {
                continue;
            }
            for i in 0..n {
                if i == j {
                    continue;
                }
                let idx = i * n + j;
                let post = posterior_step(&pred.pe[idx * ke..(idx + 1) * ke], edge_state[idx], prev[j], cur[j], model, Element::Edge)
                    .map_err(|e| locate(e, format!("edge ({i}, {j})")))?;
                edge_state[idx] = sample_categorical(&post, rng);
            }
        }
        g = Dag::from_classes(kx, ke, &node_state, &edge_state, g.levels().to_vec())?;
        on_step(t - 1, &g);
    }
    Ok(g)
}

fn locate(err: Error, element: String) -> Error {
    match err {
        Error::ZeroDenominator { state, class, .. } => Error::ZeroDenominator { element, state, class },
        other => other,
    }
}

/// Samples a circuit-shaped graph for a truth table: level structure first,
/// then the reverse chain with node types fixed by the roster.
pub fn reverse_sample<D, R>(
    denoiser: &D,
    tt: &TruthTable,
    stats: &LevelStructureStats,
    model: &NoiseModel,
    rng: &mut R,
) -> Result<Dag>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    if model.marginal(Element::Node).len() != AIG_NODE_CLASSES || model.marginal(Element::Edge).len() != AIG_EDGE_CLASSES {
        return Err(Error::Config("circuit sampling needs 3 node and 3 edge classes".into()));
    }
    let levels = stats.sample(tt.n_in(), tt.n_out(), rng)?;
    let roster = Roster::canonical(levels.len(), tt.n_in(), tt.n_out())?;
    let cond = encode_condition(tt, &roster, rng);
    let model = model.clone().without_node_noise();
    reverse_sample_with(denoiser, &roster.classes, levels, &cond, &model, rng, |_, _| {})
}
