//! Graph transformer that predicts clean node and edge types.

mod checkpoint;
mod features;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use features::{extract_features, graph_feature_width, node_feature_width, sinusoid, GraphFeatures};

use crate::aig::CONDITION_WIDTH;
use crate::diffusion::{Denoiser, NoiseModel, Prediction};
use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::tape::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub hidden_x: usize,
    pub hidden_e: usize,
    pub hidden_y: usize,
    pub heads: usize,
    pub node_classes: usize,
    pub edge_classes: usize,
    pub cond_width: usize,
    pub time_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            layers: 4,
            hidden_x: 64,
            hidden_e: 16,
            hidden_y: 16,
            heads: 4,
            node_classes: 3,
            edge_classes: 3,
            cond_width: CONDITION_WIDTH,
            time_dim: 8,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("hidden_x", self.hidden_x),
            ("hidden_e", self.hidden_e),
            ("hidden_y", self.hidden_y),
            ("heads", self.heads),
            ("node_classes", self.node_classes),
            ("edge_classes", self.edge_classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.hidden_x.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden_x {} is not divisible by {} heads",
                self.hidden_x, self.heads
            )));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config("time_dim must be even".into()));
        }
        Ok(())
    }

    fn dx_in(&self) -> usize {
        node_feature_width(self.node_classes, self.time_dim, self.cond_width)
    }

    fn dy_in(&self) -> usize {
        graph_feature_width(self.edge_classes, self.time_dim)
    }

    /// Every tensor as `(name, rows, cols, init)`, in storage order.
    fn layout(&self) -> Vec<(String, usize, usize, Init)> {
        let (hx, he, hy) = (self.hidden_x, self.hidden_e, self.hidden_y);
        let mut out = Vec::new();
        let linear = |out: &mut Vec<_>, name: String, i: usize, o: usize| {
            out.push((format!("{name}.w"), i, o, Init::FanIn));
            out.push((format!("{name}.b"), 1, o, Init::Zeros));
        };
        let norm = |out: &mut Vec<_>, name: String, w: usize| {
            out.push((format!("{name}.g"), 1, w, Init::Ones));
            out.push((format!("{name}.b"), 1, w, Init::Zeros));
        };
        linear(&mut out, "in.x".into(), self.dx_in(), hx);
        linear(&mut out, "in.e".into(), self.edge_classes, he);
        linear(&mut out, "in.y".into(), self.dy_in(), hy);
        for l in 0..self.layers {
            for (name, i, o) in [
                ("q", hx, hx),
                ("k", hx, hx),
                ("v", hx, hx),
                ("e_mul", he, hx),
                ("e_add", he, hx),
                ("yx_mul", hy, hx),
                ("yx_add", hy, hx),
                ("ye_mul", hy, hx),
                ("ye_add", hy, hx),
                ("x_out", hx, hx),
                ("e_out", hx, he),
                ("y_y", hy, hy),
                ("y_x", hx, hy),
                ("y_e", he, hy),
                ("y_out", hy, hy),
                ("ffn_x1", hx, 2 * hx),
                ("ffn_x2", 2 * hx, hx),
                ("ffn_e1", he, 2 * he),
                ("ffn_e2", 2 * he, he),
                ("ffn_y1", hy, 2 * hy),
                ("ffn_y2", 2 * hy, hy),
            ] {
                linear(&mut out, format!("layer{l}.{name}"), i, o);
            }
            for (name, w) in [("ln_x1", hx), ("ln_e1", he), ("ln_y1", hy), ("ln_x2", hx), ("ln_e2", he), ("ln_y2", hy)] {
                norm(&mut out, format!("layer{l}.{name}"), w);
            }
        }
        linear(&mut out, "out.x".into(), hx, self.node_classes);
        linear(&mut out, "out.e".into(), he, self.edge_classes);
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    FanIn,
    Ones,
    Zeros,
}

/// All trainable tensors plus their names. Values are kept exactly
/// representable as `f32` so checkpoints round-trip losslessly.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl DenoiserParams {
    /// Uniform `+-1/sqrt(fan_in)` weights, zero biases, unit norm scales.
    pub fn init<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, r, c, init) in config.layout() {
            let data = match init {
                Init::Zeros => vec![0.0; r * c],
                Init::Ones => vec![1.0; r * c],
                Init::FanIn => {
                    let bound = 1.0 / (r as f64).sqrt();
                    (0..r * c).map(|_| rng.gen_range(-bound..bound) as f32 as f64).collect()
                }
            };
            names.push(name);
            tensors.push(Tensor::new(r, c, data));
        }
        Ok(Self::assemble(config, names, tensors))
    }

    fn assemble(config: DenoiserConfig, names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        DenoiserParams {
            config,
            names,
            tensors,
            index,
        }
    }

    /// Rebuilds parameters from named tensors, checking them against the
    /// layout implied by `config`.
    pub fn from_named(config: DenoiserConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != named.len() {
            return Err(Error::ManifestMismatch(format!(
                "config implies {} tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        for ((lname, r, c, _), (name, t)) in layout.iter().zip(&named) {
            if lname != name || (t.rows, t.cols) != (*r, *c) {
                return Err(Error::ManifestMismatch(format!(
                    "expected {lname} {r}x{c}, found {name} {}x{}",
                    t.rows, t.cols
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self::assemble(config, names, tensors))
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn features(&self, noisy: &Dag, t: usize, cond: &[f64], model: &NoiseModel) -> Result<GraphFeatures> {
        let c = &self.config;
        if noisy.node_categories() != c.node_classes || noisy.edge_categories() != c.edge_classes {
            return Err(Error::Config(format!(
                "model expects {}/{} node/edge classes, graph has {}/{}",
                c.node_classes,
                c.edge_classes,
                noisy.node_categories(),
                noisy.edge_categories()
            )));
        }
        extract_features(noisy, t, model, cond, c.cond_width, c.time_dim)
    }

    /// Records a forward pass. Returns the parameter variables (in storage
    /// order) and the node/edge probability outputs.
    pub fn forward_on_tape(&self, tape: &mut Tape, feats: &GraphFeatures) -> Result<(Vec<Var>, Var, Var)> {
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let (px, pe) = self.forward_with(tape, &vars, feats)?;
        Ok((vars, px, pe))
    }

    /// Forward pass using caller-provided parameter variables.
    pub fn forward_with(&self, tape: &mut Tape, vars: &[Var], feats: &GraphFeatures) -> Result<(Var, Var)> {
        let c = &self.config;
        let n = feats.fx.rows;
        if feats.fe.rows != n * n || feats.fx.cols != c.dx_in() || feats.y.cols != c.dy_in() {
            return Err(Error::SizeMismatch {
                what: "feature width",
                expected: c.dx_in(),
                got: feats.fx.cols,
            });
        }
        let p = |name: &str| vars[self.index[name]];
        let lin = |tape: &mut Tape, x: Var, name: &str| {
            let h = tape.matmul(x, p(&format!("{name}.w")));
            tape.add_bias(h, p(&format!("{name}.b")))
        };
        let fx = tape.leaf(feats.fx.clone());
        let fe = tape.leaf(feats.fe.clone());
        let fy = tape.leaf(feats.y.clone());
        let mut x = lin(tape, fx, "in.x");
        let mut e = lin(tape, fe, "in.e");
        let mut y = lin(tape, fy, "in.y");
        let scale = 1.0 / ((c.hidden_x / c.heads) as f64).sqrt();
        for l in 0..c.layers {
            let name = |s: &str| format!("layer{l}.{s}");
            let (nx, ne, ny) = layer(tape, &p, &name, x, e, y, scale);
            check_finite(tape, &[nx, ne, ny], l)?;
            x = nx;
            e = ne;
            y = ny;
        }
        let lx = lin(tape, x, "out.x");
        let le = lin(tape, e, "out.e");
        let px = tape.softmax_rows(lx);
        let pe = tape.softmax_rows(le);
        Ok((px, pe))
    }

    pub fn predict_values(&self, noisy: &Dag, t: usize, cond: &[f64], model: &NoiseModel) -> Result<Prediction> {
        let feats = self.features(noisy, t, cond, model)?;
        let mut tape = Tape::new();
        let (_, px, pe) = self.forward_on_tape(&mut tape, &feats)?;
        Ok(Prediction {
            px: tape.value(px).data.clone(),
            pe: tape.value(pe).data.clone(),
        })
    }
}

fn check_finite(tape: &Tape, vars: &[Var], layer: usize) -> Result<()> {
    for &v in vars {
        if tape.value(v).data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("activation in layer {layer}")));
        }
    }
    Ok(())
}

/// One transformer layer: edge-modulated attention updating nodes, edges
/// and the graph vector, each wrapped in residual + norm, then feed-forward
/// blocks.
fn layer(
    tape: &mut Tape,
    p: &dyn Fn(&str) -> Var,
    name: &dyn Fn(&str) -> String,
    x: Var,
    e: Var,
    y: Var,
    scale: f64,
) -> (Var, Var, Var) {
    let lin = |tape: &mut Tape, v: Var, s: &str| {
        let h = tape.matmul(v, p(&name(&format!("{s}.w"))));
        tape.add_bias(h, p(&name(&format!("{s}.b"))))
    };
    let q = lin(tape, x, "q");
    let k = lin(tape, x, "k");
    let v = lin(tape, x, "v");
    let yy = tape.pairwise(q, k, scale);
    let e_mul = lin(tape, e, "e_mul");
    let e_add = lin(tape, e, "e_add");
    let gate = tape.add_scalar(e_mul, 1.0);
    let att = tape.mul(gate, yy);
    let att = tape.add(att, e_add);

    // edge update from the modulated logits
    let ye_mul = lin(tape, y, "ye_mul");
    let ye_add = lin(tape, y, "ye_add");
    let g = tape.add_scalar(ye_mul, 1.0);
    let ne = tape.mul_row(att, g);
    let ne = tape.add_bias(ne, ye_add);
    let ne = lin(tape, ne, "e_out");

    // node update from the attention-weighted values
    let wv = tape.attend(att, v);
    let yx_mul = lin(tape, y, "yx_mul");
    let yx_add = lin(tape, y, "yx_add");
    let g = tape.add_scalar(yx_mul, 1.0);
    let nx = tape.mul_row(wv, g);
    let nx = tape.add_bias(nx, yx_add);
    let nx = lin(tape, nx, "x_out");

    // graph update from pooled nodes and edges
    let mx = tape.mean_rows(x);
    let me = tape.mean_rows(e);
    let a = lin(tape, y, "y_y");
    let b = lin(tape, mx, "y_x");
    let c = lin(tape, me, "y_e");
    let ny = tape.add(a, b);
    let ny = tape.add(ny, c);
    let ny = tape.relu(ny);
    let ny = lin(tape, ny, "y_out");

    let norm = |tape: &mut Tape, base: Var, delta: Var, s: &str| {
        let sum = tape.add(base, delta);
        tape.layer_norm(sum, p(&name(&format!("{s}.g"))), p(&name(&format!("{s}.b"))))
    };
    let x1 = norm(tape, x, nx, "ln_x1");
    let e1 = norm(tape, e, ne, "ln_e1");
    let y1 = norm(tape, y, ny, "ln_y1");

    let ffn = |tape: &mut Tape, v: Var, a: &str, b: &str| {
        let h = lin(tape, v, a);
        let h = tape.relu(h);
        lin(tape, h, b)
    };
    let fx = ffn(tape, x1, "ffn_x1", "ffn_x2");
    let fe = ffn(tape, e1, "ffn_e1", "ffn_e2");
    let fy = ffn(tape, y1, "ffn_y1", "ffn_y2");
    (
        norm(tape, x1, fx, "ln_x2"),
        norm(tape, e1, fe, "ln_e2"),
        norm(tape, y1, fy, "ln_y2"),
    )
}

impl Denoiser for DenoiserParams {
    fn predict(&self, noisy: &Dag, t: usize, cond: &[f64], model: &NoiseModel) -> Result<Prediction> {
        self.predict_values(noisy, t, cond, model)
    }
}

#[cfg(test)]
mod tests;
