//! Optimizer, training step and the epoch loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aig::{encode_condition, DatasetRecord, Roster, TruthTable, AIG_EDGE_CLASSES, AIG_NODE_CLASSES, CONDITION_WIDTH};
use crate::denoiser::{save_checkpoint, Checkpoint, DenoiserConfig, DenoiserParams};
use crate::diffusion::{LevelStructureStats, Mode, NoiseModel};
use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::objective::{condition_loss, condition_targets, graph_ce_loss, soft_simulate, soft_simulate_on_tape, total_loss, LossBreakdown};
use crate::tape::{Tape, Tensor, BCE_CLAMP};

fn default_grad_clip() -> Option<f64> {
    Some(10.0)
}

fn default_checkpoint_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "T")]
    pub t_max: usize,
    pub beta: f64,
    pub lambda: f64,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: Mode,
    pub node_diffusion_enabled: bool,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            t_max: 50,
            beta: 16.0,
            lambda: 1.0,
            layers: 4,
            hidden: 64,
            heads: 4,
            learning_rate: 2e-4,
            weight_decay: 1e-12,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            mode: Mode::BottomUp,
            node_diffusion_enabled: false,
            grad_clip: default_grad_clip(),
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

impl TrainConfig {
    /// Settings used for the full-size experiments.
    pub fn full_scale() -> Self {
        TrainConfig {
            t_max: 500,
            beta: 32.0,
            lambda: 1.0,
            layers: 8,
            hidden: 256,
            heads: 8,
            learning_rate: 2e-4,
            weight_decay: 1e-12,
            batch_size: 256,
            epochs: 1000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("T", self.t_max),
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config("learning_rate must be positive; weight_decay and lambda non-negative".into()));
        }
        if self.beta < 0.0 || (self.beta > 0.0 && self.beta >= self.t_max as f64) {
            return Err(Error::Config(format!("beta must lie in [0, T), got {}", self.beta)));
        }
        self.denoiser().validate()
    }

    pub fn denoiser(&self) -> DenoiserConfig {
        let side = (self.hidden / 4).max(4);
        DenoiserConfig {
            layers: self.layers,
            hidden_x: self.hidden,
            hidden_e: side,
            hidden_y: side,
            heads: self.heads,
            node_classes: AIG_NODE_CLASSES,
            edge_classes: AIG_EDGE_CLASSES,
            cond_width: CONDITION_WIDTH,
            time_dim: 8,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Empirical node and edge type marginals. Self-pairs are excluded from
/// the edge marginal since they are never present.
pub fn marginals<'a>(dags: impl IntoIterator<Item = &'a Dag>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut mx = [0.0; AIG_NODE_CLASSES];
    let mut me = [0.0; AIG_EDGE_CLASSES];
    for dag in dags {
        let n = dag.n();
        for c in dag.node_classes() {
            mx[c] += 1.0;
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    me[dag.edge_class(i, j)] += 1.0;
                }
            }
        }
    }
    let (sx, se): (f64, f64) = (mx.iter().sum(), me.iter().sum());
    if sx == 0.0 || se == 0.0 {
        return Err(Error::EmptyDistribution("type marginals"));
    }
    Ok((mx.iter().map(|v| v / sx).collect(), me.iter().map(|v| v / se).collect()))
}

pub fn noise_model(config: &TrainConfig, m_x: Vec<f64>, m_e: Vec<f64>) -> Result<NoiseModel> {
    let model = NoiseModel::cosine(config.t_max, m_x, m_e, config.beta, config.mode)?;
    Ok(if config.node_diffusion_enabled {
        model
    } else {
        model.without_node_noise()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// One decoupled-decay Adam update of `param` in place. `step` counts
    /// from 1.
    pub fn update(&self, param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64) {
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            param[i] *= 1.0 - self.lr * self.weight_decay;
            param[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// First and second moments per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &DenoiserParams) -> Self {
        OptimizerState {
            m: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            v: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            step: 0,
        }
    }
}

/// A batch item after its random draws: timestep, noisy graph and encoded
/// condition.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub clean: &'a Dag,
    pub tt: &'a TruthTable,
    pub t: usize,
    pub noisy: Dag,
    pub roster: Roster,
    pub cond: Vec<f64>,
}

pub fn prepare<'a, R: Rng + ?Sized>(clean: &'a Dag, tt: &'a TruthTable, model: &NoiseModel, t: usize, rng: &mut R) -> Result<Prepared<'a>> {
    let noisy = model.corrupt(clean, t, rng)?;
    let roster = Roster::from_dag(clean);
    let cond = encode_condition(tt, &roster, rng);
    Ok(Prepared {
        clean,
        tt,
        t,
        noisy,
        roster,
        cond,
    })
}

/// Loss and parameter gradients for one prepared item.
pub fn item_gradients(params: &DenoiserParams, item: &Prepared, model: &NoiseModel, lambda: f64) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let feats = params.features(&item.noisy, item.t, &item.cond, model)?;
    let mut tape = Tape::new();
    let (vars, px, pe) = params.forward_on_tape(&mut tape, &feats)?;
    let lg = graph_ce_loss(&mut tape, px, pe, item.clean, model.node_noise());
    let (total, l_cond) = if lambda > 0.0 {
        let soft = soft_simulate_on_tape(&mut tape, pe, &item.roster, item.clean.levels())?;
        let lc = condition_loss(&mut tape, soft, item.tt)?;
        let scaled = tape.scale(lc, lambda);
        (tape.add(lg, scaled), tape.value(lc).item())
    } else {
        let soft = soft_simulate(&tape.value(pe).data, &item.roster, item.clean.levels())?;
        (lg, bce(&soft, item.tt))
    };
    let breakdown = total_loss(tape.value(lg).item(), l_cond, lambda)
        .map_err(|_| Error::NonFinite(format!("loss at t = {} is not finite", item.t)))?;
    let grads = tape.backward(total)?;
    let g = vars.iter().map(|&v| grads.wrt(v)).collect::<Result<Vec<_>>>()?;
    Ok((breakdown, g))
}

fn bce(soft: &Tensor, tt: &TruthTable) -> f64 {
    let targets = condition_targets(tt);
    let s: f64 = soft
        .data
        .iter()
        .zip(&targets)
        .map(|(&x, &y)| {
            let c = x.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * c.ln() + (1.0 - y) * (1.0 - c).ln())
        })
        .sum();
    s / targets.len().max(1) as f64
}

/// Losses without gradients, for validation.
pub fn evaluate_item(params: &DenoiserParams, item: &Prepared, model: &NoiseModel) -> Result<(f64, f64)> {
    let pred = params.predict_values(&item.noisy, item.t, &item.cond, model)?;
    let (lg, _) = crate::objective::graph_ce_value(&pred.px, &pred.pe, item.clean, model.node_noise());
    let soft = soft_simulate(&pred.pe, &item.roster, item.clean.levels())?;
    Ok((lg, bce(&soft, item.tt)))
}

fn mean_breakdown(items: &[LossBreakdown], lambda: f64) -> LossBreakdown {
    let k = items.len().max(1) as f64;
    let lg = items.iter().map(|b| b.l_graph).sum::<f64>() / k;
    let lc = items.iter().map(|b| b.l_cond).sum::<f64>() / k;
    LossBreakdown {
        l_graph: lg,
        l_cond: lc,
        lambda,
        total: lg + lambda * lc,
    }
}

/// Gradient step on prepared items. Per-item gradients may be computed on
/// `threads` workers; they are always summed in item order.
pub fn train_step_prepared(
    params: &mut DenoiserParams,
    opt: &mut OptimizerState,
    items: &[Prepared],
    model: &NoiseModel,
    config: &TrainConfig,
    threads: usize,
) -> Result<LossBreakdown> {
    if items.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let results: Vec<Result<(LossBreakdown, Vec<Tensor>)>> = if threads <= 1 || items.len() == 1 {
        items.iter().map(|it| item_gradients(params, it, model, config.lambda)).collect()
    } else {
        let shared: &DenoiserParams = params;
        let chunk = items.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|it| item_gradients(shared, it, model, config.lambda))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("gradient worker panicked")).collect()
        })
    };
    let mut losses = Vec::with_capacity(items.len());
    let mut sum: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for (i, r) in results.into_iter().enumerate() {
        let (b, g) = r.map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("batch item {i}: {msg}")),
            other => other,
        })?;
        for (acc, t) in sum.iter_mut().zip(&g) {
            for (a, v) in acc.iter_mut().zip(&t.data) {
                *a += v;
            }
        }
        losses.push(b);
    }
    let scale = 1.0 / items.len() as f64;
    let mut norm2 = 0.0;
    for acc in &mut sum {
        for a in acc.iter_mut() {
            *a *= scale;
            norm2 += *a * *a;
        }
    }
    if !norm2.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    if let Some(clip) = config.grad_clip {
        let norm = norm2.sqrt();
        if norm > clip {
            let f = clip / norm;
            sum.iter_mut().flatten().for_each(|a| *a *= f);
        }
    }
    let adam = AdamW::new(config.learning_rate, config.weight_decay);
    opt.step += 1;
    for (k, t) in params.tensors_mut().iter_mut().enumerate() {
        adam.update(&mut t.data, &sum[k], &mut opt.m[k], &mut opt.v[k], opt.step);
        // stored values stay f32-exact so checkpoints are lossless
        t.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    Ok(mean_breakdown(&losses, config.lambda))
}

/// Draws a timestep per graph, corrupts, and takes one optimizer step.
pub fn train_step<R: Rng + ?Sized>(
    params: &mut DenoiserParams,
    opt: &mut OptimizerState,
    batch: &[(&Dag, &TruthTable)],
    model: &NoiseModel,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let items = batch
        .iter()
        .map(|(dag, tt)| {
            let t = rng.gen_range(1..=model.t_max());
            prepare(dag, tt, model, t, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    train_step_prepared(params, opt, &items, model, config, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub train: LossBreakdown,
    pub val_l_graph: Option<f64>,
    pub val_l_cond: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,step,l_graph,l_cond,total,val_l_graph,val_l_cond";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
        format!(
            "{},{},{:.8},{:.8},{:.8},{},{}",
            self.epoch,
            self.step,
            self.train.l_graph,
            self.train.l_cond,
            self.train.total,
            opt(self.val_l_graph),
            opt(self.val_l_cond)
        )
    }
}

/// Everything needed to sample from a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub train: TrainConfig,
    pub m_x: Vec<f64>,
    pub m_e: Vec<f64>,
    pub level_stats: LevelStructureStats,
}

impl ModelMeta {
    pub fn noise_model(&self) -> Result<NoiseModel> {
        noise_model(&self.train, self.m_x.clone(), self.m_e.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        serde_json::from_value(ck.meta.clone()).map_err(|e| Error::ManifestMismatch(format!("checkpoint metadata: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    pub meta: ModelMeta,
    pub history: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            params: self.params.clone(),
            meta: serde_json::to_value(&self.meta)?,
        })
    }
}

/// Where the loop writes its artifacts; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
    pub threads: usize,
}

/// Validation items use a fixed seed so every epoch sees the same draws.
fn validation_items<'a>(val: &'a [DatasetRecord], model: &NoiseModel, seed: u64) -> Result<Vec<Prepared<'a>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7a11);
    val.iter()
        .map(|r| {
            let t = rng.gen_range(1..=model.t_max());
            prepare(&r.dag, &r.tt, model, t, &mut rng)
        })
        .collect()
}

/// Trains from scratch for `config.epochs` epochs. Calls `on_epoch` after
/// each epoch (useful for progress reporting).
pub fn train_loop(
    config: &TrainConfig,
    train: &[DatasetRecord],
    val: &[DatasetRecord],
    output: &TrainOutput,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let (m_x, m_e) = marginals(train.iter().map(|r| &r.dag))?;
    let model = noise_model(config, m_x.clone(), m_e.clone())?;
    let meta = ModelMeta {
        train: config.clone(),
        m_x,
        m_e,
        level_stats: LevelStructureStats::from_dags(train.iter().map(|r| &r.dag))?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = DenoiserParams::init(config.denoiser(), &mut rng)?;
    let mut opt = OptimizerState::new(&params);
    let val_items = validation_items(val, &model, config.seed)?;

    let mut log = match &output.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("metrics.csv");
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let items = chunk
                .iter()
                .map(|&i| {
                    let t = rng.gen_range(1..=model.t_max());
                    prepare(&train[i].dag, &train[i].tt, &model, t, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let b = train_step_prepared(&mut params, &mut opt, &items, &model, config, output.threads)?;
            losses.push(b);
        }
        if !params.all_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let (val_lg, val_lc) = if val_items.is_empty() {
            (None, None)
        } else {
            let mut lg = 0.0;
            let mut lc = 0.0;
            for it in &val_items {
                let (a, b) = evaluate_item(&params, it, &model)?;
                lg += a;
                lc += b;
            }
            let k = val_items.len() as f64;
            (Some(lg / k), Some(lc / k))
        };
        let metrics = EpochMetrics {
            epoch,
            step: opt.step,
            train: mean_breakdown(&losses, config.lambda),
            val_l_graph: val_lg,
            val_l_cond: val_lc,
        };
        if let Some((f, path)) = &mut log {
            writeln!(f, "{}", metrics.csv_row()).map_err(|e| Error::io(&*path, e))?;
        }
        on_epoch(&metrics);
        history.push(metrics);
        if let Some(dir) = &output.dir {
            let last = epoch == config.epochs;
            if last || (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
                let outcome = Checkpoint {
                    params: params.clone(),
                    meta: serde_json::to_value(&meta)?,
                };
                let name = if last { "model.ckpt".to_string() } else { format!("epoch{epoch:04}.ckpt") };
                save_checkpoint(dir.join(name), &outcome)?;
            }
        }
    }
    Ok(TrainOutcome { params, meta, history })
}
