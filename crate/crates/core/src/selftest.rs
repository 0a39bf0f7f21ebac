//! Oracle and property checks with adjustable sizes. The CLI `selftest`
//! runs small versions; the acceptance suite runs the full ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aig::{aig_validity, encode_condition, parse_dag_to_aig, random_aig, Roster, TruthTable, CONDITION_WIDTH};
use crate::denoiser::{DenoiserConfig, DenoiserParams};
use crate::diffusion::{posterior_step, reverse_sample_with, Denoiser, Element, Mode, NoiseModel, Prediction};
use crate::error::Result;
use crate::graph::{permute, Dag, Permutation};
use crate::objective::{condition_loss, graph_ce_loss, soft_simulate_on_tape};
use crate::tape::{Tape, Var};

/// Max abs difference between the closed-form cumulative matrix and the
/// explicit product of one-step matrices, over every `t`.
pub fn closed_form_error(t_max: usize, marginal: &[f64]) -> Result<f64> {
    let k = marginal.len();
    let model = NoiseModel::cosine(t_max, vec![1.0], marginal.to_vec(), 0.0, Mode::BottomUp)?;
    let mut prod = vec![0.0; k * k];
    for i in 0..k {
        prod[i * k + i] = 1.0;
    }
    let mut worst: f64 = 0.0;
    for t in 1..=t_max {
        let q = model.step_transition(t, Element::Edge)?;
        let mut next = vec![0.0; k * k];
        for i in 0..k {
            for m in 0..k {
                let a = prod[i * k + m];
                for j in 0..k {
                    next[i * k + j] += a * q[m * k + j];
                }
            }
        }
        prod = next;
        let closed = model.cumulative_transition(t, Element::Edge)?;
        for (a, b) in closed.iter().zip(&prod) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Posterior by summing over every intermediate chain `x_1 .. x_{t-1}`
/// using only one-step matrices.
pub fn brute_force_posterior(model: &NoiseModel, pred: &[f64], current: usize, s: usize, t: usize, which: Element) -> Result<Vec<f64>> {
    let k = pred.len();
    let steps = (1..=t).map(|r| model.step_transition(r, which)).collect::<Result<Vec<_>>>()?;
    let mut out = vec![0.0; k];
    for (x0, &p) in pred.iter().enumerate() {
        let mut num = vec![0.0; k];
        let mut den = 0.0;
        let inner = t.saturating_sub(1);
        for code in 0..k.pow(inner as u32) {
            let mut chain = Vec::with_capacity(t + 1);
            chain.push(x0);
            let mut c = code;
            for _ in 0..inner {
                chain.push(c % k);
                c /= k;
            }
            chain.push(current);
            let w: f64 = chain.windows(2).enumerate().map(|(r, w)| steps[r][w[0] * k + w[1]]).product();
            den += w;
            num[chain[s]] += w;
        }
        if den > 0.0 {
            for j in 0..k {
                out[j] += p * num[j] / den;
            }
        }
    }
    Ok(out)
}

/// Worst deviation of `posterior_step` from brute force over every
/// `(s, t)` with `s < t <= max_t`, every current state and a few predicted
/// distributions, for 2 and 3 classes.
pub fn posterior_error(t_max: usize, max_t: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for m in [vec![0.35, 0.65], vec![0.6, 0.3, 0.1]] {
        let model = NoiseModel::cosine(t_max, vec![1.0], m.clone(), 0.0, Mode::BottomUp)?;
        let k = m.len();
        for _ in 0..3 {
            let mut pred: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let z: f64 = pred.iter().sum();
            pred.iter_mut().for_each(|p| *p /= z);
            for t in 1..=max_t {
                for s in 0..t {
                    for c in 0..k {
                        let got = posterior_step(&pred, c, s, t, &model, Element::Edge)?;
                        let want = brute_force_posterior(&model, &pred, c, s, t, Element::Edge)?;
                        for (g, w) in got.iter().zip(&want) {
                            worst = worst.max((g - w).abs());
                        }
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Checks the boundary, monotonicity and level-ordering laws of the local
/// clock on a grid of `grid` level values. Returns the first violation.
pub fn schedule_laws(t_max: usize, beta: f64, grid: usize) -> Result<std::result::Result<(), String>> {
    let model = NoiseModel::cosine(t_max, vec![1.0], vec![0.5, 0.5], beta, Mode::BottomUp)?;
    let ls: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();
    for &l in &ls {
        if model.local_timestep(0, l)? != 0 {
            return Ok(Err(format!("tau(0, {l}) != 0")));
        }
        if model.local_timestep(t_max, l)? != t_max {
            return Ok(Err(format!("tau(T, {l}) != T")));
        }
        let mut prev = 0;
        for t in 0..=t_max {
            let tau = model.local_timestep(t, l)?;
            if tau < prev {
                return Ok(Err(format!("tau not monotone at t = {t}, l = {l}")));
            }
            prev = tau;
        }
    }
    for t in 0..=t_max {
        for w in ls.windows(2) {
            if model.local_timestep(t, w[1])? < model.local_timestep(t, w[0])? {
                return Ok(Err(format!("tau lower at level {} than {} (t = {t})", w[1], w[0])));
            }
        }
    }
    Ok(Ok(()))
}

fn tiny_config() -> DenoiserConfig {
    DenoiserConfig {
        layers: 2,
        hidden_x: 16,
        hidden_e: 8,
        hidden_y: 8,
        heads: 2,
        ..DenoiserConfig::default()
    }
}

fn jittered(seed: u64) -> Result<DenoiserParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = DenoiserParams::init(tiny_config(), &mut rng)?;
    for t in params.tensors_mut() {
        for v in &mut t.data {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    Ok(params)
}

fn model() -> Result<NoiseModel> {
    Ok(NoiseModel::cosine(50, vec![0.3, 0.5, 0.2], vec![0.8, 0.15, 0.05], 16.0, Mode::BottomUp)?.without_node_noise())
}

struct Case {
    clean: Dag,
    noisy: Dag,
    tt: TruthTable,
    roster: Roster,
    cond: Vec<f64>,
    t: usize,
}

fn case(rng: &mut ChaCha8Rng, model: &NoiseModel) -> Result<Case> {
    let (aig, tt) = random_aig(3, 1, 10, rng)?;
    let clean = aig.to_dag()?;
    let t = rng.gen_range(1..=model.t_max());
    let noisy = model.corrupt(&clean, t, rng)?;
    let roster = Roster::from_dag(&clean);
    let cond = encode_condition(&tt, &roster, rng);
    Ok(Case {
        clean,
        noisy,
        tt,
        roster,
        cond,
        t,
    })
}

/// Full training loss (edge CE plus soft-simulation BCE) on a tape.
fn full_loss(params: &DenoiserParams, tape: &mut Tape, c: &Case, model: &NoiseModel) -> Result<(Vec<Var>, Var)> {
    let feats = params.features(&c.noisy, c.t, &c.cond, model)?;
    let (vars, px, pe) = params.forward_on_tape(tape, &feats)?;
    let lg = graph_ce_loss(tape, px, pe, &c.clean, false);
    let soft = soft_simulate_on_tape(tape, pe, &c.roster, c.clean.levels())?;
    let lc = condition_loss(tape, soft, &c.tt)?;
    let total = tape.add(lg, lc);
    Ok((vars, total))
}

/// Worst relative error between analytic gradients of the full loss and
/// central differences, over `count` random parameters.
pub fn gradient_check(count: usize, seed: u64) -> Result<f64> {
    let params = jittered(seed)?;
    let model = model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let c = case(&mut rng, &model)?;
    let mut tape = Tape::new();
    let (vars, loss) = full_loss(&params, &mut tape, &c, &model)?;
    let grads = tape.backward(loss)?;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let ti = rng.gen_range(0..params.tensors().len());
        let ei = rng.gen_range(0..params.tensors()[ti].len());
        let an = grads.wrt(vars[ti])?.data[ei];
        let eval = |delta: f64| -> Result<f64> {
            let mut p = params.clone();
            p.tensors_mut()[ti].data[ei] += delta;
            let mut t = Tape::new();
            let (_, l) = full_loss(&p, &mut t, &c, &model)?;
            Ok(t.value(l).item())
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// `(max output deviation, max relative loss deviation)` over random
/// graphs and node permutations.
pub fn equivariance_check(graphs: usize, perms: usize, seed: u64) -> Result<(f64, f64)> {
    let params = jittered(seed)?;
    let model = model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let (mut out_dev, mut loss_dev): (f64, f64) = (0.0, 0.0);
    for _ in 0..graphs {
        let c = case(&mut rng, &model)?;
        let base = params.predict_values(&c.noisy, c.t, &c.cond, &model)?;
        let mut tape = Tape::new();
        let (_, l) = full_loss(&params, &mut tape, &c, &model)?;
        let base_loss = tape.value(l).item();
        for _ in 0..perms {
            let sigma = Permutation::random(c.clean.n(), &mut rng);
            let moved = Case {
                clean: permute(&c.clean, &sigma)?,
                noisy: permute(&c.noisy, &sigma)?,
                tt: c.tt.clone(),
                roster: c.roster.permuted(&sigma),
                cond: sigma.permute_rows(&c.cond, CONDITION_WIDTH),
                t: c.t,
            };
            let out = params.predict_values(&moved.noisy, moved.t, &moved.cond, &model)?;
            let want_x = sigma.permute_rows(&base.px, 3);
            let want_e = sigma.permute_pairs(&base.pe, 3);
            for (a, b) in out.px.iter().zip(&want_x).chain(out.pe.iter().zip(&want_e)) {
                out_dev = out_dev.max((a - b).abs());
            }
            let mut tape = Tape::new();
            let (_, l) = full_loss(&params, &mut tape, &moved, &model)?;
            loss_dev = loss_dev.max((tape.value(l).item() - base_loss).abs() / base_loss.abs());
        }
    }
    Ok((out_dev, loss_dev))
}

/// Number of random circuits on which the two simulators disagree.
pub fn simulator_mismatches(count: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..count {
        let n_in = rng.gen_range(1..=4);
        let n_out = rng.gen_range(1..=3);
        let (aig, _) = random_aig(n_in, n_out, n_in + n_out + 12, &mut rng)?;
        if aig.simulate()? != aig.simulate_by_descent()? {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Uniformly random node and edge classes with random level labels.
pub fn random_dag<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dag> {
    let nodes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let edges: Vec<usize> = (0..n * n).map(|k| if k / n == k % n { 0 } else { rng.gen_range(0..3) }).collect();
    let levels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n.max(1))).collect();
    Dag::from_classes(3, 3, &nodes, &edges, levels)
}

/// Number of random graphs whose parse is not a fully valid, simulable
/// circuit.
pub fn parser_failures(count: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..count {
        let n = rng.gen_range(1..=16);
        let dag = random_dag(n, &mut rng)?;
        let aig = parse_dag_to_aig(&dag, &mut rng);
        let ok = aig.simulate().is_ok() && aig.to_dag().map(|d| aig_validity(&d) == 1.0).unwrap_or(false);
        if !ok {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Emits a fixed graph with certainty.
pub struct OracleDenoiser(pub Dag);

impl Denoiser for OracleDenoiser {
    fn predict(&self, noisy: &Dag, _t: usize, _cond: &[f64], _model: &NoiseModel) -> Result<Prediction> {
        let onehot = |c: usize| {
            let mut v = vec![0.0; 3];
            v[c] = 1.0;
            v
        };
        debug_assert_eq!(noisy.n(), self.0.n());
        Ok(Prediction {
            px: self.0.node_classes().into_iter().flat_map(onehot).collect(),
            pe: self.0.edge_classes().into_iter().flat_map(onehot).collect(),
        })
    }
}

/// Number of cases where the reverse chain driven by an oracle fails to
/// land exactly on the target.
pub fn oracle_failures(cases: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for k in 0..cases {
        let (aig, tt) = random_aig(3, 1, 10, &mut rng)?;
        let target = aig.to_dag()?;
        let roster = Roster::from_dag(&target);
        let cond = encode_condition(&tt, &roster, &mut rng);
        let mut m = NoiseModel::cosine(50, vec![0.3, 0.5, 0.2], vec![0.8, 0.15, 0.05], 16.0, Mode::BottomUp)?;
        if k % 2 == 0 {
            m = m.without_node_noise();
        }
        let out = reverse_sample_with(
            &OracleDenoiser(target.clone()),
            &target.node_classes(),
            target.levels().to_vec(),
            &cond,
            &m,
            &mut rng,
            |_, _| {},
        )?;
        if out != target {
            bad += 1;
        }
    }
    Ok(bad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub const SUITES: [&str; 8] = [
    "closed-form",
    "posterior",
    "schedule",
    "gradient",
    "equivariance",
    "simulator",
    "parser",
    "oracle",
];

/// Quick versions of every check, for the command line.
pub fn run_suite(name: &str) -> Result<Option<SuiteOutcome>> {
    let out = match name {
        "closed-form" => {
            let e = closed_form_error(500, &[0.6, 0.3, 0.1])?;
            ("closed-form", e < 1e-10, format!("max error {e:.3e}"))
        }
        "posterior" => {
            let e = posterior_error(6, 4)?;
            ("posterior", e < 1e-12, format!("max error {e:.3e}"))
        }
        "schedule" => match schedule_laws(500, 32.0, 21)? {
            Ok(()) => ("schedule", true, "all laws hold".into()),
            Err(msg) => ("schedule", false, msg),
        },
        "gradient" => {
            let e = gradient_check(30, 1)?;
            ("gradient", e < 1e-3, format!("worst relative error {e:.3e}"))
        }
        "equivariance" => {
            let (o, l) = equivariance_check(4, 2, 2)?;
            ("equivariance", o < 1e-4 && l < 1e-6, format!("output {o:.3e}, loss {l:.3e}"))
        }
        "simulator" => {
            let bad = simulator_mismatches(200, 3)?;
            ("simulator", bad == 0, format!("{bad} mismatches"))
        }
        "parser" => {
            let bad = parser_failures(200, 4)?;
            ("parser", bad == 0, format!("{bad} failures"))
        }
        "oracle" => {
            let bad = oracle_failures(10, 5)?;
            ("oracle", bad == 0, format!("{bad} failures"))
        }
        _ => return Ok(None),
    };
    Ok(Some(SuiteOutcome {
        name: out.0,
        passed: out.1,
        detail: out.2,
    }))
}
