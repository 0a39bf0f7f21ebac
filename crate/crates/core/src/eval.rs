//! Sampling-based evaluation: validity, best-of-K accuracy and depth
//! statistics, plus the paired ablation harness.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aig::{function_accuracy, parse_dag_to_aig, validity_counts, DatasetRecord, TruthTable};
use crate::diffusion::{reverse_sample, Denoiser, Element, LevelStructureStats, NoiseModel, Prediction};
use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::train::{train_loop, TrainConfig, TrainOutput};

pub type Histogram = BTreeMap<usize, usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub truth_table: Vec<String>,
    pub n_in: usize,
    pub validity: f64,
    pub accuracy: f64,
    pub best_sample: usize,
    pub max_levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub samples: Histogram,
    pub reference: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub k: usize,
    pub seed: u64,
    pub validity_pooling: String,
    pub level_statistic: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub validity: f64,
    pub accuracy: f64,
    pub level_emd: f64,
    pub histograms: Histograms,
    pub cases: Vec<CaseRecord>,
    pub meta: ReportMeta,
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// `level,samples,reference` with normalized frequencies.
    pub fn histogram_csv(&self) -> String {
        let (a, b) = (&self.histograms.samples, &self.histograms.reference);
        let (ta, tb) = (a.values().sum::<usize>().max(1) as f64, b.values().sum::<usize>().max(1) as f64);
        let top = a.keys().chain(b.keys()).copied().max().unwrap_or(0);
        let mut out = String::from("level,samples,reference\n");
        for l in 0..=top {
            let fa = *a.get(&l).unwrap_or(&0) as f64 / ta;
            let fb = *b.get(&l).unwrap_or(&0) as f64 / tb;
            out.push_str(&format!("{l},{fa:.6},{fb:.6}\n"));
        }
        out
    }

    pub fn save_histogram_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.histogram_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn histogram(values: impl IntoIterator<Item = usize>) -> Histogram {
    let mut h = Histogram::new();
    for v in values {
        *h.entry(v).or_insert(0) += 1;
    }
    h
}

/// Earth mover's distance between two normalized histograms on the
/// integer line.
pub fn level_emd(a: &Histogram, b: &Histogram) -> Result<f64> {
    let ta = a.values().sum::<usize>();
    let tb = b.values().sum::<usize>();
    if ta == 0 || tb == 0 {
        return Err(Error::EmptyDistribution("level histogram"));
    }
    let top = a.keys().chain(b.keys()).copied().max().unwrap_or(0);
    let (mut ca, mut cb, mut d) = (0.0, 0.0, 0.0);
    for l in 0..top {
        ca += *a.get(&l).unwrap_or(&0) as f64 / ta as f64;
        cb += *b.get(&l).unwrap_or(&0) as f64 / tb as f64;
        d += (ca - cb).abs();
    }
    Ok(d)
}

/// Predicts the type marginals everywhere, so the reverse chain draws
/// wiring independently of the condition.
#[derive(Debug, Clone)]
pub struct RandomWiring {
    pub m_x: Vec<f64>,
    pub m_e: Vec<f64>,
}

impl RandomWiring {
    pub fn from_model(model: &NoiseModel) -> Self {
        RandomWiring {
            m_x: model.marginal(Element::Node).to_vec(),
            m_e: model.marginal(Element::Edge).to_vec(),
        }
    }
}

impl Denoiser for RandomWiring {
    fn predict(&self, noisy: &Dag, _t: usize, _cond: &[f64], _model: &NoiseModel) -> Result<Prediction> {
        let n = noisy.n();
        Ok(Prediction {
            px: self.m_x.repeat(n),
            pe: self.m_e.repeat(n * n),
        })
    }
}

/// Draws `num` graphs for one condition.
pub fn sample_graphs<D: Denoiser + ?Sized>(
    denoiser: &D,
    tt: &TruthTable,
    stats: &LevelStructureStats,
    model: &NoiseModel,
    num: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Dag>> {
    (0..num).map(|_| reverse_sample(denoiser, tt, stats, model, rng)).collect()
}

struct CaseResult {
    record: CaseRecord,
    ok_gates: usize,
    gates: usize,
}

fn case_rng(seed: u64, case: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case as u64);
    rng
}

fn evaluate_case<D: Denoiser + ?Sized>(
    denoiser: &D,
    tt: &TruthTable,
    k: usize,
    model: &NoiseModel,
    stats: &LevelStructureStats,
    rng: &mut ChaCha8Rng,
) -> Result<CaseResult> {
    let (mut ok_gates, mut gates) = (0, 0);
    let mut best = (f64::NEG_INFINITY, 0);
    let mut max_levels = Vec::with_capacity(k);
    for s in 0..k {
        let dag = reverse_sample(denoiser, tt, stats, model, rng)?;
        let (ok, total) = validity_counts(&dag);
        ok_gates += ok;
        gates += total;
        let aig = parse_dag_to_aig(&dag, rng);
        let acc = function_accuracy(&aig.simulate()?, tt)?;
        if acc > best.0 {
            best = (acc, s);
        }
        max_levels.push(aig.max_level());
    }
    Ok(CaseResult {
        record: CaseRecord {
            truth_table: tt.to_hex(),
            n_in: tt.n_in(),
            validity: if gates == 0 { 1.0 } else { ok_gates as f64 / gates as f64 },
            accuracy: best.0,
            best_sample: best.1,
            max_levels,
        },
        ok_gates,
        gates,
    })
}

/// Samples `k` graphs per test condition. Case `i` draws from its own
/// random stream, so results do not depend on `threads`.
pub fn evaluate<D: Denoiser + Sync + ?Sized>(
    denoiser: &D,
    test: &[DatasetRecord],
    k: usize,
    model: &NoiseModel,
    stats: &LevelStructureStats,
    seed: u64,
    threads: usize,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let run = |i: usize| evaluate_case(denoiser, &test[i].tt, k, model, stats, &mut case_rng(seed, i));
    let results: Vec<Result<CaseResult>> = if threads <= 1 {
        (0..test.len()).map(run).collect()
    } else {
        let chunk = test.len().div_ceil(threads);
        let run = &run;
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..test.len())
                .collect::<Vec<_>>()
                .chunks(chunk)
                .map(|part| {
                    let part = part.to_vec();
                    s.spawn(move || part.into_iter().map(run).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    let mut cases = Vec::with_capacity(test.len());
    let (mut ok, mut total) = (0, 0);
    for r in results {
        let r = r?;
        ok += r.ok_gates;
        total += r.gates;
        cases.push(r.record);
    }
    let samples = histogram(cases.iter().flat_map(|c| c.max_levels.iter().copied()));
    let reference = histogram(test.iter().map(|r| r.dag.max_level()));
    let accuracy = cases.iter().map(|c| c.accuracy).sum::<f64>() / cases.len() as f64;
    Ok(EvalReport {
        validity: if total == 0 { 1.0 } else { ok as f64 / total as f64 },
        accuracy,
        level_emd: level_emd(&samples, &reference)?,
        histograms: Histograms { samples, reference },
        cases,
        meta: ReportMeta {
            k,
            seed,
            validity_pooling: "correctly wired gates over all gates of all raw samples".into(),
            level_statistic: "max level of every parsed sample vs. every reference graph".into(),
        },
    })
}

#[derive(Debug, Clone)]
pub struct AblationPair {
    pub base: EvalReport,
    pub variant: EvalReport,
}

/// Names of the top-level config fields that differ.
pub fn config_diff(a: &TrainConfig, b: &TrainConfig) -> Result<Vec<String>> {
    let (va, vb) = (serde_json::to_value(a)?, serde_json::to_value(b)?);
    let (Some(ma), Some(mb)) = (va.as_object(), vb.as_object()) else {
        return Err(Error::Config("config is not an object".into()));
    };
    Ok(ma.iter().filter(|(k, v)| mb.get(*k) != Some(v)).map(|(k, _)| k.clone()).collect())
}

/// Trains both configs on the same data and evaluates them on the same
/// conditions with the same seed.
pub fn ablation_run(
    base: &TrainConfig,
    variant: &TrainConfig,
    train: &[DatasetRecord],
    val: &[DatasetRecord],
    test: &[DatasetRecord],
    k: usize,
    seed: u64,
    threads: usize,
) -> Result<AblationPair> {
    let diff = config_diff(base, variant)?;
    if diff.len() != 1 {
        return Err(Error::Config(format!("ablation configs must differ in one field, got {diff:?}")));
    }
    let output = TrainOutput { dir: None, threads };
    let mut reports = Vec::with_capacity(2);
    for cfg in [base, variant] {
        let out = train_loop(cfg, train, val, &output, |_| {})?;
        let model = out.meta.noise_model()?;
        reports.push(evaluate(&out.params, test, k, &model, &out.meta.level_stats, seed, threads)?);
    }
    let variant = reports.pop().unwrap();
    let base = reports.pop().unwrap();
    Ok(AblationPair { base, variant })
}
