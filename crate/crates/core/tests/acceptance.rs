//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails. Trains three desk-scale models, so
//! expect this to take the better part of an hour on one core.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dagdiff::aig::{encode_condition, function_accuracy, parse_dag_to_aig, random_aig, DatasetRecord, Roster, TruthTable, CONDITION_WIDTH};
use dagdiff::diffusion::{reverse_sample, NoiseModel};
use dagdiff::eval::{evaluate, EvalReport, RandomWiring};
use dagdiff::mcts::{mcts_refine, MctsConfig};
use dagdiff::selftest;
use dagdiff::train::{train_loop, TrainConfig, TrainOutcome, TrainOutput};

const TRAIN_GRAPHS: usize = 2000;
const TEST_CONDITIONS: usize = 200;
const EVAL_SEED: u64 = 7;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

struct Harness {
    failures: usize,
}

impl Harness {
    fn check(&mut self, id: usize, name: &str, f: impl FnOnce() -> Result<Verdict, String>) {
        let start = Instant::now();
        let v = f().unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        if !v.passed {
            self.failures += 1;
        }
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1} s]",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
}

fn records(count: usize, n_in: usize, max_gates: usize, seed: u64) -> Vec<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (aig, tt) = random_aig(n_in, 1, max_gates, &mut rng).unwrap();
            DatasetRecord {
                dag: aig.to_dag().unwrap(),
                tt,
            }
        })
        .collect()
}

fn desk_config() -> TrainConfig {
    let cfg = TrainConfig::default();
    assert_eq!((cfg.t_max, cfg.layers, cfg.hidden, cfg.batch_size, cfg.learning_rate), (50, 4, 64, 32, 2e-4));
    cfg
}

struct Trained {
    outcome: TrainOutcome,
    model: NoiseModel,
    train_secs: f64,
}

fn train(cfg: &TrainConfig, data: &[DatasetRecord]) -> Result<Trained, String> {
    let start = Instant::now();
    let outcome = train_loop(cfg, data, &[], &TrainOutput::default(), |_| {}).map_err(|e| e.to_string())?;
    let model = outcome.meta.noise_model().map_err(|e| e.to_string())?;
    Ok(Trained {
        outcome,
        model,
        train_secs: start.elapsed().as_secs_f64(),
    })
}

fn eval(t: &Trained, test: &[DatasetRecord]) -> Result<EvalReport, String> {
    evaluate(&t.outcome.params, test, 10, &t.model, &t.outcome.meta.level_stats, EVAL_SEED, 1).map_err(|e| e.to_string())
}

fn e<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

fn main() {
    let mut h = Harness { failures: 0 };

    h.check(1, "closed-form cumulative transition", || {
        let start = Instant::now();
        let err = selftest::closed_form_error(500, &[0.6, 0.3, 0.1]).map_err(e)?;
        let secs = start.elapsed().as_secs_f64();
        Ok(verdict(err < 1e-10 && secs < 1.0, format!("max abs error {err:.2e} over T = 500, k = 3")))
    });

    h.check(2, "posterior vs brute-force enumeration", || {
        let start = Instant::now();
        let a = selftest::posterior_error(6, 6).map_err(e)?;
        let b = selftest::posterior_error(500, 6).map_err(e)?;
        let err = a.max(b);
        let secs = start.elapsed().as_secs_f64();
        Ok(verdict(err < 1e-12 && secs < 10.0, format!("max abs error {err:.2e} for k in {{2,3}}, tau_t <= 6")))
    });

    h.check(3, "local timestep laws", || {
        let start = Instant::now();
        let r = selftest::schedule_laws(500, 32.0, 21).map_err(e)?;
        let secs = start.elapsed().as_secs_f64();
        Ok(match r {
            Ok(()) => verdict(secs < 1.0, "boundaries, monotonicity and level ordering hold (T = 500, beta = 32, 21 levels)"),
            Err(msg) => verdict(false, msg),
        })
    });

    h.check(4, "gradient check through soft simulation", || {
        let start = Instant::now();
        let worst = selftest::gradient_check(120, 11).map_err(e)?;
        let secs = start.elapsed().as_secs_f64();
        Ok(verdict(worst < 1e-3 && secs < 120.0, format!("worst relative error {worst:.2e} over 120 parameters")))
    });

    h.check(5, "permutation equivariance and loss invariance", || {
        let start = Instant::now();
        let (out, loss) = selftest::equivariance_check(20, 5, 12).map_err(e)?;
        let secs = start.elapsed().as_secs_f64();
        Ok(verdict(
            out < 1e-4 && loss < 1e-6 && secs < 60.0,
            format!("max output deviation {out:.2e}, max relative loss deviation {loss:.2e}"),
        ))
    });

    h.check(6, "simulator cross-check", || {
        let start = Instant::now();
        let bad = selftest::simulator_mismatches(1000, 13).map_err(e)?;
        let secs = start.elapsed().as_secs_f64();
        Ok(verdict(bad == 0 && secs < 10.0, format!("{bad} mismatches on 1000 circuits")))
    });

    h.check(7, "parser totality", || {
        let start = Instant::now();
        let bad = selftest::parser_failures(1000, 14).map_err(e)?;
        let secs = start.elapsed().as_secs_f64();
        Ok(verdict(bad == 0 && secs < 30.0, format!("{bad} invalid parses of 1000 random graphs")))
    });

    h.check(8, "oracle denoiser identity", || {
        let start = Instant::now();
        let bad = selftest::oracle_failures(50, 15).map_err(e)?;
        let secs = start.elapsed().as_secs_f64();
        Ok(verdict(bad == 0 && secs < 60.0, format!("{bad} of 50 reconstructions differ from the target")))
    });

    let train_set = records(TRAIN_GRAPHS, 3, 10, 1);
    let test_set = records(TEST_CONDITIONS, 3, 10, 2);
    let mut full: Option<(Trained, EvalReport)> = None;

    h.check(9, "desk-scale end to end", || {
        let start = Instant::now();
        let t = train(&desk_config(), &train_set)?;
        let report = eval(&t, &test_set)?;
        let base = evaluate(&RandomWiring::from_model(&t.model), &test_set, 10, &t.model, &t.outcome.meta.level_stats, EVAL_SEED, 1)
            .map_err(e)?;
        let base_single = evaluate(&RandomWiring::from_model(&t.model), &test_set, 1, &t.model, &t.outcome.meta.level_stats, EVAL_SEED, 1)
            .map_err(e)?;
        let minutes = start.elapsed().as_secs_f64() / 60.0;
        let passed = report.validity >= 0.90 && report.accuracy >= 0.70 && base.accuracy <= 0.62 && minutes <= 45.0;
        let detail = format!(
            "validity {:.3} (>= 0.90), best-of-10 accuracy {:.3} (>= 0.70), random-wiring best-of-10 accuracy {:.3} (<= 0.62; single-sample {:.3}), training {:.1} min, total {:.1} min (<= 45)",
            report.validity,
            report.accuracy,
            base.accuracy,
            base_single.accuracy,
            t.train_secs / 60.0,
            minutes
        );
        full = Some((t, report));
        Ok(verdict(passed, detail))
    });

    h.check(10, "ablation ordering", || {
        let (_, full_report) = full.as_ref().ok_or("full model unavailable")?;
        let no_cond = train(&TrainConfig { lambda: 0.0, ..desk_config() }, &train_set)?;
        let no_cond_report = eval(&no_cond, &test_set)?;
        let one_shot = train(&TrainConfig { beta: 0.0, ..desk_config() }, &train_set)?;
        let one_shot_report = eval(&one_shot, &test_set)?;
        let gap = full_report.accuracy - no_cond_report.accuracy;
        let a = gap >= 0.03;
        let b = one_shot_report.level_emd > full_report.level_emd;
        Ok(verdict(
            a && b,
            format!(
                "(a) accuracy full {:.3} vs lambda = 0 {:.3}, gap {:+.3} (>= 0.03) {}; (b) level EMD beta = 0 {:.3} vs full {:.3} {}",
                full_report.accuracy,
                no_cond_report.accuracy,
                gap,
                if a { "ok" } else { "not met" },
                one_shot_report.level_emd,
                full_report.level_emd,
                if b { "ok" } else { "not met" }
            ),
        ))
    });

    h.check(11, "tree-search refinement", || {
        let (t, _) = full.as_ref().ok_or("full model unavailable")?;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut starts = Vec::new();
        for rec in &test_set {
            let dag = reverse_sample(&t.outcome.params, &rec.tt, &t.outcome.meta.level_stats, &t.model, &mut rng).map_err(e)?;
            let aig = parse_dag_to_aig(&dag, &mut rng);
            let acc = function_accuracy(&aig.simulate().map_err(e)?, &rec.tt).map_err(e)?;
            if acc < 1.0 {
                starts.push((aig, rec.tt.clone()));
            }
            if starts.len() == 20 {
                break;
            }
        }
        if starts.len() < 20 {
            return Ok(verdict(false, format!("only {} imperfect samples found", starts.len())));
        }
        let start = Instant::now();
        let cfg = MctsConfig::default();
        let (mut before, mut after, mut worse) = (0.0, 0.0, 0);
        for (aig, tt) in &starts {
            let out = mcts_refine(aig, tt, &cfg, &mut rng).map_err(e)?;
            before += out.start_reward;
            after += out.reward;
            if out.reward < out.start_reward {
                worse += 1;
            }
        }
        let (before, after) = (before / 20.0, after / 20.0);
        let minutes = start.elapsed().as_secs_f64() / 60.0;
        Ok(verdict(
            after - before >= 0.02 && worse == 0 && minutes < 20.0,
            format!(
                "mean accuracy {before:.3} -> {after:.3} ({:+.3}, >= +0.02), {worse} cases decreased, {minutes:.1} min at 500 x 50",
                after - before
            ),
        ))
    });

    h.check(12, "condition encoding beyond the training width", || {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for n_in in 3..=10 {
            let (_, tt): (_, TruthTable) = random_aig(n_in, 2, n_in + 12, &mut rng).map_err(e)?;
            let roster = Roster::canonical(n_in + 6 + 2, n_in, 2).map_err(e)?;
            let enc = encode_condition(&tt, &roster, &mut rng);
            if enc.len() != roster.n() * CONDITION_WIDTH || enc.iter().any(|v| !(0.0..1.0).contains(v)) {
                return Ok(verdict(false, format!("bad encoding shape or range at n_in = {n_in}")));
            }
        }
        let (t, _) = full.as_ref().ok_or("full model unavailable")?;
        let wider = records(100, 4, 11, 3);
        let report = eval(t, &wider)?;
        Ok(verdict(
            report.validity >= 0.8,
            format!(
                "encodings well-formed for n_in 3..=10; 4-input validity {:.3} (>= 0.8), accuracy {:.3}",
                report.validity, report.accuracy
            ),
        ))
    });

    if h.failures > 0 {
        println!("{} criteria failed", h.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
