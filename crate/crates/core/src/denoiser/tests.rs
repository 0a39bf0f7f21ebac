use super::*;
use crate::aig::random_aig;
use crate::diffusion::Mode;
use crate::graph::{permute, Permutation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> DenoiserConfig {
    DenoiserConfig {
        layers: 2,
        hidden_x: 16,
        hidden_e: 8,
        hidden_y: 8,
        heads: 2,
        cond_width: 4,
        ..DenoiserConfig::default()
    }
}

fn model() -> NoiseModel {
    NoiseModel::cosine(50, vec![0.3, 0.5, 0.2], vec![0.8, 0.15, 0.05], 16.0, Mode::BottomUp).unwrap()
}

fn noisy_case(seed: u64) -> (Dag, Dag, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (aig, _) = random_aig(3, 1, 10, &mut rng).unwrap();
    let clean = aig.to_dag().unwrap();
    let noisy = model().corrupt(&clean, 30, &mut rng).unwrap();
    let cond = (0..clean.n() * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
    (clean, noisy, cond)
}

/// Perturbs parameters so layer norms and biases are not at their trivial
/// initial values.
fn jitter(params: &mut DenoiserParams, rng: &mut ChaCha8Rng) {
    for t in params.tensors_mut() {
        for v in &mut t.data {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
}

#[test]
fn outputs_are_distributions_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = DenoiserParams::init(tiny(), &mut rng).unwrap();
    let (_, noisy, cond) = noisy_case(1);
    let a = params.predict_values(&noisy, 30, &cond, &model()).unwrap();
    let b = params.predict_values(&noisy, 30, &cond, &model()).unwrap();
    assert_eq!(a, b);
    for row in a.px.chunks(3).chain(a.pe.chunks(3)) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
    for t in [0, 1, 50] {
        let p = params.predict_values(&noisy, t, &cond, &model()).unwrap();
        assert!(p.pe.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn forward_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = DenoiserParams::init(tiny(), &mut rng).unwrap();
    jitter(&mut params, &mut rng);
    for seed in 0..5 {
        let (_, noisy, cond) = noisy_case(seed);
        let n = noisy.n();
        let base = params.predict_values(&noisy, 20, &cond, &model()).unwrap();
        let sigma = Permutation::random(n, &mut rng);
        let moved = permute(&noisy, &sigma).unwrap();
        let out = params
            .predict_values(&moved, 20, &sigma.permute_rows(&cond, 4), &model())
            .unwrap();
        let want_x = sigma.permute_rows(&base.px, 3);
        let want_e = sigma.permute_pairs(&base.pe, 3);
        let dev = out
            .px
            .iter()
            .zip(&want_x)
            .chain(out.pe.iter().zip(&want_e))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-4, "deviation {dev}");
    }
}

#[test]
fn layer_equivariance_and_pooled_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = DenoiserParams::init(tiny(), &mut rng).unwrap();
    jitter(&mut params, &mut rng);
    let c = params.config().clone();
    let n = 6;
    let x0 = Tensor::new(n, c.hidden_x, (0..n * c.hidden_x).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let e0 = Tensor::new(n * n, c.hidden_e, (0..n * n * c.hidden_e).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let y0 = Tensor::new(1, c.hidden_y, (0..c.hidden_y).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let run = |x: &Tensor, e: &Tensor| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.tensors().iter().map(|t| tape.leaf(t.clone())).collect();
        let p = |name: &str| vars[params.index[name]];
        let name = |s: &str| format!("layer0.{s}");
        let (x, e, y) = (tape.leaf(x.clone()), tape.leaf(e.clone()), tape.leaf(y0.clone()));
        let (a, b, c) = layer(&mut tape, &p, &name, x, e, y, 0.5);
        (tape.value(a).clone(), tape.value(b).clone(), tape.value(c).clone())
    };
    let (bx, be, by) = run(&x0, &e0);
    let sigma = Permutation::random(n, &mut rng);
    let (px, pe, py) = run(
        &Tensor::new(n, c.hidden_x, sigma.permute_rows(&x0.data, c.hidden_x)),
        &Tensor::new(n * n, c.hidden_e, sigma.permute_pairs(&e0.data, c.hidden_e)),
    );
    let max_dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(max_dev(&px.data, &sigma.permute_rows(&bx.data, c.hidden_x)) < 1e-5);
    assert!(max_dev(&pe.data, &sigma.permute_pairs(&be.data, c.hidden_e)) < 1e-5);
    assert!(max_dev(&py.data, &by.data) < 1e-9);
}

#[test]
fn zero_layer_reduces_to_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = DenoiserParams::init(tiny(), &mut rng).unwrap();
    let names = params.names().to_vec();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.starts_with("layer0.") && !name.ends_with(".g") {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let c = params.config().clone();
    let n = 4;
    let x0 = Tensor::new(n, c.hidden_x, (0..n * c.hidden_x).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let e0 = Tensor::zeros(n * n, c.hidden_e);
    let y0 = Tensor::zeros(1, c.hidden_y);
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors().iter().map(|t| tape.leaf(t.clone())).collect();
    let p = |name: &str| vars[params.index[name]];
    let name = |s: &str| format!("layer0.{s}");
    let (x, e, y) = (tape.leaf(x0.clone()), tape.leaf(e0), tape.leaf(y0));
    let (out, _, _) = layer(&mut tape, &p, &name, x, e, y, 0.5);
    let out = tape.value(out);
    for r in 0..n {
        let row = x0.row(r);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
        for (k, v) in row.iter().enumerate() {
            let want = (v - mean) / (var + 1e-5).sqrt();
            assert!((out.at(r, k) - want).abs() < 1e-4);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = DenoiserParams::init(tiny(), &mut rng).unwrap();
    jitter(&mut params, &mut rng);
    // eight nodes: 3 inputs, 4 ANDs, 1 output
    let n = 8;
    let nodes = [0, 0, 0, 1, 1, 1, 1, 2];
    let edges: Vec<usize> = (0..n * n)
        .map(|k| if k / n == k % n { 0 } else { rng.gen_range(0..3) })
        .collect();
    let noisy = Dag::from_classes(3, 3, &nodes, &edges, vec![0, 0, 0, 1, 1, 2, 2, 3]).unwrap();
    let target: Vec<usize> = (0..n * n).map(|_| rng.gen_range(0..3)).collect();
    let cond: Vec<f64> = (0..n * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
    let feats = params.features(&noisy, 25, &cond, &model()).unwrap();

    let loss_of = |p: &DenoiserParams, tape: &mut Tape| -> (Vec<Var>, Var) {
        let (vars, px, pe) = p.forward_on_tape(tape, &feats).unwrap();
        let le = tape.nll(pe, &target, &vec![1.0; n * n]);
        let lx = tape.nll(px, &nodes, &[1.0; 8]);
        (vars, tape.add(le, lx))
    };
    let mut tape = Tape::new();
    let (vars, loss) = loss_of(&params, &mut tape);
    let grads = tape.backward(loss).unwrap();

    let h = 1e-4;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 150 {
        let ti = rng.gen_range(0..params.tensors().len());
        let ei = rng.gen_range(0..params.tensors()[ti].len());
        let an = grads.wrt(vars[ti]).unwrap().data[ei];
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.tensors_mut()[ti].data[ei] += delta;
            let mut t = Tape::new();
            let (_, l) = loss_of(&p, &mut t);
            t.value(l).item()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn checkpoint_roundtrip_and_rejections() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut params = DenoiserParams::init(tiny(), &mut rng).unwrap();
    jitter(&mut params, &mut rng);
    // keep values f32-exact as training does
    for t in params.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    let ck = Checkpoint {
        params: params.clone(),
        meta: serde_json::json!({"note": "x"}),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    let (_, noisy, cond) = noisy_case(7);
    assert_eq!(
        back.params.predict_values(&noisy, 10, &cond, &model()).unwrap(),
        params.predict_values(&noisy, 10, &cond, &model()).unwrap()
    );

    let bytes = ck.to_bytes().unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic)));
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::VersionMismatch { found: 9, .. })));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
    let text = String::from_utf8_lossy(&bytes).to_string();
    let at = text.find("\"layers\":2").unwrap() + 9;
    let mut bad = bytes.clone();
    bad[at] = b'3';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::ManifestMismatch(_))));
}
