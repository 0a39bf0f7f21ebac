//! WebAssembly bindings for the static demo page in `www/`.

use dagdiff::aig::{parse_dag_to_aig, random_aig, DatasetRecord, NODE_LABELS};
use dagdiff::diffusion::{Mode, NoiseModel};
use dagdiff::graph::to_dot;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// `{"t": [...], "curves": [{"l": .., "tau": [...]}, ..]}` for `levels`
/// evenly spaced normalized levels.
pub fn schedule_curves_json(t_max: usize, beta: f64, top_down: bool, levels: usize) -> Result<String, String> {
    let mode = if top_down { Mode::TopDown } else { Mode::BottomUp };
    let model = NoiseModel::cosine(t_max, vec![1.0], vec![0.5, 0.5], beta, mode).map_err(|e| e.to_string())?;
    let levels = levels.max(2);
    let mut curves = Vec::with_capacity(levels);
    for k in 0..levels {
        let l = k as f64 / (levels - 1) as f64;
        let tau = (0..=t_max)
            .map(|t| model.local_timestep(t, l))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        curves.push(json!({ "l": l, "tau": tau }));
    }
    Ok(json!({ "t": (0..=t_max).collect::<Vec<_>>(), "curves": curves }).to_string())
}

/// Parses one dataset line (repairing it if needed) and returns the hex
/// columns of its truth table.
pub fn simulate_json(record: &str) -> Result<String, String> {
    let rec = DatasetRecord::from_json_line(record.trim())?;
    let aig = parse_dag_to_aig(&rec.dag, &mut ChaCha8Rng::seed_from_u64(0));
    let tt = aig.simulate().map_err(|e| e.to_string())?;
    Ok(json!({ "columns": tt.to_hex(), "ands": aig.ands().len(), "depth": aig.depth() }).to_string())
}

/// A random circuit as a dataset line, DOT text and node/edge lists for
/// drawing.
pub fn random_circuit_json(n_in: usize, n_out: usize, max_gates: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (aig, tt) = random_aig(n_in, n_out, max_gates, &mut rng).map_err(|e| e.to_string())?;
    let dag = aig.to_dag().map_err(|e| e.to_string())?;
    let n = dag.n();
    let nodes: Vec<_> = (0..n)
        .map(|i| json!({ "class": NODE_LABELS[dag.node_class(i)], "level": dag.levels()[i] }))
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if dag.edge_class(i, j) != 0 {
                edges.push(json!({ "from": i, "to": j, "negated": dag.edge_class(i, j) == 2 }));
            }
        }
    }
    let rec = DatasetRecord { dag: dag.clone(), tt: tt.clone() };
    Ok(json!({
        "record": rec.to_json_line().map_err(|e| e.to_string())?,
        "dot": to_dot(&dag, &NODE_LABELS),
        "truth_table": tt.to_hex(),
        "nodes": nodes,
        "edges": edges,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn schedule_curves(t_max: usize, beta: f64, top_down: bool, levels: usize) -> Result<String, JsValue> {
    js(schedule_curves_json(t_max, beta, top_down, levels))
}

#[wasm_bindgen]
pub fn simulate(record: &str) -> Result<String, JsValue> {
    js(simulate_json(record))
}

#[wasm_bindgen]
pub fn random_circuit(n_in: usize, n_out: usize, max_gates: usize, seed: u64) -> Result<String, JsValue> {
    js(random_circuit_json(n_in, n_out, max_gates, seed))
}
