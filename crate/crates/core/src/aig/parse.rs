use rand::seq::index;
use rand::Rng;

use super::{Aig, AndGate, Fanin, NODE_AND, NODE_INPUT, NODE_OUTPUT};
use crate::graph::{Dag, EDGE_NEGATED};

/// Turns any categorical graph into a legal circuit.
///
/// Each AND gate takes two distinct children sampled from its present,
/// strictly-lower-level children; each output takes one. Missing children
/// come from constant-zero inputs (at most two are introduced, so a gate
/// never uses the same child twice). Gates outside every output cone are
/// removed and the result is relabelled with its natural levels.
pub fn parse_dag_to_aig<R: Rng + ?Sized>(dag: &Dag, rng: &mut R) -> Aig {
    let n = dag.n();
    let classes = dag.node_classes();
    let levels = dag.levels();
    let inputs: Vec<usize> = (0..n).filter(|&i| classes[i] == NODE_INPUT).collect();
    let outputs: Vec<usize> = (0..n).filter(|&i| classes[i] == NODE_OUTPUT).collect();
    let mut ands: Vec<usize> = (0..n).filter(|&i| classes[i] == NODE_AND).collect();
    ands.sort_by_key(|&i| (levels[i], i));

    let n_in = inputs.len();
    const N_CONST: usize = 2;
    let first_and = n_in + N_CONST;
    let mut id_of = vec![usize::MAX; n];
    for (k, &i) in inputs.iter().enumerate() {
        id_of[i] = k;
    }
    for (k, &i) in ands.iter().enumerate() {
        id_of[i] = first_and + k;
    }

    let mut pick = |gate: usize, count: usize| -> Vec<Fanin> {
        let cands: Vec<usize> = (0..n)
            .filter(|&c| {
                (classes[c] == NODE_INPUT || classes[c] == NODE_AND)
                    && levels[c] < levels[gate]
                    && dag.edge_class(c, gate) != crate::graph::EDGE_ABSENT
            })
            .collect();
        let take = count.min(cands.len());
        let mut chosen: Vec<Fanin> = index::sample(rng, cands.len(), take)
            .into_iter()
            .map(|k| {
                let c = cands[k];
                Fanin::new(id_of[c], dag.edge_class(c, gate) == EDGE_NEGATED)
            })
            .collect();
        chosen.sort_by_key(|f| f.node);
        for slot in 0..count - take {
            chosen.push(Fanin::new(n_in + slot, false));
        }
        chosen
    };

    let gates: Vec<AndGate> = ands
        .iter()
        .map(|&g| {
            let f = pick(g, 2);
            AndGate { a: f[0], b: f[1] }
        })
        .collect();
    let outs: Vec<Fanin> = outputs.iter().map(|&o| pick(o, 1)[0]).collect();

    // Fanins always point to strictly lower labels, which the level-sorted
    // AND order turns into lower ids; natural levels are therefore valid.
    let raw = Aig::with_natural_levels(n_in, N_CONST, gates, outs).expect("parsed fanins are ordered");
    raw.remove_floating().canonicalize()
}
