//! Tree search over single-gate rewiring edits, rewarded by exact
//! simulation.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aig::{function_accuracy, Aig, Fanin, GateRef, TruthTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MctsConfig {
    pub simulations: usize,
    pub steps: usize,
    pub rollout_depth: usize,
    pub ucb_c: f64,
    pub pw_c: f64,
    pub pw_alpha: f64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            simulations: 500,
            steps: 50,
            rollout_depth: 5,
            ucb_c: std::f64::consts::SQRT_2,
            pw_c: 1.0,
            pw_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditAction {
    pub gate: GateRef,
    pub fanins: Vec<Fanin>,
}

impl EditAction {
    pub fn apply(&self, state: &Aig) -> Result<Aig> {
        state.rewire(self.gate, &self.fanins)
    }
}

/// Gates that have enough lower-level candidates to be rewired.
pub fn editable_gates(state: &Aig) -> Vec<(GateRef, Vec<usize>)> {
    let ands = (0..state.ands().len()).map(GateRef::And);
    let outs = (0..state.n_out()).map(GateRef::Output);
    ands.chain(outs)
        .filter_map(|g| {
            let need = if matches!(g, GateRef::And(_)) { 2 } else { 1 };
            let c = state.candidates(g);
            (c.len() >= need).then_some((g, c))
        })
        .collect()
}

pub fn sample_action<R: Rng + ?Sized>(state: &Aig, rng: &mut R) -> Result<EditAction> {
    let gates = editable_gates(state);
    if gates.is_empty() {
        return Err(Error::NoEditableGate);
    }
    let (gate, cands) = &gates[rng.gen_range(0..gates.len())];
    let need = if matches!(gate, GateRef::And(_)) { 2 } else { 1 };
    let fanins = index::sample(rng, cands.len(), need)
        .into_iter()
        .map(|k| Fanin::new(cands[k], rng.gen_bool(0.5)))
        .collect();
    Ok(EditAction { gate: *gate, fanins })
}

pub fn reward(state: &Aig, cond: &TruthTable) -> Result<f64> {
    function_accuracy(&state.simulate()?, cond)
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub state: Aig,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub visits: u64,
    pub total_reward: f64,
}

impl SearchNode {
    pub fn mean_reward(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_reward / self.visits as f64
        }
    }
}

/// One search tree. The root counts as visited once at creation, so every
/// node satisfies `visits == 1 + sum of child visits`.
#[derive(Debug, Clone)]
pub struct SearchTree {
    pub nodes: Vec<SearchNode>,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub aig: Aig,
    pub start_reward: f64,
    pub reward: f64,
    pub steps_run: usize,
}

struct Best {
    state: Aig,
    reward: f64,
}

impl Best {
    fn offer(&mut self, state: &Aig, r: f64) {
        if r > self.reward {
            self.state = state.clone();
            self.reward = r;
        }
    }
}

impl SearchTree {
    pub fn new(root: Aig, root_reward: f64) -> Self {
        SearchTree {
            nodes: vec![SearchNode {
                state: root,
                parent: None,
                children: Vec::new(),
                visits: 1,
                total_reward: root_reward,
            }],
        }
    }

    fn widening_limit(&self, node: usize, cfg: &MctsConfig) -> usize {
        let n = self.nodes[node].visits as f64;
        ((cfg.pw_c * n.powf(cfg.pw_alpha)).ceil() as usize).max(1)
    }

    fn ucb_child(&self, node: usize, cfg: &MctsConfig) -> usize {
        let ln_n = (self.nodes[node].visits as f64).ln();
        let mut best = self.nodes[node].children[0];
        let mut best_score = f64::NEG_INFINITY;
        for &c in &self.nodes[node].children {
            let ch = &self.nodes[c];
            let score = ch.mean_reward() + cfg.ucb_c * (ln_n / ch.visits as f64).sqrt();
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        best
    }

    /// Select, expand, roll out and back up once.
    fn simulate<R: Rng + ?Sized>(&mut self, cond: &TruthTable, cfg: &MctsConfig, best: &mut Best, rng: &mut R) -> Result<()> {
        let mut node = 0;
        while self.nodes[node].children.len() >= self.widening_limit(node, cfg) {
            node = self.ucb_child(node, cfg);
        }
        let action = sample_action(&self.nodes[node].state, rng)?;
        let child_state = action.apply(&self.nodes[node].state)?;
        best.offer(&child_state, reward(&child_state, cond)?);
        let mut state = child_state.clone();
        for _ in 0..cfg.rollout_depth {
            state = sample_action(&state, rng)?.apply(&state)?;
        }
        let r = reward(&state, cond)?;
        best.offer(&state, r);

        let id = self.nodes.len();
        self.nodes.push(SearchNode {
            state: child_state,
            parent: Some(node),
            children: Vec::new(),
            visits: 0,
            total_reward: 0.0,
        });
        self.nodes[node].children.push(id);
        let mut cur = Some(id);
        while let Some(k) = cur {
            self.nodes[k].visits += 1;
            self.nodes[k].total_reward += r;
            cur = self.nodes[k].parent;
        }
        Ok(())
    }

    /// Child with the most visits, first on ties.
    pub fn robust_child(&self, node: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for &c in &self.nodes[node].children {
            if best.is_none_or(|b| self.nodes[c].visits > self.nodes[b].visits) {
                best = Some(c);
            }
        }
        best
    }
}

/// Runs `steps` decision steps of `simulations` each and returns the best
/// circuit seen, which is never worse than `start`.
pub fn mcts_refine<R: Rng + ?Sized>(start: &Aig, cond: &TruthTable, cfg: &MctsConfig, rng: &mut R) -> Result<RefineOutcome> {
    let start_reward = reward(start, cond)?;
    let mut best = Best {
        state: start.clone(),
        reward: start_reward,
    };
    let mut current = start.clone();
    let mut current_reward = start_reward;
    let mut steps_run = 0;
    for _ in 0..cfg.steps {
        if best.reward >= 1.0 {
            break;
        }
        let mut tree = SearchTree::new(current.clone(), current_reward);
        for _ in 0..cfg.simulations {
            tree.simulate(cond, cfg, &mut best, rng)?;
        }
        steps_run += 1;
        match tree.robust_child(0) {
            Some(c) => {
                current = tree.nodes[c].state.clone();
                current_reward = reward(&current, cond)?;
            }
            None => break,
        }
    }
    Ok(RefineOutcome {
        aig: best.state,
        start_reward,
        reward: best.reward,
        steps_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aig::{random_aig, AndGate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small_cfg() -> MctsConfig {
        MctsConfig {
            simulations: 40,
            steps: 5,
            ..MctsConfig::default()
        }
    }

    #[test]
    fn actions_keep_circuits_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (mut aig, _) = random_aig(3, 2, 10, &mut rng).unwrap();
            for _ in 0..20 {
                let a = sample_action(&aig, &mut rng).unwrap();
                let want = if matches!(a.gate, GateRef::And(_)) { 2 } else { 1 };
                assert_eq!(a.fanins.len(), want);
                aig = a.apply(&aig).unwrap();
                aig.simulate().unwrap();
            }
        }
    }

    #[test]
    fn gate_choice_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let aig = loop {
            let (aig, _) = random_aig(3, 1, 10, &mut rng).unwrap();
            if editable_gates(&aig).len() >= 4 {
                break aig;
            }
        };
        let gates: Vec<GateRef> = editable_gates(&aig).into_iter().map(|(g, _)| g).collect();
        let mut counts = vec![0.0; gates.len()];
        let draws = 10_000;
        for _ in 0..draws {
            let a = sample_action(&aig, &mut rng).unwrap();
            counts[gates.iter().position(|g| *g == a.gate).unwrap()] += 1.0;
        }
        let expect = draws as f64 / gates.len() as f64;
        let chi2: f64 = counts.iter().map(|c| (c - expect).powi(2) / expect).sum();
        let p = 1.0 - ChiSquared::new((gates.len() - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn no_gates_is_an_error() {
        let aig = Aig::with_natural_levels(2, 0, vec![], vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(sample_action(&aig, &mut rng), Err(Error::NoEditableGate)));
    }

    #[test]
    fn reward_examples() {
        let nand = Aig::with_natural_levels(
            2,
            0,
            vec![AndGate {
                a: Fanin::new(0, false),
                b: Fanin::new(1, false),
            }],
            vec![Fanin::new(2, true)],
        )
        .unwrap();
        let tt = nand.simulate().unwrap();
        assert_eq!(reward(&nand, &tt).unwrap(), 1.0);
        assert_eq!(reward(&nand, &tt.complement()).unwrap(), 0.0);
        // constant one: NAND is wrong only on row 3
        let or = TruthTable::from_bits(2, vec![vec![true, true, true, true]]).unwrap();
        assert_eq!(reward(&nand, &or).unwrap(), 0.75);
    }

    #[test]
    fn perfect_start_is_returned_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (aig, tt) = random_aig(3, 1, 8, &mut rng).unwrap();
        let out = mcts_refine(&aig, &tt, &small_cfg(), &mut rng).unwrap();
        assert_eq!(out.aig, aig);
        assert_eq!(out.reward, 1.0);
        assert_eq!(out.steps_run, 0);
    }

    #[test]
    fn never_worse_than_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (aig, _) = random_aig(3, 1, 8, &mut rng).unwrap();
            let (_, cond) = random_aig(3, 1, 8, &mut rng).unwrap();
            let out = mcts_refine(&aig, &cond, &small_cfg(), &mut rng).unwrap();
            assert!(out.reward >= out.start_reward);
            assert_eq!(reward(&out.aig, &cond).unwrap(), out.reward);
        }
    }

    #[test]
    fn visit_bookkeeping() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (aig, _) = random_aig(3, 1, 10, &mut rng).unwrap();
        let (_, cond) = random_aig(3, 1, 10, &mut rng).unwrap();
        let r0 = reward(&aig, &cond).unwrap();
        let mut tree = SearchTree::new(aig.clone(), r0);
        let mut best = Best { state: aig, reward: r0 };
        let cfg = MctsConfig::default();
        for batch in 0..5 {
            for _ in 0..30 {
                tree.simulate(&cond, &cfg, &mut best, &mut rng).unwrap();
            }
            for node in &tree.nodes {
                let sum: u64 = node.children.iter().map(|&c| tree.nodes[c].visits).sum();
                assert_eq!(node.visits, 1 + sum, "after batch {batch}");
                assert!((0.0..=1.0).contains(&node.mean_reward()));
            }
        }
        assert_eq!(tree.nodes[0].visits, 151);
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (aig, _) = random_aig(3, 1, 10, &mut rng).unwrap();
        let (_, cond) = random_aig(3, 1, 10, &mut rng).unwrap();
        let a = mcts_refine(&aig, &cond, &small_cfg(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = mcts_refine(&aig, &cond, &small_cfg(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.aig, b.aig);
        assert_eq!(a.reward, b.reward);
    }

    #[test]
    fn recovers_from_single_edits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut gain = 0.0;
        let mut cases = 0;
        while cases < 10 {
            let (aig, tt) = random_aig(3, 1, 8, &mut rng).unwrap();
            let broken = sample_action(&aig, &mut rng).unwrap().apply(&aig).unwrap();
            if reward(&broken, &tt).unwrap() == 1.0 {
                continue;
            }
            let out = mcts_refine(&broken, &tt, &small_cfg(), &mut rng).unwrap();
            gain += out.reward - out.start_reward;
            cases += 1;
        }
        assert!(gain > 0.0);
    }
}
