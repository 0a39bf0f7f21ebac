//! And-inverter graph semantics.
//!
//! Node ids of an [`Aig`] are laid out as: primary inputs, constant-zero
//! inputs, AND gates (sorted by level label), outputs. Every fanin refers to
//! a node with a strictly smaller level label, which makes id order a
//! topological order.

mod dataset;
mod encode;
mod generate;
mod parse;
mod truth_table;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dag, Permutation, EDGE_NEGATED, EDGE_NORMAL};

pub use dataset::{read_dataset, write_dataset, DatasetReader, DatasetRecord};
pub use encode::{encode_condition, CONDITION_WIDTH};
pub use generate::random_aig;
pub use parse::parse_dag_to_aig;
pub use truth_table::TruthTable;

pub const NODE_INPUT: usize = 0;
pub const NODE_AND: usize = 1;
pub const NODE_OUTPUT: usize = 2;
pub const AIG_NODE_CLASSES: usize = 3;
pub const AIG_EDGE_CLASSES: usize = 3;
pub const NODE_LABELS: [&str; 3] = ["input", "and", "output"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fanin {
    pub node: usize,
    pub negated: bool,
}

impl Fanin {
    pub fn new(node: usize, negated: bool) -> Self {
        Fanin { node, negated }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AndGate {
    pub a: Fanin,
    pub b: Fanin,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Aig {
    n_in: usize,
    n_const: usize,
    ands: Vec<AndGate>,
    outputs: Vec<Fanin>,
    levels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateRef {
    And(usize),
    Output(usize),
}

impl Aig {
    /// Validating constructor. `levels` labels every node id.
    pub fn new(n_in: usize, n_const: usize, ands: Vec<AndGate>, outputs: Vec<Fanin>, levels: Vec<usize>) -> Result<Self> {
        let aig = Aig {
            n_in,
            n_const,
            ands,
            outputs,
            levels,
        };
        aig.validate()?;
        Ok(aig)
    }

    /// Builds a circuit and labels it with its own longest-path levels
    /// (outputs aligned to the top level).
    pub fn with_natural_levels(n_in: usize, n_const: usize, ands: Vec<AndGate>, outputs: Vec<Fanin>) -> Result<Self> {
        let mut aig = Aig {
            n_in,
            n_const,
            ands,
            outputs,
            levels: Vec::new(),
        };
        aig.check_fanins()?;
        aig.levels = aig.natural_levels();
        aig.validate()?;
        Ok(aig)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.outputs.len()
    }

    pub fn n_const(&self) -> usize {
        self.n_const
    }

    pub fn ands(&self) -> &[AndGate] {
        &self.ands
    }

    pub fn outputs(&self) -> &[Fanin] {
        &self.outputs
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn node_count(&self) -> usize {
        self.n_in + self.n_const + self.ands.len() + self.outputs.len()
    }

    pub fn first_and(&self) -> usize {
        self.n_in + self.n_const
    }

    pub fn first_output(&self) -> usize {
        self.first_and() + self.ands.len()
    }

    pub fn and_id(&self, k: usize) -> usize {
        self.first_and() + k
    }

    pub fn output_id(&self, k: usize) -> usize {
        self.first_output() + k
    }

    pub fn is_const(&self, id: usize) -> bool {
        id >= self.n_in && id < self.first_and()
    }

    pub fn is_output(&self, id: usize) -> bool {
        id >= self.first_output()
    }

    pub fn gate_id(&self, gate: GateRef) -> usize {
        match gate {
            GateRef::And(k) => self.and_id(k),
            GateRef::Output(k) => self.output_id(k),
        }
    }

    /// Node class of every id, in the `input/and/output` alphabet.
    pub fn node_classes(&self) -> Vec<usize> {
        let mut c = vec![NODE_INPUT; self.first_and()];
        c.extend(std::iter::repeat_n(NODE_AND, self.ands.len()));
        c.extend(std::iter::repeat_n(NODE_OUTPUT, self.outputs.len()));
        c
    }

    pub fn max_level(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    /// Depth of the circuit as wired: the longest input-to-output path.
    pub fn depth(&self) -> usize {
        self.natural_levels().into_iter().max().unwrap_or(0)
    }

    fn check_fanins(&self) -> Result<()> {
        let first_and = self.first_and();
        for (k, g) in self.ands.iter().enumerate() {
            let id = first_and + k;
            for f in [g.a, g.b] {
                if f.node >= id {
                    return Err(Error::DanglingChild { node: id, child: f.node });
                }
            }
        }
        let first_out = self.first_output();
        for (k, f) in self.outputs.iter().enumerate() {
            if f.node >= first_out {
                return Err(Error::DanglingChild {
                    node: first_out + k,
                    child: f.node,
                });
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.check_fanins()?;
        if self.levels.len() != self.node_count() {
            return Err(Error::SizeMismatch {
                what: "aig level labels",
                expected: self.node_count(),
                got: self.levels.len(),
            });
        }
        for (k, g) in self.ands.iter().enumerate() {
            let id = self.and_id(k);
            for f in [g.a, g.b] {
                if self.levels[f.node] >= self.levels[id] {
                    return Err(Error::Config(format!(
                        "fanin {} of gate {id} is not at a lower level",
                        f.node
                    )));
                }
            }
        }
        for (k, f) in self.outputs.iter().enumerate() {
            let id = self.output_id(k);
            if self.levels[f.node] >= self.levels[id] {
                return Err(Error::Config(format!(
                    "fanin {} of output {id} is not at a lower level",
                    f.node
                )));
            }
        }
        Ok(())
    }

    /// Longest-path levels with every output lifted to the top level.
    pub fn natural_levels(&self) -> Vec<usize> {
        let mut lv = vec![0usize; self.node_count()];
        let first_and = self.first_and();
        for (k, g) in self.ands.iter().enumerate() {
            lv[first_and + k] = 1 + lv[g.a.node].max(lv[g.b.node]);
        }
        let top = self.outputs.iter().map(|f| lv[f.node] + 1).max().unwrap_or(0);
        let first_out = self.first_output();
        for k in 0..self.outputs.len() {
            lv[first_out + k] = top;
        }
        lv
    }

    /// Exact bit-parallel simulation over all `2^n_in` input rows.
    pub fn simulate(&self) -> Result<TruthTable> {
        self.check_fanins()?;
        let rows = 1usize << self.n_in;
        let words = rows.div_ceil(64);
        let mut values: Vec<Vec<u64>> = Vec::with_capacity(self.first_output());
        for i in 0..self.n_in {
            values.push(TruthTable::input_column(self.n_in, i));
        }
        for _ in 0..self.n_const {
            values.push(vec![0u64; words]);
        }
        let mask = TruthTable::row_mask(rows);
        for g in &self.ands {
            let col: Vec<u64> = (0..words)
                .map(|w| {
                    let a = values[g.a.node][w] ^ if g.a.negated { u64::MAX } else { 0 };
                    let b = values[g.b.node][w] ^ if g.b.negated { u64::MAX } else { 0 };
                    a & b & mask[w]
                })
                .collect();
            values.push(col);
        }
        let columns = self
            .outputs
            .iter()
            .map(|f| {
                (0..words)
                    .map(|w| (values[f.node][w] ^ if f.negated { u64::MAX } else { 0 }) & mask[w])
                    .collect()
            })
            .collect();
        Ok(TruthTable::from_words(self.n_in, columns))
    }

    /// Row-at-a-time evaluation by memoized descent from each output.
    /// Slower than `simulate`; kept as an independent cross-check.
    pub fn simulate_by_descent(&self) -> Result<TruthTable> {
        self.check_fanins()?;
        fn eval(aig: &Aig, node: usize, row: usize, memo: &mut [Option<bool>]) -> bool {
            if let Some(v) = memo[node] {
                return v;
            }
            let v = if node < aig.n_in {
                (row >> node) & 1 == 1
            } else if node < aig.first_and() {
                false
            } else {
                let g = aig.ands[node - aig.first_and()];
                (eval(aig, g.a.node, row, memo) != g.a.negated) && (eval(aig, g.b.node, row, memo) != g.b.negated)
            };
            memo[node] = Some(v);
            v
        }
        let rows = 1usize << self.n_in;
        let mut columns = vec![Vec::with_capacity(rows); self.outputs.len()];
        for row in 0..rows {
            let mut memo = vec![None; self.first_output()];
            for (k, f) in self.outputs.iter().enumerate() {
                columns[k].push(eval(self, f.node, row, &mut memo) != f.negated);
            }
        }
        TruthTable::from_bits(self.n_in, columns)
    }

    /// Categorical form. Fails if a gate uses the same child twice, which
    /// a single edge entry cannot express.
    pub fn to_dag(&self) -> Result<Dag> {
        let n = self.node_count();
        let mut edges = vec![0usize; n * n];
        let mut set = |child: usize, parent: usize, f: &Fanin| -> Result<()> {
            let idx = child * n + parent;
            if edges[idx] != 0 {
                return Err(Error::Config(format!("gate {parent} uses child {child} twice")));
            }
            edges[idx] = if f.negated { EDGE_NEGATED } else { EDGE_NORMAL };
            Ok(())
        };
        for (k, g) in self.ands.iter().enumerate() {
            let id = self.and_id(k);
            set(g.a.node, id, &g.a)?;
            set(g.b.node, id, &g.b)?;
        }
        for (k, f) in self.outputs.iter().enumerate() {
            set(f.node, self.output_id(k), f)?;
        }
        Dag::from_classes(
            AIG_NODE_CLASSES,
            AIG_EDGE_CLASSES,
            &self.node_classes(),
            &edges,
            self.levels.clone(),
        )
    }

    /// Drops AND gates and constant inputs outside every output cone.
    /// Primary inputs are kept because they carry the truth-table columns.
    pub fn remove_floating(&self) -> Aig {
        let n = self.node_count();
        let mut live = vec![false; n];
        for f in &self.outputs {
            live[f.node] = true;
        }
        for k in (0..self.ands.len()).rev() {
            if live[self.and_id(k)] {
                live[self.ands[k].a.node] = true;
                live[self.ands[k].b.node] = true;
            }
        }
        let mut remap = vec![usize::MAX; n];
        let mut next = 0;
        for (id, slot) in remap.iter_mut().enumerate().take(self.first_output()) {
            if id < self.n_in || live[id] {
                *slot = next;
                next += 1;
            }
        }
        let n_const = (self.n_in..self.first_and()).filter(|&id| live[id]).count();
        let fix = |f: Fanin| Fanin::new(remap[f.node], f.negated);
        let ands: Vec<AndGate> = self
            .ands
            .iter()
            .enumerate()
            .filter(|(k, _)| live[self.and_id(*k)])
            .map(|(_, g)| AndGate { a: fix(g.a), b: fix(g.b) })
            .collect();
        let outputs: Vec<Fanin> = self.outputs.iter().map(|&f| fix(f)).collect();
        let mut levels: Vec<usize> = (0..self.first_output())
            .filter(|&id| remap[id] != usize::MAX)
            .map(|id| self.levels[id])
            .collect();
        levels.extend_from_slice(&self.levels[self.first_output()..]);
        Aig {
            n_in: self.n_in,
            n_const,
            ands,
            outputs,
            levels,
        }
    }

    /// Relabels with natural levels, orders AND gates by level and each
    /// gate's fanins by node id.
    pub fn canonicalize(&self) -> Aig {
        let natural = self.natural_levels();
        let first_and = self.first_and();
        let mut order: Vec<usize> = (0..self.ands.len()).collect();
        order.sort_by_key(|&k| (natural[first_and + k], k));
        let n = self.node_count();
        let mut remap: Vec<usize> = (0..n).collect();
        for (new_k, &old_k) in order.iter().enumerate() {
            remap[first_and + old_k] = first_and + new_k;
        }
        let fix = |f: Fanin| Fanin::new(remap[f.node], f.negated);
        let ands = order
            .iter()
            .map(|&k| {
                let (a, b) = (fix(self.ands[k].a), fix(self.ands[k].b));
                if (b.node, b.negated) < (a.node, a.negated) {
                    AndGate { a: b, b: a }
                } else {
                    AndGate { a, b }
                }
            })
            .collect();
        let outputs = self.outputs.iter().map(|&f| fix(f)).collect();
        let mut aig = Aig {
            n_in: self.n_in,
            n_const: self.n_const,
            ands,
            outputs,
            levels: Vec::new(),
        };
        aig.levels = aig.natural_levels();
        aig
    }

    /// Nodes that may feed `gate`: primary inputs and AND gates with a
    /// strictly lower level label.
    pub fn candidates(&self, gate: GateRef) -> Vec<usize> {
        let lvl = self.levels[self.gate_id(gate)];
        (0..self.n_in)
            .chain(self.first_and()..self.first_output())
            .filter(|&c| self.levels[c] < lvl)
            .collect()
    }

    pub fn and_gate(&self, k: usize) -> &AndGate {
        &self.ands[k]
    }

    /// Replaces the fanins of one gate. Callers uphold the level ordering;
    /// it is re-checked here.
    pub fn rewire(&self, gate: GateRef, fanins: &[Fanin]) -> Result<Aig> {
        let mut next = self.clone();
        match gate {
            GateRef::And(k) => {
                if fanins.len() != 2 {
                    return Err(Error::SizeMismatch {
                        what: "AND fanins",
                        expected: 2,
                        got: fanins.len(),
                    });
                }
                next.ands[k] = AndGate {
                    a: fanins[0],
                    b: fanins[1],
                };
            }
            GateRef::Output(k) => {
                if fanins.len() != 1 {
                    return Err(Error::SizeMismatch {
                        what: "output fanins",
                        expected: 1,
                        got: fanins.len(),
                    });
                }
                next.outputs[k] = fanins[0];
            }
        }
        next.validate()?;
        Ok(next)
    }
}

/// Which node plays which role in a categorical graph: `inputs[i]` carries
/// truth-table input column `i`, `outputs[k]` output column `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roster {
    pub classes: Vec<usize>,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
}

impl Roster {
    /// First `n_in` nodes are inputs, last `n_out` outputs, the rest ANDs.
    pub fn canonical(n: usize, n_in: usize, n_out: usize) -> Result<Self> {
        if n_in + n_out > n {
            return Err(Error::SizeMismatch {
                what: "roster size",
                expected: n_in + n_out,
                got: n,
            });
        }
        let mut classes = vec![NODE_AND; n];
        classes[..n_in].fill(NODE_INPUT);
        classes[n - n_out..].fill(NODE_OUTPUT);
        Ok(Roster {
            classes,
            inputs: (0..n_in).collect(),
            outputs: (n - n_out..n).collect(),
        })
    }

    /// Roles read off the node classes, inputs and outputs in index order.
    pub fn from_dag(dag: &Dag) -> Self {
        let classes = dag.node_classes();
        let inputs = (0..classes.len()).filter(|&i| classes[i] == NODE_INPUT).collect();
        let outputs = (0..classes.len()).filter(|&i| classes[i] == NODE_OUTPUT).collect();
        Roster {
            classes,
            inputs,
            outputs,
        }
    }

    pub fn n(&self) -> usize {
        self.classes.len()
    }

    pub fn permuted(&self, sigma: &Permutation) -> Self {
        Roster {
            classes: sigma.permute_rows(&self.classes, 1),
            inputs: self.inputs.iter().map(|&i| sigma.apply(i)).collect(),
            outputs: self.outputs.iter().map(|&i| sigma.apply(i)).collect(),
        }
    }
}

/// Fraction of AND gates with exactly two children and outputs with
/// exactly one, counted on the raw graph. A graph without gates scores 1.
pub fn aig_validity(dag: &Dag) -> f64 {
    let (ok, total) = validity_counts(dag);
    if total == 0 {
        1.0
    } else {
        ok as f64 / total as f64
    }
}

/// `(correctly wired gates, gates)` for pooling across graphs.
pub fn validity_counts(dag: &Dag) -> (usize, usize) {
    let mut ok = 0;
    let mut total = 0;
    for j in 0..dag.n() {
        let want = match dag.node_class(j) {
            NODE_AND => 2,
            NODE_OUTPUT => 1,
            _ => continue,
        };
        total += 1;
        if dag.children(j).count() == want {
            ok += 1;
        }
    }
    (ok, total)
}

/// Fraction of equal output bits.
pub fn function_accuracy(predicted: &TruthTable, condition: &TruthTable) -> Result<f64> {
    if predicted.n_in() != condition.n_in() {
        return Err(Error::SizeMismatch {
            what: "truth table inputs",
            expected: condition.n_in(),
            got: predicted.n_in(),
        });
    }
    if predicted.n_out() != condition.n_out() {
        return Err(Error::SizeMismatch {
            what: "truth table outputs",
            expected: condition.n_out(),
            got: predicted.n_out(),
        });
    }
    let total = condition.n_out() * condition.rows();
    if total == 0 {
        return Ok(1.0);
    }
    let wrong = predicted.hamming(condition);
    Ok(1.0 - wrong as f64 / total as f64)
}

/// Longest-path levels of a categorical AIG with output nodes lifted to
/// the top level, matching [`Aig::natural_levels`].
pub fn aig_levels(dag: &Dag) -> Result<Vec<usize>> {
    let mut lv = dag.compute_levels()?;
    let top = lv.iter().copied().max().unwrap_or(0);
    for j in 0..dag.n() {
        if dag.node_class(j) == NODE_OUTPUT && dag.parents(j).next().is_none() {
            lv[j] = top;
        }
    }
    Ok(lv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nand2() -> Aig {
        // inputs a=0, b=1; AND=2; output=3 (negated)
        Aig::with_natural_levels(
            2,
            0,
            vec![AndGate {
                a: Fanin::new(0, false),
                b: Fanin::new(1, false),
            }],
            vec![Fanin::new(2, true)],
        )
        .unwrap()
    }

    #[test]
    fn nand_truth_table() {
        let tt = nand2().simulate().unwrap();
        assert_eq!(tt.column_bits(0), vec![true, true, true, false]);
        assert_eq!(tt.column_hex(0), "e");
    }

    #[test]
    fn identity_wire() {
        let aig = Aig::with_natural_levels(2, 0, vec![], vec![Fanin::new(0, false)]).unwrap();
        let tt = aig.simulate().unwrap();
        assert_eq!(tt.column_bits(0), vec![false, true, false, true]);
    }

    #[test]
    fn contradiction_is_zero() {
        let aig = Aig::with_natural_levels(
            2,
            0,
            vec![AndGate {
                a: Fanin::new(0, false),
                b: Fanin::new(0, true),
            }],
            vec![Fanin::new(2, false)],
        )
        .unwrap();
        assert!(aig.simulate().unwrap().column_bits(0).iter().all(|b| !b));
        assert!(aig.to_dag().is_err());
    }

    #[test]
    fn dangling_child_rejected() {
        let bad = Aig {
            n_in: 2,
            n_const: 0,
            ands: vec![AndGate {
                a: Fanin::new(0, false),
                b: Fanin::new(5, false),
            }],
            outputs: vec![Fanin::new(2, false)],
            levels: vec![0, 0, 1, 2],
        };
        assert!(matches!(bad.simulate(), Err(Error::DanglingChild { .. })));
    }

    #[test]
    fn accuracy_examples() {
        let a = TruthTable::from_bits(3, vec![vec![false, true, true, false, true, false, false, true]]).unwrap();
        assert_eq!(function_accuracy(&a, &a).unwrap(), 1.0);
        let comp = a.complement();
        assert_eq!(function_accuracy(&comp, &a).unwrap(), 0.0);
        let mut bits = a.column_bits(0);
        bits[5] = !bits[5];
        let one_off = TruthTable::from_bits(3, vec![bits]).unwrap();
        assert_eq!(function_accuracy(&one_off, &a).unwrap(), 0.875);
        let other = TruthTable::from_bits(2, vec![vec![true; 4]]).unwrap();
        assert!(function_accuracy(&other, &a).is_err());
    }

    #[test]
    fn validity_examples() {
        let dag = nand2().to_dag().unwrap();
        assert_eq!(aig_validity(&dag), 1.0);

        // inputs 0,1,2; ANDs 3,4,5; output 6. AND 5 lacks one input.
        let n = 7;
        let mut e = vec![0; n * n];
        for (c, p) in [(0, 3), (1, 3), (1, 4), (2, 4), (3, 5), (5, 6)] {
            e[c * n + p] = 1;
        }
        let dag = Dag::from_classes(3, 3, &[0, 0, 0, 1, 1, 1, 2], &e, vec![0, 0, 0, 1, 1, 2, 3]).unwrap();
        assert_eq!(aig_validity(&dag), 0.75);

        let isolated = Dag::from_classes(3, 3, &[0, 1, 2], &[0; 9], vec![0, 1, 2]).unwrap();
        assert_eq!(aig_validity(&isolated), 0.0);
    }

    #[test]
    fn remove_floating_drops_unused_and() {
        let aig = Aig::with_natural_levels(
            2,
            0,
            vec![
                AndGate {
                    a: Fanin::new(0, false),
                    b: Fanin::new(1, false),
                },
                AndGate {
                    a: Fanin::new(0, true),
                    b: Fanin::new(1, true),
                },
            ],
            vec![Fanin::new(3, false)],
        )
        .unwrap();
        let pruned = aig.remove_floating();
        assert_eq!(pruned.ands().len(), 1);
        assert_eq!(pruned.outputs()[0], Fanin::new(2, false));
        assert_eq!(pruned.simulate().unwrap(), aig.simulate().unwrap());
    }

    #[test]
    fn dag_roundtrip_levels() {
        let aig = nand2();
        let dag = aig.to_dag().unwrap();
        assert_eq!(aig_levels(&dag).unwrap(), aig.levels());
        assert!(dag.levels_consistent());
    }

    #[test]
    fn evaluators_agree() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for k in 0..200 {
            let (aig, tt) = random_aig(1 + k % 4, 1 + k % 3, 12, &mut rng).unwrap();
            assert_eq!(aig.simulate_by_descent().unwrap(), tt);
        }
        assert_eq!(nand2().simulate_by_descent().unwrap().column_hex(0), "e");
    }
}
