//! Categorical DAG representation shared by the whole pipeline.
//!
//! A [`Dag`] stores one-hot node types (`n x k_x`), one-hot edge types
//! (`n x n x k_e`, category 0 = absent) and a level label per node.  Entry
//! `(i, j)` is the edge from child `i` to parent `j`: row `i` lists the
//! parents of `i`, column `j` the children of `j`.
//!
//! Levels are carried on the value rather than recomputed because noisy
//! graphs keep the clean graph's labels throughout diffusion.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Edge category: no edge.
pub const EDGE_ABSENT: usize = 0;
/// Edge category: plain connection.
pub const EDGE_NORMAL: usize = 1;
/// Edge category: connection carrying a logical negation.
pub const EDGE_NEGATED: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    n: usize,
    kx: usize,
    ke: usize,
    node_types: Vec<u8>,
    edge_types: Vec<u8>,
    levels: Vec<usize>,
}

impl Dag {
    /// Builds a graph from class indices. `edges` is row-major `n x n`.
    pub fn from_classes(
        kx: usize,
        ke: usize,
        nodes: &[usize],
        edges: &[usize],
        levels: Vec<usize>,
    ) -> Result<Self> {
        let n = nodes.len();
        if edges.len() != n * n {
            return Err(Error::SizeMismatch {
                what: "edge class matrix",
                expected: n * n,
                got: edges.len(),
            });
        }
        if levels.len() != n {
            return Err(Error::SizeMismatch {
                what: "level labels",
                expected: n,
                got: levels.len(),
            });
        }
        let mut node_types = vec![0u8; n * kx];
        for (i, &c) in nodes.iter().enumerate() {
            if c >= kx {
                return Err(Error::SizeMismatch {
                    what: "node class index",
                    expected: kx,
                    got: c,
                });
            }
            node_types[i * kx + c] = 1;
        }
        let mut edge_types = vec![0u8; n * n * ke];
        for (idx, &c) in edges.iter().enumerate() {
            if c >= ke {
                return Err(Error::SizeMismatch {
                    what: "edge class index",
                    expected: ke,
                    got: c,
                });
            }
            if idx / n == idx % n && c != EDGE_ABSENT {
                return Err(Error::SelfEdge(idx / n));
            }
            edge_types[idx * ke + c] = 1;
        }
        Ok(Dag {
            n,
            kx,
            ke,
            node_types,
            edge_types,
            levels,
        })
    }

    /// Builds a graph from class indices and labels every node with its
    /// longest-path level.
    pub fn with_computed_levels(kx: usize, ke: usize, nodes: &[usize], edges: &[usize]) -> Result<Self> {
        let levels = node_levels(edges, nodes.len())?;
        Self::from_classes(kx, ke, nodes, edges, levels)
    }

    /// Raw constructor that performs only shape checks. Used to hold data
    /// that may violate the one-hot invariant (see [`check_onehot`]).
    pub fn from_onehot(
        n: usize,
        kx: usize,
        ke: usize,
        node_types: Vec<u8>,
        edge_types: Vec<u8>,
        levels: Vec<usize>,
    ) -> Result<Self> {
        if node_types.len() != n * kx {
            return Err(Error::SizeMismatch {
                what: "node one-hot rows",
                expected: n * kx,
                got: node_types.len(),
            });
        }
        if edge_types.len() != n * n * ke {
            return Err(Error::SizeMismatch {
                what: "edge one-hot entries",
                expected: n * n * ke,
                got: edge_types.len(),
            });
        }
        if levels.len() != n {
            return Err(Error::SizeMismatch {
                what: "level labels",
                expected: n,
                got: levels.len(),
            });
        }
        Ok(Dag {
            n,
            kx,
            ke,
            node_types,
            edge_types,
            levels,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node_categories(&self) -> usize {
        self.kx
    }

    pub fn edge_categories(&self) -> usize {
        self.ke
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn max_level(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    /// Level of node `i` divided by the maximum level (0 when flat).
    pub fn normalized_level(&self, i: usize) -> f64 {
        let max = self.max_level();
        if max == 0 {
            0.0
        } else {
            self.levels[i] as f64 / max as f64
        }
    }

    pub fn node_row(&self, i: usize) -> &[u8] {
        &self.node_types[i * self.kx..(i + 1) * self.kx]
    }

    pub fn edge_entry(&self, i: usize, j: usize) -> &[u8] {
        let idx = (i * self.n + j) * self.ke;
        &self.edge_types[idx..idx + self.ke]
    }

    /// Index of the hot entry of node `i` (first maximum).
    pub fn node_class(&self, i: usize) -> usize {
        argmax_u8(self.node_row(i))
    }

    pub fn edge_class(&self, i: usize, j: usize) -> usize {
        argmax_u8(self.edge_entry(i, j))
    }

    pub fn node_classes(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.node_class(i)).collect()
    }

    /// Row-major `n x n` edge class matrix.
    pub fn edge_classes(&self) -> Vec<usize> {
        let n = self.n;
        (0..n * n).map(|idx| self.edge_class(idx / n, idx % n)).collect()
    }

    /// Children of `j`, i.e. every `i` with a present edge `(i, j)`.
    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.edge_class(i, j) != EDGE_ABSENT)
    }

    pub fn parents(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.edge_class(i, j) != EDGE_ABSENT)
    }

    pub fn edge_count(&self) -> usize {
        let n = self.n;
        (0..n * n)
            .filter(|&idx| self.edge_class(idx / n, idx % n) != EDGE_ABSENT)
            .count()
    }

    /// Same nodes and level labels, new edge classes.
    pub fn with_edge_classes(&self, edges: &[usize]) -> Result<Self> {
        Self::from_classes(self.kx, self.ke, &self.node_classes(), edges, self.levels.clone())
    }

    /// Same edges and level labels, new node classes.
    pub fn with_node_classes(&self, nodes: &[usize]) -> Result<Self> {
        if nodes.len() != self.n {
            return Err(Error::SizeMismatch {
                what: "node classes",
                expected: self.n,
                got: nodes.len(),
            });
        }
        Self::from_classes(self.kx, self.ke, nodes, &self.edge_classes(), self.levels.clone())
    }

    /// True when every present edge points from a strictly lower level to
    /// a strictly higher one.
    pub fn levels_consistent(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| {
            (0..n).all(|j| self.edge_class(i, j) == EDGE_ABSENT || self.levels[i] < self.levels[j])
        })
    }

    /// Level labels recomputed from the present edges.
    pub fn compute_levels(&self) -> Result<Vec<usize>> {
        node_levels(&self.edge_classes(), self.n)
    }
}

fn argmax_u8(row: &[u8]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Longest-path levels over the present edges of a row-major `n x n` class
/// matrix: leaves get 0, every other node one more than its deepest child.
pub fn node_levels(edges: &[usize], n: usize) -> Result<Vec<usize>> {
    if edges.len() != n * n {
        return Err(Error::SizeMismatch {
            what: "edge class matrix",
            expected: n * n,
            got: edges.len(),
        });
    }
    let present = |i: usize, j: usize| edges[i * n + j] != EDGE_ABSENT;
    let mut pending_children: Vec<usize> = (0..n).map(|j| (0..n).filter(|&i| present(i, j)).count()).collect();
    let mut levels = vec![0usize; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&j| pending_children[j] == 0).collect();
    let mut done = 0;
    while let Some(i) = queue.pop_front() {
        done += 1;
        for j in 0..n {
            if present(i, j) {
                levels[j] = levels[j].max(levels[i] + 1);
                pending_children[j] -= 1;
                if pending_children[j] == 0 {
                    queue.push_back(j);
                }
            }
        }
    }
    if done == n {
        return Ok(levels);
    }
    // Every unresolved node still has an unresolved child; following those
    // links must revisit a node.
    let start = (0..n).find(|&j| pending_children[j] > 0).expect("unresolved node");
    let mut seen = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut cur = start;
    while seen[cur] == usize::MAX {
        seen[cur] = path.len();
        path.push(cur);
        cur = (0..n)
            .find(|&i| present(i, cur) && pending_children[i] > 0)
            .expect("unresolved node has an unresolved child");
    }
    let mut cycle = path.split_off(seen[cur]);
    // path was walked parent -> child; report child -> parent order
    cycle.reverse();
    Err(Error::CyclicGraph { cycle })
}

/// A bijection on `0..n`. Node `i` moves to position `mapping[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                return Err(Error::InvalidPermutation(format!("{mapping:?} is not a bijection")));
            }
            seen[m] = true;
        }
        Ok(Permutation { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            mapping: (0..n).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Permutation { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Permutation { mapping: inv }
    }

    /// `next ∘ self`: first apply `self`, then `next`.
    pub fn then(&self, next: &Permutation) -> Self {
        Permutation {
            mapping: self.mapping.iter().map(|&m| next.mapping[m]).collect(),
        }
    }

    /// Moves row `i` (of `width` items) to row `σ(i)`.
    pub fn permute_rows<T: Clone>(&self, data: &[T], width: usize) -> Vec<T> {
        let n = self.mapping.len();
        assert_eq!(data.len(), n * width, "row data does not match permutation size");
        let mut out = data.to_vec();
        for i in 0..n {
            let dst = self.mapping[i];
            out[dst * width..(dst + 1) * width].clone_from_slice(&data[i * width..(i + 1) * width]);
        }
        out
    }

    /// Moves entry `(i, j)` (of `width` items) to `(σ(i), σ(j))`.
    pub fn permute_pairs<T: Clone>(&self, data: &[T], width: usize) -> Vec<T> {
        let n = self.mapping.len();
        assert_eq!(data.len(), n * n * width, "pair data does not match permutation size");
        let mut out = data.to_vec();
        for i in 0..n {
            for j in 0..n {
                let src = (i * n + j) * width;
                let dst = (self.mapping[i] * n + self.mapping[j]) * width;
                out[dst..dst + width].clone_from_slice(&data[src..src + width]);
            }
        }
        out
    }
}

pub fn permute(dag: &Dag, sigma: &Permutation) -> Result<Dag> {
    if sigma.len() != dag.n {
        return Err(Error::SizeMismatch {
            what: "permutation size",
            expected: dag.n,
            got: sigma.len(),
        });
    }
    Ok(Dag {
        n: dag.n,
        kx: dag.kx,
        ke: dag.ke,
        node_types: sigma.permute_rows(&dag.node_types, dag.kx),
        edge_types: sigma.permute_pairs(&dag.edge_types, dag.ke),
        levels: sigma.permute_rows(&dag.levels, 1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    Node(usize),
    Edge(usize, usize),
    SelfEdge(usize),
}

/// Every node row and edge entry that is not exactly one-hot, plus any
/// present self-edge. Empty iff the graph is well formed.
pub fn check_onehot(dag: &Dag) -> Vec<Violation> {
    let onehot = |row: &[u8]| row.iter().all(|&v| v <= 1) && row.iter().map(|&v| v as usize).sum::<usize>() == 1;
    let mut out = Vec::new();
    for i in 0..dag.n {
        if !onehot(dag.node_row(i)) {
            out.push(Violation::Node(i));
        }
    }
    for i in 0..dag.n {
        for j in 0..dag.n {
            let entry = dag.edge_entry(i, j);
            if !onehot(entry) {
                out.push(Violation::Edge(i, j));
            } else if i == j && entry[EDGE_ABSENT] != 1 {
                out.push(Violation::SelfEdge(i));
            }
        }
    }
    out
}

/// GraphViz rendering. `labels[c]` names node class `c`; edges run child ->
/// parent, negation edges are dashed.
pub fn to_dot(dag: &Dag, labels: &[&str]) -> String {
    if dag.n == 0 {
        return "digraph { }\n".to_string();
    }
    let mut s = String::from("digraph {\n  rankdir=BT;\n");
    for i in 0..dag.n {
        let class = dag.node_class(i);
        let name = labels.get(class).copied().unwrap_or("node");
        let _ = writeln!(s, "  n{i} [label=\"{name} {i}\\nL{}\"];", dag.levels[i]);
    }
    for i in 0..dag.n {
        for j in 0..dag.n {
            match dag.edge_class(i, j) {
                EDGE_ABSENT => {}
                EDGE_NORMAL => {
                    let _ = writeln!(s, "  n{i} -> n{j};");
                }
                EDGE_NEGATED => {
                    let _ = writeln!(s, "  n{i} -> n{j} [style=dashed];");
                }
                _ => {
                    let _ = writeln!(s, "  n{i} -> n{j} [style=dotted];");
                }
            }
        }
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edges_from(n: usize, list: &[(usize, usize, usize)]) -> Vec<usize> {
        let mut e = vec![0; n * n];
        for &(i, j, c) in list {
            e[i * n + j] = c;
        }
        e
    }

    #[test]
    fn levels_of_small_graphs() {
        assert_eq!(node_levels(&edges_from(2, &[(0, 1, 1)]), 2).unwrap(), vec![0, 1]);
        assert_eq!(node_levels(&edges_from(3, &[(0, 1, 1), (1, 2, 1)]), 3).unwrap(), vec![0, 1, 2]);
        let diamond = edges_from(4, &[(0, 1, 1), (0, 2, 2), (1, 3, 1), (2, 3, 1)]);
        assert_eq!(node_levels(&diamond, 4).unwrap(), vec![0, 1, 1, 2]);
    }

    #[test]
    fn cycle_is_reported() {
        let e = edges_from(4, &[(0, 1, 1), (1, 2, 1), (2, 1, 1), (2, 3, 1)]);
        match node_levels(&e, 4) {
            Err(Error::CyclicGraph { cycle }) => {
                let mut c = cycle.clone();
                c.sort();
                assert_eq!(c, vec![1, 2]);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn permutation_rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
    }

    #[test]
    fn permute_identity_and_inverse() {
        let e = edges_from(4, &[(0, 1, 1), (0, 2, 2), (1, 3, 1), (2, 3, 1)]);
        let g = Dag::with_computed_levels(3, 3, &[0, 1, 1, 2], &e).unwrap();
        assert_eq!(permute(&g, &Permutation::identity(4)).unwrap(), g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Permutation::random(4, &mut rng);
        let back = permute(&permute(&g, &s).unwrap(), &s.inverse()).unwrap();
        assert_eq!(back, g);
        assert!(permute(&g, &Permutation::identity(3)).is_err());
    }

    #[test]
    fn onehot_violations() {
        let g = Dag::from_classes(3, 3, &[0, 1], &[0, 1, 0, 0], vec![0, 1]).unwrap();
        assert!(check_onehot(&g).is_empty());

        let bad_node = Dag::from_onehot(2, 3, 3, vec![1, 1, 0, 0, 1, 0], g.edge_types.clone(), vec![0, 1]).unwrap();
        assert_eq!(check_onehot(&bad_node), vec![Violation::Node(0)]);

        let mut e = g.edge_types.clone();
        e[3..6].copy_from_slice(&[0, 0, 0]);
        let bad_edge = Dag::from_onehot(2, 3, 3, g.node_types.clone(), e, vec![0, 1]).unwrap();
        assert_eq!(check_onehot(&bad_edge), vec![Violation::Edge(0, 1)]);
    }

    #[test]
    fn self_edges_rejected_on_construction() {
        assert!(Dag::from_classes(3, 3, &[0, 1], &[1, 0, 0, 0], vec![0, 0]).is_err());
    }

    #[test]
    fn dot_output() {
        let empty = Dag::from_classes(3, 3, &[], &[], vec![]).unwrap();
        assert_eq!(to_dot(&empty, &[]), "digraph { }\n");

        let labels = ["input", "and", "output"];
        let g = Dag::from_classes(3, 3, &[0, 2], &[0, 1, 0, 0], vec![0, 1]).unwrap();
        let dot = to_dot(&g, &labels);
        assert!(dot.contains("n0 -> n1;"));
        assert!(!dot.contains("dashed"));
        assert!(dot.contains("input 0\\nL0"));

        let g = Dag::from_classes(3, 3, &[0, 2], &[0, 2, 0, 0], vec![0, 1]).unwrap();
        let dot = to_dot(&g, &labels);
        assert_eq!(dot.matches("->").count(), 1);
        assert!(dot.contains("n0 -> n1 [style=dashed];"));
    }
}
