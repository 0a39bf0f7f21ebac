//! JSON-lines dataset: one circuit graph and its truth table per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{aig_levels, TruthTable, AIG_EDGE_CLASSES, AIG_NODE_CLASSES};
use crate::error::{Error, Result};
use crate::graph::{Dag, EDGE_ABSENT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub dag: Dag,
    pub tt: TruthTable,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    n_in: usize,
    n_out: usize,
    node_types: Vec<usize>,
    edges: Vec<[usize; 3]>,
    tt: Vec<String>,
}

impl DatasetRecord {
    pub fn to_json_line(&self) -> Result<String> {
        let n = self.dag.n();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let c = self.dag.edge_class(i, j);
                if c != EDGE_ABSENT {
                    edges.push([i, j, c]);
                }
            }
        }
        let raw = RawRecord {
            n_in: self.tt.n_in(),
            n_out: self.tt.n_out(),
            node_types: self.dag.node_classes(),
            edges,
            tt: self.tt.to_hex(),
        };
        Ok(serde_json::to_string(&raw)?)
    }

    /// Parses one line. Levels are recomputed from the edges (outputs lifted
    /// to the top level).
    pub fn from_json_line(line: &str) -> std::result::Result<Self, String> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if raw.tt.len() != raw.n_out {
            return Err(format!("{} truth-table columns for n_out = {}", raw.tt.len(), raw.n_out));
        }
        let tt = TruthTable::from_hex(raw.n_in, &raw.tt).map_err(|e| e.to_string())?;
        let n = raw.node_types.len();
        if let Some(&bad) = raw.node_types.iter().find(|&&c| c >= AIG_NODE_CLASSES) {
            return Err(format!("node type {bad} out of range"));
        }
        let mut edges = vec![EDGE_ABSENT; n * n];
        for &[c, p, cat] in &raw.edges {
            if c >= n || p >= n {
                return Err(format!("edge ({c}, {p}) out of range for {n} nodes"));
            }
            if cat == EDGE_ABSENT || cat >= AIG_EDGE_CLASSES {
                return Err(format!("edge category {cat} out of range"));
            }
            if edges[c * n + p] != EDGE_ABSENT {
                return Err(format!("duplicate edge ({c}, {p})"));
            }
            edges[c * n + p] = cat;
        }
        let flat = Dag::from_classes(AIG_NODE_CLASSES, AIG_EDGE_CLASSES, &raw.node_types, &edges, vec![0; n])
            .map_err(|e| e.to_string())?;
        let levels = aig_levels(&flat).map_err(|e| e.to_string())?;
        let dag = Dag::from_classes(AIG_NODE_CLASSES, AIG_EDGE_CLASSES, &raw.node_types, &edges, levels)
            .map_err(|e| e.to_string())?;
        Ok(DatasetRecord { dag, tt })
    }
}

/// Streams records from any reader, tagging errors with `path:line`.
pub struct DatasetReader<R> {
    lines: std::io::Lines<R>,
    path: PathBuf,
    line_no: usize,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(BufReader::new(file), path))
    }
}

impl<R: BufRead> DatasetReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        DatasetReader {
            lines: reader.lines(),
            path: path.into(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<DatasetRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(DatasetRecord::from_json_line(&line).map_err(|msg| Error::Record {
                path: self.path.clone(),
                line: self.line_no,
                msg,
            }));
        }
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    DatasetReader::open(path)?.collect()
}

pub fn write_dataset<'a>(path: impl AsRef<Path>, records: impl IntoIterator<Item = &'a DatasetRecord>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        writeln!(w, "{}", rec.to_json_line()?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
