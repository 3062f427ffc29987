//! Sensor network topology and its adjacency / Laplacian matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    /// `D - A`
    Combinatorial,
    /// `I - D^{-1/2} A D^{-1/2}`
    #[default]
    SymmetricNormalized,
}

/// Sensor graph. Node indices follow the lexicographic order of `node_ids`.
///
/// `directed_edges` keeps the deduplicated input direction for reporting;
/// `edges` is the symmetrized set that every spectral computation uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_ids: Vec<String>,
    directed_edges: Vec<(usize, usize)>,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from `(src, dst)` id pairs.
    ///
    /// Duplicates collapse, self-loops are dropped, and every edge is
    /// mirrored so that `A` is symmetric.
    pub fn from_edges<S: AsRef<str>>(edge_list: &[(S, S)]) -> Result<Graph> {
        if edge_list.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let mut ids = BTreeSet::new();
        for (a, b) in edge_list {
            for id in [a.as_ref(), b.as_ref()] {
                if id.is_empty() {
                    return Err(Error::UnknownNode(String::new()));
                }
                ids.insert(id.to_owned());
            }
        }
        let node_ids: Vec<String> = ids.into_iter().collect();
        let index: BTreeMap<&str, usize> =
            node_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let directed: BTreeSet<(usize, usize)> = edge_list
            .iter()
            .map(|(a, b)| (index[a.as_ref()], index[b.as_ref()]))
            .filter(|(a, b)| a != b)
            .collect();
        Ok(Self::from_parts(node_ids, directed.into_iter().collect()))
    }

    fn from_parts(node_ids: Vec<String>, directed_edges: Vec<(usize, usize)>) -> Graph {
        let sym: BTreeSet<(usize, usize)> = directed_edges
            .iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .collect();
        Graph { node_ids, directed_edges, edges: sym.into_iter().collect() }
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    /// Symmetrized edge set, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn directed_edges(&self) -> &[(usize, usize)] {
        &self.directed_edges
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids.binary_search_by(|probe| probe.as_str().cmp(id)).ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n()];
        for &(a, _) in &self.edges {
            d[a] += 1;
        }
        d
    }

    pub fn adjacency_matrix(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n(), self.n());
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
        }
        a
    }

    pub fn laplacian(&self, kind: LaplacianKind) -> Result<DenseMatrix> {
        if self.edges.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let n = self.n();
        let deg = self.degrees();
        let mut l = DenseMatrix::zeros(n, n);
        match kind {
            LaplacianKind::Combinatorial => {
                for (i, &d) in deg.iter().enumerate() {
                    l[(i, i)] = d as f64;
                }
                for &(i, j) in &self.edges {
                    l[(i, j)] = -1.0;
                }
            }
            LaplacianKind::SymmetricNormalized => {
                if let Some(i) = deg.iter().position(|&d| d == 0) {
                    return Err(Error::DegreeZero(self.node_ids[i].clone()));
                }
                let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
                for i in 0..n {
                    l[(i, i)] = 1.0;
                }
                for &(i, j) in &self.edges {
                    l[(i, j)] = -inv_sqrt[i] * inv_sqrt[j];
                }
            }
        }
        Ok(l)
    }

    /// Induced subgraph on `keep_ids`, plus the original index of each new node.
    pub fn subgraph<S: AsRef<str>>(&self, keep_ids: &[S]) -> Result<(Graph, Vec<usize>)> {
        let mut keep = BTreeSet::new();
        for id in keep_ids {
            let id = id.as_ref();
            keep.insert(self.index_of(id).ok_or_else(|| Error::UnknownNode(id.to_owned()))?);
        }
        if keep.is_empty() {
            return Err(Error::EmptyGraph);
        }
        // ids are sorted and `keep` iterates ascending, so the new order is
        // still lexicographic.
        let mapping: Vec<usize> = keep.into_iter().collect();
        let mut new_index = vec![usize::MAX; self.n()];
        for (new, &old) in mapping.iter().enumerate() {
            new_index[old] = new;
        }
        let directed = self
            .directed_edges
            .iter()
            .filter(|(a, b)| new_index[*a] != usize::MAX && new_index[*b] != usize::MAX)
            .map(|&(a, b)| (new_index[a], new_index[b]))
            .collect();
        let ids = mapping.iter().map(|&i| self.node_ids[i].clone()).collect();
        Ok((Self::from_parts(ids, directed), mapping))
    }

    /// Reads an edge list CSV with header `src,dst`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Graph> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
        if headers.len() != 2 || &headers[0] != "src" || &headers[1] != "dst" {
            return Err(Error::MalformedCsv { line: 1, msg: "expected header `src,dst`".into() });
        }
        let mut edges = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(e, i + 2))?;
            if rec.len() != 2 || rec[0].is_empty() || rec[1].is_empty() {
                return Err(Error::MalformedCsv { line: i + 2, msg: "expected two ids".into() });
            }
            edges.push((rec[0].to_owned(), rec[1].to_owned()));
        }
        Graph::from_edges(&edges)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Graph> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Writes the directed edge list as `src,dst` CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.into());
        wtr.write_record(["src", "dst"]).map_err(io)?;
        for &(a, b) in &self.directed_edges {
            wtr.write_record([&self.node_ids[a], &self.node_ids[b]]).map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_error(e: csv::Error, line: usize) -> Error {
    let line = e.position().map_or(line, |p| p.line() as usize);
    Error::MalformedCsv { line, msg: e.to_string() }
}
